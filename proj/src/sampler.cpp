#include "slate/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"

namespace slate::sampler {

namespace {

void validate(const RolloutConfig& cfg) {
  if (cfg.k < 1) throw std::invalid_argument("rollout: k < 1");
  if (cfg.budget < 1) throw std::invalid_argument("rollout: budget < 1");
  if (cfg.lambda < 0.0) throw std::invalid_argument("rollout: lambda < 0");
  if (cfg.eta <= 0.0) throw std::invalid_argument("rollout: eta <= 0");
  if (cfg.eps_adv < 0.0) throw std::invalid_argument("rollout: eps_adv < 0");
  if (cfg.top_k < 1) throw std::invalid_argument("rollout: top_k < 1");
}

std::string join(const std::vector<std::string>& tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

int candidate_em(const policy::Vocabulary& vocab, const policy::ActionBlock& block,
                 const env::Task& task) {
  if (block.kind != policy::ActionKind::answer_action) return 0;
  return env::exact_match(vocab.token_strings(block.payload_tokens()),
                          task.gold_answer);
}

}  // namespace

judge::JudgeVerdict RemoteStepJudge::think(const env::EnvState&,
                                           const std::string& context,
                                           const std::vector<std::string>& think_tokens) {
  return remote_.score(judge::VerdictKind::think,
                       {{"context", context}, {"thinking", join(think_tokens)}});
}

judge::JudgeVerdict RemoteStepJudge::query(const env::EnvState&,
                                           const std::string& context,
                                           const std::vector<std::string>& think_tokens,
                                           const std::vector<std::string>& query_tokens) {
  return remote_.score(judge::VerdictKind::query, {{"context", context},
                                                   {"thinking", join(think_tokens)},
                                                   {"query", join(query_tokens)}});
}

judge::JudgeVerdict RemoteStepJudge::answer(const env::EnvState& state,
                                            const std::string& context,
                                            const std::vector<std::string>& answer_tokens) {
  return remote_.score(judge::VerdictKind::answer,
                       {{"context", context},
                        {"ground_truth", env::entity_token(state.task.gold_answer)},
                        {"predicted_answer", join(answer_tokens)}});
}

std::vector<double> group_advantages(const std::vector<double>& rewards,
                                     double eps) {
  if (rewards.empty()) throw std::invalid_argument("group_advantages: empty group");
  if (eps < 0.0) throw std::invalid_argument("group_advantages: eps < 0");
  const double n = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= n;
  const double denom = std::sqrt(std::max(var, 0.0)) + eps;
  std::vector<double> adv(rewards.size(), 0.0);
  if (denom == 0.0) return adv;
  for (size_t i = 0; i < rewards.size(); ++i) adv[i] = (rewards[i] - mean) / denom;
  return adv;
}

std::vector<double> selection_probabilities(const std::vector<double>& advantages,
                                            double eta) {
  if (advantages.empty())
    throw std::invalid_argument("selection_probabilities: empty group");
  if (eta <= 0.0) throw std::invalid_argument("selection_probabilities: eta <= 0");
  double mx = advantages[0];
  for (double a : advantages) mx = std::max(mx, a);
  std::vector<double> probs(advantages.size());
  double z = 0.0;
  for (size_t i = 0; i < advantages.size(); ++i) {
    probs[i] = std::exp((advantages[i] - mx) / eta);
    z += probs[i];
  }
  for (double& p : probs) p /= z;
  return probs;
}

void fill_advantages(StepGroup& group, const RolloutConfig& cfg) {
  if (group.candidates.empty())
    throw std::invalid_argument("fill_advantages: empty group");
  if (group.candidates.size() == 1 && cfg.k1_reinforce) {
    group.candidates[0].advantage = group.candidates[0].reward.total;
    return;
  }
  std::vector<double> totals;
  totals.reserve(group.candidates.size());
  for (const auto& c : group.candidates) totals.push_back(c.reward.total);
  const auto adv = group_advantages(totals, cfg.eps_adv);
  for (size_t i = 0; i < adv.size(); ++i) group.candidates[i].advantage = adv[i];
}

int select_candidate(const StepGroup& group, const RolloutConfig& cfg, Rng& rng) {
  if (group.candidates.empty())
    throw std::invalid_argument("select_candidate: empty group");
  if (cfg.selection == Selection::best_of_k) {
    int best = 0;
    for (size_t i = 1; i < group.candidates.size(); ++i) {
      if (group.candidates[i].reward.total > group.candidates[best].reward.total)
        best = static_cast<int>(i);
    }
    return best;
  }
  std::vector<double> adv;
  adv.reserve(group.candidates.size());
  for (const auto& c : group.candidates) adv.push_back(c.advantage);
  return rng.categorical(selection_probabilities(adv, cfg.eta));
}

judge::RewardBreakdown score_candidate(StepJudge& judge, const env::EnvState& state,
                                       const std::string& context,
                                       const policy::ActionBlock& block,
                                       const policy::Vocabulary& vocab, int t,
                                       const RolloutConfig& cfg) {
  const bool is_answer = block.kind == policy::ActionKind::answer_action;
  const auto payload = vocab.token_strings(block.payload_tokens());

  if (cfg.score_mode == ScoreMode::sparse_em) {
    judge::RewardBreakdown r;
    if (is_answer) {
      r.answer = env::exact_match(payload, state.task.gold_answer);
      r.bonus = cfg.lambda * static_cast<double>(cfg.budget - t) / cfg.budget;
      r.total = *r.answer + r.bonus;
    }
    return r;
  }

  const auto think_text = vocab.token_strings(block.think_tokens());
  const auto think_verdict = judge.think(state, context, think_text);
  const auto payload_verdict =
      is_answer ? judge.answer(state, context, payload)
                : judge.query(state, context, think_text, payload);
  return judge::composite_reward(think_verdict, payload_verdict, is_answer, t,
                                 cfg.budget, cfg.lambda);
}

StepGroup sample_step_group(const policy::PolicyModel& model,
                            const env::EnvState& state, StepJudge& judge,
                            const RolloutConfig& cfg, Rng& rng) {
  validate(cfg);
  StepGroup group;
  group.step_index = state.step_index;
  group.context.latest_entity = env::latest_revealed_entity(state);
  group.prefix_text = std::make_shared<const std::string>(env::context_text(state));
  group.candidates.reserve(static_cast<size_t>(cfg.k));
  for (int i = 0; i < cfg.k; ++i) {
    StepCandidate c;
    c.block = policy::sample_action(model, group.context, cfg.temperature, rng);
    c.reward = score_candidate(judge, state, *group.prefix_text, c.block,
                               model.vocab(), state.step_index, cfg);
    group.candidates.push_back(std::move(c));
  }
  return group;
}

TrajectoryRecord rollout_truncated(const policy::PolicyModel& model,
                                   const env::Task& task, StepJudge& judge,
                                   const RolloutConfig& cfg, Rng& rng,
                                   const GroupCallback& on_group) {
  validate(cfg);
  TrajectoryRecord out;
  out.task_id = task.id;
  env::EnvState state = env::initial_state(task);

  for (int t = 1; t <= cfg.budget; ++t) {
    StepGroup group = sample_step_group(model, state, judge, cfg, rng);
    fill_advantages(group, cfg);
    group.selected = select_candidate(group, cfg, rng);
    for (const auto& c : group.candidates)
      out.tokens_generated += c.block.masked_count();
    out.groups.push_back(std::move(group));
    const StepGroup& g = out.groups.back();
    if (on_group) on_group(g, state);

    const StepCandidate& sel = g.candidates[static_cast<size_t>(g.selected)];
    if (!out.final_text.empty()) out.final_text += ' ';
    out.final_text += block_text(model.vocab(), sel.block);
    out.total_reward += sel.reward.total;

    if (sel.block.kind == policy::ActionKind::answer_action) {
      out.em = candidate_em(model.vocab(), sel.block, task);
      out.t_used = t;
      return out;
    }
    if (t < cfg.budget) {
      const auto query = model.vocab().token_strings(sel.block.payload_tokens());
      state = env::reveal(state, env::search(state, query, cfg.top_k));
    }
  }

  // budget spent without an answer: decode one answer-constrained block
  StepCandidate forced;
  forced.block =
      policy::sample_action(model, policy::PrefixContext{env::latest_revealed_entity(state)},
                            cfg.temperature, rng, /*constrain_answer=*/true);
  forced.reward = score_candidate(judge, state, env::context_text(state),
                                  forced.block, model.vocab(), cfg.budget, cfg);
  out.tokens_generated += forced.block.masked_count();
  out.total_reward += forced.reward.total;
  out.em = candidate_em(model.vocab(), forced.block, task);
  out.final_text += ' ' + block_text(model.vocab(), forced.block);
  out.forced_answer = std::move(forced);
  out.t_used = cfg.budget;
  return out;
}

FullGroupResult rollout_full_group(const policy::PolicyModel& model,
                                   const env::Task& task, StepJudge& judge,
                                   const RolloutConfig& cfg, int group_size,
                                   Rng& rng) {
  validate(cfg);
  if (group_size < 1) throw std::invalid_argument("rollout_full_group: G < 1");

  FullGroupResult result;
  result.rollouts.reserve(static_cast<size_t>(group_size));
  for (int i = 0; i < group_size; ++i) {
    TrajectoryRecord tr;
    tr.task_id = task.id;
    env::EnvState state = env::initial_state(task);
    for (int t = 1; t <= cfg.budget; ++t) {
      StepGroup group;
      group.step_index = t;
      group.context.latest_entity = env::latest_revealed_entity(state);
      group.prefix_text =
          std::make_shared<const std::string>(env::context_text(state));
      StepCandidate c;
      c.block = policy::sample_action(model, group.context, cfg.temperature, rng,
                                      /*constrain_answer=*/t == cfg.budget);
      c.reward = score_candidate(judge, state, *group.prefix_text, c.block,
                                 model.vocab(), t, cfg);
      tr.tokens_generated += c.block.masked_count();
      tr.total_reward += c.reward.total;
      if (!tr.final_text.empty()) tr.final_text += ' ';
      tr.final_text += block_text(model.vocab(), c.block);
      const bool is_answer = c.block.kind == policy::ActionKind::answer_action;
      group.candidates.push_back(std::move(c));
      group.selected = 0;
      tr.groups.push_back(std::move(group));
      if (is_answer) {
        tr.em = candidate_em(model.vocab(),
                             tr.groups.back().candidates[0].block, task);
        tr.t_used = t;
        break;
      }
      const auto query = model.vocab().token_strings(
          tr.groups.back().candidates[0].block.payload_tokens());
      state = env::reveal(state, env::search(state, query, cfg.top_k));
    }
    if (cfg.score_mode == ScoreMode::sparse_em) tr.total_reward = tr.em;
    result.returns.push_back(cfg.score_mode == ScoreMode::sparse_em
                                 ? static_cast<double>(tr.em)
                                 : tr.total_reward);
    result.rollouts.push_back(std::move(tr));
  }

  result.advantages = group_advantages(result.returns, cfg.eps_adv);
  for (size_t i = 0; i < result.rollouts.size(); ++i) {
    for (auto& g : result.rollouts[i].groups)
      g.candidates[0].advantage = result.advantages[i];
  }
  return result;
}

std::string block_text(const policy::Vocabulary& vocab,
                       const policy::ActionBlock& block) {
  return join(vocab.token_strings(block.tokens));
}

void write_jsonl(std::ostream& out, const TrajectoryRecord& traj,
                 const policy::Vocabulary& vocab) {
  using nlohmann::ordered_json;
  auto reward_json = [](const judge::RewardBreakdown& r) {
    ordered_json j;
    j["think"] = r.think;
    j["query"] = r.query ? ordered_json(*r.query) : ordered_json(nullptr);
    j["answer"] = r.answer ? ordered_json(*r.answer) : ordered_json(nullptr);
    j["bonus"] = r.bonus;
    j["total"] = r.total;
    return j;
  };

  for (const auto& g : traj.groups) {
    ordered_json line;
    line["task_id"] = traj.task_id;
    line["step"] = g.step_index;
    line["context_entity"] = g.context.latest_entity;
    line["candidates"] = ordered_json::array();
    for (const auto& c : g.candidates) {
      ordered_json cj;
      cj["kind"] = c.block.kind == policy::ActionKind::answer_action ? "answer"
                                                                     : "search";
      cj["text"] = block_text(vocab, c.block);
      cj["reward"] = reward_json(c.reward);
      cj["advantage"] = c.advantage;
      line["candidates"].push_back(std::move(cj));
    }
    line["selected"] = g.selected;
    out << line.dump() << '\n';
  }

  ordered_json summary;
  summary["task_id"] = traj.task_id;
  summary["summary"] = true;
  summary["t_used"] = traj.t_used;
  summary["em"] = traj.em;
  summary["total_reward"] = traj.total_reward;
  summary["tokens_generated"] = traj.tokens_generated;
  summary["forced_answer"] = traj.forced_answer.has_value();
  if (traj.forced_answer)
    summary["forced_reward"] = reward_json(traj.forced_answer->reward);
  summary["final_text"] = traj.final_text;
  out << summary.dump() << '\n';
}

}  // namespace slate::sampler
