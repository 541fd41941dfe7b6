#include "slate/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "slate/env.hpp"

namespace slate::trainer {

namespace {

constexpr uint64_t kPolicyRngStream = 0x7472616eULL;  // "tran"

struct BatchStats {
  double step_sum = 0.0;
  long long step_count = 0;
  double total_sum = 0.0;
  long long total_count = 0;
  double kl_sum = 0.0;
  long long kl_count = 0;
  double abs_adv_sum = 0.0;
  long long adv_count = 0;

  void add_executed_steps(const sampler::TrajectoryRecord& traj) {
    for (const auto& g : traj.groups) {
      step_sum += g.candidates[static_cast<size_t>(g.selected)].reward.total;
      ++step_count;
    }
    if (traj.forced_answer) {
      step_sum += traj.forced_answer->reward.total;
      ++step_count;
    }
  }
};

// one gradient-ascent step over a bundle of step groups, every trainable
// block weighted equally
struct Pending {
  std::vector<sampler::StepGroup> groups;
};

void apply_pending(policy::PolicyModel& model, const policy::PolicyModel& ref,
                   const Pending& pending, const TrainOptions& o,
                   std::vector<double>& grad) {
  long long n = 0;
  for (const auto& g : pending.groups) n += static_cast<long long>(g.candidates.size());
  if (n == 0) return;
  grad.assign(model.weight_count(), 0.0);
  for (const auto& g : pending.groups) {
    const policy::PrefixContext ctx{g.context};
    for (const auto& c : g.candidates)
      optimizer::accumulate_step_grad(model, ctx, c.block, c.advantage,
                                      o.clip_eps, 1.0 / static_cast<double>(n),
                                      grad);
    if (o.kl_beta != 0.0)
      policy::accumulate_kl_grad(
          model, ref, ctx,
          -o.kl_beta * static_cast<double>(g.candidates.size()) /
              static_cast<double>(n),
          grad);
  }
  optimizer::apply_update(model, grad, o.learning_rate);
}

void validate(const TrainOptions& o) {
  if (o.hops < 1) throw std::invalid_argument("train: hops < 1");
  if (o.vocab_size <= o.hops)
    throw std::invalid_argument("train: vocab_size must exceed hops");
  if (o.top_k < 1) throw std::invalid_argument("train: top_k < 1");
  if (o.k < 1) throw std::invalid_argument("train: k < 1");
  if (!truncated_mode(o.mode) && o.group_size < 2)
    throw std::invalid_argument("train: group_size < 2 for trajectory modes");
  if (o.budget < 1) throw std::invalid_argument("train: budget < 1");
  if (o.lambda < 0.0) throw std::invalid_argument("train: lambda < 0");
  if (o.eta <= 0.0) throw std::invalid_argument("train: eta <= 0");
  if (o.eps_adv < 0.0) throw std::invalid_argument("train: eps_adv < 0");
  if (o.temperature <= 0.0) throw std::invalid_argument("train: temperature <= 0");
  if (o.clip_eps < 0.0 || o.clip_eps >= 1.0)
    throw std::invalid_argument("train: clip_eps outside [0, 1)");
  if (o.kl_beta < 0.0) throw std::invalid_argument("train: kl_beta < 0");
  if (o.learning_rate <= 0.0)
    throw std::invalid_argument("train: learning_rate <= 0");
  if (o.steps < 0) throw std::invalid_argument("train: steps < 0");
  if (o.batch_size < 1) throw std::invalid_argument("train: batch_size < 1");
  if (o.em_window < 1) throw std::invalid_argument("train: em_window < 1");
}

double rolling_em(const std::vector<double>& episode_em, int window) {
  if (episode_em.empty()) return 0.0;
  const size_t n = std::min<size_t>(static_cast<size_t>(window), episode_em.size());
  double sum = 0.0;
  for (size_t i = episode_em.size() - n; i < episode_em.size(); ++i)
    sum += episode_em[i];
  return sum / static_cast<double>(n);
}

}  // namespace

bool truncated_mode(Mode mode) {
  return mode == Mode::slate || mode == Mode::truncated_sparse;
}

const char* mode_name(Mode mode) {
  switch (mode) {
    case Mode::slate: return "slate";
    case Mode::full_group_dense: return "full_group_dense";
    case Mode::truncated_sparse: return "truncated_sparse";
    case Mode::em_final_only: return "em_final_only";
  }
  return "?";
}

Mode mode_from_name(const std::string& name) {
  if (name == "slate") return Mode::slate;
  if (name == "full_group_dense") return Mode::full_group_dense;
  if (name == "truncated_sparse") return Mode::truncated_sparse;
  if (name == "em_final_only") return Mode::em_final_only;
  throw std::invalid_argument("unknown train mode: " + name);
}

std::string metrics_row(const UpdateMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%lld,%.6f,%.6f,%.6f,%.6f,%.6f,%lld",
                m.update, m.tokens, m.mean_step_reward, m.mean_total_reward,
                m.em_rate, m.mean_kl, m.mean_abs_adv, m.wall_ms);
  return buf;
}

TrainResult train(const TrainOptions& o, sampler::StepJudge& judge,
                  const TrainHooks& hooks) {
  validate(o);

  auto vocab = std::make_shared<const policy::Vocabulary>(o.vocab_size, 2);
  policy::PolicyModel model(vocab, policy::BlockShape{});
  const policy::PolicyModel ref = model;  // anchor: the uniform init
  Rng rng(derive_seed(o.seed, kPolicyRngStream));

  sampler::RolloutConfig rc;
  rc.k = o.k;
  rc.budget = o.budget;
  rc.lambda = o.lambda;
  rc.eta = o.eta;
  rc.selection = o.selection;
  rc.eps_adv = o.eps_adv;
  rc.temperature = o.temperature;
  rc.score_mode = (o.mode == Mode::slate || o.mode == Mode::full_group_dense)
                      ? sampler::ScoreMode::dense_judge
                      : sampler::ScoreMode::sparse_em;
  rc.top_k = o.top_k;

  if (hooks.metrics) *hooks.metrics << kMetricsHeader << '\n';

  std::vector<UpdateMetrics> history;
  std::vector<double> episode_em;
  std::vector<double> grad;
  long long tokens = 0;
  uint64_t episode = 0;
  const auto start = std::chrono::steady_clock::now();

  for (int update = 1; update <= o.steps; ++update) {
    BatchStats stats;
    std::vector<Pending> queue;
    const bool record =
        hooks.trajectories &&
        (update - 1) % std::max(1, hooks.trajectory_every) == 0;

    for (int b = 0; b < o.batch_size; ++b, ++episode) {
      // episode index alone names the task, so runs with equal seeds see the
      // same task sequence whatever the mode
      const auto task =
          env::generate_task(derive_seed(o.seed, episode), o.hops, o.vocab_size);

      if (truncated_mode(o.mode)) {
        const auto handle_group = [&](const sampler::StepGroup& g) {
          stats.kl_sum +=
              policy::kl_to_reference(model, ref, policy::PrefixContext{g.context});
          ++stats.kl_count;
          for (const auto& c : g.candidates) {
            stats.abs_adv_sum += std::abs(c.advantage);
            ++stats.adv_count;
          }
          if (o.refresh == optimizer::Refresh::per_group) {
            const Pending one{{g}};
            apply_pending(model, ref, one, o, grad);
          } else {
            queue.push_back(Pending{{g}});
          }
        };
        const auto traj = sampler::rollout_truncated(
            model, task, judge, rc, rng,
            [&](const sampler::StepGroup& g, const env::EnvState&) {
              handle_group(g);
            });
        if (traj.forced_answer) {
          // the budget-exhausted answer is the only gradient the answer slot
          // sees on a search-heavy policy, so train it as a k=1 group
          sampler::StepGroup forced;
          forced.step_index = o.budget;
          forced.context = traj.groups.back().context;
          forced.candidates = {*traj.forced_answer};
          forced.selected = 0;
          sampler::fill_advantages(forced, rc);
          handle_group(forced);
        }
        tokens += traj.tokens_generated;
        stats.add_executed_steps(traj);
        stats.total_sum += traj.total_reward;
        ++stats.total_count;
        episode_em.push_back(static_cast<double>(traj.em));
        if (record) sampler::write_jsonl(*hooks.trajectories, traj, model.vocab());
      } else {
        const auto full =
            sampler::rollout_full_group(model, task, judge, rc, o.group_size, rng);
        Pending pending;
        double em_mean = 0.0;
        for (const auto& traj : full.rollouts) {
          tokens += traj.tokens_generated;
          em_mean += static_cast<double>(traj.em);
          stats.add_executed_steps(traj);
          for (const auto& g : traj.groups) {
            stats.kl_sum += policy::kl_to_reference(model, ref,
                                                    policy::PrefixContext{g.context});
            ++stats.kl_count;
            for (const auto& c : g.candidates) {
              stats.abs_adv_sum += std::abs(c.advantage);
              ++stats.adv_count;
            }
            pending.groups.push_back(g);
          }
          if (record) sampler::write_jsonl(*hooks.trajectories, traj, model.vocab());
        }
        em_mean /= static_cast<double>(full.rollouts.size());
        episode_em.push_back(em_mean);
        double ret_mean = 0.0;
        for (double r : full.returns) ret_mean += r;
        stats.total_sum += ret_mean / static_cast<double>(full.returns.size());
        ++stats.total_count;
        if (o.refresh == optimizer::Refresh::per_group)
          apply_pending(model, ref, pending, o, grad);
        else
          queue.push_back(std::move(pending));
      }
    }

    if (o.refresh == optimizer::Refresh::per_batch)
      for (const auto& pending : queue) apply_pending(model, ref, pending, o, grad);

    UpdateMetrics m;
    m.update = update;
    m.tokens = tokens;
    m.mean_step_reward =
        stats.step_count ? stats.step_sum / static_cast<double>(stats.step_count) : 0.0;
    m.mean_total_reward =
        stats.total_count ? stats.total_sum / static_cast<double>(stats.total_count)
                          : 0.0;
    m.em_rate = rolling_em(episode_em, o.em_window);
    m.mean_kl =
        stats.kl_count ? stats.kl_sum / static_cast<double>(stats.kl_count) : 0.0;
    m.mean_abs_adv =
        stats.adv_count ? stats.abs_adv_sum / static_cast<double>(stats.adv_count)
                        : 0.0;
    if (o.wall_clock)
      m.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                      std::chrono::steady_clock::now() - start)
                      .count();
    history.push_back(m);
    if (hooks.metrics) *hooks.metrics << metrics_row(m) << '\n';
    if (hooks.on_update) hooks.on_update(update, model);
  }

  const double final_em = history.empty() ? 0.0 : history.back().em_rate;
  return TrainResult{std::move(history), std::move(episode_em), tokens, final_em,
                     std::move(model)};
}

long long tokens_to_threshold(const TrainResult& result, double threshold) {
  for (const auto& m : result.history)
    if (m.em_rate >= threshold) return m.tokens;
  return -1;
}

}  // namespace slate::trainer
