#include "slate/variance_lab.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace slate::lab {

namespace {

constexpr int kBatches = 20;

double ternary(Rng& rng) { return static_cast<double>(rng.pick_index(3)) - 1.0; }

double fmt_guard(double v) { return v == 0.0 ? 0.0 : v; }  // normalize -0

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", fmt_guard(v));
  return buf;
}

// 95% half-width of the mean of `values` from batch means
Estimate summarize(const std::vector<double>& values,
                   const std::vector<double>& batch_stats) {
  Estimate e;
  e.trials = static_cast<long long>(values.size());
  double mean = 0.0;
  for (double b : batch_stats) mean += b;
  mean /= static_cast<double>(batch_stats.size());
  e.value = mean;
  if (batch_stats.size() >= 2) {
    double sq = 0.0;
    for (double b : batch_stats) sq += (b - mean) * (b - mean);
    const double sd = std::sqrt(sq / static_cast<double>(batch_stats.size() - 1));
    e.ci = 1.96 * sd / std::sqrt(static_cast<double>(batch_stats.size()));
  }
  return e;
}

std::vector<std::pair<size_t, size_t>> batch_ranges(size_t n) {
  const size_t nb = std::min<size_t>(kBatches, n);
  std::vector<std::pair<size_t, size_t>> ranges;
  for (size_t b = 0; b < nb; ++b)
    ranges.emplace_back(b * n / nb, (b + 1) * n / nb);
  return ranges;
}

Estimate batched_variance(const std::vector<double>& values) {
  if (values.size() < 4)
    throw std::invalid_argument("batched_variance: too few samples");
  std::vector<double> batch_vars;
  for (const auto& [lo, hi] : batch_ranges(values.size())) {
    const size_t n = hi - lo;
    if (n < 2) continue;
    double mean = 0.0;
    for (size_t i = lo; i < hi; ++i) mean += values[i];
    mean /= static_cast<double>(n);
    double sq = 0.0;
    for (size_t i = lo; i < hi; ++i) sq += (values[i] - mean) * (values[i] - mean);
    batch_vars.push_back(sq / static_cast<double>(n - 1));
  }
  return summarize(values, batch_vars);
}

double ratio_halfwidth(double num_value, double num_ci, double den_value,
                       double den_ci) {
  if (den_value == 0.0) return 0.0;
  const double da = num_ci / den_value;
  const double db = num_value * den_ci / (den_value * den_value);
  return std::sqrt(da * da + db * db);
}

}  // namespace

Estimate batched_mean(const std::vector<double>& per_trial) {
  if (per_trial.empty()) throw std::invalid_argument("batched_mean: no samples");
  std::vector<double> batch_means;
  for (const auto& [lo, hi] : batch_ranges(per_trial.size())) {
    double m = 0.0;
    for (size_t i = lo; i < hi; ++i) m += per_trial[i];
    batch_means.push_back(m / static_cast<double>(hi - lo));
  }
  return summarize(per_trial, batch_means);
}

// --- synthetic process ---

ProcessRewardSource::ProcessRewardSource(RewardProcessSpec spec)
    : spec_(std::move(spec)) {
  if (spec_.horizon < 1)
    throw std::invalid_argument("reward process: horizon < 1");
  if (!spec_.step_scales.empty() &&
      spec_.step_scales.size() != static_cast<size_t>(spec_.horizon))
    throw std::invalid_argument("reward process: scale profile length != horizon");
}

double ProcessRewardSource::step_reward(int t, double a_t, double prefix_sum,
                                        double a_prev) const {
  const double scale =
      spec_.step_scales.empty() ? 1.0 : spec_.step_scales[static_cast<size_t>(t) - 1];
  double r = scale * a_t + spec_.future_covariance * a_prev;
  if (spec_.coupling == Coupling::prefix_coupled)
    r += spec_.coupling_strength * prefix_sum;
  return r;
}

std::vector<double> ProcessRewardSource::sample_trajectory(Rng& rng) {
  std::vector<double> r(static_cast<size_t>(spec_.horizon));
  double prefix_sum = 0.0;
  double a_prev = 0.0;
  for (int t = 1; t <= spec_.horizon; ++t) {
    const double a = ternary(rng);
    r[static_cast<size_t>(t) - 1] = step_reward(t, a, prefix_sum, a_prev);
    prefix_sum += a;
    a_prev = a;
  }
  return r;
}

std::vector<double> ProcessRewardSource::sample_step_group(int t, int k,
                                                           Rng& rng) {
  if (t < 1 || t > spec_.horizon)
    throw std::invalid_argument("sample_step_group: step outside horizon");
  if (k < 1) throw std::invalid_argument("sample_step_group: k < 1");
  double prefix_sum = 0.0;
  double a_prev = 0.0;
  for (int s = 1; s < t; ++s) {
    const double a = ternary(rng);
    prefix_sum += a;
    a_prev = a;
  }
  std::vector<double> group(static_cast<size_t>(k));
  for (int j = 0; j < k; ++j)
    group[static_cast<size_t>(j)] = step_reward(t, ternary(rng), prefix_sum, a_prev);
  return group;
}

AssumptionFlags assumption_flags(const RewardProcessSpec& spec) {
  AssumptionFlags f;
  const bool coupled = spec.coupling == Coupling::prefix_coupled;
  f.a1 = spec.future_covariance >= 0.0 &&
         (!coupled || spec.coupling_strength >= 0.0);
  f.a2 = !coupled && spec.future_covariance == 0.0;
  f.a3 = true;
  for (double s : spec.step_scales)
    if (std::abs(s - spec.step_scales[0]) > 1e-12) f.a3 = false;
  return f;
}

std::string config_hash(const RewardProcessSpec& spec) {
  std::ostringstream os;
  os << "T=" << spec.horizon << ";scales=";
  if (spec.step_scales.empty()) {
    os << "uniform";
  } else {
    for (size_t i = 0; i < spec.step_scales.size(); ++i) {
      if (i) os << ',';
      os << num(spec.step_scales[i]);
    }
  }
  os << ";fc=" << num(spec.future_covariance)
     << ";coupling=" << (spec.coupling == Coupling::prefix_coupled ? "prefix" : "iid")
     << ";cs=" << num(spec.coupling_strength);
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(os.str())));
  return buf;
}

// --- live source ---

LiveRewardSource::LiveRewardSource(const policy::PolicyModel& model,
                                   sampler::StepJudge& judge,
                                   sampler::RolloutConfig cfg,
                                   uint64_t task_seed_base, int hops,
                                   int vocab_size)
    : model_(model),
      judge_(judge),
      cfg_(cfg),
      task_seed_base_(task_seed_base),
      hops_(hops),
      vocab_size_(vocab_size) {
  begin_trial(0);
}

void LiveRewardSource::begin_trial(uint64_t trial) {
  task_ = env::generate_task(derive_seed(task_seed_base_, kLabTaskStream, trial),
                             hops_, vocab_size_);
}

double LiveRewardSource::scored_total(const env::EnvState& state,
                                      const policy::ActionBlock& block, int t) {
  return sampler::score_candidate(judge_, state, env::context_text(state), block,
                                  model_.vocab(), t, cfg_)
      .total;
}

std::vector<double> LiveRewardSource::sample_trajectory(Rng& rng) {
  std::vector<double> r(static_cast<size_t>(cfg_.budget), 0.0);
  env::EnvState state = env::initial_state(task_);
  for (int t = 1; t <= cfg_.budget; ++t) {
    const auto block = policy::sample_action(
        model_, policy::PrefixContext{env::latest_revealed_entity(state)},
        cfg_.temperature, rng, /*constrain_answer=*/t == cfg_.budget);
    r[static_cast<size_t>(t) - 1] = scored_total(state, block, t);
    if (block.kind == policy::ActionKind::answer_action) break;
    const auto query = model_.vocab().token_strings(block.payload_tokens());
    state = env::reveal(state, env::search(state, query, cfg_.top_k));
  }
  return r;
}

std::optional<env::EnvState> LiveRewardSource::roll_prefix(int t, Rng& rng) {
  env::EnvState state = env::initial_state(task_);
  for (int s = 1; s < t; ++s) {
    const auto block = policy::sample_action(
        model_, policy::PrefixContext{env::latest_revealed_entity(state)},
        cfg_.temperature, rng, false);
    if (block.kind == policy::ActionKind::answer_action) return std::nullopt;
    const auto query = model_.vocab().token_strings(block.payload_tokens());
    state = env::reveal(state, env::search(state, query, cfg_.top_k));
  }
  return state;
}

std::vector<double> LiveRewardSource::sample_step_group(int t, int k, Rng& rng) {
  if (t < 1 || t > cfg_.budget)
    throw std::invalid_argument("sample_step_group: step outside budget");
  if (k < 1) throw std::invalid_argument("sample_step_group: k < 1");
  std::vector<double> group(static_cast<size_t>(k), 0.0);
  const auto prefix = roll_prefix(t, rng);
  if (!prefix) return group;  // path already answered: step emits nothing
  for (int j = 0; j < k; ++j) {
    const auto block = policy::sample_action(
        model_, policy::PrefixContext{env::latest_revealed_entity(*prefix)},
        cfg_.temperature, rng, false);
    group[static_cast<size_t>(j)] = scored_total(*prefix, block, t);
  }
  return group;
}

// --- estimators ---

Estimate estimate_traj_adv_variance(RewardSource& source, int group_size,
                                    long long trials, Rng& rng) {
  if (group_size < 2)
    throw std::invalid_argument("traj adv variance: group_size < 2");
  if (trials < 1) throw std::invalid_argument("traj adv variance: trials < 1");
  std::vector<double> per_trial;
  per_trial.reserve(static_cast<size_t>(trials));
  for (long long trial = 0; trial < trials; ++trial) {
    source.begin_trial(static_cast<uint64_t>(trial));
    std::vector<double> returns(static_cast<size_t>(group_size));
    for (int i = 0; i < group_size; ++i) {
      const auto traj = source.sample_trajectory(rng);
      double sum = 0.0;
      for (double r : traj) sum += r;
      returns[static_cast<size_t>(i)] = sum;
    }
    double mean = 0.0;
    for (double r : returns) mean += r;
    mean /= group_size;
    double sq = 0.0;
    for (double r : returns) sq += (r - mean) * (r - mean);
    per_trial.push_back(sq / group_size);
  }
  return batched_mean(per_trial);
}

Estimate estimate_step_adv_variance(RewardSource& source, int t, int k,
                                    long long trials, Rng& rng) {
  if (k < 2) throw std::invalid_argument("step adv variance: k < 2");
  if (trials < 1) throw std::invalid_argument("step adv variance: trials < 1");
  std::vector<double> per_trial;
  per_trial.reserve(static_cast<size_t>(trials));
  for (long long trial = 0; trial < trials; ++trial) {
    source.begin_trial(static_cast<uint64_t>(trial));
    const auto group = source.sample_step_group(t, k, rng);
    double mean = 0.0;
    for (double r : group) mean += r;
    mean /= k;
    double sq = 0.0;
    for (double r : group) sq += (r - mean) * (r - mean);
    per_trial.push_back(sq / k);
  }
  return batched_mean(per_trial);
}

Estimate estimate_return_variance(RewardSource& source, int m, long long trials,
                                  Rng& rng) {
  if (m < 2) throw std::invalid_argument("return variance: m < 2");
  std::vector<double> per_trial;
  per_trial.reserve(static_cast<size_t>(trials));
  for (long long trial = 0; trial < trials; ++trial) {
    source.begin_trial(static_cast<uint64_t>(trial));
    std::vector<double> returns(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) {
      const auto traj = source.sample_trajectory(rng);
      double sum = 0.0;
      for (double r : traj) sum += r;
      returns[static_cast<size_t>(i)] = sum;
    }
    double mean = 0.0;
    for (double r : returns) mean += r;
    mean /= m;
    double sq = 0.0;
    for (double r : returns) sq += (r - mean) * (r - mean);
    per_trial.push_back(sq / (m - 1));
  }
  return batched_mean(per_trial);
}

TheoremCheck check_theorem(RewardSource& source, const AssumptionFlags& flags,
                           int group_size, long long trials, Rng& rng) {
  TheoremCheck check;
  check.horizon = source.horizon();
  check.group_size = group_size;
  check.trials = trials;
  check.assumptions = flags;
  check.traj_adv_var = estimate_traj_adv_variance(source, group_size, trials, rng);

  for (int t = 1; t <= check.horizon; ++t) {
    StepRatio sr;
    sr.t = t;
    sr.step_adv_var = estimate_step_adv_variance(source, t, group_size, trials, rng);
    if (check.traj_adv_var.value != 0.0) {
      sr.ratio = sr.step_adv_var.value / check.traj_adv_var.value;
      sr.ratio_ci = ratio_halfwidth(sr.step_adv_var.value, sr.step_adv_var.ci,
                                    check.traj_adv_var.value,
                                    check.traj_adv_var.ci);
    }
    check.steps.push_back(sr);
  }

  for (const auto& sr : check.steps) {
    if (sr.ratio > check.max_ratio) {
      check.max_ratio = sr.ratio;
      check.max_ratio_ci = sr.ratio_ci;
    }
  }
  if (check.max_ratio == 0.0 && !check.steps.empty())
    check.max_ratio_ci = check.steps.front().ratio_ci;

  check.clause1_ok = check.max_ratio <= 1.0 + 3.0 * check.max_ratio_ci;
  check.clause2_applicable = flags.a1 && flags.a2 && flags.a3;
  check.clause2_ok =
      check.clause2_applicable &&
      check.max_ratio <= 1.0 / check.horizon + 3.0 * check.max_ratio_ci;
  return check;
}

Decomposition total_variance_decomposition(RewardSource& source, int t, int m,
                                           long long trials, Rng& rng) {
  if (m < 2) throw std::invalid_argument("decomposition: m < 2");
  if (trials < 4) throw std::invalid_argument("decomposition: too few trials");

  Decomposition d;
  d.t = t;
  d.m = m;

  std::vector<double> marginals;
  marginals.reserve(static_cast<size_t>(trials));
  for (long long trial = 0; trial < trials; ++trial) {
    source.begin_trial(static_cast<uint64_t>(trial));
    marginals.push_back(source.sample_trajectory(rng)[static_cast<size_t>(t) - 1]);
  }
  d.total = batched_variance(marginals);

  std::vector<double> withins, means;
  withins.reserve(static_cast<size_t>(trials));
  means.reserve(static_cast<size_t>(trials));
  for (long long trial = 0; trial < trials; ++trial) {
    source.begin_trial(static_cast<uint64_t>(trial));
    const auto group = source.sample_step_group(t, m, rng);
    double mean = 0.0;
    for (double r : group) mean += r;
    mean /= m;
    double sq = 0.0;
    for (double r : group) sq += (r - mean) * (r - mean);
    withins.push_back(sq / (m - 1));
    means.push_back(mean);
  }
  d.within = batched_mean(withins);
  const Estimate mean_hat_var = batched_variance(means);
  // Var[group mean] = between + within / m
  d.between = mean_hat_var.value - d.within.value / m;
  d.between_ci = std::sqrt(mean_hat_var.ci * mean_hat_var.ci +
                           (d.within.ci / m) * (d.within.ci / m));
  d.gap = std::abs(d.within.value + d.between - d.total.value) /
          std::max(std::abs(d.total.value), 1e-12);
  return d;
}

TokenCost token_cost_accounting(int group_size, int horizon, double traj_tokens,
                                int k) {
  if (group_size < 1 || horizon < 1 || k < 1 || traj_tokens <= 0.0)
    throw std::invalid_argument("token_cost_accounting: bad arguments");
  TokenCost c;
  c.full_group = static_cast<double>(group_size) * traj_tokens;
  c.truncated = static_cast<double>(k) * horizon * (traj_tokens / horizon);
  c.ratio = c.truncated / c.full_group;
  return c;
}

MeasuredTokens measure_token_costs(const policy::PolicyModel& model,
                                   sampler::StepJudge& judge,
                                   const sampler::RolloutConfig& cfg,
                                   int group_size, uint64_t task_seed_base,
                                   int hops, int vocab_size, int n_tasks,
                                   Rng& rng) {
  if (n_tasks < 1) throw std::invalid_argument("measure_token_costs: n_tasks < 1");
  MeasuredTokens m;
  for (int i = 0; i < n_tasks; ++i) {
    const auto task = env::generate_task(
        derive_seed(task_seed_base, kLabTaskStream, static_cast<uint64_t>(i)),
        hops, vocab_size);
    const auto full = sampler::rollout_full_group(model, task, judge, cfg,
                                                  group_size, rng);
    long long full_tokens = 0;
    for (const auto& tr : full.rollouts) full_tokens += tr.tokens_generated;
    m.full_group += static_cast<double>(full_tokens);
    const auto trunc = sampler::rollout_truncated(model, task, judge, cfg, rng);
    m.truncated += static_cast<double>(trunc.tokens_generated);
  }
  m.full_group /= n_tasks;
  m.truncated /= n_tasks;
  m.ratio = m.truncated / m.full_group;
  return m;
}

// --- reporting ---

std::string theorem_json(const TheoremCheck& check, const std::string& hash) {
  using nlohmann::ordered_json;
  ordered_json j;
  j["config_hash"] = hash;
  j["horizon"] = check.horizon;
  j["group_size"] = check.group_size;
  j["trials"] = check.trials;
  j["assumptions"] = {{"a1", check.assumptions.a1},
                      {"a2", check.assumptions.a2},
                      {"a3", check.assumptions.a3}};
  j["traj_adv_var"] = {{"value", check.traj_adv_var.value},
                       {"ci", check.traj_adv_var.ci}};
  j["steps"] = ordered_json::array();
  for (const auto& sr : check.steps) {
    j["steps"].push_back({{"t", sr.t},
                          {"step_adv_var", sr.step_adv_var.value},
                          {"ci", sr.step_adv_var.ci},
                          {"ratio", sr.ratio},
                          {"ratio_ci", sr.ratio_ci}});
  }
  j["max_ratio"] = check.max_ratio;
  j["max_ratio_ci"] = check.max_ratio_ci;
  j["bounds"] = {{"clause1", 1.0}, {"clause2", 1.0 / check.horizon}};
  j["clause1_ok"] = check.clause1_ok;
  j["clause2_applicable"] = check.clause2_applicable;
  j["clause2_ok"] = check.clause2_ok;
  return j.dump(2) + "\n";
}

std::string theorem_csv(const TheoremCheck& check, const std::string& hash) {
  std::ostringstream os;
  os << "config_hash,horizon,group_size,trials,t,step_adv_var,step_ci,"
        "traj_adv_var,traj_ci,ratio,ratio_ci,a1,a2,a3,clause1_ok,"
        "clause2_applicable,clause2_ok\n";
  for (const auto& sr : check.steps) {
    os << hash << ',' << check.horizon << ',' << check.group_size << ','
       << check.trials << ',' << sr.t << ',' << num(sr.step_adv_var.value) << ','
       << num(sr.step_adv_var.ci) << ',' << num(check.traj_adv_var.value) << ','
       << num(check.traj_adv_var.ci) << ',' << num(sr.ratio) << ','
       << num(sr.ratio_ci) << ',' << check.assumptions.a1 << ','
       << check.assumptions.a2 << ',' << check.assumptions.a3 << ','
       << check.clause1_ok << ',' << check.clause2_applicable << ','
       << check.clause2_ok << '\n';
  }
  return os.str();
}

}  // namespace slate::lab
