#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "slate/env.hpp"
#include "slate/policy.hpp"
#include "slate/rng.hpp"
#include "slate/sampler.hpp"

namespace slate::lab {

// Monte-Carlo estimate with a 95% half-width from 20 batch means.
struct Estimate {
  double value = 0.0;
  double ci = 0.0;
  long long trials = 0;
};

Estimate batched_mean(const std::vector<double>& per_trial);

// A step-reward process the estimators can draw from in two ways: whole
// trajectories (returns R = sum of step rewards), or k completions of step t
// that share a freshly drawn prefix.
class RewardSource {
 public:
  virtual ~RewardSource() = default;
  virtual int horizon() const = 0;
  virtual void begin_trial(uint64_t trial) = 0;
  virtual std::vector<double> sample_trajectory(Rng& rng) = 0;
  virtual std::vector<double> sample_step_group(int t, int k, Rng& rng) = 0;
};

// Synthetic process over i.i.d. ternary noise a_t ~ U{-1,0,+1}:
//   r_t = scale_t * a_t + coupling_strength * (a_1 + ... + a_{t-1})
//                       + future_covariance * a_{t-1}
// scale_t defaults to 1. coupling_strength feeds the running prefix sum into
// the step mean; future_covariance < 0 manufactures negative cross-step
// covariance, the regime where the step-level bound is allowed to fail.
enum class Coupling { independent, prefix_coupled };

struct RewardProcessSpec {
  int horizon = 4;
  std::vector<double> step_scales;  // empty: all ones
  double future_covariance = 0.0;
  Coupling coupling = Coupling::independent;
  double coupling_strength = 0.0;
};

struct AssumptionFlags {
  bool a1 = false;  // nonnegative cross-step covariance
  bool a2 = false;  // steps independent
  bool a3 = false;  // symmetric per-step variances
};

AssumptionFlags assumption_flags(const RewardProcessSpec& spec);
std::string config_hash(const RewardProcessSpec& spec);  // fnv1a, 16 hex chars

class ProcessRewardSource final : public RewardSource {
 public:
  explicit ProcessRewardSource(RewardProcessSpec spec);
  const RewardProcessSpec& spec() const { return spec_; }

  int horizon() const override { return spec_.horizon; }
  void begin_trial(uint64_t) override {}
  std::vector<double> sample_trajectory(Rng& rng) override;
  std::vector<double> sample_step_group(int t, int k, Rng& rng) override;

 private:
  double step_reward(int t, double a_t, double prefix_sum, double a_prev) const;
  RewardProcessSpec spec_;
};

// Step rewards measured on the real environment: each trial fixes a task, a
// trajectory is one single-path rollout of the policy (answer-constrained at
// the last budgeted step, zero-padded after an early answer), and a step group
// re-samples k scored candidates from the step-t prefix of such a path.
inline constexpr uint64_t kLabTaskStream = 0x6c697665ULL;

class LiveRewardSource final : public RewardSource {
 public:
  LiveRewardSource(const policy::PolicyModel& model, sampler::StepJudge& judge,
                   sampler::RolloutConfig cfg, uint64_t task_seed_base, int hops,
                   int vocab_size);

  const env::Task& current_task() const { return task_; }

  int horizon() const override { return cfg_.budget; }
  void begin_trial(uint64_t trial) override;
  std::vector<double> sample_trajectory(Rng& rng) override;
  std::vector<double> sample_step_group(int t, int k, Rng& rng) override;

 private:
  // walk a single sampled path to the start of step `t`; nullopt if the
  // policy answered first
  std::optional<env::EnvState> roll_prefix(int t, Rng& rng);
  double scored_total(const env::EnvState& state, const policy::ActionBlock& block,
                      int t);

  const policy::PolicyModel& model_;
  sampler::StepJudge& judge_;
  sampler::RolloutConfig cfg_;
  uint64_t task_seed_base_;
  int hops_;
  int vocab_size_;
  env::Task task_;
};

// E[(1/G) sum_i (R_i - mean)^2] over shared-task groups: the variance of the
// unnormalized trajectory advantage, (1 - 1/G) Var[R].
Estimate estimate_traj_adv_variance(RewardSource& source, int group_size,
                                    long long trials, Rng& rng);

// E[(1/k) sum_j (r_j - mean)^2] over shared-prefix groups: the prefix-averaged
// variance of the unnormalized step advantage at step t.
Estimate estimate_step_adv_variance(RewardSource& source, int t, int k,
                                    long long trials, Rng& rng);

// Within-trial (Bessel-corrected) variance of the return, m draws per trial.
Estimate estimate_return_variance(RewardSource& source, int m, long long trials,
                                  Rng& rng);

struct StepRatio {
  int t = 0;
  Estimate step_adv_var;
  double ratio = 0.0;  // step_adv_var / traj_adv_var
  double ratio_ci = 0.0;
};

struct TheoremCheck {
  int horizon = 0;
  int group_size = 0;  // G, and k = G for the step groups
  long long trials = 0;
  AssumptionFlags assumptions;
  Estimate traj_adv_var;
  std::vector<StepRatio> steps;
  double max_ratio = 0.0;
  double max_ratio_ci = 0.0;
  bool clause1_ok = false;        // max ratio <= 1 within 3 sigma
  bool clause2_applicable = false;  // all three assumptions
  bool clause2_ok = false;        // max ratio <= 1/T within 3 sigma
};

TheoremCheck check_theorem(RewardSource& source, const AssumptionFlags& flags,
                           int group_size, long long trials, Rng& rng);

// Law of total variance at step t: marginal variance against the
// within-prefix / between-prefix split measured from m completions per prefix
// (the between term is bias-corrected by within / m).
struct Decomposition {
  int t = 0;
  int m = 0;
  Estimate total;
  Estimate within;
  double between = 0.0;
  double between_ci = 0.0;
  double gap = 0.0;  // |within + between - total| / total
};

Decomposition total_variance_decomposition(RewardSource& source, int t, int m,
                                           long long trials, Rng& rng);

// Analytic sampling cost of one policy update on one question: G rollouts of
// length L versus k candidates at each of T steps of length L / T.
struct TokenCost {
  double full_group = 0.0;
  double truncated = 0.0;
  double ratio = 0.0;
};

TokenCost token_cost_accounting(int group_size, int horizon, double traj_tokens,
                                int k);

// Measured counterpart on the live environment (mean sampled tokens per task).
struct MeasuredTokens {
  double full_group = 0.0;
  double truncated = 0.0;
  double ratio = 0.0;
};

MeasuredTokens measure_token_costs(const policy::PolicyModel& model,
                                   sampler::StepJudge& judge,
                                   const sampler::RolloutConfig& cfg,
                                   int group_size, uint64_t task_seed_base,
                                   int hops, int vocab_size, int n_tasks,
                                   Rng& rng);

std::string theorem_json(const TheoremCheck& check, const std::string& hash);
std::string theorem_csv(const TheoremCheck& check, const std::string& hash);

}  // namespace slate::lab
