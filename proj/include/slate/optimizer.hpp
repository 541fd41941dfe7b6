#pragma once

#include <span>

#include "slate/policy.hpp"
#include "slate/sampler.hpp"

namespace slate::optimizer {

enum class Refresh { per_group, per_batch };

struct UpdateConfig {
  double clip_eps = 0.2;
  double kl_beta = 0.001;
  double learning_rate = 0.05;
  Refresh refresh = Refresh::per_group;
};

// Masked-token mean of min(rho * A, clip(rho, 1 +- eps) * A), where rho is the
// per-token probability ratio against the block's stored sampling log-probs.
// Throws if the block has no trainable tokens.
double step_objective(const policy::PolicyModel& model,
                      const policy::PrefixContext& ctx,
                      const policy::ActionBlock& block, double advantage,
                      double clip_eps);

// d/dW of step_objective, scaled; tokens on the clipped branch contribute 0.
void accumulate_step_grad(const policy::PolicyModel& model,
                          const policy::PrefixContext& ctx,
                          const policy::ActionBlock& block, double advantage,
                          double clip_eps, double scale, std::span<double> grad);

// (1/k) sum of candidate objectives minus kl_beta * KL(model || ref) at the
// group's shared prefix.
double group_objective(const policy::PolicyModel& model,
                       const policy::PolicyModel& ref,
                       const sampler::StepGroup& group, const UpdateConfig& cfg);
void accumulate_group_grad(const policy::PolicyModel& model,
                           const policy::PolicyModel& ref,
                           const sampler::StepGroup& group,
                           const UpdateConfig& cfg, std::span<double> grad);

// One gradient-ascent step. Throws on non-finite gradient entries.
void apply_update(policy::PolicyModel& model, std::span<const double> grad,
                  double learning_rate);

}  // namespace slate::optimizer
