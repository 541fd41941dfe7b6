#include "slate/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace slate::optimizer {

namespace {

void check_clip(double clip_eps) {
  if (clip_eps < 0.0 || clip_eps >= 1.0)
    throw std::invalid_argument("clip_eps outside [0, 1)");
}

}  // namespace

double step_objective(const policy::PolicyModel& model,
                      const policy::PrefixContext& ctx,
                      const policy::ActionBlock& block, double advantage,
                      double clip_eps) {
  check_clip(clip_eps);
  const int m = block.masked_count();
  if (m == 0) throw std::invalid_argument("step_objective: block has no trainable tokens");
  const auto lp = policy::log_prob(model, ctx, block);
  double sum = 0.0;
  for (size_t u = 0; u < block.tokens.size(); ++u) {
    if (!block.mask[u]) continue;
    const double rho = std::exp(lp[u] - block.logprobs_old[u]);
    const double clipped = std::clamp(rho, 1.0 - clip_eps, 1.0 + clip_eps);
    sum += std::min(rho * advantage, clipped * advantage);
  }
  return sum / m;
}

void accumulate_step_grad(const policy::PolicyModel& model,
                          const policy::PrefixContext& ctx,
                          const policy::ActionBlock& block, double advantage,
                          double clip_eps, double scale, std::span<double> grad) {
  check_clip(clip_eps);
  const int m = block.masked_count();
  if (m == 0) throw std::invalid_argument("step grad: block has no trainable tokens");
  const auto lp = policy::log_prob(model, ctx, block);
  std::vector<double> token_scale(block.tokens.size(), 0.0);
  for (size_t u = 0; u < block.tokens.size(); ++u) {
    if (!block.mask[u]) continue;
    const double rho = std::exp(lp[u] - block.logprobs_old[u]);
    const double clipped = std::clamp(rho, 1.0 - clip_eps, 1.0 + clip_eps);
    // on the clipped branch the surrogate is constant in the weights
    if (rho * advantage <= clipped * advantage)
      token_scale[u] = scale * advantage * rho / m;
  }
  policy::accumulate_grad_log_prob_per_token(model, ctx, block, token_scale, grad);
}

double group_objective(const policy::PolicyModel& model,
                       const policy::PolicyModel& ref,
                       const sampler::StepGroup& group, const UpdateConfig& cfg) {
  if (group.candidates.empty())
    throw std::invalid_argument("group_objective: empty group");
  double sum = 0.0;
  for (const auto& c : group.candidates)
    sum += step_objective(model, group.context, c.block, c.advantage, cfg.clip_eps);
  sum /= static_cast<double>(group.candidates.size());
  if (cfg.kl_beta != 0.0)
    sum -= cfg.kl_beta * policy::kl_to_reference(model, ref, group.context);
  return sum;
}

void accumulate_group_grad(const policy::PolicyModel& model,
                           const policy::PolicyModel& ref,
                           const sampler::StepGroup& group,
                           const UpdateConfig& cfg, std::span<double> grad) {
  if (group.candidates.empty())
    throw std::invalid_argument("group grad: empty group");
  const double inv_k = 1.0 / static_cast<double>(group.candidates.size());
  for (const auto& c : group.candidates)
    accumulate_step_grad(model, group.context, c.block, c.advantage, cfg.clip_eps,
                         inv_k, grad);
  if (cfg.kl_beta != 0.0)
    policy::accumulate_kl_grad(model, ref, group.context, -cfg.kl_beta, grad);
}

void apply_update(policy::PolicyModel& model, std::span<const double> grad,
                  double learning_rate) {
  auto weights = model.mutable_weights();
  if (grad.size() != weights.size())
    throw std::invalid_argument("apply_update: gradient size mismatch");
  for (double g : grad) {
    if (!std::isfinite(g))
      throw std::runtime_error("apply_update: non-finite gradient");
  }
  for (size_t i = 0; i < weights.size(); ++i)
    weights[i] += learning_rate * grad[i];
}

}  // namespace slate::optimizer
