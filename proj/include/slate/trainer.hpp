#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "slate/optimizer.hpp"
#include "slate/sampler.hpp"

namespace slate::trainer {

// The four training variants under comparison: the full method, classic
// trajectory-level groups with the same dense rewards, truncated sampling with
// exact-match-only rewards, and trajectory-level groups with exact-match-only
// rewards.
enum class Mode { slate, full_group_dense, truncated_sparse, em_final_only };

bool truncated_mode(Mode mode);
const char* mode_name(Mode mode);
Mode mode_from_name(const std::string& name);  // throws on unknown name

struct TrainOptions {
  Mode mode = Mode::slate;

  // environment
  int hops = 3;
  int vocab_size = 12;
  int top_k = 3;
  uint64_t seed = 1;

  // sampling
  int k = 5;           // candidates per step group
  int group_size = 5;  // G, trajectory-level modes
  int budget = 4;      // B
  double lambda = 0.1;
  double eta = 0.7;
  double eps_adv = 1e-6;
  double temperature = 1.0;
  sampler::Selection selection = sampler::Selection::reward_weighted;

  // optimization
  double clip_eps = 0.2;
  double kl_beta = 0.001;
  double learning_rate = 0.6;
  int steps = 500;      // update batches
  int batch_size = 4;   // episodes per update
  optimizer::Refresh refresh = optimizer::Refresh::per_group;

  // reporting
  int em_window = 50;       // rolling exact-match window, in episodes
  bool wall_clock = false;  // real timestamps in metrics (off: zeros, so runs
                            // with equal configs produce identical bytes)
};

struct UpdateMetrics {
  int update = 0;
  long long tokens = 0;  // cumulative sampled tokens
  double mean_step_reward = 0.0;
  double mean_total_reward = 0.0;
  double em_rate = 0.0;
  double mean_kl = 0.0;
  double mean_abs_adv = 0.0;
  long long wall_ms = 0;
};

inline constexpr const char* kMetricsHeader =
    "update,tokens,mean_step_reward,mean_total_reward,em_rate,mean_kl,"
    "mean_abs_adv,wall_ms";

std::string metrics_row(const UpdateMetrics& m);  // one CSV line, no newline

struct TrainHooks {
  std::ostream* metrics = nullptr;       // header plus one row per update
  std::ostream* trajectories = nullptr;  // JSONL for sampled episodes
  int trajectory_every = 1;              // record episodes of every Nth update
  std::function<void(int update, const policy::PolicyModel& model)> on_update;
};

struct TrainResult {
  std::vector<UpdateMetrics> history;
  std::vector<double> episode_em;  // per episode; group mean for G-modes
  long long total_tokens = 0;
  double final_em = 0.0;  // rolling rate after the last update
  policy::PolicyModel model;
};

TrainResult train(const TrainOptions& options, sampler::StepJudge& judge,
                  const TrainHooks& hooks = {});

// Cumulative tokens at the first update whose rolling exact-match rate reaches
// the threshold; -1 if it never does.
long long tokens_to_threshold(const TrainResult& result, double threshold);

}  // namespace slate::trainer
