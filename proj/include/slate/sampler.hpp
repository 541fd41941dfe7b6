#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "slate/env.hpp"
#include "slate/judge.hpp"
#include "slate/policy.hpp"
#include "slate/remote_judge.hpp"

namespace slate::sampler {

enum class Selection { best_of_k, reward_weighted };
enum class ScoreMode { dense_judge, sparse_em };

struct RolloutConfig {
  int k = 5;       // candidates per step group
  int budget = 4;  // max steps before the answer is forced
  double lambda = 0.1;
  double eta = 0.7;  // selection softmax temperature
  Selection selection = Selection::reward_weighted;
  double eps_adv = 1e-6;
  double temperature = 1.0;
  ScoreMode score_mode = ScoreMode::dense_judge;
  bool k1_reinforce = true;  // k == 1: raw reward stands in for the advantage
  int top_k = 3;             // documents per search call
};

// Scoring seam. The environment state carries the ground truth for the rule
// oracle; the rendered context string is what a prompted judge gets to see.
class StepJudge {
 public:
  virtual ~StepJudge() = default;
  virtual judge::JudgeVerdict think(const env::EnvState& state,
                                    const std::string& context,
                                    const std::vector<std::string>& think_tokens) = 0;
  virtual judge::JudgeVerdict query(const env::EnvState& state,
                                    const std::string& context,
                                    const std::vector<std::string>& think_tokens,
                                    const std::vector<std::string>& query_tokens) = 0;
  virtual judge::JudgeVerdict answer(const env::EnvState& state,
                                     const std::string& context,
                                     const std::vector<std::string>& answer_tokens) = 0;
};

class OracleJudge final : public StepJudge {
 public:
  judge::JudgeVerdict think(const env::EnvState& state, const std::string&,
                            const std::vector<std::string>& think_tokens) override {
    return judge::oracle_score_think(state, think_tokens);
  }
  judge::JudgeVerdict query(const env::EnvState& state, const std::string&,
                            const std::vector<std::string>&,
                            const std::vector<std::string>& query_tokens) override {
    return judge::oracle_score_query(state, query_tokens);
  }
  judge::JudgeVerdict answer(const env::EnvState& state, const std::string&,
                             const std::vector<std::string>& answer_tokens) override {
    return judge::oracle_score_answer(answer_tokens, state.task);
  }
};

class RemoteStepJudge final : public StepJudge {
 public:
  explicit RemoteStepJudge(judge::RemoteJudgeConfig cfg) : remote_(std::move(cfg)) {}

  judge::JudgeVerdict think(const env::EnvState& state, const std::string& context,
                            const std::vector<std::string>& think_tokens) override;
  judge::JudgeVerdict query(const env::EnvState& state, const std::string& context,
                            const std::vector<std::string>& think_tokens,
                            const std::vector<std::string>& query_tokens) override;
  judge::JudgeVerdict answer(const env::EnvState& state, const std::string& context,
                             const std::vector<std::string>& answer_tokens) override;

 private:
  judge::RemoteJudge remote_;
};

struct StepCandidate {
  policy::ActionBlock block;
  judge::RewardBreakdown reward;
  double advantage = 0.0;
};

// k candidates sampled from one shared prefix.
struct StepGroup {
  int step_index = 1;
  policy::PrefixContext context;
  std::vector<StepCandidate> candidates;
  int selected = -1;
  std::shared_ptr<const std::string> prefix_text;
};

struct TrajectoryRecord {
  int64_t task_id = 0;
  std::vector<StepGroup> groups;
  // sampled when the budget ran out mid-search; scored but never trained
  std::optional<StepCandidate> forced_answer;
  int t_used = 0;
  long long tokens_generated = 0;  // sampled (trainable) tokens, all candidates
  int em = 0;
  double total_reward = 0.0;  // return of the selected path
  std::string final_text;
};

// (r - mean) / (population std + eps); a singleton group maps to {0}.
std::vector<double> group_advantages(const std::vector<double>& rewards,
                                     double eps);

// softmax(advantage / eta)
std::vector<double> selection_probabilities(const std::vector<double>& advantages,
                                            double eta);

// Normalized within the group; with k == 1 under k1_reinforce the raw reward
// total is used instead (the estimator degenerates to plain REINFORCE).
void fill_advantages(StepGroup& group, const RolloutConfig& cfg);

int select_candidate(const StepGroup& group, const RolloutConfig& cfg, Rng& rng);

judge::RewardBreakdown score_candidate(StepJudge& judge, const env::EnvState& state,
                                       const std::string& context,
                                       const policy::ActionBlock& block,
                                       const policy::Vocabulary& vocab, int t,
                                       const RolloutConfig& cfg);

StepGroup sample_step_group(const policy::PolicyModel& model,
                            const env::EnvState& state, StepJudge& judge,
                            const RolloutConfig& cfg, Rng& rng);

// Called once per scored-and-selected group, before the environment moves on;
// the state is the prefix the group was sampled from. Updating the model here
// makes later steps sample from the freshly updated policy.
using GroupCallback = std::function<void(const StepGroup&, const env::EnvState&)>;

TrajectoryRecord rollout_truncated(const policy::PolicyModel& model,
                                   const env::Task& task, StepJudge& judge,
                                   const RolloutConfig& cfg, Rng& rng,
                                   const GroupCallback& on_group = nullptr);

// G independent single-path rollouts of the same task; the return is the dense
// reward sum (or exact match, in sparse mode) and advantages are normalized
// across the group. The final budgeted step decodes answer-constrained, so
// every rollout ends in an answer.
struct FullGroupResult {
  std::vector<TrajectoryRecord> rollouts;
  std::vector<double> returns;
  std::vector<double> advantages;
};

FullGroupResult rollout_full_group(const policy::PolicyModel& model,
                                   const env::Task& task, StepJudge& judge,
                                   const RolloutConfig& cfg, int group_size,
                                   Rng& rng);

// One JSON line per step group, then a trajectory summary line.
void write_jsonl(std::ostream& out, const TrajectoryRecord& traj,
                 const policy::Vocabulary& vocab);

std::string block_text(const policy::Vocabulary& vocab,
                       const policy::ActionBlock& block);

}  // namespace slate::sampler
