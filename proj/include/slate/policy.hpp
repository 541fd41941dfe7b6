#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "slate/rng.hpp"

namespace slate::policy {

// Closed token set: entity tokens, filler words, then the six control tags.
class Vocabulary {
 public:
  Vocabulary(int n_entities, int n_fillers = 2);

  int size() const { return static_cast<int>(tokens_.size()); }
  int entity_count() const { return n_entities_; }
  int filler_count() const { return n_fillers_; }
  int content_count() const { return n_entities_ + n_fillers_; }

  int think_open() const { return content_count() + 0; }
  int think_close() const { return content_count() + 1; }
  int search_open() const { return content_count() + 2; }
  int search_close() const { return content_count() + 3; }
  int answer_open() const { return content_count() + 4; }
  int answer_close() const { return content_count() + 5; }

  const std::string& token_text(int id) const;
  int token_id(const std::string& text) const;  // throws on unknown token
  bool is_entity(int id) const { return id >= 0 && id < n_entities_; }
  bool is_content(int id) const { return id >= 0 && id < content_count(); }

  std::vector<std::string> token_strings(std::span<const int> ids) const;

 private:
  int n_entities_;
  int n_fillers_;
  std::vector<std::string> tokens_;
};

struct BlockShape {
  static constexpr int kMaxLen = 4;  // content-token cap per section
  int think_len = 1;
  int payload_len = 1;
};

// Conditioning summary of the shared prefix: the latest revealed entity.
struct PrefixContext {
  int latest_entity = 0;
};

enum class ActionKind { search_action, answer_action };

enum class Slot { think, decide, query, answer };

// One grammar-shaped action: <think> t* </think> then a tagged payload. The
// decision tag (<search>/<answer>) is itself a sampled token unless decoding
// was answer-constrained. mask == 1 exactly on sampled tokens.
struct ActionBlock {
  ActionKind kind = ActionKind::search_action;
  std::vector<int> tokens;
  std::vector<uint8_t> mask;
  std::vector<double> logprobs_old;  // 0 where mask == 0
  int think_len = 0;
  int payload_len = 0;
  double temperature = 1.0;

  std::vector<int> think_tokens() const;
  std::vector<int> payload_tokens() const;
  int decide_position() const { return think_len + 2; }
  int masked_count() const;
};

class PolicyModel {
 public:
  PolicyModel(std::shared_ptr<const Vocabulary> vocab, BlockShape shape);

  const Vocabulary& vocab() const { return *vocab_; }
  std::shared_ptr<const Vocabulary> vocab_ptr() const { return vocab_; }
  const BlockShape& shape() const { return shape_; }

  int slot_count() const { return 3 * BlockShape::kMaxLen + 1; }
  int feature_count() const { return vocab_->entity_count() * slot_count(); }
  int weight_count() const { return feature_count() * vocab_->size(); }

  int slot_index(Slot slot, int pos) const;
  int feature_index(const PrefixContext& ctx, Slot slot, int pos) const;

  double weight(int feature, int token) const;
  void set_weight(int feature, int token, double w);
  void add_weight(int feature, int token, double dw);
  std::span<const double> weights() const { return weights_; }
  std::span<double> mutable_weights() { return weights_; }

  // allowed token ids at a slot (content set, or the two decision tags)
  std::vector<int> allowed_tokens(Slot slot) const;

 private:
  std::shared_ptr<const Vocabulary> vocab_;
  BlockShape shape_;
  std::vector<double> weights_;
};

// Probabilities over `allowed` for one slot, softmax(w / temperature).
std::vector<double> token_distribution(const PolicyModel& model,
                                       const PrefixContext& ctx, Slot slot,
                                       int pos, double temperature);

ActionBlock sample_action(const PolicyModel& model, const PrefixContext& ctx,
                          double temperature, Rng& rng,
                          bool constrain_answer = false);

// Per-token log-probs of `block` under `model` at the block's own sampling
// temperature; masked-out tokens report 0.
std::vector<double> log_prob(const PolicyModel& model, const PrefixContext& ctx,
                             const ActionBlock& block);

// d/dW of sum of masked-token log-probs, laid out like the weight vector.
std::vector<double> grad_log_prob(const PolicyModel& model,
                                  const PrefixContext& ctx,
                                  const ActionBlock& block);
void accumulate_grad_log_prob(const PolicyModel& model, const PrefixContext& ctx,
                              const ActionBlock& block, double scale,
                              std::span<double> grad);
// Same, but each masked token position carries its own weight.
void accumulate_grad_log_prob_per_token(const PolicyModel& model,
                                        const PrefixContext& ctx,
                                        const ActionBlock& block,
                                        std::span<const double> token_scale,
                                        std::span<double> grad);

// Exact KL(model || reference) of the whole action distribution at this
// context; grammar tags are deterministic on both sides and contribute zero.
double kl_to_reference(const PolicyModel& model, const PolicyModel& reference,
                       const PrefixContext& ctx);
void accumulate_kl_grad(const PolicyModel& model, const PolicyModel& reference,
                        const PrefixContext& ctx, double scale,
                        std::span<double> grad);

double categorical_kl(std::span<const double> p, std::span<const double> q);

void save_checkpoint(const PolicyModel& model, const std::filesystem::path& path);
PolicyModel load_checkpoint(const std::filesystem::path& path);

}  // namespace slate::policy
