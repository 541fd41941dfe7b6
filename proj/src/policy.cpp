#include "slate/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace slate::policy {

namespace {

const char* kControlTokens[6] = {"<think>",  "</think>", "<search>",
                                 "</search>", "<answer>", "</answer>"};

struct SlotDist {
  std::vector<int> allowed;
  std::vector<double> logp;  // aligned with allowed
  std::vector<double> prob;
};

SlotDist slot_distribution(const PolicyModel& model, const PrefixContext& ctx,
                           Slot slot, int pos, double temperature) {
  if (temperature <= 0.0)
    throw std::invalid_argument("policy: temperature must be > 0");
  SlotDist d;
  d.allowed = model.allowed_tokens(slot);
  const int f = model.feature_index(ctx, slot, pos);
  d.logp.resize(d.allowed.size());
  double hi = -1e300;
  for (size_t i = 0; i < d.allowed.size(); ++i) {
    d.logp[i] = model.weight(f, d.allowed[i]) / temperature;
    hi = std::max(hi, d.logp[i]);
  }
  double z = 0.0;
  for (double& l : d.logp) z += std::exp(l - hi);
  const double log_z = hi + std::log(z);
  d.prob.resize(d.logp.size());
  for (size_t i = 0; i < d.logp.size(); ++i) {
    d.logp[i] -= log_z;
    d.prob[i] = std::exp(d.logp[i]);
  }
  return d;
}

int index_of(const std::vector<int>& ids, int id) {
  const auto it = std::find(ids.begin(), ids.end(), id);
  if (it == ids.end())
    throw std::invalid_argument("policy: token not allowed at this slot");
  return static_cast<int>(it - ids.begin());
}

Slot payload_slot(ActionKind kind) {
  return kind == ActionKind::search_action ? Slot::query : Slot::answer;
}

}  // namespace

// --- Vocabulary ---

Vocabulary::Vocabulary(int n_entities, int n_fillers)
    : n_entities_(n_entities), n_fillers_(n_fillers) {
  if (n_entities < 1) throw std::invalid_argument("Vocabulary: need >= 1 entity");
  if (n_fillers < 0) throw std::invalid_argument("Vocabulary: negative fillers");
  tokens_.reserve(n_entities + n_fillers + 6);
  for (int i = 0; i < n_entities; ++i) tokens_.push_back("e" + std::to_string(i));
  for (int i = 0; i < n_fillers; ++i) tokens_.push_back("w" + std::to_string(i));
  for (const char* t : kControlTokens) tokens_.push_back(t);
}

const std::string& Vocabulary::token_text(int id) const {
  if (id < 0 || id >= size())
    throw std::invalid_argument("Vocabulary: token id out of range");
  return tokens_[static_cast<size_t>(id)];
}

int Vocabulary::token_id(const std::string& text) const {
  for (int i = 0; i < size(); ++i)
    if (tokens_[static_cast<size_t>(i)] == text) return i;
  throw std::invalid_argument("Vocabulary: unknown token '" + text + "'");
}

std::vector<std::string> Vocabulary::token_strings(std::span<const int> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(token_text(id));
  return out;
}

// --- ActionBlock ---

std::vector<int> ActionBlock::think_tokens() const {
  return {tokens.begin() + 1, tokens.begin() + 1 + think_len};
}

std::vector<int> ActionBlock::payload_tokens() const {
  return {tokens.begin() + think_len + 3,
          tokens.begin() + think_len + 3 + payload_len};
}

int ActionBlock::masked_count() const {
  int n = 0;
  for (uint8_t m : mask) n += m;
  return n;
}

// --- PolicyModel ---

PolicyModel::PolicyModel(std::shared_ptr<const Vocabulary> vocab, BlockShape shape)
    : vocab_(std::move(vocab)), shape_(shape) {
  if (!vocab_) throw std::invalid_argument("PolicyModel: null vocabulary");
  if (shape_.think_len < 0 || shape_.think_len > BlockShape::kMaxLen)
    throw std::invalid_argument("PolicyModel: think_len out of range");
  if (shape_.payload_len < 1 || shape_.payload_len > BlockShape::kMaxLen)
    throw std::invalid_argument("PolicyModel: payload_len out of range");
  weights_.assign(static_cast<size_t>(weight_count()), 0.0);
}

int PolicyModel::slot_index(Slot slot, int pos) const {
  constexpr int M = BlockShape::kMaxLen;
  switch (slot) {
    case Slot::think:
      if (pos < 0 || pos >= M) throw std::invalid_argument("bad think pos");
      return pos;
    case Slot::decide:
      if (pos != 0) throw std::invalid_argument("bad decide pos");
      return M;
    case Slot::query:
      if (pos < 0 || pos >= M) throw std::invalid_argument("bad query pos");
      return M + 1 + pos;
    case Slot::answer:
      if (pos < 0 || pos >= M) throw std::invalid_argument("bad answer pos");
      return 2 * M + 1 + pos;
  }
  throw std::logic_error("unreachable");
}

int PolicyModel::feature_index(const PrefixContext& ctx, Slot slot, int pos) const {
  if (ctx.latest_entity < 0 || ctx.latest_entity >= vocab_->entity_count())
    throw std::invalid_argument("feature_index: entity out of range");
  return ctx.latest_entity * slot_count() + slot_index(slot, pos);
}

double PolicyModel::weight(int feature, int token) const {
  return weights_[static_cast<size_t>(feature) * vocab_->size() + token];
}

void PolicyModel::set_weight(int feature, int token, double w) {
  weights_[static_cast<size_t>(feature) * vocab_->size() + token] = w;
}

void PolicyModel::add_weight(int feature, int token, double dw) {
  weights_[static_cast<size_t>(feature) * vocab_->size() + token] += dw;
}

std::vector<int> PolicyModel::allowed_tokens(Slot slot) const {
  if (slot == Slot::decide)
    return {vocab_->search_open(), vocab_->answer_open()};
  std::vector<int> ids(static_cast<size_t>(vocab_->content_count()));
  for (int i = 0; i < vocab_->content_count(); ++i) ids[static_cast<size_t>(i)] = i;
  return ids;
}

std::vector<double> token_distribution(const PolicyModel& model,
                                       const PrefixContext& ctx, Slot slot,
                                       int pos, double temperature) {
  return slot_distribution(model, ctx, slot, pos, temperature).prob;
}

// --- sampling and log-probs ---

ActionBlock sample_action(const PolicyModel& model, const PrefixContext& ctx,
                          double temperature, Rng& rng, bool constrain_answer) {
  const Vocabulary& v = model.vocab();
  const BlockShape& shape = model.shape();

  ActionBlock block;
  block.think_len = shape.think_len;
  block.payload_len = shape.payload_len;
  block.temperature = temperature;

  auto push = [&block](int token, uint8_t mask, double logp) {
    block.tokens.push_back(token);
    block.mask.push_back(mask);
    block.logprobs_old.push_back(logp);
  };

  push(v.think_open(), 0, 0.0);
  for (int p = 0; p < shape.think_len; ++p) {
    const SlotDist d = slot_distribution(model, ctx, Slot::think, p, temperature);
    const int i = rng.categorical(d.prob);
    push(d.allowed[static_cast<size_t>(i)], 1, d.logp[static_cast<size_t>(i)]);
  }
  push(v.think_close(), 0, 0.0);

  if (constrain_answer) {
    block.kind = ActionKind::answer_action;
    push(v.answer_open(), 0, 0.0);
  } else {
    const SlotDist d = slot_distribution(model, ctx, Slot::decide, 0, temperature);
    const int i = rng.categorical(d.prob);
    const int tag = d.allowed[static_cast<size_t>(i)];
    block.kind = tag == v.answer_open() ? ActionKind::answer_action
                                        : ActionKind::search_action;
    push(tag, 1, d.logp[static_cast<size_t>(i)]);
  }

  const Slot pslot = payload_slot(block.kind);
  for (int p = 0; p < shape.payload_len; ++p) {
    const SlotDist d = slot_distribution(model, ctx, pslot, p, temperature);
    const int i = rng.categorical(d.prob);
    push(d.allowed[static_cast<size_t>(i)], 1, d.logp[static_cast<size_t>(i)]);
  }
  push(block.kind == ActionKind::answer_action ? v.answer_close()
                                               : v.search_close(),
       0, 0.0);
  return block;
}

std::vector<double> log_prob(const PolicyModel& model, const PrefixContext& ctx,
                             const ActionBlock& block) {
  std::vector<double> out(block.tokens.size(), 0.0);
  for (int p = 0; p < block.think_len; ++p) {
    const size_t pos = static_cast<size_t>(1 + p);
    if (!block.mask[pos]) continue;
    const SlotDist d =
        slot_distribution(model, ctx, Slot::think, p, block.temperature);
    out[pos] = d.logp[static_cast<size_t>(index_of(d.allowed, block.tokens[pos]))];
  }
  {
    const size_t pos = static_cast<size_t>(block.decide_position());
    if (block.mask[pos]) {
      const SlotDist d =
          slot_distribution(model, ctx, Slot::decide, 0, block.temperature);
      out[pos] =
          d.logp[static_cast<size_t>(index_of(d.allowed, block.tokens[pos]))];
    }
  }
  const Slot pslot = payload_slot(block.kind);
  for (int p = 0; p < block.payload_len; ++p) {
    const size_t pos = static_cast<size_t>(block.think_len + 3 + p);
    if (!block.mask[pos]) continue;
    const SlotDist d = slot_distribution(model, ctx, pslot, p, block.temperature);
    out[pos] = d.logp[static_cast<size_t>(index_of(d.allowed, block.tokens[pos]))];
  }
  return out;
}

void accumulate_grad_log_prob_per_token(const PolicyModel& model,
                                        const PrefixContext& ctx,
                                        const ActionBlock& block,
                                        std::span<const double> token_scale,
                                        std::span<double> grad) {
  if (grad.size() != static_cast<size_t>(model.weight_count()))
    throw std::invalid_argument("grad buffer has wrong size");
  if (token_scale.size() != block.tokens.size())
    throw std::invalid_argument("token_scale has wrong size");
  const int V = model.vocab().size();
  const double inv_t = 1.0 / block.temperature;

  auto add_position = [&](Slot slot, int slot_pos, size_t token_pos) {
    if (!block.mask[token_pos]) return;
    const double s = token_scale[token_pos];
    if (s == 0.0) return;
    const SlotDist d =
        slot_distribution(model, ctx, slot, slot_pos, block.temperature);
    const int f = model.feature_index(ctx, slot, slot_pos);
    const int chosen = block.tokens[token_pos];
    for (size_t i = 0; i < d.allowed.size(); ++i) {
      const double indicator = d.allowed[i] == chosen ? 1.0 : 0.0;
      grad[static_cast<size_t>(f) * V + d.allowed[i]] +=
          s * (indicator - d.prob[i]) * inv_t;
    }
    index_of(d.allowed, chosen);  // validates membership
  };

  for (int p = 0; p < block.think_len; ++p)
    add_position(Slot::think, p, static_cast<size_t>(1 + p));
  add_position(Slot::decide, 0, static_cast<size_t>(block.decide_position()));
  for (int p = 0; p < block.payload_len; ++p)
    add_position(payload_slot(block.kind), p,
                 static_cast<size_t>(block.think_len + 3 + p));
}

void accumulate_grad_log_prob(const PolicyModel& model, const PrefixContext& ctx,
                              const ActionBlock& block, double scale,
                              std::span<double> grad) {
  std::vector<double> per_token(block.tokens.size(), scale);
  accumulate_grad_log_prob_per_token(model, ctx, block, per_token, grad);
}

std::vector<double> grad_log_prob(const PolicyModel& model,
                                  const PrefixContext& ctx,
                                  const ActionBlock& block) {
  std::vector<double> grad(static_cast<size_t>(model.weight_count()), 0.0);
  accumulate_grad_log_prob(model, ctx, block, 1.0, grad);
  return grad;
}

// --- KL ---

double categorical_kl(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size())
    throw std::invalid_argument("categorical_kl: size mismatch");
  double kl = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    kl += p[i] * (std::log(p[i]) - std::log(q[i]));
  }
  return std::max(kl, 0.0);
}

namespace {

void require_compatible(const PolicyModel& a, const PolicyModel& b) {
  if (a.vocab().size() != b.vocab().size() ||
      a.vocab().entity_count() != b.vocab().entity_count() ||
      a.shape().think_len != b.shape().think_len ||
      a.shape().payload_len != b.shape().payload_len)
    throw std::invalid_argument("policy/reference are not the same class");
}

}  // namespace

// KL of the full action distribution, which factors per slot; the payload
// section is branch-weighted by the model's decision probabilities.
double kl_to_reference(const PolicyModel& model, const PolicyModel& reference,
                       const PrefixContext& ctx) {
  require_compatible(model, reference);
  double kl = 0.0;
  for (int p = 0; p < model.shape().think_len; ++p) {
    kl += categorical_kl(token_distribution(model, ctx, Slot::think, p, 1.0),
                         token_distribution(reference, ctx, Slot::think, p, 1.0));
  }
  const auto pd = token_distribution(model, ctx, Slot::decide, 0, 1.0);
  const auto qd = token_distribution(reference, ctx, Slot::decide, 0, 1.0);
  kl += categorical_kl(pd, qd);
  const Slot kinds[2] = {Slot::query, Slot::answer};
  for (int b = 0; b < 2; ++b) {
    double branch = 0.0;
    for (int p = 0; p < model.shape().payload_len; ++p) {
      branch +=
          categorical_kl(token_distribution(model, ctx, kinds[b], p, 1.0),
                         token_distribution(reference, ctx, kinds[b], p, 1.0));
    }
    kl += pd[static_cast<size_t>(b)] * branch;  // decide order: search, answer
  }
  return kl;
}

void accumulate_kl_grad(const PolicyModel& model, const PolicyModel& reference,
                        const PrefixContext& ctx, double scale,
                        std::span<double> grad) {
  require_compatible(model, reference);
  if (grad.size() != static_cast<size_t>(model.weight_count()))
    throw std::invalid_argument("grad buffer has wrong size");
  const int V = model.vocab().size();

  // d KL(P||Q) / d logit_u = p_u (log p_u - log q_u - KL)
  auto add_kl_rows = [&](Slot slot, int pos, double weight_factor) -> double {
    const SlotDist pd = slot_distribution(model, ctx, slot, pos, 1.0);
    const SlotDist qd = slot_distribution(reference, ctx, slot, pos, 1.0);
    const double kl = categorical_kl(pd.prob, qd.prob);
    const int f = model.feature_index(ctx, slot, pos);
    for (size_t i = 0; i < pd.allowed.size(); ++i) {
      grad[static_cast<size_t>(f) * V + pd.allowed[i]] +=
          scale * weight_factor * pd.prob[i] * (pd.logp[i] - qd.logp[i] - kl);
    }
    return kl;
  };

  for (int p = 0; p < model.shape().think_len; ++p)
    add_kl_rows(Slot::think, p, 1.0);

  const SlotDist pdec = slot_distribution(model, ctx, Slot::decide, 0, 1.0);
  const double kl_dec = add_kl_rows(Slot::decide, 0, 1.0);
  (void)kl_dec;

  const Slot kinds[2] = {Slot::query, Slot::answer};
  double branch_kl[2] = {0.0, 0.0};
  for (int b = 0; b < 2; ++b) {
    for (int p = 0; p < model.shape().payload_len; ++p)
      branch_kl[b] += add_kl_rows(kinds[b], p, pdec.prob[static_cast<size_t>(b)]);
  }
  // decision probabilities also move the branch weights
  const int fdec = model.feature_index(ctx, Slot::decide, 0);
  for (size_t u = 0; u < pdec.allowed.size(); ++u) {
    double g = 0.0;
    for (size_t b = 0; b < 2; ++b) {
      const double indicator = (b == u) ? 1.0 : 0.0;
      g += branch_kl[b] * pdec.prob[b] * (indicator - pdec.prob[u]);
    }
    grad[static_cast<size_t>(fdec) * V + pdec.allowed[u]] += scale * g;
  }
}

// --- checkpoints ---

void save_checkpoint(const PolicyModel& model, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["entities"] = model.vocab().entity_count();
  j["fillers"] = model.vocab().filler_count();
  j["think_len"] = model.shape().think_len;
  j["payload_len"] = model.shape().payload_len;
  nlohmann::ordered_json tokens = nlohmann::ordered_json::array();
  for (int i = 0; i < model.vocab().size(); ++i)
    tokens.push_back(model.vocab().token_text(i));
  j["tokens"] = std::move(tokens);
  nlohmann::ordered_json weights = nlohmann::ordered_json::array();
  const int V = model.vocab().size();
  for (int f = 0; f < model.feature_count(); ++f) {
    for (int v = 0; v < V; ++v) {
      const double w = model.weight(f, v);
      if (w != 0.0) weights.push_back({f, v, w});
    }
  }
  j["weights"] = std::move(weights);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
  out << j.dump(2) << '\n';
}

PolicyModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
  nlohmann::json j;
  in >> j;

  auto vocab = std::make_shared<Vocabulary>(j.at("entities").get<int>(),
                                            j.at("fillers").get<int>());
  const auto manifest = j.at("tokens").get<std::vector<std::string>>();
  if (static_cast<int>(manifest.size()) != vocab->size())
    throw std::invalid_argument("load_checkpoint: vocabulary size mismatch");
  for (int i = 0; i < vocab->size(); ++i) {
    if (manifest[static_cast<size_t>(i)] != vocab->token_text(i))
      throw std::invalid_argument("load_checkpoint: unknown token '" +
                                  manifest[static_cast<size_t>(i)] + "'");
  }

  BlockShape shape;
  shape.think_len = j.at("think_len").get<int>();
  shape.payload_len = j.at("payload_len").get<int>();
  PolicyModel model(std::move(vocab), shape);
  for (const auto& triple : j.at("weights")) {
    const int f = triple.at(0).get<int>();
    const int v = triple.at(1).get<int>();
    if (f < 0 || f >= model.feature_count() || v < 0 || v >= model.vocab().size())
      throw std::invalid_argument("load_checkpoint: weight index out of range");
    model.set_weight(f, v, triple.at(2).get<double>());
  }
  return model;
}

}  // namespace slate::policy
