#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "slate/env.hpp"

namespace slate::judge {

enum class VerdictKind { think, query, answer };

struct JudgeVerdict {
  int score = 0;  // in {-1, 0, +1}
  std::string explanation;
  VerdictKind kind = VerdictKind::think;
};

// Composite per-step reward. `bonus` is the early-termination shaping term and
// is nonzero only on answer steps taken before the budget runs out.
struct RewardBreakdown {
  int think = 0;
  std::optional<int> query;
  std::optional<int> answer;
  double bonus = 0.0;
  double total = 0.0;
};

struct MalformedResponse : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct OutOfRangeScore : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TransportError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingField : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// --- rule-based oracle ---
// Deterministic stand-in for an LLM judge, scoring against the hidden chain.

JudgeVerdict oracle_score_think(const env::EnvState& state,
                                const std::vector<std::string>& think_tokens);
JudgeVerdict oracle_score_query(const env::EnvState& state,
                                const std::vector<std::string>& query_tokens);
JudgeVerdict oracle_score_answer(const std::vector<std::string>& answer_tokens,
                                 const env::Task& task);

// think + query for search steps; think + answer + lambda * (B - t) / B for
// answer steps. Throws std::invalid_argument outside 1 <= t <= B, lambda < 0.
RewardBreakdown composite_reward(const JudgeVerdict& think,
                                 const JudgeVerdict& payload, bool is_answer,
                                 int t, int budget, double lambda);

// --- prompt templates ---

const std::string& prompt_template(VerdictKind kind);

// Substitutes {placeholders}; every placeholder in the template must have a
// field or MissingField is thrown. Unused fields are ignored.
std::string render_prompt(VerdictKind kind,
                          const std::map<std::string, std::string>& fields);

// Reads the last well-formed <score> block; accepts +1 / 1 / 0 / -1.
JudgeVerdict parse_judge_response(const std::string& text,
                                  VerdictKind kind = VerdictKind::think);

}  // namespace slate::judge
