#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "slate/rng.hpp"

namespace slate::env {

// Multi-hop chain world. A task fixes a hidden chain e_0 -> e_1 -> ... -> e_T
// over the entity vocabulary; the question reveals e_0 and asks for e_T.
struct Task {
  int64_t id = 0;
  std::vector<int> chain;  // entity ids, length hops + 1
  std::string question;
  int gold_answer = -1;  // == chain.back()
  int hops = 0;
};

struct Document {
  enum class Kind { fact, noise };
  Kind kind = Kind::noise;
  std::string text;
  std::optional<std::pair<int, int>> link;  // fact: adjacent (source, target)
};

struct EnvState {
  Task task;
  std::set<int> revealed;  // entity ids; always a prefix of the chain
  int step_index = 1;
};

std::string entity_token(int entity);

// Deterministic task construction. Interior hops draw from the low part of the
// vocabulary, the final entity from a reserved terminal pool, so that
// "terminal-ness" is a function of the entity id and a tabular policy can
// represent the stop decision. requires hops >= 1, vocab_size >= hops + 4.
Task generate_task(uint64_t seed, int hops, int vocab_size);

EnvState initial_state(const Task& task);

// Highest chain index currently revealed, and its entity id.
int latest_revealed_index(const EnvState& state);
int latest_revealed_entity(const EnvState& state);
bool chain_complete(const EnvState& state);

// Retrieval: exactly top_k documents. If the query names a revealed entity
// e_i with i < T, the fact e_i -> e_{i+1} sits at position 0 (highest such i
// wins); every other slot is seeded noise, stable per (task, step, query).
std::vector<Document> search(const EnvState& state,
                             const std::vector<std::string>& query_tokens,
                             int top_k);

// Folds fact documents into the revealed set and advances the step counter.
EnvState reveal(EnvState state, const std::vector<Document>& docs);

// Question plus the facts revealed so far, one per line. This is the textual
// prefix a judge sees; candidates sampled at the same step share it verbatim.
std::string context_text(const EnvState& state);

std::string normalize_answer(const std::string& text);
int exact_match(const std::string& answer_text, int gold_entity);
int exact_match(const std::vector<std::string>& answer_tokens, int gold_entity);

std::string task_to_json(const Task& task);
Task task_from_json(const std::string& text);

}  // namespace slate::env
