#include "slate/env.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace slate::env {

namespace {

constexpr uint64_t kTaskStream = 0x7461736bULL;    // "task"
constexpr uint64_t kSearchStream = 0x73726368ULL;  // "srch"

int terminal_pool_size(int hops, int vocab_size) {
  const int quarter = std::max(1, vocab_size / 4);
  return std::min(quarter, vocab_size - hops);
}

std::string render_question(const Task& task) {
  std::ostringstream os;
  os << "Question: starting from " << entity_token(task.chain.front())
     << ", follow the chain for " << task.hops
     << " hops. Which entity does it reach?";
  return os.str();
}

}  // namespace

std::string entity_token(int entity) { return "e" + std::to_string(entity); }

Task generate_task(uint64_t seed, int hops, int vocab_size) {
  if (hops < 1) throw std::invalid_argument("generate_task: hops must be >= 1");
  if (vocab_size < hops + 4)
    throw std::invalid_argument("generate_task: vocab_size must be >= hops + 4");

  Rng rng(derive_seed(seed, kTaskStream));
  const int tps = terminal_pool_size(hops, vocab_size);
  const int interior_count = vocab_size - tps;

  // partial Fisher-Yates over the interior pool for the first `hops` entities
  std::vector<int> pool(interior_count);
  for (int i = 0; i < interior_count; ++i) pool[i] = i;
  Task task;
  task.id = static_cast<int64_t>(seed);
  task.hops = hops;
  task.chain.reserve(hops + 1);
  for (int i = 0; i < hops; ++i) {
    const int j = i + rng.pick_index(interior_count - i);
    std::swap(pool[i], pool[j]);
    task.chain.push_back(pool[i]);
  }
  task.chain.push_back(interior_count + rng.pick_index(tps));
  task.gold_answer = task.chain.back();
  task.question = render_question(task);
  return task;
}

EnvState initial_state(const Task& task) {
  EnvState state;
  state.task = task;
  state.revealed.insert(task.chain.front());
  state.step_index = 1;
  return state;
}

int latest_revealed_index(const EnvState& state) {
  int latest = -1;
  for (size_t i = 0; i < state.task.chain.size(); ++i) {
    if (state.revealed.count(state.task.chain[i])) latest = static_cast<int>(i);
  }
  return latest;
}

int latest_revealed_entity(const EnvState& state) {
  const int idx = latest_revealed_index(state);
  if (idx < 0) throw std::logic_error("latest_revealed_entity: nothing revealed");
  return state.task.chain[idx];
}

bool chain_complete(const EnvState& state) {
  return latest_revealed_index(state) == state.task.hops;
}

std::vector<Document> search(const EnvState& state,
                             const std::vector<std::string>& query_tokens,
                             int top_k) {
  if (top_k < 1) throw std::invalid_argument("search: top_k must be >= 1");

  // highest revealed chain index named by the query, if any, with i < T
  int hit = -1;
  for (int i = 0; i <= latest_revealed_index(state); ++i) {
    if (i >= state.task.hops) break;
    const std::string tok = entity_token(state.task.chain[i]);
    if (std::find(query_tokens.begin(), query_tokens.end(), tok) !=
        query_tokens.end())
      hit = i;
  }

  std::string joined;
  for (const auto& t : query_tokens) {
    joined += t;
    joined += ' ';
  }
  Rng noise(derive_seed(mix_u64(static_cast<uint64_t>(state.task.id), kSearchStream),
                        static_cast<uint64_t>(state.step_index), fnv1a(joined)));

  // noise text draws over the whole entity range; vocab size is recovered as
  // a loose bound from the chain (exact size is irrelevant to scoring)
  int max_entity = 0;
  for (int e : state.task.chain) max_entity = std::max(max_entity, e);

  std::vector<Document> docs;
  docs.reserve(top_k);
  if (hit >= 0) {
    Document fact;
    fact.kind = Document::Kind::fact;
    fact.link = {state.task.chain[hit], state.task.chain[hit + 1]};
    fact.text = entity_token(fact.link->first) + " links to " +
                entity_token(fact.link->second);
    docs.push_back(std::move(fact));
  }
  while (static_cast<int>(docs.size()) < top_k) {
    Document d;
    d.kind = Document::Kind::noise;
    d.text = "note: " + entity_token(noise.pick_index(max_entity + 1)) +
             " unrelated w" + std::to_string(noise.pick_index(2));
    docs.push_back(std::move(d));
  }
  return docs;
}

EnvState reveal(EnvState state, const std::vector<Document>& docs) {
  for (const auto& d : docs) {
    if (d.kind != Document::Kind::fact) continue;
    if (!d.link) throw std::logic_error("reveal: fact document without link");
    bool adjacent = false;
    for (size_t i = 0; i + 1 < state.task.chain.size(); ++i) {
      if (state.task.chain[i] == d.link->first &&
          state.task.chain[i + 1] == d.link->second) {
        adjacent = true;
        break;
      }
    }
    if (!adjacent) throw std::logic_error("reveal: fact link not on the chain");
    state.revealed.insert(d.link->second);
  }
  state.step_index += 1;
  return state;
}

std::string context_text(const EnvState& state) {
  std::string out = state.task.question;
  const int latest = latest_revealed_index(state);
  for (int i = 0; i < latest; ++i) {
    out += '\n';
    out += entity_token(state.task.chain[static_cast<size_t>(i)]) + " links to " +
           entity_token(state.task.chain[static_cast<size_t>(i) + 1]);
  }
  return out;
}

std::string normalize_answer(const std::string& text) {
  size_t begin = 0, end = text.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(text[begin]))) ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(text[end - 1]))) --end;
  std::string out = text.substr(begin, end - begin);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

int exact_match(const std::string& answer_text, int gold_entity) {
  return normalize_answer(answer_text) == entity_token(gold_entity) ? 1 : 0;
}

int exact_match(const std::vector<std::string>& answer_tokens, int gold_entity) {
  std::string joined;
  for (size_t i = 0; i < answer_tokens.size(); ++i) {
    if (i) joined += ' ';
    joined += answer_tokens[i];
  }
  return exact_match(joined, gold_entity);
}

std::string task_to_json(const Task& task) {
  nlohmann::ordered_json j;
  j["id"] = task.id;
  j["chain"] = task.chain;
  j["hops"] = task.hops;
  j["gold_answer"] = task.gold_answer;
  return j.dump();
}

Task task_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  Task task;
  task.id = j.at("id").get<int64_t>();
  task.chain = j.at("chain").get<std::vector<int>>();
  task.hops = j.at("hops").get<int>();
  task.gold_answer = j.at("gold_answer").get<int>();
  if (task.chain.size() != static_cast<size_t>(task.hops) + 1)
    throw std::invalid_argument("task_from_json: chain/hops mismatch");
  if (task.gold_answer != task.chain.back())
    throw std::invalid_argument("task_from_json: gold_answer not chain tail");
  task.question = render_question(task);
  return task;
}

}  // namespace slate::env
