#include "slate/judge.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace slate::judge {

namespace {

bool names_entity(const std::vector<std::string>& tokens, int entity) {
  const std::string want = env::entity_token(entity);
  return std::find(tokens.begin(), tokens.end(), want) != tokens.end();
}

// highest revealed chain index mentioned, or -1
int best_mentioned_index(const env::EnvState& state,
                         const std::vector<std::string>& tokens) {
  int best = -1;
  for (int i = 0; i <= env::latest_revealed_index(state); ++i) {
    if (names_entity(tokens, state.task.chain[static_cast<size_t>(i)])) best = i;
  }
  return best;
}

}  // namespace

JudgeVerdict oracle_score_think(const env::EnvState& state,
                                const std::vector<std::string>& think_tokens) {
  JudgeVerdict v;
  v.kind = VerdictKind::think;
  const int latest = env::latest_revealed_index(state);
  const int mentioned = best_mentioned_index(state, think_tokens);
  if (mentioned == latest) {
    v.score = 1;
    v.explanation = "focuses on the frontier entity " +
                    env::entity_token(state.task.chain[static_cast<size_t>(latest)]);
  } else if (mentioned >= 0) {
    v.score = 0;
    v.explanation = "revisits already-known entity " +
                    env::entity_token(state.task.chain[static_cast<size_t>(mentioned)]);
  } else {
    v.score = -1;
    v.explanation = "mentions nothing established in the context";
  }
  return v;
}

JudgeVerdict oracle_score_query(const env::EnvState& state,
                                const std::vector<std::string>& query_tokens) {
  JudgeVerdict v;
  v.kind = VerdictKind::query;
  const int latest = env::latest_revealed_index(state);
  const int mentioned = best_mentioned_index(state, query_tokens);
  if (mentioned == latest) {
    v.score = 1;
    v.explanation = "queries the frontier entity; retrieves the next fact";
  } else if (mentioned >= 0) {
    v.score = -1;
    v.explanation = "redundant: that hop is already resolved in the context";
  } else {
    v.score = 0;
    v.explanation = "query does not target anything revealed";
  }
  return v;
}

JudgeVerdict oracle_score_answer(const std::vector<std::string>& answer_tokens,
                                 const env::Task& task) {
  JudgeVerdict v;
  v.kind = VerdictKind::answer;
  std::string joined;
  for (size_t i = 0; i < answer_tokens.size(); ++i) {
    if (i) joined += ' ';
    joined += answer_tokens[i];
  }
  const std::string norm = env::normalize_answer(joined);
  if (norm == env::entity_token(task.gold_answer)) {
    v.score = 1;
    v.explanation = "matches the gold entity";
  } else if (task.hops >= 1 &&
             norm == env::entity_token(
                         task.chain[static_cast<size_t>(task.hops) - 1])) {
    v.score = 0;
    v.explanation = "penultimate entity: one hop short of the answer";
  } else {
    v.score = -1;
    v.explanation = "does not match the gold entity";
  }
  return v;
}

RewardBreakdown composite_reward(const JudgeVerdict& think,
                                 const JudgeVerdict& payload, bool is_answer,
                                 int t, int budget, double lambda) {
  if (budget < 1) throw std::invalid_argument("composite_reward: budget < 1");
  if (t < 1 || t > budget)
    throw std::invalid_argument("composite_reward: step outside [1, budget]");
  if (lambda < 0.0) throw std::invalid_argument("composite_reward: lambda < 0");
  if (think.kind != VerdictKind::think)
    throw std::invalid_argument("composite_reward: first verdict must be think");
  if (is_answer && payload.kind != VerdictKind::answer)
    throw std::invalid_argument("composite_reward: expected answer verdict");
  if (!is_answer && payload.kind != VerdictKind::query)
    throw std::invalid_argument("composite_reward: expected query verdict");

  RewardBreakdown r;
  r.think = think.score;
  if (is_answer) {
    r.answer = payload.score;
    r.bonus = lambda * static_cast<double>(budget - t) / budget;
    r.total = r.think + *r.answer + r.bonus;
  } else {
    r.query = payload.score;
    r.total = r.think + *r.query;
  }
  return r;
}

// --- prompt templates ---
// Stored verbatim; fixtures/prompts/*.txt must stay byte-identical.

namespace {

const std::string kThinkTemplate = R"PROMPT(Evaluate the quality of the following reasoning step in a search-based question answering system.

Context: {context}

Current Thinking Step: {thinking}

The reasoning should be based on the previous context and the question, nothing else.

Evaluate this thinking step on these criteria:
1. Relevance: Does it address the question appropriately?
2. Clarity: Is the reasoning clear and logical?
3. Specificity: Does it identify concrete information needs?
4. Progress: Does it move toward answering the question?
5. Faithfulness: Does it accurately reflect the information in the previous context? Is there any out-of-context information?

Provide a score using EXACTLY one of these three values:
- +1: GOOD -- Clear, relevant reasoning that identifies specific information needs and moves toward answering the question
-  0: ACCEPTABLE -- Reasoning is somewhat relevant but vague, lacks specificity, or makes only minimal progress
- -1: BAD -- Irrelevant, misleading, or counterproductive reasoning that does not help answer the question

First provide your reasoning, then the score. Use this exact format:
<explanation> Your reasoning here </explanation>
<score> numerical score </score>)PROMPT";

const std::string kQueryTemplate = R"PROMPT(Evaluate the quality of the following search query for a question answering system.

Context: {context}

Thinking before this query: {thinking}

Generated Query: {query}

IMPORTANT: This is a multi-step reasoning system. The query does NOT need to directly answer the final question in one step. Instead, evaluate whether it makes good progress toward the answer by retrieving useful intermediate information.

Evaluate this query on these criteria:
1. Relevance: Will it retrieve information that makes progress toward answering the question? (Intermediate steps are valuable!)
2. Specificity: Is it specific enough to get useful results?
3. Searchability: Is it well-formed for a search engine with appropriate keywords? Good queries combine multiple relevant terms.
4. Alignment: Does it align with the thinking step that preceded it?
5. Novelty: Does it explore new information (not redundant with the context)? If the context already contains the answer to what the query is searching for, the query is redundant and unhelpful.

Provide a score using EXACTLY one of these three values:
- +1: GOOD -- Specific, well-formed query that will retrieve useful information to make progress (even if intermediate). Has clear keywords and good searchability. Combines multiple relevant terms or uses specific names/concepts.
-  0: ACCEPTABLE -- Query has some specificity but could be improved. May lack context-specific keywords or be somewhat generic, but shows reasonable attempt at targeting the information need.
- -1: BAD -- Single generic word without context (e.g., just "singer", "perfume", "city"), completely irrelevant to the question, redundant with information already in the context, or so poorly formed it will return millions of unhelpful results.

First provide your reasoning, then the score. Use this exact format:
<explanation> Your reasoning here </explanation>
<score> numerical score </score>)PROMPT";

const std::string kAnswerTemplate = R"PROMPT(Evaluate if the predicted answer correctly answers the question.

Context: {context}

Ground Truth Answer: {ground_truth}

Predicted Answer: {predicted_answer}

Compare the predicted answer to the ground truth. They don't need to be word-for-word identical, but the predicted answer should convey the same core information.

Provide a score using EXACTLY one of these three values:
- +1: CORRECT -- The predicted answer conveys the same core information as the ground truth
-  0: PARTIALLY CORRECT -- The answer is incomplete, ambiguous, or contains minor inaccuracies
- -1: INCORRECT -- The answer is wrong or contradicts the ground truth

First provide your reasoning, then the score. Use this exact format:
<explanation> Your reasoning here </explanation>
<score> numerical score </score>)PROMPT";

}  // namespace

const std::string& prompt_template(VerdictKind kind) {
  switch (kind) {
    case VerdictKind::think:
      return kThinkTemplate;
    case VerdictKind::query:
      return kQueryTemplate;
    case VerdictKind::answer:
      return kAnswerTemplate;
  }
  throw std::logic_error("unreachable");
}

std::string render_prompt(VerdictKind kind,
                          const std::map<std::string, std::string>& fields) {
  const std::string& tpl = prompt_template(kind);
  std::string out;
  out.reserve(tpl.size() + 256);
  size_t at = 0;
  while (at < tpl.size()) {
    const size_t open = tpl.find('{', at);
    if (open == std::string::npos) {
      out.append(tpl, at, std::string::npos);
      break;
    }
    out.append(tpl, at, open - at);
    const size_t close = tpl.find('}', open);
    if (close == std::string::npos)
      throw std::logic_error("render_prompt: unterminated placeholder");
    const std::string name = tpl.substr(open + 1, close - open - 1);
    const auto it = fields.find(name);
    if (it == fields.end())
      throw MissingField("render_prompt: missing field '" + name + "'");
    out += it->second;
    at = close + 1;
  }
  return out;
}

JudgeVerdict parse_judge_response(const std::string& text, VerdictKind kind) {
  auto last_block = [&text](const char* open, const char* close,
                            std::string* out) {
    size_t best = std::string::npos, best_len = 0;
    size_t at = 0;
    const size_t open_len = std::string(open).size();
    while (true) {
      const size_t o = text.find(open, at);
      if (o == std::string::npos) break;
      const size_t c = text.find(close, o + open_len);
      if (c == std::string::npos) break;
      best = o + open_len;
      best_len = c - best;
      at = c + 1;
    }
    if (best == std::string::npos) return false;
    *out = text.substr(best, best_len);
    return true;
  };

  std::string raw;
  if (!last_block("<score>", "</score>", &raw))
    throw MalformedResponse("parse_judge_response: no <score> block");

  // trim
  size_t b = 0, e = raw.size();
  while (b < e && std::isspace(static_cast<unsigned char>(raw[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(raw[e - 1]))) --e;
  const std::string token = raw.substr(b, e - b);

  JudgeVerdict v;
  v.kind = kind;
  if (token == "+1" || token == "1") {
    v.score = 1;
  } else if (token == "0") {
    v.score = 0;
  } else if (token == "-1") {
    v.score = -1;
  } else {
    // distinguish a parsable-but-invalid integer from garbage
    bool is_int = false;
    long value = 0;
    try {
      size_t used = 0;
      value = std::stol(token, &used);
      is_int = used == token.size();
    } catch (...) {
    }
    if (!is_int)
      throw MalformedResponse("parse_judge_response: unreadable score '" +
                              token + "'");
    if (value < -1 || value > 1)
      throw OutOfRangeScore("parse_judge_response: score " +
                            std::to_string(value) + " outside {-1,0,+1}");
    v.score = static_cast<int>(value);
  }

  std::string expl;
  if (last_block("<explanation>", "</explanation>", &expl)) {
    size_t eb = 0, ee = expl.size();
    while (eb < ee && std::isspace(static_cast<unsigned char>(expl[eb]))) ++eb;
    while (ee > eb && std::isspace(static_cast<unsigned char>(expl[ee - 1]))) --ee;
    v.explanation = expl.substr(eb, ee - eb);
  }
  return v;
}

}  // namespace slate::judge
