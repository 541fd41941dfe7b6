#include "slate/remote_judge.hpp"

#include <cstdio>
#include <cstdlib>

#include "httplib.h"
#include "json.hpp"

namespace slate::judge {

namespace {

nlohmann::json walk_path(const nlohmann::json& root, const std::string& path) {
  nlohmann::json node = root;
  size_t at = 0;
  while (at <= path.size()) {
    const size_t dot = path.find('.', at);
    const std::string part =
        path.substr(at, dot == std::string::npos ? std::string::npos : dot - at);
    if (part.empty()) throw MalformedResponse("empty response-path component");
    if (node.is_array()) {
      size_t used = 0;
      size_t idx = 0;
      try {
        idx = std::stoul(part, &used);
      } catch (...) {
        throw MalformedResponse("response path '" + part + "' into an array");
      }
      if (used != part.size() || idx >= node.size())
        throw MalformedResponse("response path index '" + part + "' out of range");
      node = node[idx];
    } else if (node.is_object()) {
      if (!node.contains(part))
        throw MalformedResponse("response path key '" + part + "' missing");
      node = node[part];
    } else {
      throw MalformedResponse("response path descends into a scalar");
    }
    if (dot == std::string::npos) break;
    at = dot + 1;
  }
  return node;
}

}  // namespace

RemoteJudge::RemoteJudge(RemoteJudgeConfig cfg) : cfg_(std::move(cfg)) {
  const std::string prefix = "http://";
  if (cfg_.endpoint.rfind(prefix, 0) != 0)
    throw std::invalid_argument("RemoteJudge: endpoint must start with http://");
  const std::string rest = cfg_.endpoint.substr(prefix.size());
  const size_t slash = rest.find('/');
  const std::string hostport = rest.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : rest.substr(slash);
  const size_t colon = hostport.find(':');
  host_ = hostport.substr(0, colon);
  port_ = colon == std::string::npos ? 80 : std::stoi(hostport.substr(colon + 1));
  if (host_.empty()) throw std::invalid_argument("RemoteJudge: empty host");
  if (cfg_.retries < 0) throw std::invalid_argument("RemoteJudge: retries < 0");
  if (cfg_.concurrency_cap < 1)
    throw std::invalid_argument("RemoteJudge: concurrency_cap < 1");
}

std::string RemoteJudge::post_once(const std::string& prompt) {
  nlohmann::json body;
  body["model"] = cfg_.model;
  body["prompt"] = prompt;
  body["temperature"] = cfg_.temperature;

  httplib::Client client(host_, port_);
  client.set_connection_timeout(0, cfg_.timeout_ms * 1000);
  client.set_read_timeout(cfg_.timeout_ms / 1000, (cfg_.timeout_ms % 1000) * 1000);

  httplib::Headers headers;
  if (const char* token = std::getenv("SLATE_JUDGE_TOKEN"))
    headers.emplace("Authorization", std::string("Bearer ") + token);

  const auto res =
      client.Post(path_, headers, body.dump(), "application/json");
  if (!res)
    throw TransportError("judge endpoint unreachable: " +
                         httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300)
    throw TransportError("judge endpoint returned HTTP " +
                         std::to_string(res->status));

  nlohmann::json reply;
  try {
    reply = nlohmann::json::parse(res->body);
  } catch (...) {
    throw MalformedResponse("judge reply is not JSON");
  }
  const nlohmann::json text = walk_path(reply, cfg_.response_path);
  if (!text.is_string())
    throw MalformedResponse("judge reply at response path is not text");
  return text.get<std::string>();
}

JudgeVerdict RemoteJudge::score(VerdictKind kind,
                                const std::map<std::string, std::string>& fields) {
  const std::string prompt = render_prompt(kind, fields);

  {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [this] { return in_flight_ < cfg_.concurrency_cap; });
    ++in_flight_;
  }
  struct Release {
    RemoteJudge* self;
    ~Release() {
      std::lock_guard lock(self->mu_);
      --self->in_flight_;
      self->cv_.notify_one();
    }
  } release{this};

  std::exception_ptr last;
  for (int attempt = 0; attempt <= cfg_.retries; ++attempt) {
    try {
      return parse_judge_response(post_once(prompt), kind);
    } catch (const TransportError&) {
      last = std::current_exception();
    } catch (const MalformedResponse&) {
      last = std::current_exception();
    } catch (const OutOfRangeScore&) {
      last = std::current_exception();
    }
  }
  if (cfg_.strict) std::rethrow_exception(last);
  std::fprintf(stderr, "warning: judge call failed after %d attempts; scoring 0\n",
               cfg_.retries + 1);
  JudgeVerdict v;
  v.kind = kind;
  v.score = 0;
  v.explanation = "degraded: judge unavailable";
  return v;
}

}  // namespace slate::judge
