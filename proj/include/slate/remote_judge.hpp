#pragma once

#include <condition_variable>
#include <map>
#include <mutex>
#include <string>

#include "slate/judge.hpp"

namespace slate::judge {

struct RemoteJudgeConfig {
  std::string endpoint;  // http://host:port/path
  std::string model = "judge-local";
  double temperature = 0.0;
  int retries = 2;  // attempts after the first
  std::string response_path = "choices.0.text";  // dot-path into the reply JSON
  int concurrency_cap = 4;
  bool strict = true;  // false: degrade persistent failures to score 0
  int timeout_ms = 5000;
};

// HTTP judge speaking {"model", "prompt", "temperature"}. The bearer token, if
// any, comes from SLATE_JUDGE_TOKEN; nothing secret lives in config files.
class RemoteJudge {
 public:
  explicit RemoteJudge(RemoteJudgeConfig cfg);

  JudgeVerdict score(VerdictKind kind,
                     const std::map<std::string, std::string>& fields);

  const RemoteJudgeConfig& config() const { return cfg_; }

 private:
  std::string post_once(const std::string& prompt);

  RemoteJudgeConfig cfg_;
  std::string host_;
  int port_ = 80;
  std::string path_;

  std::mutex mu_;
  std::condition_variable cv_;
  int in_flight_ = 0;
};

}  // namespace slate::judge
