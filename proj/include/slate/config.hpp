#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "slate/trainer.hpp"
#include "slate/variance_lab.hpp"

namespace slate::config {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Everything a run needs, addressable by flat dotted keys (env.hops=3). The
// compare/sweep/lab sections only matter to their subcommands but parse
// everywhere, so one resolved file replays any run.
struct RunConfig {
  struct Env {
    int hops = 3;
    int vocab_size = 12;
    int top_k = 3;
    uint64_t seed = 1;
  } env;

  struct Train {
    std::string mode = "slate";
    int k = 5;
    int G = 5;
    int B = 4;
    double lambda = 0.1;
    double eta = 0.7;
    double eps_adv = 1e-6;
    double clip_eps = 0.2;
    double kl_beta = 0.001;
    double learning_rate = 0.6;
    int steps = 500;
    int batch_size = 4;
    std::string selection = "reward_weighted";
    std::string old_policy_refresh = "per_group";
  } train;

  struct Judge {
    std::string mode = "oracle";  // oracle | remote
    std::string endpoint;
    std::string model = "judge-local";
    double temperature = 0.0;
    int retries = 2;
    bool strict = true;
  } judge;

  struct Output {
    std::string dir = "runs/out";
    int log_every = 10;
    bool wall_clock = false;
  } output;

  struct Compare {
    std::string against = "full_group_dense";
    int seeds = 10;
    double threshold = 0.8;
  } compare;

  struct Sweep {
    std::vector<int> k = {1, 3, 5, 7};
    int seeds = 10;
    int steps = 150;
  } sweep;

  struct Lab {
    int horizon = 4;
    std::vector<double> scales;  // empty: uniform
    double fc = 0.0;             // future covariance
    std::string coupling = "iid";  // iid | prefix
    double cs = 0.0;             // coupling strength
    long long trials = 100000;
    int G = 5;
    uint64_t seed = 1;
  } lab;
};

// One key=value assignment; throws ConfigError on unknown keys or bad values.
void apply_assignment(RunConfig& cfg, const std::string& key,
                      const std::string& value);

// key=value lines with # comments and blank lines.
RunConfig parse_config_text(const std::string& text, RunConfig base = {});
RunConfig load_config_file(const std::string& path, RunConfig base = {});

// Every key with its current value, fixed order; parses back to the same
// config, so a resolved file fully reproduces the run.
std::string resolved_text(const RunConfig& cfg);

// Cross-field checks beyond per-assignment parsing (mode names, ranges that
// the owning modules will reject anyway are left to them).
void validate(const RunConfig& cfg);

trainer::TrainOptions to_train_options(const RunConfig& cfg);
lab::RewardProcessSpec to_process_spec(const RunConfig& cfg);

}  // namespace slate::config
