#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "slate/config.hpp"

namespace slate::cli {

// Exit codes: 0 success, 2 configuration or usage error, 3 judge or transport
// failure, 4 variance bound violation. 1 is reserved for unexpected internal
// errors and should never occur in normal operation.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitJudge = 3;
inline constexpr int kExitBound = 4;

int run_train(const config::RunConfig& cfg, std::ostream& out,
              std::ostream& err);
int run_compare(const config::RunConfig& cfg, std::ostream& out,
                std::ostream& err);
int run_sweep(const config::RunConfig& cfg, std::ostream& out,
              std::ostream& err);
int run_variance(const config::RunConfig& cfg, std::ostream& out,
                 std::ostream& err);
int run_judge_smoke(const config::RunConfig& cfg, bool stub, std::ostream& out,
                    std::ostream& err);

// args is argv without the program name: subcommand first, then --config=FILE,
// --key=value overrides (applied left to right), and --stub for judge-smoke.
int dispatch(const std::vector<std::string>& args, std::ostream& out,
             std::ostream& err);

}  // namespace slate::cli
