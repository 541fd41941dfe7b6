#include "slate/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "slate/env.hpp"
#include "slate/judge.hpp"
#include "slate/sampler.hpp"
#include "slate/trainer.hpp"
#include "slate/variance_lab.hpp"

namespace fs = std::filesystem;

namespace slate::cli {

namespace {

constexpr const char* kUsage = R"(usage: slate <subcommand> [--config=FILE] [--key=value ...]

subcommands:
  train        run the configured trainer; writes metrics, trajectories,
               and checkpoints to output.dir
  compare      paired-seed comparison of train.mode against compare.against;
               writes compare.csv
  sweep        candidate-count sweep over sweep.k x sweep.seeds at
               sweep.steps updates; writes sweep.csv
  variance     Monte-Carlo variance-bound check on the configured reward
               process; writes variance_report.{json,csv}
  judge-smoke  verify prompt templates against the checked-in fixtures and
               score three rendered prompts (--stub: against a local
               in-process endpoint)

flags mirror config keys (--train.k=5); --config=FILE loads a key=value file,
later flags override earlier ones. The judge bearer token is only ever read
from the SLATE_JUDGE_TOKEN environment variable.

exit codes: 0 ok, 2 config error, 3 judge/transport failure,
4 variance bound violation
)";

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw config::ConfigError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw config::ConfigError("cannot write " + path.string());
  out << text;
}

std::unique_ptr<sampler::StepJudge> make_judge(const config::RunConfig& cfg) {
  if (cfg.judge.mode == "remote") {
    judge::RemoteJudgeConfig rc;
    rc.endpoint = cfg.judge.endpoint;
    rc.model = cfg.judge.model;
    rc.temperature = cfg.judge.temperature;
    rc.retries = cfg.judge.retries;
    rc.strict = cfg.judge.strict;
    return std::make_unique<sampler::RemoteStepJudge>(rc);
  }
  return std::make_unique<sampler::OracleJudge>();
}

std::string pad6(int v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d", v);
  return buf;
}

// em_rate at the last update whose cumulative tokens fit the budget.
double em_at_budget(const trainer::TrainResult& res, long long budget) {
  double em = 0.0;
  for (const auto& row : res.history) {
    if (row.tokens > budget) break;
    em = row.em_rate;
  }
  return em;
}

struct CompareRow {
  uint64_t seed = 0;
  std::string mode;
  long long total_tokens = 0;
  long long tokens_to_threshold = -1;
  double matched_em = 0.0;
  double final_em = 0.0;
};

std::string compare_csv(const std::vector<CompareRow>& rows) {
  std::ostringstream os;
  os << "seed,mode,total_tokens,tokens_to_threshold,matched_em,final_em\n";
  for (const auto& r : rows) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%llu,%s,%lld,%lld,%.6f,%.6f\n",
                  static_cast<unsigned long long>(r.seed), r.mode.c_str(),
                  r.total_tokens, r.tokens_to_threshold, r.matched_em,
                  r.final_em);
    os << buf;
  }
  return os.str();
}

}  // namespace

int run_train(const config::RunConfig& cfg, std::ostream& out,
              std::ostream& err) {
  const fs::path dir = cfg.output.dir;
  fs::create_directories(dir / "checkpoints");
  write_file(dir / "resolved.cfg", config::resolved_text(cfg));

  std::ofstream metrics(dir / "metrics.csv", std::ios::binary);
  std::ofstream trajectories(dir / "trajectories.jsonl", std::ios::binary);
  if (!metrics || !trajectories)
    throw config::ConfigError("cannot write run files under " + dir.string());

  const auto opts = config::to_train_options(cfg);
  auto judge = make_judge(cfg);

  trainer::TrainHooks hooks;
  hooks.metrics = &metrics;
  hooks.trajectories = &trajectories;
  hooks.trajectory_every = cfg.output.log_every;
  hooks.on_update = [&](int update, const policy::PolicyModel& model) {
    if (update % cfg.output.log_every != 0) return;
    policy::save_checkpoint(model,
                            dir / "checkpoints" / ("update_" + pad6(update) + ".json"));
    err << "[train] update " << update << "/" << opts.steps << "\n";
  };

  const auto result = trainer::train(opts, *judge, hooks);
  policy::save_checkpoint(result.model, dir / "checkpoints" / "final.json");

  char buf[160];
  std::snprintf(buf, sizeof buf,
                "mode=%s updates=%d tokens=%lld final_em=%.4f\n",
                trainer::mode_name(opts.mode), opts.steps, result.total_tokens,
                result.final_em);
  out << buf << "run dir: " << dir.string() << "\n";
  return kExitOk;
}

int run_compare(const config::RunConfig& cfg, std::ostream& out,
                std::ostream& err) {
  const auto base_mode = trainer::mode_from_name(cfg.train.mode);
  const auto other_mode = trainer::mode_from_name(cfg.compare.against);

  const fs::path dir = cfg.output.dir;
  fs::create_directories(dir);
  write_file(dir / "resolved.cfg", config::resolved_text(cfg));

  auto judge = make_judge(cfg);
  std::vector<CompareRow> rows;
  int wins = 0;
  for (int s = 0; s < cfg.compare.seeds; ++s) {
    const uint64_t seed = cfg.env.seed + static_cast<uint64_t>(s);
    auto opts = config::to_train_options(cfg);
    opts.seed = seed;

    opts.mode = base_mode;
    const auto res_a = trainer::train(opts, *judge);
    opts.mode = other_mode;
    const auto res_b = trainer::train(opts, *judge);

    const long long budget = std::min(res_a.total_tokens, res_b.total_tokens);
    const long long tt_a = trainer::tokens_to_threshold(res_a, cfg.compare.threshold);
    const long long tt_b = trainer::tokens_to_threshold(res_b, cfg.compare.threshold);
    rows.push_back({seed, trainer::mode_name(base_mode), res_a.total_tokens,
                    tt_a, em_at_budget(res_a, budget), res_a.final_em});
    rows.push_back({seed, trainer::mode_name(other_mode), res_b.total_tokens,
                    tt_b, em_at_budget(res_b, budget), res_b.final_em});

    const bool win = tt_a >= 0 && (tt_b < 0 || tt_a < tt_b);
    wins += win ? 1 : 0;
    err << "[compare] seed " << seed << ": " << trainer::mode_name(base_mode)
        << (win ? " first" : " not first") << " to em>=" << cfg.compare.threshold
        << "\n";
  }

  write_file(dir / "compare.csv", compare_csv(rows));
  out << trainer::mode_name(base_mode) << " reached em>=" << cfg.compare.threshold
      << " with fewer tokens than " << trainer::mode_name(other_mode) << " on "
      << wins << "/" << cfg.compare.seeds << " paired seeds\n"
      << "report: " << (dir / "compare.csv").string() << "\n";
  return kExitOk;
}

int run_sweep(const config::RunConfig& cfg, std::ostream& out,
              std::ostream& err) {
  const fs::path dir = cfg.output.dir;
  fs::create_directories(dir);
  write_file(dir / "resolved.cfg", config::resolved_text(cfg));

  auto judge = make_judge(cfg);
  std::ostringstream csv;
  csv << "k,seed,final_em,total_tokens\n";
  for (int k : cfg.sweep.k) {
    double em_sum = 0.0;
    for (int s = 0; s < cfg.sweep.seeds; ++s) {
      auto opts = config::to_train_options(cfg);
      opts.k = k;
      opts.steps = cfg.sweep.steps;
      opts.seed = cfg.env.seed + static_cast<uint64_t>(s);
      const auto res = trainer::train(opts, *judge);
      em_sum += res.final_em;
      char buf[96];
      std::snprintf(buf, sizeof buf, "%d,%llu,%.6f,%lld\n", k,
                    static_cast<unsigned long long>(opts.seed), res.final_em,
                    res.total_tokens);
      csv << buf;
    }
    const double mean = em_sum / cfg.sweep.seeds;
    char buf[64];
    std::snprintf(buf, sizeof buf, "k=%d mean_final_em=%.4f\n", k, mean);
    out << buf;
    err << "[sweep] finished k=" << k << "\n";
  }

  write_file(dir / "sweep.csv", csv.str());
  out << "report: " << (dir / "sweep.csv").string() << "\n";
  return kExitOk;
}

int run_variance(const config::RunConfig& cfg, std::ostream& out,
                 std::ostream& err) {
  const auto spec = config::to_process_spec(cfg);
  lab::ProcessRewardSource source(spec);
  const auto flags = lab::assumption_flags(spec);
  Rng rng(cfg.lab.seed);
  const auto check =
      lab::check_theorem(source, flags, cfg.lab.G, cfg.lab.trials, rng);
  const auto hash = lab::config_hash(spec);

  const fs::path dir = cfg.output.dir;
  fs::create_directories(dir);
  write_file(dir / "variance_report.json", lab::theorem_json(check, hash));
  write_file(dir / "variance_report.csv", lab::theorem_csv(check, hash));

  char buf[256];
  std::snprintf(buf, sizeof buf,
                "config %s: T=%d G=%d trials=%lld max_ratio=%.6f (ci %.6f)\n",
                hash.c_str(), check.horizon, check.group_size, check.trials,
                check.max_ratio, check.max_ratio_ci);
  out << buf;
  out << "general bound (<= 1): " << (check.clause1_ok ? "ok" : "VIOLATED")
      << "\n";
  if (check.clause2_applicable)
    out << "tight bound (<= 1/T): " << (check.clause2_ok ? "ok" : "VIOLATED")
        << "\n";
  else
    out << "tight bound: not applicable (assumptions unmet)\n";
  out << "report: " << (dir / "variance_report.json").string() << "\n";

  const bool ok =
      check.clause1_ok && (!check.clause2_applicable || check.clause2_ok);
  if (!ok) err << "variance bound violated for config " << hash << "\n";
  return ok ? kExitOk : kExitBound;
}

namespace {

// Minimal in-process endpoint for --stub smoke runs: every request gets a
// well-formed +1 verdict in the completion shape the remote judge expects.
struct StubEndpoint {
  httplib::Server server;
  int port = 0;
  std::thread runner;

  StubEndpoint() {
    port = server.bind_to_any_port("127.0.0.1");
    if (port <= 0) throw judge::TransportError("stub endpoint: cannot bind");
    server.Post("/v1/completions", [](const httplib::Request&,
                                      httplib::Response& res) {
      nlohmann::json reply;
      reply["choices"] = nlohmann::json::array();
      reply["choices"].push_back(
          {{"text", "<explanation> stub verdict </explanation>\n"
                    "<score> +1 </score>"}});
      res.set_content(reply.dump(), "application/json");
    });
    runner = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~StubEndpoint() {
    server.stop();
    if (runner.joinable()) runner.join();
  }

  std::string endpoint() const {
    return "http://127.0.0.1:" + std::to_string(port) + "/v1/completions";
  }
};

const char* kind_name(judge::VerdictKind kind) {
  switch (kind) {
    case judge::VerdictKind::think: return "think";
    case judge::VerdictKind::query: return "query";
    default: return "answer";
  }
}

}  // namespace

int run_judge_smoke(const config::RunConfig& cfg, bool stub, std::ostream& out,
                    std::ostream& err) {
  const std::map<judge::VerdictKind, std::string> fixtures = {
      {judge::VerdictKind::think, "fixtures/prompts/think_prompt.txt"},
      {judge::VerdictKind::query, "fixtures/prompts/query_prompt.txt"},
      {judge::VerdictKind::answer, "fixtures/prompts/answer_prompt.txt"},
  };
  for (const auto& [kind, path] : fixtures) {
    const std::string want = slurp(path);
    const std::string& got = judge::prompt_template(kind);
    if (got != want) {
      size_t offset = 0;
      const size_t n = std::min(got.size(), want.size());
      while (offset < n && got[offset] == want[offset]) ++offset;
      err << "prompt template mismatch (" << kind_name(kind)
          << "): first differing byte at offset " << offset << " vs " << path
          << "\n";
      return kExitJudge;
    }
    out << "template " << kind_name(kind) << ": matches " << path << " ("
        << want.size() << " bytes)\n";
  }

  const auto task =
      env::task_from_json(slurp("fixtures/tasks/task_seed7_hops3_vocab12.json"));
  const auto state = env::initial_state(task);
  const std::string context = env::context_text(state);
  const std::string frontier = env::entity_token(env::latest_revealed_entity(state));
  const std::string gold = env::entity_token(task.gold_answer);

  const std::map<judge::VerdictKind, std::map<std::string, std::string>> fields = {
      {judge::VerdictKind::think, {{"context", context}, {"thinking", frontier}}},
      {judge::VerdictKind::query,
       {{"context", context}, {"thinking", frontier}, {"query", frontier}}},
      {judge::VerdictKind::answer,
       {{"context", context},
        {"ground_truth", gold},
        {"predicted_answer", gold}}},
  };

  std::unique_ptr<StubEndpoint> endpoint;
  std::unique_ptr<judge::RemoteJudge> remote;
  if (stub || cfg.judge.mode == "remote") {
    judge::RemoteJudgeConfig rc;
    rc.model = cfg.judge.model;
    rc.temperature = cfg.judge.temperature;
    rc.retries = cfg.judge.retries;
    rc.strict = cfg.judge.strict;
    if (stub) {
      endpoint = std::make_unique<StubEndpoint>();
      rc.endpoint = endpoint->endpoint();
    } else {
      rc.endpoint = cfg.judge.endpoint;
    }
    remote = std::make_unique<judge::RemoteJudge>(rc);
  }

  for (const auto& [kind, f] : fields) {
    const std::string prompt = judge::render_prompt(kind, f);
    out << "--- " << kind_name(kind) << " prompt (" << prompt.size()
        << " bytes) ---\n"
        << prompt << "\n";
    judge::JudgeVerdict verdict;
    if (remote) {
      verdict = remote->score(kind, f);
    } else if (kind == judge::VerdictKind::think) {
      verdict = judge::oracle_score_think(state, {frontier});
    } else if (kind == judge::VerdictKind::query) {
      verdict = judge::oracle_score_query(state, {frontier});
    } else {
      verdict = judge::oracle_score_answer({gold}, task);
    }
    out << "verdict: score=" << (verdict.score > 0 ? "+" : "") << verdict.score
        << " explanation=" << verdict.explanation << "\n";
  }
  out << "judge smoke: ok\n";
  return kExitOk;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out,
             std::ostream& err) {
  try {
    if (args.empty() || args[0] == "help" || args[0] == "-h" ||
        args[0] == "--help") {
      out << kUsage;
      return args.empty() ? kExitConfig : kExitOk;
    }
    const std::string& sub = args[0];
    const bool known = sub == "train" || sub == "compare" || sub == "sweep" ||
                       sub == "variance" || sub == "judge-smoke";
    if (!known) {
      err << "unknown subcommand: " << sub << "\n" << kUsage;
      return kExitConfig;
    }

    config::RunConfig cfg;
    bool stub = false;
    for (size_t i = 1; i < args.size(); ++i) {
      const std::string& a = args[i];
      if (a == "--stub") {
        stub = true;
        continue;
      }
      if (a.rfind("--", 0) != 0)
        throw config::ConfigError("expected --key=value, got '" + a + "'");
      const auto eq = a.find('=');
      if (eq == std::string::npos)
        throw config::ConfigError("expected --key=value, got '" + a + "'");
      const std::string key = a.substr(2, eq - 2);
      const std::string value = a.substr(eq + 1);
      if (key == "config")
        cfg = config::load_config_file(value, cfg);
      else
        config::apply_assignment(cfg, key, value);
    }
    if (stub && sub != "judge-smoke")
      throw config::ConfigError("--stub only applies to judge-smoke");
    config::validate(cfg);

    if (sub == "train") return run_train(cfg, out, err);
    if (sub == "compare") return run_compare(cfg, out, err);
    if (sub == "sweep") return run_sweep(cfg, out, err);
    if (sub == "variance") return run_variance(cfg, out, err);
    return run_judge_smoke(cfg, stub, out, err);
  } catch (const config::ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const judge::TransportError& e) {
    err << "judge transport failure: " << e.what() << "\n";
    return kExitJudge;
  } catch (const judge::MalformedResponse& e) {
    err << "judge response malformed: " << e.what() << "\n";
    return kExitJudge;
  } catch (const judge::OutOfRangeScore& e) {
    err << "judge score out of range: " << e.what() << "\n";
    return kExitJudge;
  } catch (const judge::MissingField& e) {
    err << "judge prompt field missing: " << e.what() << "\n";
    return kExitJudge;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}

}  // namespace slate::cli
