#include "slate/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace slate::config {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

int parse_int(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const int v = std::stoi(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": not an integer: '" + value + "'");
  }
}

long long parse_ll(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const long long v = std::stoll(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": not an integer: '" + value + "'");
  }
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const unsigned long long v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": not an unsigned integer: '" + value + "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": not a number: '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError(key + ": not a boolean: '" + value + "'");
}

std::vector<std::string> split_commas(const std::string& value) {
  std::vector<std::string> parts;
  std::string item;
  std::istringstream is(value);
  while (std::getline(is, item, ',')) parts.push_back(trim(item));
  if (!parts.empty() && parts.back().empty()) parts.pop_back();
  return parts;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  for (const auto& p : split_commas(value)) out.push_back(parse_int(key, p));
  return out;
}

std::vector<double> parse_double_list(const std::string& key,
                                      const std::string& value) {
  std::vector<double> out;
  for (const auto& p : split_commas(value)) out.push_back(parse_double(key, p));
  return out;
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

std::string join_doubles(const std::vector<double>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += num(v[i]);
  }
  return s;
}

}  // namespace

void apply_assignment(RunConfig& c, const std::string& key,
                      const std::string& value) {
  if (key == "env.hops") c.env.hops = parse_int(key, value);
  else if (key == "env.vocab_size") c.env.vocab_size = parse_int(key, value);
  else if (key == "env.top_k") c.env.top_k = parse_int(key, value);
  else if (key == "env.seed") c.env.seed = parse_u64(key, value);
  else if (key == "train.mode") c.train.mode = value;
  else if (key == "train.k") c.train.k = parse_int(key, value);
  else if (key == "train.G") c.train.G = parse_int(key, value);
  else if (key == "train.B") c.train.B = parse_int(key, value);
  else if (key == "train.lambda") c.train.lambda = parse_double(key, value);
  else if (key == "train.eta") c.train.eta = parse_double(key, value);
  else if (key == "train.eps_adv") c.train.eps_adv = parse_double(key, value);
  else if (key == "train.clip_eps") c.train.clip_eps = parse_double(key, value);
  else if (key == "train.kl_beta") c.train.kl_beta = parse_double(key, value);
  else if (key == "train.learning_rate")
    c.train.learning_rate = parse_double(key, value);
  else if (key == "train.steps") c.train.steps = parse_int(key, value);
  else if (key == "train.batch_size") c.train.batch_size = parse_int(key, value);
  else if (key == "train.selection") c.train.selection = value;
  else if (key == "train.old_policy_refresh") c.train.old_policy_refresh = value;
  else if (key == "judge.mode") c.judge.mode = value;
  else if (key == "judge.endpoint") c.judge.endpoint = value;
  else if (key == "judge.model") c.judge.model = value;
  else if (key == "judge.temperature")
    c.judge.temperature = parse_double(key, value);
  else if (key == "judge.retries") c.judge.retries = parse_int(key, value);
  else if (key == "judge.strict") c.judge.strict = parse_bool(key, value);
  else if (key == "output.dir") c.output.dir = value;
  else if (key == "output.log_every") c.output.log_every = parse_int(key, value);
  else if (key == "output.wall_clock")
    c.output.wall_clock = parse_bool(key, value);
  else if (key == "compare.against") c.compare.against = value;
  else if (key == "compare.seeds") c.compare.seeds = parse_int(key, value);
  else if (key == "compare.threshold")
    c.compare.threshold = parse_double(key, value);
  else if (key == "sweep.k") c.sweep.k = parse_int_list(key, value);
  else if (key == "sweep.seeds") c.sweep.seeds = parse_int(key, value);
  else if (key == "sweep.steps") c.sweep.steps = parse_int(key, value);
  else if (key == "lab.horizon") c.lab.horizon = parse_int(key, value);
  else if (key == "lab.scales") c.lab.scales = parse_double_list(key, value);
  else if (key == "lab.fc") c.lab.fc = parse_double(key, value);
  else if (key == "lab.coupling") c.lab.coupling = value;
  else if (key == "lab.cs") c.lab.cs = parse_double(key, value);
  else if (key == "lab.trials") c.lab.trials = parse_ll(key, value);
  else if (key == "lab.G") c.lab.G = parse_int(key, value);
  else if (key == "lab.seed") c.lab.seed = parse_u64(key, value);
  else throw ConfigError("unknown config key: '" + key + "'");
}

RunConfig parse_config_text(const std::string& text, RunConfig base) {
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) +
                        ": expected key=value, got '" + line + "'");
    apply_assignment(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return base;
}

RunConfig load_config_file(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), std::move(base));
}

std::string resolved_text(const RunConfig& c) {
  std::ostringstream os;
  os << "env.hops=" << c.env.hops << '\n'
     << "env.vocab_size=" << c.env.vocab_size << '\n'
     << "env.top_k=" << c.env.top_k << '\n'
     << "env.seed=" << c.env.seed << '\n'
     << "train.mode=" << c.train.mode << '\n'
     << "train.k=" << c.train.k << '\n'
     << "train.G=" << c.train.G << '\n'
     << "train.B=" << c.train.B << '\n'
     << "train.lambda=" << num(c.train.lambda) << '\n'
     << "train.eta=" << num(c.train.eta) << '\n'
     << "train.eps_adv=" << num(c.train.eps_adv) << '\n'
     << "train.clip_eps=" << num(c.train.clip_eps) << '\n'
     << "train.kl_beta=" << num(c.train.kl_beta) << '\n'
     << "train.learning_rate=" << num(c.train.learning_rate) << '\n'
     << "train.steps=" << c.train.steps << '\n'
     << "train.batch_size=" << c.train.batch_size << '\n'
     << "train.selection=" << c.train.selection << '\n'
     << "train.old_policy_refresh=" << c.train.old_policy_refresh << '\n'
     << "judge.mode=" << c.judge.mode << '\n'
     << "judge.endpoint=" << c.judge.endpoint << '\n'
     << "judge.model=" << c.judge.model << '\n'
     << "judge.temperature=" << num(c.judge.temperature) << '\n'
     << "judge.retries=" << c.judge.retries << '\n'
     << "judge.strict=" << (c.judge.strict ? "true" : "false") << '\n'
     << "output.dir=" << c.output.dir << '\n'
     << "output.log_every=" << c.output.log_every << '\n'
     << "output.wall_clock=" << (c.output.wall_clock ? "true" : "false") << '\n'
     << "compare.against=" << c.compare.against << '\n'
     << "compare.seeds=" << c.compare.seeds << '\n'
     << "compare.threshold=" << num(c.compare.threshold) << '\n'
     << "sweep.k=" << join_ints(c.sweep.k) << '\n'
     << "sweep.seeds=" << c.sweep.seeds << '\n'
     << "sweep.steps=" << c.sweep.steps << '\n'
     << "lab.horizon=" << c.lab.horizon << '\n'
     << "lab.scales=" << join_doubles(c.lab.scales) << '\n'
     << "lab.fc=" << num(c.lab.fc) << '\n'
     << "lab.coupling=" << c.lab.coupling << '\n'
     << "lab.cs=" << num(c.lab.cs) << '\n'
     << "lab.trials=" << c.lab.trials << '\n'
     << "lab.G=" << c.lab.G << '\n'
     << "lab.seed=" << c.lab.seed << '\n';
  return os.str();
}

void validate(const RunConfig& c) {
  try {
    trainer::mode_from_name(c.train.mode);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (c.train.selection != "best_of_k" && c.train.selection != "reward_weighted")
    throw ConfigError("train.selection must be best_of_k or reward_weighted");
  if (c.train.old_policy_refresh != "per_group" &&
      c.train.old_policy_refresh != "per_batch")
    throw ConfigError("train.old_policy_refresh must be per_group or per_batch");
  if (c.judge.mode != "oracle" && c.judge.mode != "remote")
    throw ConfigError("judge.mode must be oracle or remote");
  if (c.judge.mode == "remote" && c.judge.endpoint.empty())
    throw ConfigError("judge.mode=remote requires judge.endpoint");
  if (c.output.log_every < 1) throw ConfigError("output.log_every must be >= 1");
  if (c.output.dir.empty()) throw ConfigError("output.dir must be set");
  if (c.lab.coupling != "iid" && c.lab.coupling != "prefix")
    throw ConfigError("lab.coupling must be iid or prefix");
  if (c.lab.trials < 100) throw ConfigError("lab.trials must be >= 100");
  if (c.lab.G < 2) throw ConfigError("lab.G must be >= 2");
  if (c.compare.seeds < 1) throw ConfigError("compare.seeds must be >= 1");
  if (c.compare.threshold <= 0.0 || c.compare.threshold > 1.0)
    throw ConfigError("compare.threshold must be in (0, 1]");
  if (c.sweep.k.empty()) throw ConfigError("sweep.k must list at least one k");
  for (int k : c.sweep.k)
    if (k < 1) throw ConfigError("sweep.k entries must be >= 1");
  if (c.sweep.seeds < 1) throw ConfigError("sweep.seeds must be >= 1");
  if (c.sweep.steps < 0) throw ConfigError("sweep.steps must be >= 0");
}

trainer::TrainOptions to_train_options(const RunConfig& c) {
  trainer::TrainOptions o;
  o.mode = trainer::mode_from_name(c.train.mode);
  o.hops = c.env.hops;
  o.vocab_size = c.env.vocab_size;
  o.top_k = c.env.top_k;
  o.seed = c.env.seed;
  o.k = c.train.k;
  o.group_size = c.train.G;
  o.budget = c.train.B;
  o.lambda = c.train.lambda;
  o.eta = c.train.eta;
  o.eps_adv = c.train.eps_adv;
  o.selection = c.train.selection == "best_of_k"
                    ? sampler::Selection::best_of_k
                    : sampler::Selection::reward_weighted;
  o.clip_eps = c.train.clip_eps;
  o.kl_beta = c.train.kl_beta;
  o.learning_rate = c.train.learning_rate;
  o.steps = c.train.steps;
  o.batch_size = c.train.batch_size;
  o.refresh = c.train.old_policy_refresh == "per_batch"
                  ? optimizer::Refresh::per_batch
                  : optimizer::Refresh::per_group;
  o.wall_clock = c.output.wall_clock;
  return o;
}

lab::RewardProcessSpec to_process_spec(const RunConfig& c) {
  lab::RewardProcessSpec spec;
  spec.horizon = c.lab.horizon;
  spec.step_scales = c.lab.scales;
  spec.future_covariance = c.lab.fc;
  spec.coupling = c.lab.coupling == "prefix" ? lab::Coupling::prefix_coupled
                                             : lab::Coupling::independent;
  spec.coupling_strength = c.lab.cs;
  return spec;
}

}  // namespace slate::config
