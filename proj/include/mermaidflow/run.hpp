#pragma once

// Run configuration and replay. The config file is plain `key = value`
// lines; `#` starts a comment, blank lines are ignored, `seed_workflow` may
// repeat. Paths are relative to the config file, except `output`, which is
// relative to the working directory. Scalar keys can be
// overridden from the environment as MERMAIDFLOW_<KEY> (dots become
// underscores) and from the command line; a flag beats the environment,
// which beats the file, which beats the built-in default.
//
//   lambda, alpha, candidate_pool, max_rounds, num_tries, seed,
//   crossover_rate, site_budget, parallel          EvolutionConfig fields
//   weight.<operator>                              relative operator weight
//   seed_workflow = path.mmd                       repeatable; at least one
//   target.has_ensemble / target.branch_count /
//   target.refine_tail / target.depth              synthetic evaluator target
//   domain = math | code                           default: inferred per seed
//   registry = path                                default: built-in registry
//   output = dir                                   default: run
//   proposer  = builtin | command line ...
//   judge     = builtin | command line ...
//   evaluator = synthetic | command line ...
//
// External commands are split on whitespace (no quoting) and speak the
// line protocol described in adapters.hpp.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mermaidflow/adapters.hpp"
#include "mermaidflow/evolution.hpp"
#include "mermaidflow/mermaid.hpp"

#ifndef MERMAIDFLOW_VERSION
#define MERMAIDFLOW_VERSION "0.0.0"
#endif

namespace mermaidflow {

inline constexpr std::string_view kToolVersion = MERMAIDFLOW_VERSION;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunSettings {
  EvolutionConfig config;
  std::vector<std::filesystem::path> seed_paths;
  WorkflowFeatures target{true, 3, true, 4};
  std::string domain;
  std::filesystem::path registry_path;
  std::filesystem::path output = "run";
  std::string proposer = "builtin";
  std::string judge = "builtin";
  std::string evaluator = "synthetic";
};

namespace detail {

inline double parse_double(const std::string &key, const std::string &v) {
  try {
    std::size_t used = 0;
    double x = std::stod(v, &used);
    if (used == v.size())
      return x;
  } catch (const std::exception &) {
  }
  throw ConfigError(key + ": expected a number, got '" + v + "'");
}

inline long long parse_int(const std::string &key, const std::string &v) {
  try {
    std::size_t used = 0;
    long long x = std::stoll(v, &used);
    if (used == v.size())
      return x;
  } catch (const std::exception &) {
  }
  throw ConfigError(key + ": expected an integer, got '" + v + "'");
}

inline std::uint64_t parse_uint(const std::string &key, const std::string &v) {
  try {
    std::size_t used = 0;
    if (!v.empty() && v[0] != '-') {
      auto x = std::stoull(v, &used);
      if (used == v.size())
        return x;
    }
  } catch (const std::exception &) {
  }
  throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
}

inline bool parse_bool(const std::string &key, const std::string &v) {
  auto s = to_lower(v);
  if (s == "1" || s == "true" || s == "yes" || s == "on")
    return true;
  if (s == "0" || s == "false" || s == "no" || s == "off")
    return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline int to_int(const std::string &key, long long x) {
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max())
    throw ConfigError(key + ": out of range");
  return static_cast<int>(x);
}

inline std::filesystem::path resolve(const std::filesystem::path &base, const std::string &v) {
  std::filesystem::path p(v);
  return p.is_absolute() || base.empty() ? p : base / p;
}

// Keys that the environment and the command line may override.
inline const std::vector<std::string> &scalar_keys() {
  static const std::vector<std::string> keys{
      "lambda",  "alpha",          "candidate_pool", "max_rounds", "num_tries",
      "seed",    "crossover_rate", "site_budget",    "parallel",   "domain",
      "registry", "output",        "proposer",       "judge",      "evaluator"};
  return keys;
}

} // namespace detail

// Applies one setting. Relative paths resolve against `base`. Operator
// weights are collected raw and normalized by finish_settings().
inline void apply_setting(RunSettings &s, std::map<std::string, double> &weights,
                          const std::string &key, const std::string &value,
                          const std::filesystem::path &base = {}) {
  using namespace detail;
  auto &c = s.config;
  if (key == "lambda")
    c.lambda = parse_double(key, value);
  else if (key == "alpha")
    c.alpha = parse_double(key, value);
  else if (key == "candidate_pool")
    c.candidate_pool = to_int(key, parse_int(key, value));
  else if (key == "max_rounds")
    c.max_rounds = to_int(key, parse_int(key, value));
  else if (key == "num_tries")
    c.num_tries = to_int(key, parse_int(key, value));
  else if (key == "seed")
    c.seed = parse_uint(key, value);
  else if (key == "crossover_rate")
    c.crossover_rate = parse_double(key, value);
  else if (key == "site_budget")
    c.site_budget = to_int(key, parse_int(key, value));
  else if (key == "parallel")
    c.parallel = parse_bool(key, value);
  else if (key.rfind("weight.", 0) == 0) {
    auto kind = parse_operator_kind(key.substr(7));
    if (!kind)
      throw ConfigError("unknown operator in '" + key + "'");
    double w = parse_double(key, value);
    if (!(w >= 0))
      throw ConfigError(key + ": weights must be non-negative");
    weights[std::string(to_string(*kind))] = w;
  } else if (key == "seed_workflow")
    s.seed_paths.push_back(resolve(base, value));
  else if (key == "target.has_ensemble")
    s.target.has_ensemble = parse_bool(key, value);
  else if (key == "target.branch_count")
    s.target.branch_count = to_int(key, parse_int(key, value));
  else if (key == "target.refine_tail")
    s.target.refine_tail = parse_bool(key, value);
  else if (key == "target.depth")
    s.target.depth = to_int(key, parse_int(key, value));
  else if (key == "domain") {
    if (!value.empty() && !parse_domain(value))
      throw ConfigError("domain must be math or code, got '" + value + "'");
    s.domain = value;
  } else if (key == "registry")
    s.registry_path = value.empty() ? std::filesystem::path() : resolve(base, value);
  else if (key == "output")
    s.output = value;
  else if (key == "proposer")
    s.proposer = value;
  else if (key == "judge")
    s.judge = value;
  else if (key == "evaluator")
    s.evaluator = value;
  else
    throw ConfigError("unknown config key '" + key + "'");
}

// Turns raw weights into a distribution. Unlisted operators keep their
// default weight; the crossover share is pinned separately by crossover_rate.
inline void finish_settings(RunSettings &s, const std::map<std::string, double> &weights) {
  if (!weights.empty()) {
    OperatorWeights w;
    for (auto k : kAllOperators)
      if (auto it = weights.find(std::string(to_string(k))); it != weights.end())
        w[k] = it->second;
    double sum = 0;
    for (double x : w.w)
      sum += x;
    if (!(sum > 0))
      throw ConfigError("operator weights sum to zero");
    for (double &x : w.w)
      x /= sum;
    s.config.operator_weights = w;
  }
  try {
    s.config.check();
  } catch (const std::invalid_argument &e) {
    throw ConfigError(e.what());
  }
  if (s.seed_paths.empty())
    throw ConfigError("config lists no seed_workflow");
}

using EnvLookup = std::function<std::optional<std::string>(const std::string &)>;

inline std::optional<std::string> process_env(const std::string &name) {
  if (const char *v = std::getenv(name.c_str()))
    return std::string(v);
  return std::nullopt;
}

// file < env < overrides. Overrides are (key, value) in command-line order.
[[nodiscard]] inline RunSettings
parse_run_config(std::string_view text, const std::filesystem::path &base,
                 const EnvLookup &env = process_env,
                 const std::vector<std::pair<std::string, std::string>> &overrides = {}) {
  RunSettings s;
  std::map<std::string, double> weights;
  int lineno = 0;
  for (const auto &raw : detail::raw_lines(text)) {
    ++lineno;
    auto hash = raw.find('#');
    auto line = detail::trim(std::string_view(raw).substr(0, hash));
    if (line.empty())
      continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    auto key = detail::trim(line.substr(0, eq));
    auto value = detail::trim(line.substr(eq + 1));
    try {
      apply_setting(s, weights, key, value, base);
    } catch (const ConfigError &e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (env) {
    for (const auto &key : detail::scalar_keys())
      if (auto v = env("MERMAIDFLOW_" + detail::to_upper(key)))
        try {
          apply_setting(s, weights, key, *v, std::filesystem::current_path());
        } catch (const ConfigError &e) {
          throw ConfigError("MERMAIDFLOW_" + detail::to_upper(key) + ": " + e.what());
        }
  }
  for (const auto &[key, value] : overrides)
    apply_setting(s, weights, key, value, std::filesystem::current_path());
  finish_settings(s, weights);
  return s;
}

[[nodiscard]] inline std::string read_text_file(const std::filesystem::path &p) {
  std::ifstream in(p, std::ios::binary);
  if (!in)
    throw ConfigError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

[[nodiscard]] inline RunSettings
load_run_config(const std::filesystem::path &path, const EnvLookup &env = process_env,
                const std::vector<std::pair<std::string, std::string>> &overrides = {}) {
  return parse_run_config(read_text_file(path), path.parent_path(), env, overrides);
}

[[nodiscard]] inline std::string utc_timestamp() {
  auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Snapshots everything a replay needs: seed and registry texts are copied
// in, so the manifest stays valid if the files change.
[[nodiscard]] inline RunManifest make_manifest(const RunSettings &s) {
  RunManifest m;
  m.config = s.config;
  for (const auto &p : s.seed_paths)
    m.seeds.emplace_back(p.string(), read_text_file(p));
  m.target = s.target;
  m.domain = s.domain;
  if (!s.registry_path.empty()) {
    m.registry_path = s.registry_path.string();
    m.registry_text = read_text_file(s.registry_path);
  }
  m.proposer = s.proposer;
  m.judge = s.judge;
  m.evaluator = s.evaluator;
  m.tool_version = std::string(kToolVersion);
  m.created_at = utc_timestamp();
  return m;
}

struct PreparedRun {
  std::shared_ptr<const Registry> registry;
  std::vector<WorkflowGraph> seeds;
  std::unique_ptr<Proposer> proposer;
  std::unique_ptr<Judge> judge;
  std::unique_ptr<Evaluator> evaluator;
};

// Builds registry, seed graphs and components. Seed problems are reported
// as ConfigError with the validator's lines.
[[nodiscard]] inline PreparedRun prepare_run(const RunManifest &m) {
  PreparedRun r;
  try {
    r.registry = m.registry_text.empty()
                     ? default_registry()
                     : std::make_shared<const Registry>(parse_registry(m.registry_text));
  } catch (const RegistryError &e) {
    throw ConfigError(std::string("registry: ") + e.what());
  }
  std::optional<Domain> domain;
  if (!m.domain.empty() && !(domain = parse_domain(m.domain)))
    throw ConfigError("domain must be math or code, got '" + m.domain + "'");
  if (m.seeds.empty())
    throw ConfigError("no seed workflows");
  for (const auto &[name, text] : m.seeds) {
    auto verdict = validate(text, r.registry, domain);
    if (!verdict.valid())
      throw ConfigError("seed " + name + " does not validate:\n" +
                        render_lines(verdict.diagnostics));
    r.seeds.push_back(read_workflow(text, r.registry, domain).lowered.graph);
  }
  auto external = [](const std::string &spec) {
    auto argv = detail::split_ws(spec);
    if (argv.empty())
      throw ConfigError("empty external command");
    return argv;
  };
  if (m.proposer.empty() || m.proposer == "builtin")
    r.proposer = std::make_unique<OperatorProposer>();
  else
    r.proposer = std::make_unique<ExternalProposer>(external(m.proposer));
  if (m.judge.empty() || m.judge == "builtin")
    r.judge = std::make_unique<StructuralJudge>();
  else
    r.judge = std::make_unique<ExternalJudge>(external(m.judge));
  if (m.evaluator.empty() || m.evaluator == "synthetic")
    r.evaluator = std::make_unique<SyntheticTaskEvaluator>(m.target);
  else
    r.evaluator = std::make_unique<ExternalEvaluator>(external(m.evaluator));
  return r;
}

[[nodiscard]] inline EvolutionResult run_manifest(const RunManifest &m,
                                                  const RoundObserver &observer = {}) {
  auto r = prepare_run(m);
  return run_evolution(r.seeds, m.config, *r.proposer, *r.judge, *r.evaluator, observer);
}

// "Substitution: node ..." -> "Substitution"; anything else -> "-".
[[nodiscard]] inline std::string operator_of(const std::string &modification) {
  auto colon = modification.find(':');
  if (colon == std::string::npos)
    return "-";
  auto head = modification.substr(0, colon);
  return parse_operator_kind(head) ? head : "-";
}

} // namespace mermaidflow
