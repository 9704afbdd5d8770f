// mermaidflow: validate, mutate, evolve, emit and export workflows.
//
// Exit codes: 0 success, 1 domain failure (invalid workflow, failed run,
// non-empty diff), 2 input or configuration failure, 3 no applicable rewrite.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mermaidflow/codegen.hpp"
#include "mermaidflow/dot.hpp"
#include "mermaidflow/evolution.hpp"
#include "mermaidflow/mermaid.hpp"
#include "mermaidflow/operators.hpp"
#include "mermaidflow/run.hpp"
#include "mermaidflow/validator.hpp"

namespace fs = std::filesystem;
using namespace mermaidflow;
using nlohmann::json;

namespace {

enum Exit { ok = 0, domain_failure = 1, input_failure = 2, no_rewrite = 3 };

struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  bool json = false;
  std::string registry;
  std::string domain;
};

std::string read_input(const std::string &path) {
  if (path == "-")
    return {std::istreambuf_iterator<char>(std::cin), std::istreambuf_iterator<char>()};
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw InputError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path &p, const std::string &text) {
  if (p.has_parent_path())
    fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out || !(out << text))
    throw InputError("cannot write " + p.string());
}

std::shared_ptr<const Registry> registry_of(const Globals &g) {
  if (g.registry.empty())
    return default_registry();
  try {
    return load_registry(g.registry);
  } catch (const RegistryError &e) {
    throw InputError(e.what());
  }
}

std::optional<Domain> domain_of(const Globals &g) {
  if (g.domain.empty())
    return std::nullopt;
  auto d = parse_domain(g.domain);
  if (!d)
    throw InputError("--domain must be math or code");
  return d;
}

void print_json(const json &j) { std::cout << j.dump(2) << "\n"; }

// Reads, validates and lowers a workflow. Invalid input is a domain failure
// and is reported with the validator's lines.
struct Loaded {
  std::string text;
  Verdict verdict;
  WorkflowGraph graph;
};

Loaded load_valid(const std::string &path, const Globals &g, int &status) {
  Loaded l;
  l.text = read_input(path);
  auto reg = registry_of(g);
  auto dom = domain_of(g);
  l.verdict = validate(l.text, reg, dom);
  if (!l.verdict.valid()) {
    std::cerr << path << ": workflow does not validate\n" << render_lines(l.verdict.diagnostics);
    status = domain_failure;
    return l;
  }
  l.graph = read_workflow(l.text, reg, dom).lowered.graph;
  status = ok;
  return l;
}

// ---------------------------------------------------------------------------

int cmd_validate(const Globals &g, const std::string &path) {
  auto text = read_input(path);
  auto v = validate(text, registry_of(g), domain_of(g));
  if (g.json)
    print_json({{"path", path}, {"q", v.q}, {"diagnostics", to_json(v.diagnostics)}});
  else
    std::cerr << render_lines(v.diagnostics);
  return v.valid() ? ok : domain_failure;
}

int cmd_mutate(const Globals &g, const std::vector<std::string> &paths, const std::string &op,
               std::uint64_t seed, int site_budget) {
  auto kind = parse_operator_kind(op);
  if (!kind)
    throw InputError("unknown operator '" + op + "'");
  if (*kind == OperatorKind::Crossover && paths.size() != 2)
    throw InputError("crossover needs two input workflows");
  if (*kind != OperatorKind::Crossover && paths.size() != 1)
    throw InputError(std::string(to_string(*kind)) + " takes one input workflow");
  std::vector<Loaded> in;
  for (const auto &p : paths) {
    int status = ok;
    in.push_back(load_valid(p, g, status));
    if (status != ok)
      return status;
  }
  std::mt19937_64 rng(seed);
  RandomRewriteOptions opts;
  opts.site_budget = site_budget;
  auto r = apply_random(in[0].graph, in.size() > 1 ? &in[1].graph : nullptr, rng,
                        OperatorWeights::only(*kind), opts);
  if (auto *none = std::get_if<NoApplicableRewrite>(&r)) {
    std::string msg = "no applicable rewrite for " + std::string(to_string(*kind)) + " after " +
                      std::to_string(none->sites_tried) + " site(s): " + none->reason;
    if (g.json)
      print_json({{"operator", to_string(*kind)}, {"applied", false}, {"reason", msg}});
    std::cerr << msg << "\n";
    return no_rewrite;
  }
  const auto &o = std::get<RewriteOutcome>(r);
  std::vector<std::string> texts;
  for (const auto &p : o.graphs)
    texts.push_back(serialize_workflow(p));
  if (g.json) {
    print_json({{"operator", to_string(*kind)},
                {"applied", true},
                {"modification", o.description},
                {"products", texts}});
  } else {
    for (std::size_t i = 0; i < texts.size(); ++i) {
      if (i > 0)
        std::cout << "%% --- product " << i + 1 << " ---\n";
      std::cout << texts[i];
    }
  }
  std::cerr << o.description << "\n";
  return ok;
}

struct EvolveArgs {
  std::string config;
  std::string replay;
  std::string out;
  std::vector<std::pair<std::string, std::string>> overrides;
};

int cmd_evolve(const Globals &g, const EvolveArgs &a) {
  RunManifest manifest;
  fs::path out;
  try {
    if (!a.replay.empty()) {
      if (!a.overrides.empty())
        throw ConfigError("a replay cannot change settings");
      manifest = manifest_from_json(json::parse(read_input(a.replay)));
      out = a.out.empty() ? fs::path("replay") : fs::path(a.out);
    } else {
      if (a.config.empty())
        throw ConfigError("evolve needs --config or --replay");
      auto overrides = a.overrides;
      if (!g.registry.empty())
        overrides.emplace_back("registry", g.registry);
      if (!g.domain.empty())
        overrides.emplace_back("domain", g.domain);
      auto settings = load_run_config(a.config, process_env, overrides);
      manifest = make_manifest(settings);
      out = a.out.empty() ? settings.output : fs::path(a.out);
    }
  } catch (const json::exception &e) {
    throw InputError(std::string("manifest: ") + e.what());
  } catch (const std::invalid_argument &e) {
    throw InputError(e.what());
  }

  auto observer = [&](const RoundRecord &r, const HistoryBuffer &h) {
    if (g.json) {
      auto j = to_json(r);
      j["best"] = h.best_score();
      std::cout << j.dump() << "\n";
      return;
    }
    if (r.skipped) {
      std::cout << "round " << r.round << "  skipped: " << r.skip_reason << "\n";
      return;
    }
    const auto &mod = r.modifications[static_cast<std::size_t>(r.chosen)];
    std::ostringstream line;
    line << "round " << r.round << "  op=" << operator_of(mod)
         << "  judge=" << r.judge_table[static_cast<std::size_t>(r.chosen)].total()
         << "  score=" << r.score << "  best=" << h.best_score();
    std::cout << line.str() << "\n";
  };

  EvolutionResult result;
  try {
    result = run_manifest(manifest, observer);
  } catch (const ConfigError &) {
    throw;
  } catch (const ExternalProcessError &e) {
    std::cerr << "run failed: " << e.what() << "\n";
    return domain_failure;
  }

  write_file(out / "history.jsonl", history_jsonl(result.history));
  std::string rounds;
  for (const auto &r : result.rounds)
    rounds += to_json(r).dump() + "\n";
  write_file(out / "rounds.jsonl", rounds);
  write_file(out / "manifest.json", to_json(manifest).dump(2) + "\n");

  int accepted = 0;
  for (const auto &r : result.rounds)
    accepted += r.skipped ? 0 : 1;
  double seed_best = 0;
  for (const auto &e : result.history.entries())
    if (e.round == 0)
      seed_best = std::max(seed_best, e.score);
  json summary{{"rounds", result.rounds.size()},
               {"accepted", accepted},
               {"history", result.history.size()},
               {"seed_score", seed_best},
               {"best_score", result.history.best_score()},
               {"output", out.string()}};
  if (g.json)
    std::cout << summary.dump() << "\n";
  else
    std::cout << "done: " << accepted << "/" << result.rounds.size() << " rounds accepted, best "
              << result.history.best_score() << " (seed " << seed_best << "), wrote "
              << out.string() << "\n";
  if (!result.rounds.empty() && accepted == 0) {
    std::cerr << "every round failed\n";
    return domain_failure;
  }
  return ok;
}

int cmd_emit(const Globals &g, const std::string &path, const std::string &templates,
             const std::string &out_dir) {
  int status = ok;
  auto l = load_valid(path, g, status);
  if (status != ok)
    return status;
  EmissionTemplate t;
  try {
    t = templates.empty() ? default_templates() : load_templates(templates);
  } catch (const CodegenError &e) {
    throw InputError(e.what());
  }
  std::string stem = path == "-" ? "workflow" : fs::path(path).stem().string();
  EmitOptions opts;
  opts.prompt_module = stem + "_prompt";
  EmittedProgram p;
  try {
    p = emit_workflow(l.graph, t, opts);
  } catch (const CodegenError &e) {
    std::cerr << path << ": " << e.what() << "\n" << render_lines(e.diagnostics);
    if (g.json)
      print_json({{"path", path}, {"emitted", false}, {"error", e.what()}});
    return domain_failure;
  }
  auto program = fs::path(out_dir) / (stem + "_workflow.py");
  auto prompts = fs::path(out_dir) / (stem + "_prompt.py");
  write_file(program, p.program);
  write_file(prompts, p.prompt_module);
  auto report = structural_diff(p.program, l.graph, t);
  if (g.json)
    print_json({{"path", path},
                {"emitted", true},
                {"program", program.string()},
                {"prompt_module", prompts.string()},
                {"diff", to_json(report)}});
  else
    std::cerr << "wrote " << program.string() << " and " << prompts.string() << "\n";
  if (!report.empty()) {
    for (const auto &i : report.issues)
      std::cerr << "diff: " << i.kind << " " << i.node << " " << i.call << " " << i.detail
                << "\n";
    return domain_failure;
  }
  return ok;
}

int cmd_export_dot(const Globals &g, const std::string &path) {
  auto text = read_input(path);
  if (detail::trim(text).empty())
    throw InputError(path + ": empty input");
  auto reg = registry_of(g);
  auto parsed = read_workflow(text, reg, domain_of(g));
  if (has_errors(parsed.document.diagnostics)) {
    std::cerr << path << ": does not parse\n" << render_lines(parsed.document.diagnostics);
    return input_failure;
  }
  DotOptions opts;
  opts.graph_name = path == "-" ? "workflow" : fs::path(path).stem().string();
  opts.diagnostics = validate(text, reg, domain_of(g)).diagnostics;
  auto dot = to_dot(parsed.lowered.graph, opts);
  if (g.json)
    print_json({{"path", path}, {"dot", dot}, {"diagnostics", to_json(*opts.diagnostics)}});
  else
    std::cout << dot;
  return ok;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"mermaidflow: typed workflow graphs in Mermaid"};
  app.require_subcommand(1);
  Globals g;
  app.add_flag("--json", g.json, "machine-readable output");
  app.add_option("--registry", g.registry, "node-type registry config (default: built-in)");
  app.add_option("--domain", g.domain, "math or code (default: inferred)");

  std::string path;
  auto *validate_cmd = app.add_subcommand("validate", "check a workflow; exit 0 iff valid");
  validate_cmd->add_option("path", path, "workflow file, or - for stdin")->required();

  std::vector<std::string> mutate_paths;
  std::string op;
  std::uint64_t seed = 0;
  int site_budget = 16;
  auto *mutate_cmd = app.add_subcommand("mutate", "apply one random rewrite");
  mutate_cmd->add_option("paths", mutate_paths, "workflow (two for crossover)")
      ->required()
      ->expected(1, 2);
  mutate_cmd->add_option("--op", op, "Substitution, Addition, Rewiring, Deletion, "
                                     "SubgraphMutation or Crossover")
      ->required();
  mutate_cmd->add_option("--seed", seed, "random seed");
  mutate_cmd->add_option("--site-budget", site_budget, "random sites to try");

  EvolveArgs ev;
  auto *evolve_cmd = app.add_subcommand("evolve", "run the evolutionary search");
  evolve_cmd->add_option("--config", ev.config, "run config (key = value)");
  evolve_cmd->add_option("--replay", ev.replay, "re-run a manifest.json");
  evolve_cmd->add_option("--out", ev.out, "output directory");
  struct ScalarFlag {
    std::string key;
    CLI::Option *option = nullptr;
    std::string value;
  };
  std::vector<ScalarFlag> scalar_flags;
  for (const auto *key : {"seed", "max_rounds", "candidate_pool", "lambda", "alpha",
                          "num_tries", "crossover_rate", "site_budget", "parallel"})
    scalar_flags.push_back({key});
  for (auto &f : scalar_flags) {
    std::string flag = "--" + f.key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    f.option = evolve_cmd->add_option(flag, f.value, "override " + f.key);
  }

  std::string templates, out_dir = ".";
  auto *emit_cmd = app.add_subcommand("emit", "generate a Python program and prompt module");
  emit_cmd->add_option("path", path, "workflow file")->required();
  emit_cmd->add_option("--templates", templates, "template directory (python.tmpl)");
  emit_cmd->add_option("--out-dir", out_dir, "where to write the files");

  auto *dot_cmd = app.add_subcommand("export-dot", "print the workflow as Graphviz DOT");
  dot_cmd->add_option("path", path, "workflow file, or - for stdin")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    int code = app.exit(e);
    return code == 0 ? ok : input_failure;
  }

  try {
    if (*validate_cmd)
      return cmd_validate(g, path);
    if (*mutate_cmd)
      return cmd_mutate(g, mutate_paths, op, seed, site_budget);
    if (*evolve_cmd) {
      for (const auto &f : scalar_flags)
        if (f.option->count() > 0)
          ev.overrides.emplace_back(f.key, f.value);
      return cmd_evolve(g, ev);
    }
    if (*emit_cmd)
      return cmd_emit(g, path, templates, out_dir);
    if (*dot_cmd)
      return cmd_export_dot(g, path);
  } catch (const InputError &e) {
    std::cerr << "error: " << e.what() << "\n";
    return input_failure;
  } catch (const ConfigError &e) {
    std::cerr << "config error: " << e.what() << "\n";
    return input_failure;
  } catch (const RegistryError &e) {
    std::cerr << "registry error: " << e.what() << "\n";
    return input_failure;
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return domain_failure;
  }
  return input_failure;
}
