// Acceptance suite: one PASS/FAIL line per criterion, with wall time and the
// measured quantities. Exit status is non-zero if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "mermaidflow/codegen.hpp"
#include "mermaidflow/dot.hpp"
#include "mermaidflow/evolution.hpp"
#include "mermaidflow/run.hpp"
#include "naive_oracle.hpp"
#include "test_support.hpp"

using namespace mermaidflow;
using namespace mermaidflow::testing;

namespace {

struct Result {
  bool ok = true;
  std::string detail;
};

struct Criterion {
  int number;
  std::string name;
  double limit_seconds;
  std::function<Result()> body;
};

std::string fmt(double x, int digits = 3) {
  std::ostringstream os;
  os.precision(digits);
  os << std::fixed << x;
  return os.str();
}

// ---------------------------------------------------------------------------
// 1. Every corpus workflow parses, hard-checks, validates, round-trips and
//    exports DOT.

Result corpus_validity() {
  Result r;
  int good = 0;
  for (const auto &name : corpus_names()) {
    auto text = corpus_text(name);
    std::string why;
    auto hard = hard_check(text);
    auto parsed = read_workflow(text);
    auto verdict = validate(text);
    const auto &g = parsed.lowered.graph;
    auto again = read_workflow(serialize_workflow(g)).lowered.graph;
    auto dot = to_dot(g);
    if (has_errors(parsed.document.diagnostics))
      why = "does not parse";
    else if (!hard.pass)
      why = "hard check failed";
    else if (!verdict.valid())
      why = "q=0: " + render_lines(verdict.diagnostics);
    else if (!(again == g))
      why = "serialize/parse round trip changed the graph";
    else if (dot.find("digraph") == std::string::npos)
      why = "no DOT output";
    if (why.empty())
      ++good;
    else {
      r.ok = false;
      r.detail += name + ": " + why + "; ";
    }
  }
  r.detail += std::to_string(good) + "/" + std::to_string(corpus_names().size()) +
              " corpus workflows valid";
  return r;
}

// ---------------------------------------------------------------------------
// 2. Exhaustive agreement with the brute-force rule oracle.

Result oracle_equivalence() {
  Result r;
  long checked = 0, disagreements = 0;
  std::string first;
  for (int n = 1; n <= 5; ++n) {
    enumerate_tiny_graphs(n, 6, true, [&](const TinyGraph &t) {
      auto expect = naive_verdict(t);
      auto got = library_verdict(to_graph(t));
      ++checked;
      if (expect.q != got.q || expect.findings != got.findings) {
        if (disagreements++ == 0) {
          for (auto [a, b] : t.edges)
            first += t.ids[a] + "->" + t.ids[b] + " ";
        }
      }
    });
  }
  r.ok = disagreements == 0;
  r.detail = std::to_string(checked) + " graphs (<=5 nodes, <=6 edges), " +
             std::to_string(disagreements) + " disagreements";
  if (!first.empty())
    r.detail += "; first: " + first;
  return r;
}

// ---------------------------------------------------------------------------
// 3. Closure: random operator applications from each corpus seed never leave
//    the valid space, and rejected rewrites leave their input untouched.

Result closure() {
  Result r;
  const auto weights = OperatorWeights::with_crossover_rate(0.10);
  std::vector<WorkflowGraph> seeds;
  for (const auto &name : corpus_names())
    seeds.push_back(corpus_graph(name));
  long accepted = 0, invalid = 0, rejected = 0, mutated_inputs = 0, direct = 0;
  std::string first;

  auto check_products = [&](const RewriteOutcome &o) {
    for (const auto &p : o.graphs) {
      ++accepted;
      if (!validate(p).valid() || !validate(serialize_workflow(p)).valid()) {
        ++invalid;
        if (first.empty())
          first = o.description;
      }
    }
  };

  for (std::size_t s = 0; s < seeds.size(); ++s) {
    std::mt19937_64 rng(1000 + s);
    auto current = seeds[s];
    for (int step = 0; step < 1000; ++step) {
      if (step % 50 == 0)
        current = seeds[s]; // keep the walk near the seed
      // Partner of the same domain for crossover.
      const auto &partner = seeds[(s + 2) % seeds.size()].domain() == current.domain()
                                ? seeds[(s + 2) % seeds.size()]
                                : seeds[s];
      const auto before = current;
      const auto before_text = serialize_workflow(current);
      auto outcome = apply_random(current, &partner, rng, weights);
      if (!(current == before) || serialize_workflow(current) != before_text)
        ++mutated_inputs;
      if (auto *o = std::get_if<RewriteOutcome>(&outcome)) {
        check_products(*o);
        current = o->graphs[rng() % o->graphs.size()];
      } else {
        ++rejected;
      }

      // A direct call with arbitrary arguments, most of which the
      // preconditions reject.
      const auto &g = current;
      const auto snapshot = g;
      const auto &nodes = g.nodes();
      const auto &edges = g.edges();
      const auto &schemas = g.registry_ptr()->schemas();
      ++direct;
      try {
        RewriteOutcome o;
        switch (rng() % 5) {
        case 0: {
          const auto &n = nodes[rng() % nodes.size()];
          auto attrs = n.attributes;
          if (rng() % 2 == 0)
            attrs.clear();
          else
            attrs["role"] = "changed_" + std::to_string(rng() % 100);
          o = substitute_node(g, n.id, attrs);
          break;
        }
        case 1: {
          const auto &e = edges[rng() % edges.size()];
          const auto &schema = schemas[rng() % schemas.size()];
          Node fresh{NodeId("X" + std::to_string(step)), schema.kind, {}, {}};
          for (const auto &a : schema.attribute_keys)
            fresh.attributes[a.key] = "value";
          o = add_node(g, {e.source, e.target}, fresh);
          break;
        }
        case 2: {
          const auto &e = edges[rng() % edges.size()];
          const auto &third = nodes[rng() % nodes.size()].id;
          o = rewire_edge(g, {e.source, e.target}, third,
                          rng() % 2 ? RewireDirection::to_third : RewireDirection::from_third);
          break;
        }
        case 3:
          o = delete_node(g, nodes[rng() % nodes.size()].id);
          break;
        default:
          o = crossover(g, seeds[rng() % seeds.size()]);
          break;
        }
        check_products(o);
      } catch (const RewriteError &) {
        ++rejected;
      }
      if (!(g == snapshot))
        ++mutated_inputs;
    }
  }
  r.ok = invalid == 0 && mutated_inputs == 0 && accepted > 0;
  r.detail = std::to_string(accepted) + " accepted products, " + std::to_string(invalid) +
             " with q=0; " + std::to_string(rejected) + " rejections, " +
             std::to_string(mutated_inputs) + " altered inputs (" +
             std::to_string(seeds.size()) + " seeds x 1000 random + " + std::to_string(direct) +
             " direct calls)";
  if (!first.empty())
    r.detail += "; first invalid: " + first;
  return r;
}

// ---------------------------------------------------------------------------
// 4. Parent sampling matches the closed-form mixture.

Result sampling() {
  Result r;
  const std::vector<double> scores{0.9, 0.8, 0.7};
  const int draws = 1000000;
  double worst_z = 0, worst_sum = 0, worst_formula = 0;
  int buckets = 0, outside = 0;
  std::mt19937_64 rng(20240611);
  for (double lambda : {0.0, 0.3, 0.5, 1.0}) {
    for (double alpha : {0.0, 1.0, 5.0}) {
      // Closed form, written out directly.
      double z = 0;
      for (double s : scores)
        z += std::exp(alpha * s);
      std::vector<double> expect;
      for (double s : scores)
        expect.push_back(lambda / 3.0 + (1.0 - lambda) * std::exp(alpha * s) / z);

      auto p = mixed_probabilities(scores, lambda, alpha);
      double sum = 0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        sum += p[i];
        worst_formula = std::max(worst_formula, std::abs(p[i] - expect[i]));
      }
      worst_sum = std::max(worst_sum, std::abs(sum - 1.0));

      EvolutionConfig cfg;
      cfg.lambda = lambda;
      cfg.alpha = alpha;
      std::vector<long> counts(scores.size(), 0);
      for (int d = 0; d < draws; ++d)
        ++counts[sample_parent(scores, cfg, rng)];
      for (std::size_t i = 0; i < scores.size(); ++i) {
        double mean = draws * expect[i];
        double sigma = std::sqrt(draws * expect[i] * (1.0 - expect[i]));
        double zscore = sigma > 0 ? std::abs(counts[i] - mean) / sigma : 0.0;
        worst_z = std::max(worst_z, zscore);
        ++buckets;
        outside += zscore > 3.0 ? 1 : 0;
      }
    }
  }
  r.ok = outside == 0 && worst_sum <= 1e-12 && worst_formula <= 1e-12;
  std::ostringstream os;
  os << buckets << " buckets x " << draws << " draws, " << outside
     << " outside 3 sigma (worst |z| " << fmt(worst_z, 2) << "); max |sum P - 1| " << worst_sum
     << ", max |P - closed form| " << worst_formula;
  r.detail = os.str();
  return r;
}

// ---------------------------------------------------------------------------
// 5. The operator-driven proposer only produces valid candidates.

Result proposer_validity() {
  Result r;
  auto pool = random_fixtures(200, 6, 4242);
  std::vector<HistoryEntry> entries;
  for (const auto &g : pool) {
    HistoryEntry e;
    e.workflow = g;
    e.source = serialize_workflow(g);
    e.score = 0.5;
    entries.push_back(std::move(e));
  }
  EvolutionConfig cfg;
  OperatorProposer proposer;
  std::mt19937_64 rng(5);
  const int proposals = 10000;
  int valid = 0, empty = 0, invalid = 0;
  std::string first;
  for (int i = 0; i < proposals; ++i) {
    const auto &a = entries[rng() % entries.size()];
    const auto *b = &entries[rng() % entries.size()];
    if (b->workflow.domain() != a.workflow.domain())
      b = &a;
    ProposalRequest req;
    req.parents = {&a, b};
    req.config = &cfg;
    auto p = proposer.propose(req, rng);
    if (p.text.empty()) {
      ++empty;
      if (first.empty())
        first = p.modification;
      continue;
    }
    auto v = validate(p.text, a.workflow.registry_ptr(), a.workflow.domain());
    if (v.valid())
      ++valid;
    else {
      ++invalid;
      if (first.empty())
        first = p.modification + ": " + render_lines(v.diagnostics);
    }
  }
  r.ok = valid == proposals;
  r.detail = std::to_string(valid) + "/" + std::to_string(proposals) + " valid (" +
             std::to_string(invalid) + " invalid, " + std::to_string(empty) +
             " without an applicable rewrite)";
  if (!first.empty())
    r.detail += "; first failure: " + first;
  return r;
}

// ---------------------------------------------------------------------------
// 6. The shipped demo run improves on its seed and replays byte for byte.

Result end_to_end() {
  Result r;
  auto settings = load_run_config(source_dir() / "config" / "demo.conf",
                                  [](const std::string &) { return std::nullopt; });
  auto manifest = make_manifest(settings);
  std::vector<double> best;
  auto first = run_manifest(manifest, [&](const RoundRecord &, const HistoryBuffer &h) {
    best.push_back(h.best_score());
  });
  auto replayed = run_manifest(manifest_from_json(nlohmann::json::parse(to_json(manifest).dump())));

  std::size_t seeds = manifest.seeds.size();
  std::size_t gained = first.history.size() - seeds;
  bool monotone = true;
  for (std::size_t i = 1; i < best.size(); ++i)
    monotone = monotone && best[i] >= best[i - 1];
  double seed_score = 0;
  for (std::size_t i = 0; i < seeds; ++i)
    seed_score = std::max(seed_score, first.history[i].score);
  bool improved = first.history.best_score() > seed_score;
  bool identical = history_jsonl(first.history) == history_jsonl(replayed.history);
  bool shape = manifest.config.max_rounds == 20 && manifest.config.candidate_pool == 4 &&
               first.rounds.size() == 20;
  r.ok = shape && gained <= 20 && monotone && improved && identical;
  r.detail = std::to_string(first.rounds.size()) + " rounds, N=" +
             std::to_string(manifest.config.candidate_pool) + ", history +" +
             std::to_string(gained) + ", max score " + (monotone ? "non-decreasing" : "DECREASED") +
             ", seed " + fmt(seed_score) + " -> best " + fmt(first.history.best_score()) +
             ", replay " + (identical ? "byte-identical" : "DIFFERS");
  return r;
}

// ---------------------------------------------------------------------------
// 7. Emitted programs match their graphs; GSM8K matches the reference listing.

Result codegen_fidelity() {
  Result r;
  std::string problems;
  for (const auto &name : corpus_names()) {
    auto g = corpus_graph(name);
    auto program = emit_workflow(g).program;
    auto report = structural_diff(program, g);
    if (!report.empty())
      problems += name + ": diff " + to_json(report).dump() + "; ";

    // Node/call bijection: one distinct call per operator node, and the
    // ensemble's list argument carries one entry per incoming edge.
    auto cg = extract_call_graph(program);
    auto names = binding_names(g);
    std::set<std::string> bindings;
    for (std::size_t i = 0; i < cg.calls.size(); ++i)
      bindings.insert(cg.calls[cg.origin(i)].binding);
    std::set<std::string> expected;
    for (const auto &n : g.nodes())
      if (!is_interface(n))
        expected.insert(names.at(n.id));
    if (bindings != expected)
      problems += name + ": calls do not correspond one-to-one with operator nodes; ";
    for (const auto &n : g.nodes()) {
      if (n.kind != kinds::ensemble)
        continue;
      bool found = false;
      for (const auto &c : cg.calls) {
        if (c.binding != names.at(n.id))
          continue;
        found = true;
        // solutions=[...]; the problem text is passed separately.
        auto sol = c.args.find("solutions");
        std::size_t refs = sol == c.args.end() ? 0 : sol->second.size();
        if (refs != g.in_edges(n.id).size())
          problems += name + ": ensemble " + n.id.str() + " has " + std::to_string(refs) +
                      " inputs, expected " + std::to_string(g.in_edges(n.id).size()) + "; ";
      }
      if (!found)
        problems += name + ": no call for ensemble " + n.id.str() + "; ";
    }
  }

  // The GSM8K reference call graph: six solutions into the ensemble, then a
  // Programmer refinement on the ensemble's output as the returned value.
  auto ref = extract_call_graph(read_file(source_dir() / "tests" / "data" / "listings" /
                                          "gsm8k_round16.py"));
  auto ours = extract_call_graph(emit_workflow(corpus_graph("gsm8k_round16")).program);
  auto shape_ok = [](const CallGraph &cg) {
    if (cg.calls.size() != 8 || cg.terminal.size() != 1)
      return false;
    const auto &ens = cg.calls[6], &tail = cg.calls[7];
    auto it = ens.args.find("solutions");
    return ens.cls == "ScEnsemble" && it != ens.args.end() && it->second.size() == 6 &&
           tail.cls == "Programmer" && tail.args.count("problem") &&
           tail.args.at("problem") == std::vector<std::string>{"#6"} && cg.terminal[0] == "#7";
  };
  if (!shape_ok(ref))
    problems += "reference listing does not have the expected shape; ";
  if (!shape_ok(ours))
    problems += "GSM8K emission does not have the reference shape; ";
  bool same = ours.calls.size() == ref.calls.size() && ours.terminal == ref.terminal;
  for (std::size_t i = 0; same && i < ours.calls.size(); ++i)
    same = ours.calls[i].cls == ref.calls[i].cls && ours.calls[i].args == ref.calls[i].args;
  if (!same)
    problems += "GSM8K emission differs from the reference call graph; ";
  auto listing_diff = structural_diff(
      read_file(source_dir() / "tests" / "data" / "listings" / "gsm8k_round16.py"),
      corpus_graph("gsm8k_round16"));
  if (!listing_diff.empty())
    problems += "reference listing does not match the GSM8K graph; ";

  r.ok = problems.empty();
  r.detail = r.ok ? std::to_string(corpus_names().size()) +
                        " programs: empty diffs, call bijection and ensemble arity hold; GSM8K "
                        "matches the reference (6-input ensemble, refine tail)"
                  : problems;
  return r;
}

// ---------------------------------------------------------------------------
// 8. Operator locality and inverse properties on random fixtures.

Result operator_properties() {
  Result r;
  auto fixtures = random_fixtures(1000, 8, 8080);
  int failed = 0;
  long checks = 0;
  std::string first;
  for (std::size_t i = 0; i < fixtures.size(); ++i) {
    auto rep = check_operator_properties(fixtures[i], 9000 + i);
    checks += rep.checks;
    if (!rep.ok) {
      if (failed++ == 0)
        first = rep.failure;
    }
  }
  r.ok = failed == 0 && checks > 0;
  r.detail = std::to_string(fixtures.size()) + " fixtures, " + std::to_string(checks) +
             " property checks, " + std::to_string(failed) + " failing fixtures";
  if (!first.empty())
    r.detail += "; first: " + first;
  return r;
}

} // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "corpus validity", 1.0, corpus_validity},
      {2, "validator oracle equivalence", 60.0, oracle_equivalence},
      {3, "closure under operators", 120.0, closure},
      {4, "parent sampling distribution", 30.0, sampling},
      {5, "proposer validity rate", 60.0, proposer_validity},
      {6, "end-to-end evolution", 120.0, end_to_end},
      {7, "codegen fidelity", 5.0, codegen_fidelity},
      {8, "operator locality and inverses", 60.0, operator_properties},
  };
  int failures = 0;
  for (const auto &c : criteria) {
    auto t0 = std::chrono::steady_clock::now();
    Result r;
    try {
      r = c.body();
    } catch (const std::exception &e) {
      r.ok = false;
      r.detail = std::string("exception: ") + e.what();
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool in_time = secs < c.limit_seconds;
    bool pass = r.ok && in_time;
    failures += pass ? 0 : 1;
    std::cout << (pass ? "PASS" : "FAIL") << "  " << c.number << ". " << c.name << "  ["
              << fmt(secs, 2) << " s / limit " << fmt(c.limit_seconds, 0) << " s"
              << (in_time ? "" : ", TOO SLOW") << "]  " << r.detail << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " failed")
            << std::endl;
  return failures == 0 ? 0 : 1;
}
