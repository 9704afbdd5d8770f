#pragma once

// Random valid workflows (corpus seeds pushed through random rewrites) and
// the per-fixture operator property checks shared by the unit tests and the
// acceptance suite.

#include <random>
#include <string>
#include <vector>

#include "mermaidflow/operators.hpp"
#include "test_support.hpp"

namespace mermaidflow::testing {

inline std::vector<WorkflowGraph> random_fixtures(int count, int max_steps,
                                                  std::uint64_t seed = 2024) {
  std::vector<WorkflowGraph> seeds;
  for (const auto &name : corpus_names())
    seeds.push_back(corpus_graph(name));
  std::vector<WorkflowGraph> out;
  std::mt19937_64 rng(seed);
  while (static_cast<int>(out.size()) < count) {
    auto g = seeds[out.size() % seeds.size()];
    auto partner = seeds[(out.size() / 2) % seeds.size()];
    if (partner.domain() != g.domain())
      partner = g;
    int steps = static_cast<int>(rng() % static_cast<std::uint64_t>(max_steps + 1));
    for (int s = 0; s < steps; ++s) {
      auto r = apply_random(g, &partner, rng, OperatorWeights{});
      if (auto *o = std::get_if<RewriteOutcome>(&r))
        g = o->graphs[rng() % o->graphs.size()];
    }
    out.push_back(std::move(g));
  }
  return out;
}

struct PropertyReport {
  bool ok = true;
  std::string failure;
  int checks = 0;
};

// Substitution locality, add/delete inverse pairs, count deltas and
// self-crossover identity on one fixture.
inline PropertyReport check_operator_properties(const WorkflowGraph &g, std::uint64_t seed) {
  PropertyReport r;
  auto fail = [&](const std::string &why) {
    if (r.ok)
      r.failure = why;
    r.ok = false;
  };
  std::mt19937_64 rng(seed);

  // Substitution touches exactly one attribute map.
  for (const auto &n : g.nodes()) {
    const auto *s = g.schema_of(n);
    if (!s || s->prompt_attribute.empty())
      continue;
    auto attrs = n.attributes;
    attrs[s->prompt_attribute] = "substituted_value_" + std::to_string(rng() % 1000);
    auto h = substitute_node(g, n.id, attrs).graphs[0];
    ++r.checks;
    if (h.edges() != g.edges() || h.node_count() != g.node_count())
      fail("substitution changed topology at " + n.id.str());
    int diffs = 0;
    for (std::size_t i = 0; i < g.node_count(); ++i) {
      const auto &a = g.nodes()[i], &b = h.nodes()[i];
      if (a.id != b.id || a.kind != b.kind || a.display_label != b.display_label)
        fail("substitution changed node identity at " + a.id.str());
      diffs += a.attributes == b.attributes ? 0 : 1;
    }
    if (diffs != 1)
      fail("substitution changed " + std::to_string(diffs) + " attribute maps at " +
           n.id.str());
  }

  // add then delete at the same edge is the identity; counts move by one.
  const std::string kind(g.domain() == Domain::math ? kinds::custom : kinds::code_generate);
  const std::string key(g.domain() == Domain::math ? "role" : "instruction");
  for (const auto &e : g.edges()) {
    Node fresh{NodeId("INSERTED"), kind, {{key, "inserted_step"}}, {}};
    RewriteOutcome added;
    try {
      added = add_node(g, {e.source, e.target}, fresh);
    } catch (const RewriteError &) {
      continue; // the site's types do not admit this kind
    }
    ++r.checks;
    const auto &h = added.graphs[0];
    if (h.node_count() != g.node_count() + 1 || h.edge_count() != g.edge_count() + 1)
      fail("addition on " + describe(e) + " did not add one node and one edge");
    try {
      auto back = delete_node(h, fresh.id).graphs[0];
      if (!(back == g))
        fail("delete after add on " + describe(e) + " is not the identity");
    } catch (const RewriteError &ex) {
      fail("delete after add on " + describe(e) + " failed: " + ex.what());
    }
  }

  // delete then re-add (with the original in-label) is the identity.
  for (const auto &n : g.nodes()) {
    if (!is_linear_node(g, n))
      continue;
    RewriteOutcome removed;
    try {
      removed = delete_node(g, n.id);
    } catch (const RewriteError &) {
      continue;
    }
    ++r.checks;
    const auto &h = removed.graphs[0];
    if (h.node_count() + 1 != g.node_count() || h.edge_count() + 1 != g.edge_count())
      fail("deletion of " + n.id.str() + " did not remove one node and one edge");
    const auto in = g.edges()[g.in_edges(n.id).front()];
    const auto out = g.edges()[g.out_edges(n.id).front()];
    try {
      auto back = add_node(h, {in.source, out.target}, n, in.label).graphs[0];
      if (!(back == g))
        fail("add after delete of " + n.id.str() + " is not the identity");
    } catch (const RewriteError &ex) {
      fail("add after delete of " + n.id.str() + " failed: " + ex.what());
    }
  }

  // Self-crossover.
  if (find_crossover_point(g, g)) {
    ++r.checks;
    auto out = crossover(g, g);
    if (!(out.graphs[0] == g) || !(out.graphs[1] == g))
      fail("self-crossover is not the identity");
  }
  return r;
}

} // namespace mermaidflow::testing
