#pragma once

// Static validator Q: syntax hard check, soft checks W1-W5 and structural
// checks (cycles, duplicate edges, self-loops, ports, prompt references).

#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "mermaidflow/diagnostic.hpp"
#include "mermaidflow/graph.hpp"
#include "mermaidflow/mermaid.hpp"

namespace mermaidflow {

struct Verdict {
  int q = 0; // 1 iff no error-severity diagnostics
  std::vector<Diagnostic> diagnostics;

  [[nodiscard]] bool valid() const noexcept { return q == 1; }
};

[[nodiscard]] inline Verdict make_verdict(std::vector<Diagnostic> ds) {
  Verdict v;
  v.q = has_errors(ds) ? 0 : 1;
  v.diagnostics = std::move(ds);
  return v;
}

namespace detail {

inline Diagnostic diag(Rule r, std::string subject, std::string msg,
                       Severity s = Severity::error) {
  return Diagnostic{r, s, std::move(msg), std::move(subject), std::nullopt};
}

// Strongly connected components with more than one node (Tarjan).
inline std::vector<std::vector<std::size_t>> cyclic_components(const WorkflowGraph &g) {
  const auto n = g.node_count();
  std::vector<int> index(n, -1), low(n, 0);
  std::vector<bool> on_stack(n, false);
  std::vector<std::size_t> stack;
  std::vector<std::vector<std::size_t>> out;
  int counter = 0;

  // Iterative DFS to keep deep graphs off the call stack.
  struct Frame {
    std::size_t v;
    std::size_t next_edge;
  };
  for (std::size_t root = 0; root < n; ++root) {
    if (index[root] != -1)
      continue;
    std::vector<Frame> frames{{root, 0}};
    index[root] = low[root] = counter++;
    stack.push_back(root);
    on_stack[root] = true;
    while (!frames.empty()) {
      auto &f = frames.back();
      const auto &outs = g.out_edges_at(f.v);
      if (f.next_edge < outs.size()) {
        auto w = g.target_index(outs[f.next_edge++]);
        if (index[w] == -1) {
          index[w] = low[w] = counter++;
          stack.push_back(w);
          on_stack[w] = true;
          frames.push_back({w, 0});
        } else if (on_stack[w]) {
          low[f.v] = std::min(low[f.v], index[w]);
        }
        continue;
      }
      auto v = f.v;
      frames.pop_back();
      if (!frames.empty())
        low[frames.back().v] = std::min(low[frames.back().v], low[v]);
      if (low[v] == index[v]) {
        std::vector<std::size_t> comp;
        std::size_t w;
        do {
          w = stack.back();
          stack.pop_back();
          on_stack[w] = false;
          comp.push_back(w);
        } while (w != v);
        if (comp.size() > 1)
          out.push_back(std::move(comp));
      }
    }
  }
  return out;
}

} // namespace detail

// Soft check over a lowered graph. Diagnostics are sorted by rule, then
// subject.
[[nodiscard]] inline std::vector<Diagnostic> soft_check(const WorkflowGraph &g) {
  using detail::diag;
  std::vector<Diagnostic> out;
  const auto roles = classify_interfaces(g);

  // W1: exactly one entry and one exit interface.
  bool w1_ok = true;
  if (roles.entries.empty()) {
    w1_ok = false;
    out.push_back(diag(Rule::W1, std::string(reserved::problem),
                       "missing entry interface node (PROBLEM)"));
  } else if (roles.entries.size() > 1) {
    w1_ok = false;
    auto keep = primary_entry(roles).value_or(roles.entries.front());
    for (const auto &id : roles.entries)
      if (id != keep)
        out.push_back(diag(Rule::W1, id.str(), "extra entry interface node " + id.str()));
  }
  if (roles.exits.empty()) {
    w1_ok = false;
    out.push_back(diag(Rule::W1, std::string(reserved::ret),
                       "missing exit interface node (RETURN)"));
  } else if (roles.exits.size() > 1) {
    w1_ok = false;
    NodeId keep = roles.exits.front();
    for (const auto &id : roles.exits)
      if (id.str() == reserved::ret)
        keep = id;
    for (const auto &id : roles.exits)
      if (id != keep)
        out.push_back(diag(Rule::W1, id.str(), "extra exit interface node " + id.str()));
  }

  // W2: every node on some entry-to-exit path.
  if (w1_ok) {
    auto starts = roles.entries;
    starts.insert(starts.end(), roles.auxiliary.begin(), roles.auxiliary.end());
    auto fwd = detail::closure_mask(g, starts, true);
    auto bwd = detail::closure_mask(g, roles.exits, false);
    for (std::size_t i = 0; i < g.node_count(); ++i) {
      const auto &n = g.nodes()[i];
      bool f = fwd[i];
      bool b = bwd[i];
      if (f && b)
        continue;
      std::string why = !f && !b ? "not reachable from the entry and has no path to the exit"
                        : !f     ? "not reachable from the entry"
                                 : "has no path to the exit";
      out.push_back(diag(Rule::W2, n.id.str(), "node " + n.id.str() + " " + why));
    }
  }

  // W3: reserved interface names must be Interface kind.
  for (const auto &n : g.nodes()) {
    auto s = n.id.str();
    if ((s == reserved::problem || s == reserved::ret || s == reserved::entry_point) &&
        !is_interface(n))
      out.push_back(diag(Rule::W3, s,
                         "interface node " + s + " is classified as " +
                             (n.kind.empty() ? std::string("nothing") : n.kind) +
                             ", expected Interface"));
  }

  // W4: registered kinds, domain restriction.
  for (const auto &n : g.nodes()) {
    if (n.kind.empty()) {
      out.push_back(diag(Rule::W4, n.id.str(), "unclassified node " + n.id.str()));
      continue;
    }
    const auto *schema = g.registry().find(n.kind);
    if (!schema) {
      out.push_back(diag(Rule::W4, n.id.str(),
                         "node " + n.id.str() + " has unknown type " + n.kind));
    } else if (!schema->allowed_in(g.domain())) {
      out.push_back(diag(Rule::W4, n.id.str(),
                         "type " + n.kind + " is not allowed in " +
                             std::string(to_string(g.domain())) + " workflows"));
    }
  }

  // W5: ensemble fan-in.
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    const auto &n = g.nodes()[i];
    if (n.kind != kinds::ensemble)
      continue;
    auto indeg = g.in_edges_at(i).size();
    if (indeg < 2)
      out.push_back(diag(Rule::W5, n.id.str(),
                         "ScEnsembleOp node " + n.id.str() + " has " +
                             std::to_string(indeg) +
                             " incoming connection(s); at least 2 required"));
  }

  // STRUCT
  for (const auto &id : roles.malformed)
    out.push_back(diag(Rule::STRUCT, id.str(),
                       "interface node " + id.str() + " both receives and produces data"));
  for (const auto &e : g.edges())
    if (e.source == e.target)
      out.push_back(diag(Rule::STRUCT, e.source.str(), "self-loop on " + e.source.str()));
  for (std::size_t i = 1; i < g.edges().size(); ++i) {
    const auto &a = g.edges()[i - 1];
    const auto &b = g.edges()[i];
    if (a.source == b.source && a.target == b.target &&
        (i < 2 || g.edges()[i - 2].source != a.source ||
         g.edges()[i - 2].target != a.target))
      out.push_back(diag(Rule::STRUCT, a.source.str() + "->" + a.target.str(),
                         "duplicate edge " + a.source.str() + "->" + a.target.str()));
  }
  for (const auto &comp : detail::cyclic_components(g)) {
    std::vector<std::string> ids;
    for (auto i : comp)
      ids.push_back(g.nodes()[i].id.str());
    std::sort(ids.begin(), ids.end());
    std::string joined;
    for (const auto &s : ids)
      joined += (joined.empty() ? "" : ",") + s;
    out.push_back(diag(Rule::STRUCT, ids.front(), "cycle through {" + joined + "}"));
  }

  std::set<std::string> used_prompts;
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    const auto &n = g.nodes()[i];
    const auto *schema = g.schema_of(n);
    for (const auto &[key, value] : n.attributes) {
      if (auto name = resolve_prompt(g.prompts(), value)) {
        used_prompts.insert(*name);
      } else if (is_explicit_prompt_ref(value)) {
        out.push_back(diag(Rule::STRUCT, n.id.str(),
                           "attribute " + key + " of " + n.id.str() +
                               " references undefined prompt " + value));
      }
    }
    if (!schema || is_interface(n))
      continue;
    for (const auto &a : schema->attribute_keys)
      if (a.required && !n.attributes.count(a.key))
        out.push_back(diag(Rule::STRUCT, n.id.str(),
                           n.id.str() + " is missing required attribute '" + a.key + "'"));

    std::vector<int> bound(schema->input_ports.size(), 0); // by port position
    int fallback = 0;
    for (auto ei : g.in_edges_at(i)) {
      const auto &e = g.edges()[ei];
      const auto *by_label = e.label.empty() ? nullptr : schema->port(e.label);
      const auto *p = by_label ? by_label : schema->default_port();
      if (!by_label)
        ++fallback;
      if (p)
        ++bound[static_cast<std::size_t>(p - schema->input_ports.data())];
    }
    if (schema->requires_labels && fallback > 1)
      out.push_back(diag(Rule::STRUCT, n.id.str(),
                         n.id.str() + " has " + std::to_string(fallback) +
                             " inputs without a port label; binding is ambiguous"));
    if (n.kind == kinds::ensemble)
      continue; // fan-in is W5's concern
    for (std::size_t k = 0; k < schema->input_ports.size(); ++k)
      if (const auto &p = schema->input_ports[k]; p.required && bound[k] == 0)
        out.push_back(diag(Rule::STRUCT, n.id.str(),
                           n.id.str() + " has no input on required port '" + p.label + "'"));
  }
  for (const auto &[name, _] : g.prompts().entries())
    if (!used_prompts.count(name))
      out.push_back(diag(Rule::STRUCT, name, "prompt " + name + " is never referenced",
                         Severity::warning));

  sort_diagnostics(out);
  return out;
}

[[nodiscard]] inline Verdict validate(const WorkflowGraph &g) {
  return make_verdict(soft_check(g));
}

// Text route: hard check, lowering, soft check. Diagnostics are concatenated
// as (hard, lowering, soft). Lowering's W4 findings are re-derived by the soft
// check and are not repeated.
[[nodiscard]] inline Verdict
validate(std::string_view text,
         std::shared_ptr<const Registry> registry = default_registry(),
         std::optional<Domain> domain = std::nullopt) {
  auto parsed = read_workflow(text, std::move(registry), domain);
  std::vector<Diagnostic> ds = parsed.document.diagnostics;
  for (const auto &d : parsed.lowered.diagnostics)
    if (d.rule != Rule::W4)
      ds.push_back(d);
  auto soft = soft_check(parsed.lowered.graph);
  ds.insert(ds.end(), soft.begin(), soft.end());
  return make_verdict(std::move(ds));
}

} // namespace mermaidflow
