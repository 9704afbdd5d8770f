#pragma once

// Constraint-preserving graph rewrites. Every operator takes its input by
// const reference, builds the product separately and re-validates it; a
// product with q=0 is rejected with the validator's diagnostics, so callers
// never see a half-applied rewrite.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "mermaidflow/graph.hpp"
#include "mermaidflow/validator.hpp"

namespace mermaidflow {

enum class OperatorKind {
  Substitution,
  Addition,
  Rewiring,
  Deletion,
  SubgraphMutation,
  Crossover
};

inline constexpr std::array<OperatorKind, 6> kAllOperators{
    OperatorKind::Substitution, OperatorKind::Addition,         OperatorKind::Rewiring,
    OperatorKind::Deletion,     OperatorKind::SubgraphMutation, OperatorKind::Crossover};

[[nodiscard]] inline std::string_view to_string(OperatorKind k) noexcept {
  switch (k) {
  case OperatorKind::Substitution:
    return "Substitution";
  case OperatorKind::Addition:
    return "Addition";
  case OperatorKind::Rewiring:
    return "Rewiring";
  case OperatorKind::Deletion:
    return "Deletion";
  case OperatorKind::SubgraphMutation:
    return "SubgraphMutation";
  case OperatorKind::Crossover:
    return "Crossover";
  }
  return "?";
}

[[nodiscard]] inline std::optional<OperatorKind> parse_operator_kind(std::string_view s) {
  for (auto k : kAllOperators)
    if (detail::to_lower(to_string(k)) == detail::to_lower(s))
      return k;
  return std::nullopt;
}

enum class RewriteErrorCode {
  unknown_node,
  unknown_edge,
  precondition,
  type_mismatch,
  duplicate_id,
  boundary_mismatch,
  no_crossover_point,
  closure_rejected
};

class RewriteError : public std::runtime_error {
 public:
  RewriteError(RewriteErrorCode code, const std::string &what,
               std::vector<Diagnostic> diagnostics = {})
      : std::runtime_error(what), code_(code), diagnostics_(std::move(diagnostics)) {}

  [[nodiscard]] RewriteErrorCode code() const noexcept { return code_; }
  [[nodiscard]] const std::vector<Diagnostic> &diagnostics() const noexcept {
    return diagnostics_;
  }

 private:
  RewriteErrorCode code_;
  std::vector<Diagnostic> diagnostics_;
};

struct RewriteOutcome {
  std::vector<WorkflowGraph> graphs; // two for crossover
  OperatorKind applied = OperatorKind::Substitution;
  std::string description;
  std::vector<Verdict> verdicts;
};

[[nodiscard]] inline std::string render_modification(const RewriteOutcome &o) {
  return "<modification>" + o.description + "</modification>";
}

struct EdgeRef {
  NodeId source;
  NodeId target;
};

enum class RewireDirection { to_third, from_third };

namespace detail {

[[noreturn]] inline void fail(RewriteErrorCode code, const std::string &msg) {
  throw RewriteError(code, msg);
}

inline const Node &require_node(const WorkflowGraph &g, const NodeId &id) {
  const auto *n = g.find(id);
  if (!n)
    fail(RewriteErrorCode::unknown_node, "unknown node " + id.str());
  return *n;
}

inline std::size_t require_edge(const WorkflowGraph &g, const EdgeRef &e) {
  if (!g.contains(e.source) || !g.contains(e.target))
    fail(RewriteErrorCode::unknown_edge,
         "no edge " + e.source.str() + "->" + e.target.str());
  for (auto i : g.out_edges(e.source))
    if (g.edges()[i].target == e.target)
      return i;
  fail(RewriteErrorCode::unknown_edge, "no edge " + e.source.str() + "->" + e.target.str());
}

inline std::optional<std::string> output_type_in(const WorkflowGraph &g, const NodeId &id) {
  try {
    return type_of_output(g, id);
  } catch (const GraphError &) {
    return std::nullopt;
  }
}

// The port `label` binds to on `n`, provided it accepts `type`.
inline const PortSpec *accepting_bound_port(const Registry &reg, const Node &n,
                                            std::string_view label, std::string_view type) {
  const auto *schema = n.kind.empty() ? nullptr : reg.find(n.kind);
  if (!schema)
    return nullptr;
  const auto *p = bind_port(*schema, label);
  return p && p->accepts_type(type) ? p : nullptr;
}

// A port on `n` that accepts `type` (default port first) together with the
// label a new edge needs to bind to it. nullopt when no port accepts.
inline std::optional<std::pair<const PortSpec *, std::string>>
port_for_type(const Registry &reg, const Node &n, std::string_view type) {
  const auto *schema = n.kind.empty() ? nullptr : reg.find(n.kind);
  if (!schema)
    return std::nullopt;
  auto label_for = [&](const PortSpec &p) {
    if (!p.edge_label.empty())
      return p.edge_label;
    return p.is_default || &p == schema->default_port() ? std::string() : p.label;
  };
  if (const auto *d = schema->default_port(); d && d->accepts_type(type))
    return std::make_pair(d, label_for(*d));
  for (const auto &p : schema->input_ports)
    if (p.accepts_type(type))
      return std::make_pair(&p, label_for(p));
  return std::nullopt;
}

inline RewriteOutcome guard(OperatorKind kind, std::vector<WorkflowGraph> products,
                            std::string description) {
  RewriteOutcome out;
  out.applied = kind;
  out.description = std::move(description);
  for (auto &g : products) {
    auto v = validate(g);
    if (!v.valid()) {
      std::string lines;
      for (const auto &d : v.diagnostics)
        if (is_error(d))
          lines += "\n  " + render_line(d);
      throw RewriteError(RewriteErrorCode::closure_rejected,
                         std::string(to_string(kind)) + " product fails validation:" + lines,
                         v.diagnostics);
    }
    out.verdicts.push_back(std::move(v));
  }
  out.graphs = std::move(products);
  return out;
}

inline std::string quote(const std::string &s) { return "'" + s + "'"; }

inline std::string render_attrs(const std::map<std::string, std::string> &attrs) {
  std::string s;
  for (const auto &[k, v] : attrs)
    s += (s.empty() ? "" : ", ") + k + ": " + quote(v);
  return "{" + s + "}";
}

inline std::string fresh_id(const std::set<std::string> &taken, const std::string &base) {
  if (!taken.count(base) && is_identifier(base))
    return base;
  for (int i = 2;; ++i) {
    auto candidate = base + "_" + std::to_string(i);
    if (!taken.count(candidate))
      return candidate;
  }
}

inline std::set<std::string> ids_of(const WorkflowGraph &g) {
  std::set<std::string> s;
  for (const auto &n : g.nodes())
    s.insert(n.id.str());
  return s;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Substitution: replace one node's attribute map.

[[nodiscard]] inline RewriteOutcome
substitute_node(const WorkflowGraph &g, const NodeId &id,
                std::map<std::string, std::string> new_attributes) {
  const auto &n = detail::require_node(g, id);
  const auto *schema = g.schema_of(n);
  if (schema && !is_interface(n))
    for (const auto &a : schema->attribute_keys)
      if (a.required && !new_attributes.count(a.key))
        detail::fail(RewriteErrorCode::precondition,
                     "substitution on " + id.str() + " drops required attribute '" + a.key +
                         "'");
  auto nodes = g.nodes();
  for (auto &m : nodes)
    if (m.id == id)
      m.attributes = new_attributes;
  auto desc = "Substitution: node " + id.str() + " (" + n.kind + ") attributes " +
              detail::render_attrs(n.attributes) + " -> " +
              detail::render_attrs(new_attributes);
  return detail::guard(OperatorKind::Substitution, {rebuild(g, nodes, g.edges())}, desc);
}

// ---------------------------------------------------------------------------
// Addition: split an edge with a new node. The new in-edge gets the label of
// the accepting port's convention unless `in_label` is given; the out-edge
// keeps the label of the edge it replaces, so the downstream binding is kept.

[[nodiscard]] inline RewriteOutcome add_node(const WorkflowGraph &g, const EdgeRef &edge,
                                             const Node &new_node,
                                             std::optional<std::string> in_label = std::nullopt) {
  auto ei = detail::require_edge(g, edge);
  const auto old = g.edges()[ei];
  if (g.contains(new_node.id))
    detail::fail(RewriteErrorCode::duplicate_id, "node id " + new_node.id.str() + " already exists");
  if (!new_node.id.valid())
    detail::fail(RewriteErrorCode::precondition,
                 "invalid node id '" + new_node.id.str() + "'");
  const auto *schema = g.registry().find(new_node.kind);
  if (!schema)
    detail::fail(RewriteErrorCode::precondition, "unknown node kind '" + new_node.kind + "'");
  if (is_interface(new_node))
    detail::fail(RewriteErrorCode::precondition, "interface nodes cannot be inserted");
  Node fresh = new_node;
  fresh.kind = schema->kind;

  auto t_a = detail::output_type_in(g, old.source);
  if (!t_a)
    detail::fail(RewriteErrorCode::type_mismatch,
                 "boundary " + old.source.str() + "->" + fresh.id.str() + ": " +
                     old.source.str() + " has no output");
  std::string label_in;
  if (in_label) {
    if (!detail::accepting_bound_port(g.registry(), fresh, *in_label, *t_a))
      detail::fail(RewriteErrorCode::type_mismatch,
                   "boundary " + old.source.str() + "->" + fresh.id.str() + ": port '" +
                       *in_label + "' does not accept " + *t_a);
    label_in = *in_label;
  } else {
    auto p = detail::port_for_type(g.registry(), fresh, *t_a);
    if (!p)
      detail::fail(RewriteErrorCode::type_mismatch,
                   "boundary " + old.source.str() + "->" + fresh.id.str() + ": " +
                       fresh.kind + " has no input accepting " + *t_a);
    label_in = p->second;
  }
  auto t_new = schema->output_type;
  if (!t_new || !detail::accepting_bound_port(g.registry(), g.node(old.target), old.label,
                                              *t_new))
    detail::fail(RewriteErrorCode::type_mismatch,
                 "boundary " + fresh.id.str() + "->" + old.target.str() + ": " +
                     old.target.str() + " does not accept " + t_new.value_or("nothing"));

  auto nodes = g.nodes();
  nodes.push_back(fresh);
  auto edges = g.edges();
  edges.erase(edges.begin() + static_cast<std::ptrdiff_t>(ei));
  edges.push_back(Edge{old.source, fresh.id, label_in});
  edges.push_back(Edge{fresh.id, old.target, old.label});
  auto desc = "Addition: inserted " + fresh.kind + " node " + fresh.id.str() + " " +
              detail::render_attrs(fresh.attributes) + " on edge " + describe(old);
  return detail::guard(OperatorKind::Addition, {rebuild(g, nodes, edges)}, desc);
}

// ---------------------------------------------------------------------------
// Rewiring: move one end of an edge to a third node.

[[nodiscard]] inline RewriteOutcome rewire_edge(const WorkflowGraph &g, const EdgeRef &edge,
                                                const NodeId &third, RewireDirection dir) {
  auto ei = detail::require_edge(g, edge);
  const auto old = g.edges()[ei];
  const auto &c = detail::require_node(g, third);
  if (third == old.source || third == old.target)
    detail::fail(RewriteErrorCode::precondition,
                 "third node must differ from both endpoints of " + describe(old));
  Edge added;
  if (dir == RewireDirection::to_third) {
    auto t_a = detail::output_type_in(g, old.source);
    auto p = t_a ? detail::port_for_type(g.registry(), c, *t_a) : std::nullopt;
    if (!p)
      detail::fail(RewriteErrorCode::type_mismatch,
                   third.str() + " has no input accepting " + t_a.value_or("nothing") +
                       " from " + old.source.str());
    added = Edge{old.source, third, p->second};
  } else {
    auto t_c = detail::output_type_in(g, third);
    if (!t_c || !detail::accepting_bound_port(g.registry(), g.node(old.target), old.label, *t_c))
      detail::fail(RewriteErrorCode::type_mismatch,
                   old.target.str() + " does not accept " + t_c.value_or("nothing") +
                       " from " + third.str());
    added = Edge{third, old.target, old.label};
  }
  auto edges = g.edges();
  edges.erase(edges.begin() + static_cast<std::ptrdiff_t>(ei));
  edges.push_back(added);
  auto desc = "Rewiring: replaced edge " + describe(old) + " with " + describe(added);
  return detail::guard(OperatorKind::Rewiring, {rebuild(g, g.nodes(), edges)}, desc);
}

// ---------------------------------------------------------------------------
// Deletion: remove a node on a linear path and bridge its neighbours. The
// bridge keeps the label of the removed out-edge.

[[nodiscard]] inline bool is_linear_node(const WorkflowGraph &g, const Node &n) {
  return !is_interface(n) && g.in_degree(n.id) == 1 && g.out_degree(n.id) == 1;
}

[[nodiscard]] inline RewriteOutcome delete_node(const WorkflowGraph &g, const NodeId &id) {
  const auto &n = detail::require_node(g, id);
  if (is_interface(n))
    detail::fail(RewriteErrorCode::precondition, "interface node " + id.str() + " cannot be deleted");
  if (g.in_degree(id) != 1 || g.out_degree(id) != 1)
    detail::fail(RewriteErrorCode::precondition,
                 id.str() + " is not on a linear path (in-degree " +
                     std::to_string(g.in_degree(id)) + ", out-degree " +
                     std::to_string(g.out_degree(id)) + ")");
  const auto in = g.edges()[g.in_edges(id).front()];
  const auto out = g.edges()[g.out_edges(id).front()];
  if (in.source == id || out.target == id)
    detail::fail(RewriteErrorCode::precondition, id.str() + " has a self-loop");
  auto t_a = detail::output_type_in(g, in.source);
  if (!t_a || !detail::accepting_bound_port(g.registry(), g.node(out.target), out.label, *t_a))
    detail::fail(RewriteErrorCode::type_mismatch,
                 "bridge " + in.source.str() + "->" + out.target.str() + ": " +
                     out.target.str() + " does not accept " + t_a.value_or("nothing"));
  std::vector<Node> nodes;
  for (const auto &m : g.nodes())
    if (m.id != id)
      nodes.push_back(m);
  std::vector<Edge> edges;
  for (const auto &e : g.edges())
    if (e.source != id && e.target != id)
      edges.push_back(e);
  Edge bridge{in.source, out.target, out.label};
  edges.push_back(bridge);
  auto desc = "Deletion: removed " + n.kind + " node " + id.str() + " and bridged " +
              describe(bridge);
  return detail::guard(OperatorKind::Deletion, {rebuild(g, nodes, edges)}, desc);
}

// ---------------------------------------------------------------------------
// Subgraph mutation.
//
// A fragment is a replacement subgraph with a declared boundary. inputs[k]
// lists the (node, edge label) pairs that the k-th incoming boundary edge of
// the region feeds; outputs[k] is the node that takes over the k-th outgoing
// boundary edge. Boundary edges are ordered by (source, target, label).

struct Fragment {
  std::string name;
  std::vector<Node> nodes;
  std::vector<Edge> edges;
  std::vector<std::vector<std::pair<NodeId, std::string>>> inputs;
  std::vector<NodeId> outputs;
  PromptTable prompts;
};

struct RegionBoundary {
  std::vector<Edge> incoming;
  std::vector<Edge> outgoing;
};

[[nodiscard]] inline RegionBoundary region_boundary(const WorkflowGraph &g,
                                                    const std::set<NodeId> &region) {
  RegionBoundary b;
  for (const auto &e : g.edges()) {
    bool s = region.count(e.source) != 0, t = region.count(e.target) != 0;
    if (!s && t)
      b.incoming.push_back(e);
    else if (s && !t)
      b.outgoing.push_back(e);
  }
  return b;
}

// Exact copy of a region as a fragment; substituting it back is the identity.
[[nodiscard]] inline Fragment fragment_from_region(const WorkflowGraph &g,
                                                   const std::set<NodeId> &region,
                                                   std::string name = "region") {
  Fragment f;
  f.name = std::move(name);
  for (const auto &id : region)
    f.nodes.push_back(g.node(id));
  for (const auto &e : g.edges())
    if (region.count(e.source) && region.count(e.target))
      f.edges.push_back(e);
  auto b = region_boundary(g, region);
  for (const auto &e : b.incoming)
    f.inputs.push_back({{e.target, e.label}});
  for (const auto &e : b.outgoing)
    f.outputs.push_back(e.source);
  for (const auto &n : f.nodes)
    for (const auto &[k, v] : n.attributes)
      if (auto p = resolve_prompt(g.prompts(), v))
        f.prompts.set(*p, *g.prompts().find(*p));
  return f;
}

namespace detail {
inline bool weakly_connected(const WorkflowGraph &g, const std::set<NodeId> &region) {
  std::set<NodeId> seen{*region.begin()};
  std::vector<NodeId> stack{*region.begin()};
  while (!stack.empty()) {
    auto id = stack.back();
    stack.pop_back();
    auto visit = [&](const NodeId &m) {
      if (region.count(m) && seen.insert(m).second)
        stack.push_back(m);
    };
    for (auto i : g.out_edges(id))
      visit(g.edges()[i].target);
    for (auto i : g.in_edges(id))
      visit(g.edges()[i].source);
  }
  return seen.size() == region.size();
}
} // namespace detail

[[nodiscard]] inline RewriteOutcome mutate_subgraph(const WorkflowGraph &g,
                                                    const std::set<NodeId> &region,
                                                    const Fragment &replacement) {
  using detail::fail;
  if (region.empty())
    fail(RewriteErrorCode::precondition, "empty region");
  for (const auto &id : region)
    if (is_interface(detail::require_node(g, id)))
      fail(RewriteErrorCode::precondition, "region contains interface node " + id.str());
  if (!detail::weakly_connected(g, region))
    fail(RewriteErrorCode::precondition, "region is not connected");
  if (replacement.nodes.empty())
    fail(RewriteErrorCode::precondition, "replacement fragment is empty");

  auto boundary = region_boundary(g, region);
  std::vector<std::string> problems;
  if (boundary.incoming.size() != replacement.inputs.size())
    problems.push_back("region has " + std::to_string(boundary.incoming.size()) +
                       " incoming boundary edge(s), fragment declares " +
                       std::to_string(replacement.inputs.size()) + " input slot(s)");
  if (boundary.outgoing.size() != replacement.outputs.size())
    problems.push_back("region has " + std::to_string(boundary.outgoing.size()) +
                       " outgoing boundary edge(s), fragment declares " +
                       std::to_string(replacement.outputs.size()) + " output(s)");
  if (!problems.empty()) {
    std::string msg = "boundary signature mismatch:";
    for (const auto &p : problems)
      msg += "\n  " + p;
    fail(RewriteErrorCode::boundary_mismatch, msg);
  }

  // Rename fragment ids that would collide with nodes outside the region.
  std::set<std::string> taken;
  for (const auto &n : g.nodes())
    if (!region.count(n.id))
      taken.insert(n.id.str());
  std::map<NodeId, NodeId> rename;
  std::vector<Node> frag_nodes;
  for (const auto &n : replacement.nodes) {
    if (rename.count(n.id))
      fail(RewriteErrorCode::duplicate_id, "fragment repeats node id " + n.id.str());
    if (is_interface(n))
      fail(RewriteErrorCode::precondition, "fragment contains interface node " + n.id.str());
    NodeId fresh(detail::fresh_id(taken, n.id.str()));
    taken.insert(fresh.str());
    rename.emplace(n.id, fresh);
    Node m = n;
    m.id = fresh;
    frag_nodes.push_back(std::move(m));
  }
  auto mapped = [&](const NodeId &id) {
    auto it = rename.find(id);
    if (it == rename.end())
      fail(RewriteErrorCode::precondition,
           "fragment boundary names unknown node " + id.str());
    return it->second;
  };
  std::map<NodeId, const Node *> frag_by_id;
  for (const auto &n : frag_nodes)
    frag_by_id.emplace(n.id, &n);

  std::vector<Edge> edges;
  for (const auto &e : g.edges())
    if (!region.count(e.source) && !region.count(e.target))
      edges.push_back(e);
  for (const auto &e : replacement.edges)
    edges.push_back(Edge{mapped(e.source), mapped(e.target), e.label});

  for (std::size_t k = 0; k < boundary.incoming.size(); ++k) {
    const auto &e = boundary.incoming[k];
    auto t = detail::output_type_in(g, e.source);
    if (replacement.inputs[k].empty())
      problems.push_back("input slot " + std::to_string(k) + " is empty");
    for (const auto &[target, label] : replacement.inputs[k]) {
      auto id = mapped(target);
      if (!t || !detail::accepting_bound_port(g.registry(), *frag_by_id.at(id), label, *t))
        problems.push_back("input slot " + std::to_string(k) + " (" + e.source.str() +
                           " -> " + id.str() + " port '" + label + "') does not accept " +
                           t.value_or("nothing"));
      edges.push_back(Edge{e.source, id, label});
    }
  }
  for (std::size_t k = 0; k < boundary.outgoing.size(); ++k) {
    const auto &e = boundary.outgoing[k];
    auto id = mapped(replacement.outputs[k]);
    const auto *schema = g.registry().find(frag_by_id.at(id)->kind);
    auto t = schema ? schema->output_type : std::nullopt;
    if (!t ||
        !detail::accepting_bound_port(g.registry(), g.node(e.target), e.label, *t))
      problems.push_back("output " + std::to_string(k) + " (" + id.str() + " -> " +
                         e.target.str() + ") yields " + t.value_or("nothing") +
                         " where the boundary needs " +
                         [&] {
                           const auto *tn = g.schema_of(g.node(e.target));
                           const auto *p = tn ? bind_port(*tn, e.label) : nullptr;
                           return p ? p->primary_type() : std::string("nothing");
                         }());
    edges.push_back(Edge{id, e.target, e.label});
  }
  if (!problems.empty()) {
    std::string msg = "boundary signature mismatch:";
    for (const auto &p : problems)
      msg += "\n  " + p;
    fail(RewriteErrorCode::boundary_mismatch, msg);
  }

  std::vector<Node> nodes;
  for (const auto &n : g.nodes())
    if (!region.count(n.id))
      nodes.push_back(n);
  nodes.insert(nodes.end(), frag_nodes.begin(), frag_nodes.end());
  PromptTable prompts = g.prompts();
  for (const auto &[name, text] : replacement.prompts.entries())
    if (!prompts.contains(name))
      prompts.set(name, text);

  std::string removed, added;
  for (const auto &id : region)
    removed += (removed.empty() ? "" : ",") + id.str();
  for (const auto &n : frag_nodes)
    added += (added.empty() ? "" : ",") + n.id.str();
  auto desc = "SubgraphMutation: replaced {" + removed + "} with fragment '" +
              replacement.name + "' {" + added + "}";
  return detail::guard(OperatorKind::SubgraphMutation, {rebuild(g, nodes, edges, prompts)},
                       desc);
}

// Built-in replacement shapes. A motif has head nodes (every incoming
// boundary edge feeds each head that can accept it) and one tail node that
// takes over all outgoing boundary edges.
struct Motif {
  std::string name;
  std::vector<Node> nodes;
  std::vector<Edge> edges;
  std::vector<NodeId> heads;
  NodeId tail;
};

// Adapts a motif to the boundary of a region of `g`. Returns nullopt when a
// boundary input has no accepting head.
[[nodiscard]] inline std::optional<Fragment>
instantiate_motif(const WorkflowGraph &g, const Motif &m, const RegionBoundary &b) {
  Fragment f;
  f.name = m.name;
  f.nodes = m.nodes;
  f.edges = m.edges;
  std::map<NodeId, const Node *> by_id;
  for (const auto &n : f.nodes)
    by_id.emplace(n.id, &n);
  for (const auto &e : b.incoming) {
    auto t = detail::output_type_in(g, e.source);
    if (!t)
      return std::nullopt;
    std::vector<std::pair<NodeId, std::string>> slot;
    for (const auto &h : m.heads)
      if (auto p = detail::port_for_type(g.registry(), *by_id.at(h), *t))
        slot.emplace_back(h, p->second);
    if (slot.empty())
      return std::nullopt;
    f.inputs.push_back(std::move(slot));
  }
  f.outputs.assign(b.outgoing.size(), m.tail);
  return f;
}

[[nodiscard]] inline std::vector<Motif> builtin_motifs(Domain d) {
  auto node = [](const char *id, std::string_view kind,
                 std::map<std::string, std::string> attrs = {}) {
    return Node{NodeId(id), std::string(kind), std::move(attrs), {}};
  };
  auto edge = [](const char *a, const char *b, std::string label = {}) {
    return Edge{NodeId(a), NodeId(b), std::move(label)};
  };
  std::vector<Motif> out;
  if (d == Domain::math) {
    out.push_back({"solve-branch",
                   {node("SOLVE", kinds::custom, {{"role", "step_by_step_solver"}})},
                   {},
                   {NodeId("SOLVE")},
                   NodeId("SOLVE")});
    out.push_back({"solve-refine",
                   {node("SOLVE", kinds::custom, {{"role", "detailed_solver"}}),
                    node("REFINE", kinds::custom, {{"role", "refine_solution"}})},
                   {edge("SOLVE", "REFINE")},
                   {NodeId("SOLVE")},
                   NodeId("REFINE")});
    out.push_back({"ensemble-tail",
                   {node("SOLVE_A", kinds::custom, {{"role", "simple_solver"}}),
                    node("SOLVE_B", kinds::programmer, {{"analysis", "Compute the answer with code"}}),
                    node("ENSEMBLE", kinds::ensemble)},
                   {edge("SOLVE_A", "ENSEMBLE"), edge("SOLVE_B", "ENSEMBLE")},
                   {NodeId("SOLVE_A"), NodeId("SOLVE_B")},
                   NodeId("ENSEMBLE")});
  } else {
    out.push_back({"generate-branch",
                   {node("GEN", kinds::code_generate, {{"instruction", "simple_solver"}})},
                   {},
                   {NodeId("GEN")},
                   NodeId("GEN")});
    out.push_back({"ensemble-tail",
                   {node("GEN_A", kinds::code_generate, {{"instruction", "simple_solver"}}),
                    node("GEN_B", kinds::code_generate, {{"instruction", "optimized_solver"}}),
                    node("ENSEMBLE", kinds::ensemble)},
                   {edge("GEN_A", "ENSEMBLE", "solution"), edge("GEN_B", "ENSEMBLE", "solution")},
                   {NodeId("GEN_A"), NodeId("GEN_B")},
                   NodeId("ENSEMBLE")});
    out.push_back({"test-repair",
                   {node("GEN", kinds::code_generate, {{"instruction", "simple_solver"}}),
                    node("TEST", kinds::test),
                    node("FIX", kinds::code_generate, {{"instruction", "fix_code"}})},
                   {edge("GEN", "TEST", "solution"), edge("TEST", "FIX", "input")},
                   {NodeId("GEN")},
                   NodeId("FIX")});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Crossover: exchange everything strictly downstream of a shared node
// (excluding the exit) between two parents.

struct CrossoverPoint {
  NodeId first;
  NodeId second;
  std::string kind;
};

namespace detail {
inline std::optional<NodeId> deepest_of_kind(const WorkflowGraph &g, std::string_view kind) {
  auto d = depths(g);
  std::optional<NodeId> best;
  int best_depth = -1;
  for (const auto &n : g.nodes()) { // id order: first wins ties
    if (n.kind != kind)
      continue;
    auto it = d.find(n.id);
    int depth = it == d.end() ? 0 : it->second;
    if (depth > best_depth) {
      best = n.id;
      best_depth = depth;
    }
  }
  return best;
}
} // namespace detail

// Priority: ScEnsembleOp, TestOp, then the shared kind whose deepest node in
// the first parent is deepest (ties by kind name).
[[nodiscard]] inline std::optional<CrossoverPoint>
find_crossover_point(const WorkflowGraph &a, const WorkflowGraph &b) {
  std::set<std::string> ka, kb;
  for (const auto &n : a.nodes())
    if (!n.kind.empty() && !is_interface(n))
      ka.insert(n.kind);
  for (const auto &n : b.nodes())
    if (!n.kind.empty() && !is_interface(n))
      kb.insert(n.kind);
  for (auto k : {kinds::ensemble, kinds::test}) {
    std::string ks(k);
    if (ka.count(ks) && kb.count(ks))
      return CrossoverPoint{*detail::deepest_of_kind(a, ks), *detail::deepest_of_kind(b, ks),
                            ks};
  }
  std::optional<CrossoverPoint> best;
  int best_depth = -1;
  auto da = depths(a);
  for (const auto &k : ka) {
    if (!kb.count(k))
      continue;
    auto va = *detail::deepest_of_kind(a, k);
    int depth = da.count(va) ? da.at(va) : 0;
    if (depth > best_depth) {
      best = CrossoverPoint{va, *detail::deepest_of_kind(b, k), k};
      best_depth = depth;
    }
  }
  return best;
}

namespace detail {

inline std::set<NodeId> strictly_downstream(const WorkflowGraph &g, const NodeId &v,
                                            const std::optional<NodeId> &exit) {
  auto all = closure(g, {v}, true);
  all.erase(v);
  if (exit)
    all.erase(*exit);
  return all;
}

// Child = `base` with the tail after `vb` replaced by the tail after `vd` of
// `donor`.
inline WorkflowGraph graft_tail(const WorkflowGraph &base, const NodeId &vb,
                                const WorkflowGraph &donor, const NodeId &vd) {
  auto base_exit = exit_of(base);
  auto donor_exit = exit_of(donor);
  auto base_entry = entry_of(base);
  if (!base_exit || !donor_exit || !base_entry)
    fail(RewriteErrorCode::precondition, "crossover parents need one entry and one exit");
  auto drop = strictly_downstream(base, vb, base_exit);
  auto take = strictly_downstream(donor, vd, donor_exit);

  std::vector<Node> nodes;
  std::set<std::string> taken;
  for (const auto &n : base.nodes())
    if (!drop.count(n.id)) {
      nodes.push_back(n);
      taken.insert(n.id.str());
    }
  std::map<NodeId, NodeId> rename;
  for (const auto &id : take) {
    NodeId fresh(fresh_id(taken, id.str()));
    taken.insert(fresh.str());
    rename.emplace(id, fresh);
    Node m = donor.node(id);
    m.id = fresh;
    nodes.push_back(std::move(m));
  }

  auto roles = classify_interfaces(base);
  auto map_source = [&](const NodeId &s) -> NodeId {
    if (auto it = rename.find(s); it != rename.end())
      return it->second;
    if (s == vd)
      return vb;
    // Upstream of the donor's crossover point: keep a same-named node of the
    // same kind, else stand in with the matching entry or with vb.
    const auto &dn = donor.node(s);
    if (const auto *bn = base.find(s); bn && !drop.count(s) && bn->kind == dn.kind)
      return s;
    if (is_interface(dn)) {
      if (s.str() == reserved::entry_point && !roles.auxiliary.empty())
        return roles.auxiliary.front();
      return *base_entry;
    }
    return vb;
  };

  std::vector<Edge> edges;
  for (const auto &e : base.edges()) {
    if (drop.count(e.source) || drop.count(e.target))
      continue;
    if (e.source == vb && e.target == *base_exit)
      continue; // part of vb's tail
    edges.push_back(e);
  }
  for (const auto &e : donor.edges()) {
    bool into_tail = take.count(e.target) != 0;
    bool tail_to_exit = e.target == *donor_exit && (take.count(e.source) || e.source == vd);
    if (!into_tail && !tail_to_exit)
      continue;
    auto target = into_tail ? rename.at(e.target) : *base_exit;
    edges.push_back(Edge{map_source(e.source), target, e.label});
  }
  // Drop exact duplicates introduced by remapping.
  std::sort(edges.begin(), edges.end(), [](const Edge &x, const Edge &y) {
    return std::tie(x.source, x.target, x.label) < std::tie(y.source, y.target, y.label);
  });
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

  PromptTable prompts = base.prompts();
  for (const auto &id : take)
    for (const auto &[k, v] : donor.node(id).attributes)
      if (auto p = resolve_prompt(donor.prompts(), v); p && !prompts.contains(*p))
        prompts.set(*p, *donor.prompts().find(*p));
  return rebuild(base, nodes, edges, prompts);
}

} // namespace detail

[[nodiscard]] inline RewriteOutcome crossover(const WorkflowGraph &a, const WorkflowGraph &b,
                                              std::optional<CrossoverPoint> point = std::nullopt) {
  for (const auto *p : {&a, &b})
    if (!validate(*p).valid())
      detail::fail(RewriteErrorCode::precondition, "crossover parents must be valid");
  if (!point)
    point = find_crossover_point(a, b);
  if (!point)
    detail::fail(RewriteErrorCode::no_crossover_point, "no crossover point");
  if (detail::require_node(a, point->first).kind != detail::require_node(b, point->second).kind)
    detail::fail(RewriteErrorCode::no_crossover_point,
                 "crossover nodes " + point->first.str() + " and " + point->second.str() +
                     " differ in kind");
  auto c1 = detail::graft_tail(a, point->first, b, point->second);
  auto c2 = detail::graft_tail(b, point->second, a, point->first);
  auto desc = "Crossover: exchanged the subgraphs downstream of " + point->kind + " nodes " +
              point->first.str() + " and " + point->second.str();
  return detail::guard(OperatorKind::Crossover, {std::move(c1), std::move(c2)}, desc);
}

// ---------------------------------------------------------------------------
// Random application.

struct OperatorWeights {
  std::array<double, 6> w{0.18, 0.18, 0.18, 0.18, 0.18, 0.10};

  [[nodiscard]] double &operator[](OperatorKind k) { return w[static_cast<std::size_t>(k)]; }
  [[nodiscard]] double operator[](OperatorKind k) const {
    return w[static_cast<std::size_t>(k)];
  }

  // All mass on one operator.
  [[nodiscard]] static OperatorWeights only(OperatorKind k) {
    OperatorWeights o;
    o.w.fill(0.0);
    o[k] = 1.0;
    return o;
  }
  // Crossover gets `rate`; the rest is split evenly.
  [[nodiscard]] static OperatorWeights with_crossover_rate(double rate) {
    OperatorWeights o;
    o.w.fill((1.0 - rate) / 5.0);
    o[OperatorKind::Crossover] = rate;
    return o;
  }

  void check() const {
    double sum = 0;
    for (double x : w) {
      if (!(x >= 0))
        throw std::invalid_argument("operator weights must be non-negative");
      sum += x;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("operator weights must sum to 1 (got " +
                                  std::to_string(sum) + ")");
  }
};

struct NoApplicableRewrite {
  OperatorKind attempted = OperatorKind::Substitution;
  int sites_tried = 0;
  std::string reason;
};

using RandomRewrite = std::variant<RewriteOutcome, NoApplicableRewrite>;

// Replacement values per prompt attribute, used by random substitution and
// insertion.
inline const std::map<std::string, std::vector<std::string>> &default_vocabulary() {
  static const std::map<std::string, std::vector<std::string>> v{
      {"role",
       {"simple_solver", "alternative_solver", "detailed_solution_outline",
        "comprehensive_solution", "refine_solution", "verify_solution", "step_by_step_solver",
        "critical_reviewer"}},
      {"analysis",
       {"Calculate step by step", "Generate solution with edge cases",
        "Execute code for precise calculations", "Verify and validate results",
        "Explore alternative methods", "Refine and format final output"}},
      {"instruction",
       {"simple_solver", "optimized_solver", "improved_solution", "fix_code",
        "edge_case_solver"}},
  };
  return v;
}

struct RandomRewriteOptions {
  int site_budget = 16;
  std::map<std::string, std::vector<std::string>> vocabulary = default_vocabulary();
  std::vector<Fragment> fragments; // extra replacement fragments
};

namespace detail {

// Portable draws from a 64-bit engine: libstdc++ and libc++ disagree on
// std::uniform_*_distribution, these do not.
template <class Rng> std::size_t pick(Rng &rng, std::size_t n) {
  return static_cast<std::size_t>(rng() % n);
}
template <class Rng> double unit(Rng &rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline std::vector<std::string> values_for(const WorkflowGraph &g, const RandomRewriteOptions &o,
                                           const std::string &attr) {
  std::vector<std::string> out;
  if (auto it = o.vocabulary.find(attr); it != o.vocabulary.end())
    out = it->second;
  for (const auto &[name, _] : g.prompts().entries()) {
    auto lower = to_lower(name);
    if (std::find(out.begin(), out.end(), lower) == out.end())
      out.push_back(lower);
  }
  return out;
}

inline std::map<std::string, std::string> random_attributes(const WorkflowGraph &g,
                                                             const NodeTypeSchema &s,
                                                             const RandomRewriteOptions &o,
                                                             std::mt19937_64 &rng) {
  std::map<std::string, std::string> attrs;
  for (const auto &a : s.attribute_keys) {
    if (!a.required && a.key != s.prompt_attribute)
      continue;
    auto vals = values_for(g, o, a.key);
    attrs[a.key] = vals.empty() ? "default" : vals[pick(rng, vals.size())];
  }
  return attrs;
}

inline std::string id_prefix(const NodeTypeSchema &s) {
  std::string p;
  for (char c : s.display_name)
    if (std::isupper(static_cast<unsigned char>(c)))
      p += c;
  return p.empty() ? "N" : p;
}

inline NodeId numbered_id(const WorkflowGraph &g, const std::string &prefix) {
  for (int i = 1;; ++i) {
    NodeId id(prefix + std::to_string(i));
    if (!g.contains(id))
      return id;
  }
}

inline RewriteOutcome try_site(OperatorKind kind, const WorkflowGraph &g,
                               const WorkflowGraph *partner, const RandomRewriteOptions &o,
                               std::mt19937_64 &rng) {
  switch (kind) {
  case OperatorKind::Substitution: {
    std::vector<const Node *> sites;
    for (const auto &n : g.nodes())
      if (const auto *s = g.schema_of(n); s && !s->prompt_attribute.empty())
        sites.push_back(&n);
    if (sites.empty())
      fail(RewriteErrorCode::precondition, "no node with a prompt attribute");
    const auto &n = *sites[pick(rng, sites.size())];
    const auto &attr = g.schema_of(n)->prompt_attribute;
    auto vals = values_for(g, o, attr);
    auto cur = n.attributes.count(attr) ? n.attributes.at(attr) : std::string();
    vals.erase(std::remove(vals.begin(), vals.end(), cur), vals.end());
    if (vals.empty())
      fail(RewriteErrorCode::precondition, "no alternative value for " + attr);
    auto attrs = n.attributes;
    attrs[attr] = vals[pick(rng, vals.size())];
    return substitute_node(g, n.id, attrs);
  }
  case OperatorKind::Addition: {
    if (g.edges().empty())
      fail(RewriteErrorCode::precondition, "no edges");
    const auto &e = g.edges()[pick(rng, g.edge_count())];
    std::vector<const NodeTypeSchema *> kinds_ok;
    for (const auto &s : g.registry().schemas())
      if (s.standard && s.kind != kinds::interface_kind && s.kind != kinds::ensemble &&
          s.allowed_in(g.domain()))
        kinds_ok.push_back(&s);
    if (kinds_ok.empty())
      fail(RewriteErrorCode::precondition, "no insertable kind");
    const auto &s = *kinds_ok[pick(rng, kinds_ok.size())];
    Node n{numbered_id(g, id_prefix(s)), s.kind, random_attributes(g, s, o, rng), {}};
    return add_node(g, EdgeRef{e.source, e.target}, n);
  }
  case OperatorKind::Rewiring: {
    if (g.edges().empty() || g.node_count() < 3)
      fail(RewriteErrorCode::precondition, "graph too small to rewire");
    const auto &e = g.edges()[pick(rng, g.edge_count())];
    const auto &c = g.nodes()[pick(rng, g.node_count())];
    auto dir = pick(rng, 2) == 0 ? RewireDirection::to_third : RewireDirection::from_third;
    return rewire_edge(g, EdgeRef{e.source, e.target}, c.id, dir);
  }
  case OperatorKind::Deletion: {
    std::vector<NodeId> sites;
    for (const auto &n : g.nodes())
      if (is_linear_node(g, n))
        sites.push_back(n.id);
    if (sites.empty())
      fail(RewriteErrorCode::precondition, "no deletable linear node");
    return delete_node(g, sites[pick(rng, sites.size())]);
  }
  case OperatorKind::SubgraphMutation: {
    std::vector<NodeId> inner;
    for (const auto &n : g.nodes())
      if (!is_interface(n))
        inner.push_back(n.id);
    if (inner.empty())
      fail(RewriteErrorCode::precondition, "no non-interface node");
    std::set<NodeId> region{inner[pick(rng, inner.size())]};
    // Optionally extend along an out-edge to a second inner node.
    if (pick(rng, 2) == 1) {
      std::vector<NodeId> next;
      for (auto i : g.out_edges(*region.begin()))
        if (!is_interface(g.node(g.edges()[i].target)))
          next.push_back(g.edges()[i].target);
      if (!next.empty())
        region.insert(next[pick(rng, next.size())]);
    }
    auto boundary = region_boundary(g, region);
    std::vector<Fragment> pool;
    for (const auto &m : builtin_motifs(g.domain()))
      if (auto f = instantiate_motif(g, m, boundary))
        pool.push_back(std::move(*f));
    if (partner) {
      // A region of the partner, adapted as a motif with its own heads/tail.
      std::vector<NodeId> pinner;
      for (const auto &n : partner->nodes())
        if (!is_interface(n))
          pinner.push_back(n.id);
      if (!pinner.empty()) {
        auto pid = pinner[pick(rng, pinner.size())];
        Motif m{"partner:" + pid.str(), {partner->node(pid)}, {}, {pid}, pid};
        if (auto f = instantiate_motif(g, m, boundary)) {
          for (const auto &[k, v] : partner->node(pid).attributes)
            if (auto p = resolve_prompt(partner->prompts(), v))
              f->prompts.set(*p, *partner->prompts().find(*p));
          pool.push_back(std::move(*f));
        }
      }
    }
    for (const auto &f : o.fragments)
      if (f.inputs.size() == boundary.incoming.size() &&
          f.outputs.size() == boundary.outgoing.size())
        pool.push_back(f);
    if (pool.empty())
      fail(RewriteErrorCode::boundary_mismatch, "no fragment fits the region boundary");
    return mutate_subgraph(g, region, pool[pick(rng, pool.size())]);
  }
  case OperatorKind::Crossover: {
    if (!partner)
      fail(RewriteErrorCode::precondition, "crossover needs a second parent");
    return crossover(g, *partner);
  }
  }
  fail(RewriteErrorCode::precondition, "unknown operator");
}

} // namespace detail

[[nodiscard]] inline OperatorKind sample_operator(const OperatorWeights &w, std::mt19937_64 &rng) {
  double u = detail::unit(rng), acc = 0;
  for (auto k : kAllOperators) {
    acc += w[k];
    if (u < acc)
      return k;
  }
  for (auto it = kAllOperators.rbegin(); it != kAllOperators.rend(); ++it)
    if (w[*it] > 0)
      return *it;
  return OperatorKind::Substitution;
}

// Samples an operator by weight, then tries random sites until one yields a
// valid product that differs from the input, or the site budget runs out.
[[nodiscard]] inline RandomRewrite
apply_random(const WorkflowGraph &g, const WorkflowGraph *partner, std::mt19937_64 &rng,
             const OperatorWeights &weights, const RandomRewriteOptions &opts = {}) {
  weights.check();
  auto kind = sample_operator(weights, rng);
  NoApplicableRewrite none{kind, 0, {}};
  for (int attempt = 0; attempt < opts.site_budget; ++attempt) {
    ++none.sites_tried;
    try {
      auto out = detail::try_site(kind, g, partner, opts, rng);
      bool changed = false;
      for (const auto &p : out.graphs)
        changed = changed || !(p == g);
      if (!changed) {
        none.reason = "rewrite left the graph unchanged";
        continue;
      }
      return out;
    } catch (const RewriteError &e) {
      none.reason = e.what();
      if (kind == OperatorKind::Crossover || e.code() == RewriteErrorCode::no_crossover_point)
        break; // deterministic: retrying cannot help
    }
  }
  return none;
}

} // namespace mermaidflow
