#pragma once

// Typed workflow graph: node-type registry, nodes, labeled edges, prompt table,
// and the structural queries shared by the parser, validator, operators and
// code generator. Graph values are immutable once built.

#include <algorithm>
#include <cctype>
#include <compare>
#include <cstddef>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mermaidflow {

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Letter or underscore, then letters, digits, underscores.
[[nodiscard]] inline bool is_identifier(std::string_view s) noexcept {
  if (s.empty())
    return false;
  auto head = static_cast<unsigned char>(s.front());
  if (!std::isalpha(head) && head != '_')
    return false;
  return std::all_of(s.begin() + 1, s.end(), [](char c) {
    auto u = static_cast<unsigned char>(c);
    return std::isalnum(u) || u == '_';
  });
}

class NodeId {
 public:
  NodeId() = default;
  explicit NodeId(std::string value) : value_(std::move(value)) {}

  [[nodiscard]] const std::string &str() const noexcept { return value_; }
  [[nodiscard]] bool empty() const noexcept { return value_.empty(); }
  [[nodiscard]] bool valid() const noexcept { return is_identifier(value_); }

  auto operator<=>(const NodeId &) const = default;
  bool operator==(const NodeId &) const = default;

 private:
  std::string value_;
};

inline std::ostream &operator<<(std::ostream &os, const NodeId &id) {
  return os << id.str();
}

namespace kinds {
inline constexpr std::string_view interface_kind = "Interface";
inline constexpr std::string_view custom = "CustomOp";
inline constexpr std::string_view programmer = "ProgrammerOp";
inline constexpr std::string_view ensemble = "ScEnsembleOp";
inline constexpr std::string_view test = "TestOp";
inline constexpr std::string_view code_generate = "CustomCodeGenerateOp";
inline constexpr std::string_view decision = "DecisionOp";
} // namespace kinds

// Reserved interface names. They act as identification hints only; roles are
// decided by degree.
namespace reserved {
inline constexpr std::string_view problem = "PROBLEM";
inline constexpr std::string_view ret = "RETURN";
inline constexpr std::string_view entry_point = "ENTRY_POINT";
} // namespace reserved

enum class Domain { math, code };
enum class DomainRestriction { any, math_only, code_only };

[[nodiscard]] inline std::string_view to_string(Domain d) noexcept {
  return d == Domain::math ? "math" : "code";
}

[[nodiscard]] inline std::optional<Domain> parse_domain(std::string_view s) {
  if (s == "math")
    return Domain::math;
  if (s == "code")
    return Domain::code;
  return std::nullopt;
}

struct PortSpec {
  std::string label;
  std::vector<std::string> accepts; // semantic types this port consumes
  bool required = false;
  int min_count = 0;
  bool is_default = false;
  std::string edge_label; // label given to newly created edges into this port

  [[nodiscard]] bool accepts_type(std::string_view type) const {
    return std::find(accepts.begin(), accepts.end(), type) != accepts.end();
  }
  [[nodiscard]] std::string primary_type() const {
    return accepts.empty() ? std::string{} : accepts.front();
  }
};

struct AttributeSpec {
  std::string key;
  bool required = false;
};

struct NodeTypeSchema {
  std::string kind;
  std::string display_name; // label text before <br/>, e.g. "Custom"
  std::vector<PortSpec> input_ports;
  std::optional<std::string> output_type;
  std::vector<AttributeSpec> attribute_keys;
  std::string style_class;
  std::string style; // classDef body, opaque
  DomainRestriction domain_restriction = DomainRestriction::any;
  std::vector<std::string> aliases;
  bool requires_labels = false;
  bool standard = false;     // always listed in the canonical classDef block
  std::string prompt_attribute; // attribute that selects a prompt, if any
  std::string operator_name;    // runtime operator class, e.g. "Custom"

  [[nodiscard]] const PortSpec *port(std::string_view label) const {
    for (const auto &p : input_ports)
      if (p.label == label)
        return &p;
    return nullptr;
  }

  [[nodiscard]] const PortSpec *default_port() const {
    for (const auto &p : input_ports)
      if (p.is_default)
        return &p;
    return input_ports.empty() ? nullptr : &input_ports.front();
  }

  [[nodiscard]] bool allowed_in(Domain d) const noexcept {
    switch (domain_restriction) {
    case DomainRestriction::any:
      return true;
    case DomainRestriction::math_only:
      return d == Domain::math;
    case DomainRestriction::code_only:
      return d == Domain::code;
    }
    return true;
  }

  [[nodiscard]] bool has_attribute_key(std::string_view key) const {
    return std::any_of(attribute_keys.begin(), attribute_keys.end(),
                       [&](const AttributeSpec &a) { return a.key == key; });
  }
};

class RegistryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Registry {
 public:
  void add(NodeTypeSchema schema) {
    for (const auto &name : names_of(schema))
      if (index_.count(name))
        throw RegistryError("duplicate node kind or alias '" + name + "'");
    auto pos = schemas_.size();
    for (const auto &name : names_of(schema))
      index_.emplace(name, pos);
    schemas_.push_back(std::move(schema));
  }

  // Lookup by canonical kind name or alias.
  [[nodiscard]] const NodeTypeSchema *find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : &schemas_[it->second];
  }

  [[nodiscard]] std::optional<std::string>
  canonical_kind(std::string_view name) const {
    if (const auto *s = find(name))
      return s->kind;
    return std::nullopt;
  }

  [[nodiscard]] const std::vector<NodeTypeSchema> &schemas() const noexcept {
    return schemas_;
  }

 private:
  static std::vector<std::string> names_of(const NodeTypeSchema &s) {
    std::vector<std::string> out{s.kind};
    out.insert(out.end(), s.aliases.begin(), s.aliases.end());
    return out;
  }

  std::vector<NodeTypeSchema> schemas_;
  std::map<std::string, std::size_t> index_;
};

namespace detail {

inline std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos)
    return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    auto piece = trim(s.substr(start, pos == std::string_view::npos
                                          ? std::string_view::npos
                                          : pos - start));
    if (!piece.empty())
      out.push_back(std::move(piece));
    if (pos == std::string_view::npos)
      break;
    start = pos + 1;
  }
  return out;
}

// Unlike split(), keeps indentation and empty lines.
inline std::vector<std::string> raw_lines(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto nl = s.find('\n', start);
    out.emplace_back(s.substr(start, nl == std::string_view::npos ? s.size() - start : nl - start));
    if (nl == std::string_view::npos)
      return out;
    start = nl + 1;
  }
}

inline std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in{std::string(s)};
  std::string tok;
  while (in >> tok)
    out.push_back(tok);
  return out;
}

inline std::string to_upper(std::string_view s) {
  std::string out(s);
  for (auto &c : out)
    c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (auto &c : out)
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

} // namespace detail

// Registry config format, one directive per line, '#' comments:
//
//   kind CustomOp
//     display Custom
//     operator Custom
//     domain any|math|code
//     style fill:#d0e1f9,stroke:#4378a2,stroke-width:2px
//     alias ScEnSembleOp
//     standard
//     labels required
//     output solution
//     port input accepts=problem,solution required min=1 default edge_label=
//     attr role required
//     prompt role
//   end
[[nodiscard]] inline Registry parse_registry(std::string_view text) {
  Registry reg;
  std::optional<NodeTypeSchema> cur;
  std::istringstream in{std::string(text)};
  std::string raw;
  int lineno = 0;
  auto fail = [&](const std::string &msg) {
    throw RegistryError("registry config line " + std::to_string(lineno) +
                        ": " + msg);
  };
  while (std::getline(in, raw)) {
    ++lineno;
    auto line = detail::trim(raw);
    if (line.empty() || line.front() == '#')
      continue;
    auto sp = line.find_first_of(" \t");
    std::string key = line.substr(0, sp);
    std::string rest =
        sp == std::string::npos ? std::string{} : detail::trim(line.substr(sp));
    if (key == "kind") {
      if (cur)
        fail("nested kind block (missing 'end')");
      if (!is_identifier(rest))
        fail("invalid kind name '" + rest + "'");
      cur = NodeTypeSchema{};
      cur->kind = rest;
      cur->style_class = rest;
      cur->display_name = rest;
      continue;
    }
    if (!cur)
      fail("directive '" + key + "' outside a kind block");
    if (key == "end") {
      reg.add(std::move(*cur));
      cur.reset();
    } else if (key == "display") {
      cur->display_name = rest;
    } else if (key == "operator") {
      cur->operator_name = rest;
    } else if (key == "domain") {
      if (rest == "any")
        cur->domain_restriction = DomainRestriction::any;
      else if (rest == "math")
        cur->domain_restriction = DomainRestriction::math_only;
      else if (rest == "code")
        cur->domain_restriction = DomainRestriction::code_only;
      else
        fail("unknown domain '" + rest + "'");
    } else if (key == "style") {
      cur->style = rest;
    } else if (key == "class") {
      cur->style_class = rest;
    } else if (key == "alias") {
      cur->aliases.push_back(rest);
    } else if (key == "standard") {
      cur->standard = true;
    } else if (key == "labels") {
      cur->requires_labels = rest == "required";
    } else if (key == "output") {
      cur->output_type = rest;
    } else if (key == "prompt") {
      cur->prompt_attribute = rest;
    } else if (key == "attr") {
      auto toks = detail::split_ws(rest);
      if (toks.empty())
        fail("attr needs a key");
      AttributeSpec a{toks[0], false};
      for (std::size_t i = 1; i < toks.size(); ++i) {
        if (toks[i] == "required")
          a.required = true;
        else
          fail("unknown attr flag '" + toks[i] + "'");
      }
      cur->attribute_keys.push_back(std::move(a));
    } else if (key == "port") {
      auto toks = detail::split_ws(rest);
      if (toks.empty())
        fail("port needs a label");
      PortSpec p;
      p.label = toks[0];
      for (std::size_t i = 1; i < toks.size(); ++i) {
        const auto &t = toks[i];
        if (t == "required") {
          p.required = true;
        } else if (t == "default") {
          p.is_default = true;
        } else if (t.rfind("accepts=", 0) == 0) {
          p.accepts = detail::split(t.substr(8), ',');
        } else if (t.rfind("min=", 0) == 0) {
          try {
            p.min_count = std::stoi(t.substr(4));
          } catch (const std::exception &) {
            fail("bad min count '" + t + "'");
          }
        } else if (t.rfind("edge_label=", 0) == 0) {
          p.edge_label = t.substr(11);
        } else {
          fail("unknown port flag '" + t + "'");
        }
      }
      if (p.required && p.min_count == 0)
        p.min_count = 1;
      cur->input_ports.push_back(std::move(p));
    } else {
      fail("unknown directive '" + key + "'");
    }
  }
  if (cur)
    throw RegistryError("registry config: kind '" + cur->kind +
                        "' not closed with 'end'");
  return reg;
}

// Shipped default: the six documented kinds plus the optional DecisionOp.
inline constexpr std::string_view kDefaultRegistryConfig = R"(# node-type registry
kind Interface
  display Interface
  style fill:#e2e2f2,stroke:#6a6ab2,stroke-width:2px;
  standard
  output problem
  port response accepts=solution,test_result default
end

kind CustomOp
  display Custom
  operator Custom
  style fill:#d0e1f9,stroke:#4378a2,stroke-width:2px;
  standard
  output solution
  port input accepts=problem,solution,test_result required min=1 default
  attr role required
  prompt role
end

kind ProgrammerOp
  display Programmer
  operator Programmer
  domain math
  style fill:#f9c2c2,stroke:#c23737,stroke-width:2px;
  standard
  labels required
  output solution
  port problem accepts=problem,solution required min=1 default edge_label=problem
  port analysis accepts=solution edge_label=analysis
  attr analysis
  prompt analysis
end

kind ScEnsembleOp
  display ScEnsemble
  operator ScEnsemble
  alias ScEnSembleOp
  style fill:#f9e4b7,stroke:#b99b37,stroke-width:2px;
  standard
  output solution
  port solution accepts=solution required min=2 default
end

kind TestOp
  display Test
  operator Test
  domain code
  style fill:#d8f0d8,stroke:#2e8b57,stroke-width:2px;
  standard
  labels required
  output test_result
  port solution accepts=solution required min=1 default edge_label=solution
  port problem accepts=problem edge_label=problem
  port entry_point accepts=entry_point edge_label=entry_point
end

kind CustomCodeGenerateOp
  display CustomCodeGenerate
  operator CustomCodeGenerate
  domain code
  style fill:#f9c2c2,stroke:#c23737,stroke-width:2px;
  standard
  output solution
  port input accepts=problem,solution,test_result required min=1 default edge_label=input
  port entry_point accepts=entry_point edge_label=entry_point
  attr instruction required
  prompt instruction
end

kind DecisionOp
  display Decision
  domain code
  style fill:#ffffff,stroke:#444444,stroke-width:1px,stroke-dasharray:2 2;
  output test_result
  port input accepts=test_result,solution required min=1 default
end
)";

[[nodiscard]] inline std::shared_ptr<const Registry> default_registry() {
  static const auto reg =
      std::make_shared<const Registry>(parse_registry(kDefaultRegistryConfig));
  return reg;
}

[[nodiscard]] inline std::shared_ptr<const Registry>
load_registry(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw RegistryError("cannot read registry config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return std::make_shared<const Registry>(parse_registry(ss.str()));
}

struct Node {
  NodeId id;
  std::string kind; // canonical kind name; empty when unclassified
  std::map<std::string, std::string> attributes;
  std::string display_label;

  bool operator==(const Node &) const = default;
};

struct Edge {
  NodeId source;
  NodeId target;
  std::string label; // empty = unlabeled

  auto operator<=>(const Edge &) const = default;
  bool operator==(const Edge &) const = default;
};

[[nodiscard]] inline std::string describe(const Edge &e) {
  std::string s = e.source.str() + "->" + e.target.str();
  if (!e.label.empty())
    s += "[" + e.label + "]";
  return s;
}

class PromptTable {
 public:
  PromptTable() = default;

  void set(const std::string &name, std::string text) {
    if (!is_identifier(name))
      throw GraphError("invalid prompt name '" + name + "'");
    entries_[name] = std::move(text);
  }

  // Fails when the name already exists.
  void insert(const std::string &name, std::string text) {
    if (entries_.count(name))
      throw GraphError("duplicate prompt name '" + name + "'");
    set(name, std::move(text));
  }

  [[nodiscard]] const std::string *find(std::string_view name) const {
    auto it = entries_.find(std::string(name));
    return it == entries_.end() ? nullptr : &it->second;
  }
  [[nodiscard]] bool contains(std::string_view name) const {
    return find(name) != nullptr;
  }
  [[nodiscard]] const std::map<std::string, std::string> &entries() const {
    return entries_;
  }
  [[nodiscard]] bool empty() const noexcept { return entries_.empty(); }
  [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }

  bool operator==(const PromptTable &) const = default;

 private:
  std::map<std::string, std::string> entries_;
};

// An attribute value written as an upper-case identifier is an explicit
// prompt reference and must resolve.
[[nodiscard]] inline bool is_explicit_prompt_ref(std::string_view value) {
  if (!is_identifier(value))
    return false;
  bool has_alpha = false;
  for (char c : value) {
    if (std::islower(static_cast<unsigned char>(c)))
      return false;
    if (std::isalpha(static_cast<unsigned char>(c)))
      has_alpha = true;
  }
  return has_alpha;
}

// Resolution order: exact key, upper-cased value, upper-cased value without a
// trailing numeric suffix (role_1, role_2 share ROLE). Otherwise the value is
// an inline literal.
[[nodiscard]] inline std::optional<std::string>
resolve_prompt(const PromptTable &prompts, std::string_view value) {
  if (prompts.contains(value))
    return std::string(value);
  if (!is_identifier(value))
    return std::nullopt;
  auto upper = detail::to_upper(value);
  if (prompts.contains(upper))
    return upper;
  auto us = upper.find_last_of('_');
  if (us != std::string::npos && us + 1 < upper.size() &&
      std::all_of(upper.begin() + static_cast<std::ptrdiff_t>(us) + 1,
                  upper.end(),
                  [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
    auto stem = upper.substr(0, us);
    if (prompts.contains(stem))
      return stem;
  }
  return std::nullopt;
}

class WorkflowGraph;

[[nodiscard]] inline WorkflowGraph
build_graph(std::vector<Node> nodes, std::vector<Edge> edges,
            PromptTable prompts, Domain domain,
            std::shared_ptr<const Registry> registry = default_registry());

class WorkflowGraph {
 public:
  WorkflowGraph() : registry_(default_registry()) {}

  // Sorted by id.
  [[nodiscard]] const std::vector<Node> &nodes() const noexcept {
    return nodes_;
  }
  // Sorted by (source, target, label); duplicates retained.
  [[nodiscard]] const std::vector<Edge> &edges() const noexcept {
    return edges_;
  }
  [[nodiscard]] const PromptTable &prompts() const noexcept { return prompts_; }
  [[nodiscard]] Domain domain() const noexcept { return domain_; }
  [[nodiscard]] const Registry &registry() const noexcept { return *registry_; }
  [[nodiscard]] const std::shared_ptr<const Registry> &
  registry_ptr() const noexcept {
    return registry_;
  }

  [[nodiscard]] std::size_t node_count() const noexcept {
    return nodes_.size();
  }
  [[nodiscard]] std::size_t edge_count() const noexcept {
    return edges_.size();
  }

  [[nodiscard]] const Node *find(const NodeId &id) const {
    auto i = lookup(id);
    return i == npos ? nullptr : &nodes_[i];
  }
  [[nodiscard]] bool contains(const NodeId &id) const { return lookup(id) != npos; }
  [[nodiscard]] const Node &node(const NodeId &id) const {
    if (const auto *n = find(id))
      return *n;
    throw GraphError("unknown node " + id.str());
  }
  [[nodiscard]] std::size_t index_of(const NodeId &id) const {
    auto i = lookup(id);
    if (i == npos)
      throw GraphError("unknown node " + id.str());
    return i;
  }

  // Edge indices, ordered by the edge sort order.
  [[nodiscard]] std::span<const std::size_t> in_edges(const NodeId &id) const {
    return in_edges_at(index_of(id));
  }
  [[nodiscard]] std::span<const std::size_t> out_edges(const NodeId &id) const {
    return out_edges_at(index_of(id));
  }
  [[nodiscard]] std::size_t in_degree(const NodeId &id) const {
    return in_edges(id).size();
  }
  [[nodiscard]] std::size_t out_degree(const NodeId &id) const {
    return out_edges(id).size();
  }

  // Index-based adjacency for hot loops: node i's edges, edge e's endpoints.
  [[nodiscard]] std::span<const std::size_t> in_edges_at(std::size_t i) const {
    return {in_.data() + in_off_[i], in_off_[i + 1] - in_off_[i]};
  }
  [[nodiscard]] std::span<const std::size_t> out_edges_at(std::size_t i) const {
    return {out_.data() + out_off_[i], out_off_[i + 1] - out_off_[i]};
  }
  [[nodiscard]] std::size_t source_index(std::size_t e) const { return src_[e]; }
  [[nodiscard]] std::size_t target_index(std::size_t e) const { return dst_[e]; }

  [[nodiscard]] const NodeTypeSchema *schema_of(const Node &n) const {
    return n.kind.empty() ? nullptr : registry_->find(n.kind);
  }

  // Structural equality: nodes, edge multiset, prompts, domain.
  bool operator==(const WorkflowGraph &o) const {
    return domain_ == o.domain_ && nodes_ == o.nodes_ && edges_ == o.edges_ &&
           prompts_ == o.prompts_;
  }

 private:
  friend WorkflowGraph build_graph(std::vector<Node>, std::vector<Edge>,
                                   PromptTable, Domain,
                                   std::shared_ptr<const Registry>);

  std::vector<Node> nodes_;
  std::vector<Edge> edges_;
  PromptTable prompts_;
  Domain domain_ = Domain::math;
  std::shared_ptr<const Registry> registry_;
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  // nodes_ is sorted by id.
  [[nodiscard]] std::size_t lookup(const NodeId &id) const {
    auto it = std::lower_bound(nodes_.begin(), nodes_.end(), id,
                               [](const Node &n, const NodeId &k) { return n.id < k; });
    return it != nodes_.end() && it->id == id ? static_cast<std::size_t>(it - nodes_.begin())
                                              : npos;
  }

  // Edge endpoints by index, and per-node edge lists in offset form: node i's
  // incoming edges are in_[in_off_[i] .. in_off_[i+1]), in edge order.
  std::vector<std::size_t> src_, dst_;
  std::vector<std::size_t> in_off_{0}, in_;
  std::vector<std::size_t> out_off_{0}, out_;
};

inline WorkflowGraph build_graph(std::vector<Node> nodes,
                                 std::vector<Edge> edges, PromptTable prompts,
                                 Domain domain,
                                 std::shared_ptr<const Registry> registry) {
  WorkflowGraph g;
  g.registry_ = registry ? std::move(registry) : default_registry();
  g.domain_ = domain;
  g.prompts_ = std::move(prompts);
  std::sort(nodes.begin(), nodes.end(),
            [](const Node &a, const Node &b) { return a.id < b.id; });
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (!nodes[i].id.valid())
      throw GraphError("invalid node id '" + nodes[i].id.str() + "'");
    if (i > 0 && nodes[i].id == nodes[i - 1].id)
      throw GraphError("duplicate node id " + nodes[i].id.str());
  }
  g.nodes_ = std::move(nodes);
  std::sort(edges.begin(), edges.end());
  g.src_.reserve(edges.size());
  g.dst_.reserve(edges.size());
  for (const auto &e : edges) {
    for (const auto *end : {&e.source, &e.target})
      if (g.lookup(*end) == WorkflowGraph::npos)
        throw GraphError("dangling endpoint " + end->str() + " in edge " +
                         describe(e));
    g.src_.push_back(g.lookup(e.source));
    g.dst_.push_back(g.lookup(e.target));
  }
  g.edges_ = std::move(edges);
  const auto n = g.nodes_.size(), m = g.edges_.size();
  g.in_off_.assign(n + 1, 0);
  g.out_off_.assign(n + 1, 0);
  for (std::size_t i = 0; i < m; ++i) {
    ++g.out_off_[g.src_[i] + 1];
    ++g.in_off_[g.dst_[i] + 1];
  }
  for (std::size_t v = 0; v < n; ++v) {
    g.out_off_[v + 1] += g.out_off_[v];
    g.in_off_[v + 1] += g.in_off_[v];
  }
  g.in_.resize(m);
  g.out_.resize(m);
  std::vector<std::size_t> in_fill(g.in_off_.begin(), g.in_off_.end() - 1);
  std::vector<std::size_t> out_fill(g.out_off_.begin(), g.out_off_.end() - 1);
  for (std::size_t i = 0; i < m; ++i) {
    g.out_[out_fill[g.src_[i]]++] = i;
    g.in_[in_fill[g.dst_[i]]++] = i;
  }
  return g;
}

// Rebuild with the same prompts, domain and registry.
[[nodiscard]] inline WorkflowGraph rebuild(const WorkflowGraph &like,
                                           std::vector<Node> nodes,
                                           std::vector<Edge> edges,
                                           std::optional<PromptTable> prompts = {}) {
  return build_graph(std::move(nodes), std::move(edges),
                     prompts ? std::move(*prompts) : like.prompts(),
                     like.domain(), like.registry_ptr());
}

using Neighbor = std::pair<NodeId, std::string>;

// Sorted by source id, then label.
[[nodiscard]] inline std::vector<Neighbor>
predecessors(const WorkflowGraph &g, const NodeId &id) {
  std::vector<Neighbor> out;
  for (auto ei : g.in_edges(id))
    out.emplace_back(g.edges()[ei].source, g.edges()[ei].label);
  std::sort(out.begin(), out.end());
  return out;
}

// Sorted by target id, then label.
[[nodiscard]] inline std::vector<Neighbor>
successors(const WorkflowGraph &g, const NodeId &id) {
  std::vector<Neighbor> out;
  for (auto ei : g.out_edges(id))
    out.emplace_back(g.edges()[ei].target, g.edges()[ei].label);
  std::sort(out.begin(), out.end());
  return out;
}

[[nodiscard]] inline bool is_interface(const Node &n) {
  return n.kind == kinds::interface_kind;
}

[[nodiscard]] inline bool has_exit_hint(const NodeId &id) {
  const auto &s = id.str();
  return s == reserved::ret || s.rfind(std::string(reserved::ret) + "_", 0) == 0;
}

// Entry/exit identification. Interface nodes with in-degree 0 are entries
// (ENTRY_POINT is an auxiliary entry carrying the entry-point payload);
// out-degree 0 are exits. Isolated interfaces are placed by name hint.
struct InterfaceRoles {
  std::vector<NodeId> entries;   // primary entry candidates
  std::vector<NodeId> auxiliary; // ENTRY_POINT-style entries
  std::vector<NodeId> exits;
  std::vector<NodeId> malformed; // interface with both inputs and outputs
};

[[nodiscard]] inline InterfaceRoles classify_interfaces(const WorkflowGraph &g) {
  InterfaceRoles r;
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    const auto &n = g.nodes()[i];
    if (!is_interface(n))
      continue;
    auto in = g.in_edges_at(i).size();
    auto out = g.out_edges_at(i).size();
    if (in > 0 && out > 0) {
      r.malformed.push_back(n.id);
    } else if (in > 0 || (out == 0 && has_exit_hint(n.id))) {
      r.exits.push_back(n.id);
    } else if (n.id.str() == reserved::entry_point) {
      r.auxiliary.push_back(n.id);
    } else {
      r.entries.push_back(n.id);
    }
  }
  return r;
}

// The primary entry: the unique candidate, or PROBLEM when several exist.
[[nodiscard]] inline std::optional<NodeId>
primary_entry(const InterfaceRoles &r) {
  if (r.entries.size() == 1)
    return r.entries.front();
  for (const auto &id : r.entries)
    if (id.str() == reserved::problem)
      return id;
  return std::nullopt;
}

[[nodiscard]] inline std::optional<NodeId> entry_of(const WorkflowGraph &g) {
  auto r = classify_interfaces(g);
  if (r.entries.size() != 1)
    return std::nullopt;
  return r.entries.front();
}

[[nodiscard]] inline std::optional<NodeId> exit_of(const WorkflowGraph &g) {
  auto r = classify_interfaces(g);
  if (r.exits.size() != 1)
    return std::nullopt;
  return r.exits.front();
}

namespace detail {
// Reachability as a per-node mask (starts included).
inline std::vector<bool> closure_mask(const WorkflowGraph &g,
                                      const std::vector<NodeId> &starts,
                                      bool forward) {
  std::vector<bool> seen(g.node_count(), false);
  std::vector<std::size_t> work;
  for (const auto &id : starts) {
    auto i = g.index_of(id);
    if (!seen[i]) {
      seen[i] = true;
      work.push_back(i);
    }
  }
  while (!work.empty()) {
    auto v = work.back();
    work.pop_back();
    for (auto ei : forward ? g.out_edges_at(v) : g.in_edges_at(v)) {
      auto w = forward ? g.target_index(ei) : g.source_index(ei);
      if (!seen[w]) {
        seen[w] = true;
        work.push_back(w);
      }
    }
  }
  return seen;
}

inline std::set<NodeId> closure(const WorkflowGraph &g,
                                const std::vector<NodeId> &starts,
                                bool forward) {
  auto mask = closure_mask(g, starts, forward);
  std::set<NodeId> out;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i])
      out.insert(g.nodes()[i].id);
  return out;
}
} // namespace detail

// Forward closure from the entry (and auxiliary entries).
[[nodiscard]] inline std::set<NodeId> reachable_from_entry(const WorkflowGraph &g) {
  auto roles = classify_interfaces(g);
  if (roles.entries.size() != 1 || roles.exits.size() != 1)
    throw GraphError("W1 precondition failed: graph needs exactly one entry "
                     "and one exit interface");
  auto starts = roles.entries;
  starts.insert(starts.end(), roles.auxiliary.begin(), roles.auxiliary.end());
  return detail::closure(g, starts, true);
}

// Reverse closure from the exit.
[[nodiscard]] inline std::set<NodeId> reaches_exit(const WorkflowGraph &g) {
  auto roles = classify_interfaces(g);
  if (roles.entries.size() != 1 || roles.exits.size() != 1)
    throw GraphError("W1 precondition failed: graph needs exactly one entry "
                     "and one exit interface");
  return detail::closure(g, roles.exits, false);
}

// Semantic type produced by a node.
[[nodiscard]] inline std::string type_of_output(const WorkflowGraph &g,
                                                const NodeId &id) {
  const auto &n = g.node(id);
  const auto *schema = g.schema_of(n);
  if (!schema)
    throw GraphError("node " + id.str() + " has no registered kind");
  if (is_interface(n)) {
    if (g.out_degree(id) == 0 && (g.in_degree(id) > 0 || has_exit_hint(id)))
      throw GraphError("exit interface " + id.str() + " has no output port");
    return id.str() == reserved::entry_point ? "entry_point"
                                             : schema->output_type.value_or("problem");
  }
  if (!schema->output_type)
    throw GraphError("kind " + n.kind + " has no output port");
  return *schema->output_type;
}

// Port of a node by label. Entry interfaces have no input ports.
[[nodiscard]] inline const PortSpec &
type_of_input(const WorkflowGraph &g, const NodeId &id, std::string_view label) {
  const auto &n = g.node(id);
  const auto *schema = g.schema_of(n);
  if (!schema)
    throw GraphError("node " + id.str() + " has no registered kind");
  if (is_interface(n) && g.in_degree(id) == 0 && !has_exit_hint(id))
    throw GraphError("entry interface " + id.str() + " has no input ports");
  const auto *p = schema->port(label);
  if (!p)
    throw GraphError("unknown port '" + std::string(label) + "' on " + id.str());
  return *p;
}

// The port an edge with this label binds to on a node of the given schema:
// the port named by the label, else the default port.
[[nodiscard]] inline const PortSpec *bind_port(const NodeTypeSchema &schema,
                                               std::string_view label) {
  if (!label.empty())
    if (const auto *p = schema.port(label))
      return p;
  return schema.default_port();
}

[[nodiscard]] inline const PortSpec *bound_port(const WorkflowGraph &g,
                                                const Edge &e) {
  const auto *schema = g.schema_of(g.node(e.target));
  return schema ? bind_port(*schema, e.label) : nullptr;
}

// Topological order, ties broken by id. Returns nullopt on a cycle.
[[nodiscard]] inline std::optional<std::vector<NodeId>>
topological_order(const WorkflowGraph &g) {
  std::vector<std::size_t> indeg(g.node_count(), 0);
  for (const auto &e : g.edges())
    ++indeg[g.index_of(e.target)];
  std::set<std::size_t> ready; // node indices follow id order
  for (std::size_t i = 0; i < indeg.size(); ++i)
    if (indeg[i] == 0)
      ready.insert(i);
  std::vector<NodeId> order;
  while (!ready.empty()) {
    auto i = *ready.begin();
    ready.erase(ready.begin());
    const auto &id = g.nodes()[i].id;
    order.push_back(id);
    for (auto ei : g.out_edges(id)) {
      auto t = g.index_of(g.edges()[ei].target);
      if (--indeg[t] == 0)
        ready.insert(t);
    }
  }
  if (order.size() != g.node_count())
    return std::nullopt;
  return order;
}

// Longest-path depth from any source, for acyclic graphs.
[[nodiscard]] inline std::map<NodeId, int> depths(const WorkflowGraph &g) {
  std::map<NodeId, int> d;
  auto order = topological_order(g);
  if (!order)
    return d;
  for (const auto &id : *order) {
    int best = 0;
    for (auto ei : g.in_edges(id))
      best = std::max(best, d[g.edges()[ei].source] + 1);
    d[id] = best;
  }
  return d;
}

} // namespace mermaidflow
