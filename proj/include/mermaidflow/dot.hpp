#pragma once

// Graphviz export. Node colors come from the registry's classDef styles so
// the picture matches the Mermaid rendering; every edge is labeled with its
// explicit label or, failing that, the port it binds to.

#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mermaidflow/graph.hpp"
#include "mermaidflow/validator.hpp"

namespace mermaidflow {

namespace detail {

inline std::string dot_quote(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\')
      out.push_back('\\');
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out.push_back(c);
  }
  return out + "\"";
}

struct DotStyle {
  std::string fill = "#ffffff";
  std::string stroke = "#444444";
  std::string width = "1";
  bool dashed = false;
};

// fill:#..,stroke:#..,stroke-width:2px,stroke-dasharray:2 2;
inline DotStyle dot_style(std::string_view css) {
  DotStyle s;
  for (auto part : split(css, ',')) {
    if (!part.empty() && part.back() == ';')
      part.pop_back();
    auto colon = part.find(':');
    if (colon == std::string::npos)
      continue;
    auto key = trim(part.substr(0, colon));
    auto value = trim(part.substr(colon + 1));
    if (key == "fill")
      s.fill = value;
    else if (key == "stroke")
      s.stroke = value;
    else if (key == "stroke-width")
      s.width = value.substr(0, value.find_first_not_of("0123456789."));
    else if (key == "stroke-dasharray")
      s.dashed = true;
  }
  if (s.width.empty())
    s.width = "1";
  return s;
}

} // namespace detail

struct DotOptions {
  std::string graph_name = "workflow";
  bool header_diagnostics = true; // list validator findings in a leading comment
  // Findings to list; when unset, the soft check is run on the graph.
  std::optional<std::vector<Diagnostic>> diagnostics;
};

[[nodiscard]] inline std::string to_dot(const WorkflowGraph &g, const DotOptions &opts = {}) {
  std::ostringstream os;
  if (opts.header_diagnostics) {
    auto ds = opts.diagnostics ? *opts.diagnostics : soft_check(g);
    if (!ds.empty()) {
      os << "// diagnostics:\n";
      for (const auto &d : ds)
        os << "//   " << render_line(d) << "\n";
    }
  }
  os << "digraph " << detail::dot_quote(opts.graph_name) << " {\n";
  os << "  rankdir=TB;\n";
  os << "  node [fontname=\"Helvetica\", fontsize=11];\n";
  os << "  edge [fontname=\"Helvetica\", fontsize=9];\n";
  for (const auto &n : g.nodes()) {
    const auto *schema = g.schema_of(n);
    auto style = detail::dot_style(schema ? schema->style : std::string_view{});
    std::string label;
    if (is_interface(n)) {
      label = n.display_label.empty() ? n.id.str() : n.display_label;
    } else {
      label = n.id.str() + "\n" +
              (schema ? schema->display_name : (n.kind.empty() ? "?" : n.kind));
      for (const auto &[k, v] : n.attributes)
        label += "\n" + k + ": " + (v.size() > 40 ? v.substr(0, 37) + "..." : v);
    }
    std::string shape = is_interface(n) ? "ellipse" : n.kind == kinds::decision ? "diamond" : "box";
    std::string styles = is_interface(n) ? "filled" : "rounded,filled";
    if (style.dashed)
      styles += ",dashed";
    os << "  " << detail::dot_quote(n.id.str()) << " [label=" << detail::dot_quote(label)
       << ", shape=" << shape << ", style=" << detail::dot_quote(styles)
       << ", fillcolor=" << detail::dot_quote(style.fill)
       << ", color=" << detail::dot_quote(style.stroke) << ", penwidth=" << style.width << "];\n";
  }
  for (const auto &e : g.edges()) {
    std::string label = e.label;
    bool implied = false;
    if (label.empty()) {
      const auto *target = g.find(e.target);
      const auto *schema = target ? g.schema_of(*target) : nullptr;
      if (const auto *p = schema ? bind_port(*schema, e.label) : nullptr) {
        label = p->label;
        implied = true;
      }
    }
    os << "  " << detail::dot_quote(e.source.str()) << " -> " << detail::dot_quote(e.target.str())
       << " [label=" << detail::dot_quote(label);
    if (implied)
      os << ", fontcolor=\"#888888\"";
    os << "];\n";
  }
  os << "}\n";
  return os.str();
}

} // namespace mermaidflow
