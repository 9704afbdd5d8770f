#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "mermaidflow/mermaid.hpp"

namespace mermaidflow {
// Readable failure output for graph comparisons.
inline void PrintTo(const WorkflowGraph &g, std::ostream *os) {
  *os << "\n" << serialize_workflow(g);
}
} // namespace mermaidflow

namespace mermaidflow::testing {

inline std::filesystem::path source_dir() { return MERMAIDFLOW_SOURCE_DIR; }

inline std::string read_file(const std::filesystem::path &p) {
  std::ifstream in(p, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string corpus_text(const std::string &name) {
  return read_file(source_dir() / "corpus" / (name + ".mmd"));
}

inline const std::vector<std::string> &corpus_names() {
  static const std::vector<std::string> names{"gsm8k_round16", "math_round16",
                                              "humaneval_round5", "mbpp_round8"};
  return names;
}

inline WorkflowGraph corpus_graph(const std::string &name) {
  auto parsed = read_workflow(corpus_text(name));
  return parsed.lowered.graph;
}

inline Node make_node(const std::string &id, std::string_view kind,
                      std::map<std::string, std::string> attrs = {}) {
  return Node{NodeId(id), std::string(kind), std::move(attrs), {}};
}

inline Edge make_edge(const std::string &a, const std::string &b,
                      std::string label = {}) {
  return Edge{NodeId(a), NodeId(b), std::move(label)};
}

inline WorkflowGraph minimal_graph() {
  return build_graph({make_node("PROBLEM", kinds::interface_kind),
                      make_node("RETURN", kinds::interface_kind)},
                     {make_edge("PROBLEM", "RETURN")}, {}, Domain::math);
}

} // namespace mermaidflow::testing
