#include <random>

#include "mermaidflow/mermaid.hpp"
#include "test_support.hpp"

namespace mermaidflow {
namespace {

using testing::corpus_graph;
using testing::corpus_names;
using testing::corpus_text;
using testing::make_edge;
using testing::make_node;

std::vector<Diagnostic> errors_of(const std::vector<Diagnostic> &ds) {
  std::vector<Diagnostic> out;
  for (const auto &d : ds)
    if (is_error(d))
      out.push_back(d);
  return out;
}

TEST(HardCheck, CorpusPasses) {
  for (const auto &name : corpus_names()) {
    auto r = hard_check(corpus_text(name));
    EXPECT_TRUE(r.pass) << name << "\n" << render_lines(r.diagnostics);
  }
  EXPECT_TRUE(hard_check(corpus_text("minimal")).pass);
}

TEST(HardCheck, MissingTargetIsLocated) {
  auto r = hard_check("flowchart TD\n  A -->\n");
  ASSERT_FALSE(r.pass);
  ASSERT_EQ(r.diagnostics.size(), 1u);
  EXPECT_EQ(r.diagnostics[0].rule, Rule::SYNTAX);
  ASSERT_TRUE(r.diagnostics[0].span);
  EXPECT_EQ(r.diagnostics[0].span->line, 2);
  EXPECT_NE(r.diagnostics[0].message.find("missing its target"), std::string::npos);
}

TEST(HardCheck, RejectsBadHeaderAndUnsupportedSyntax) {
  EXPECT_TRUE(hard_check("graph LR\n  A --> B\n").pass);
  EXPECT_FALSE(hard_check("flowchart XY\n  A --> B\n").pass);
  EXPECT_FALSE(hard_check("A --> B\n").pass);
  EXPECT_FALSE(hard_check("").pass);
  EXPECT_FALSE(hard_check("flowchart TD\n  subgraph X\n  end\n").pass);
  EXPECT_FALSE(hard_check("flowchart TD\n  A[\"unterminated\n").pass);
}

TEST(HardCheck, PromptBlockErrors) {
  EXPECT_FALSE(hard_check("flowchart TD\n  A --> B\n<prompt>\nX=\"a\\qb\"\n</prompt>\n").pass);
  EXPECT_FALSE(hard_check("flowchart TD\n  A --> B\n<prompt>\nX=\"abc\n</prompt>\n").pass);
  EXPECT_FALSE(
      hard_check("flowchart TD\n  A --> B\n<prompt>\nX=\"a\"\nX=\"b\"\n</prompt>\n").pass);
  EXPECT_FALSE(hard_check("flowchart TD\n  A --> B\n<prompt>\nX=\"a\"\n").pass);
  EXPECT_FALSE(hard_check("flowchart TD\n<prompt>\n</prompt>\n  A --> B\n").pass);
  EXPECT_TRUE(hard_check("flowchart TD\n  A --> B\n<prompt>\nX=\"a\\n\\\"b\\\"\"\n</prompt>\n").pass);
}

TEST(HardCheck, ConflictingClassAssignment) {
  auto r = hard_check("flowchart TD\n  A --> B\n  class A CustomOp\n  class A TestOp\n");
  EXPECT_FALSE(r.pass);
}

TEST(Parse, PromptEscapesDecode) {
  auto doc = parse_workflow("flowchart TD\n  A --> B\n<prompt>\nX=\"a\\n\\t\\\"q\\\"\\\\\"\n</prompt>\n");
  ASSERT_TRUE(doc.prompt_block);
  ASSERT_EQ(doc.prompt_block->entries.size(), 1u);
  EXPECT_EQ(doc.prompt_block->entries[0].second, "a\n\t\"q\"\\");
}

TEST(Parse, AttributesAndDisplay) {
  auto g = corpus_graph("gsm8k_round16");
  const auto &p1 = g.node(NodeId("P1"));
  EXPECT_EQ(p1.kind, kinds::programmer);
  EXPECT_EQ(p1.attributes.at("analysis"), "Calculate step by step");
  EXPECT_EQ(g.node(NodeId("C")).attributes.at("role"), "simple_solver_1");
  // The misspelled ensemble class resolves to the canonical kind.
  EXPECT_EQ(g.node(NodeId("ENSEMBLE")).kind, kinds::ensemble);
  EXPECT_EQ(g.node(NodeId("RETURN")).kind, kinds::interface_kind);
}

TEST(Parse, UnclosedAttributeListIsTolerated) {
  auto g = corpus_graph("math_round16");
  EXPECT_EQ(g.node(NodeId("C5")).attributes.at("role"), "comprehensive_solution");
}

TEST(Parse, DomainInference) {
  EXPECT_EQ(corpus_graph("gsm8k_round16").domain(), Domain::math);
  EXPECT_EQ(corpus_graph("math_round16").domain(), Domain::math);
  EXPECT_EQ(corpus_graph("humaneval_round5").domain(), Domain::code);
  EXPECT_EQ(corpus_graph("mbpp_round8").domain(), Domain::code);
}

TEST(Parse, CorpusShapes) {
  auto g = corpus_graph("gsm8k_round16");
  EXPECT_EQ(g.node_count(), 10u);
  EXPECT_EQ(g.edge_count(), 14u);
  EXPECT_EQ(g.prompts().size(), 1u);
  auto he = corpus_graph("humaneval_round5");
  EXPECT_EQ(he.node_count(), 9u);
  EXPECT_EQ(he.edge_count(), 13u);
  EXPECT_EQ(he.prompts().size(), 4u);
}

TEST(Lowering, UnclassifiedAndUnknownClass) {
  auto p = read_workflow("flowchart TD\n  PROBLEM([P])\n  X[\"x\"]\n  PROBLEM --> X\n");
  ASSERT_EQ(p.lowered.diagnostics.size(), 1u);
  EXPECT_EQ(p.lowered.diagnostics[0].rule, Rule::W4);
  EXPECT_EQ(p.lowered.diagnostics[0].subject, "X");

  p = read_workflow("flowchart TD\n  A --> B\n  class A BogusOp\n  class B CustomOp\n");
  bool unknown = false;
  for (const auto &d : p.lowered.diagnostics)
    unknown |= d.rule == Rule::W4 && d.message.find("BogusOp") != std::string::npos;
  EXPECT_TRUE(unknown);
  EXPECT_EQ(p.lowered.graph.node(NodeId("A")).kind, "BogusOp");
}

TEST(Lowering, AssignmentToUndeclaredNode) {
  auto p = read_workflow("flowchart TD\n  A --> B\n  class Z CustomOp\n");
  bool found = false;
  for (const auto &d : p.lowered.diagnostics)
    found |= d.rule == Rule::STRUCT && d.subject == "Z";
  EXPECT_TRUE(found);
}

TEST(Serialize, CorpusRoundTrip) {
  for (const auto &name : corpus_names()) {
    auto g = corpus_graph(name);
    auto text = serialize_workflow(g);
    auto back = read_workflow(text);
    EXPECT_TRUE(errors_of(back.document.diagnostics).empty()) << name;
    EXPECT_EQ(back.lowered.graph, g) << name << "\n" << text;
    // Canonical text is a fixed point.
    EXPECT_EQ(serialize_workflow(back.lowered.graph), text) << name;
  }
}

TEST(Serialize, CanonicalLayout) {
  auto text = serialize_workflow(testing::minimal_graph());
  EXPECT_EQ(text.rfind("flowchart TD\n  PROBLEM([PROBLEM])\n  RETURN([RETURN])\n", 0), 0u);
  EXPECT_NE(text.find("  class PROBLEM Interface\n  class RETURN Interface\n  PROBLEM --> RETURN\n"),
            std::string::npos);
  EXPECT_EQ(text.find("<prompt>"), std::string::npos);
}

TEST(Serialize, EntryFirstExitLast) {
  auto text = serialize_workflow(corpus_graph("humaneval_round5"));
  auto problem = text.find("  PROBLEM(");
  auto entry_point = text.find("  ENTRY_POINT(");
  auto c1 = text.find("  C1[");
  auto ret = text.find("  RETURN(");
  EXPECT_LT(problem, entry_point);
  EXPECT_LT(entry_point, c1);
  EXPECT_LT(c1, ret);
}

TEST(Serialize, QuotingSurvivesRoundTrip) {
  auto g = build_graph(
      {make_node("PROBLEM", kinds::interface_kind), make_node("RETURN", kinds::interface_kind),
       make_node("A", kinds::custom, {{"role", "it's \"quoted\", (with) parens: yes"}})},
      {make_edge("PROBLEM", "A", "input"), make_edge("A", "RETURN")}, {}, Domain::math);
  PromptTable prompts;
  prompts.set("P_X", "line1\nline2 \"q\" back\\slash\ttab");
  g = rebuild(g, g.nodes(), g.edges(), prompts);
  auto text = serialize_workflow(g);
  auto back = read_workflow(text);
  EXPECT_TRUE(errors_of(back.document.diagnostics).empty())
      << text << render_lines(back.document.diagnostics);
  EXPECT_EQ(back.lowered.graph, g) << text;
}

// Random graphs over the default registry survive serialize -> parse.
TEST(Serialize, RandomGraphRoundTrip) {
  std::mt19937_64 rng(7);
  const std::vector<std::string> kinds_pool{"CustomOp", "ProgrammerOp", "ScEnsembleOp",
                                            "Interface"};
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Node> nodes;
    int n = 1 + static_cast<int>(rng() % 7);
    for (int i = 0; i < n; ++i) {
      auto kind = kinds_pool[rng() % kinds_pool.size()];
      std::map<std::string, std::string> attrs;
      if (kind == "CustomOp")
        attrs["role"] = rng() % 2 ? "solver_" + std::to_string(i) : "Free text, with 'quotes'";
      nodes.push_back(make_node("N" + std::to_string(i), kind, attrs));
    }
    std::vector<Edge> edges;
    int m = static_cast<int>(rng() % 9);
    for (int j = 0; j < m; ++j) {
      auto a = "N" + std::to_string(rng() % n);
      auto b = "N" + std::to_string(rng() % n);
      edges.push_back(make_edge(a, b, rng() % 3 == 0 ? "input" : ""));
    }
    auto g = build_graph(nodes, edges, {}, Domain::math);
    auto text = serialize_workflow(g);
    auto back = read_workflow(text, default_registry(), Domain::math);
    ASSERT_TRUE(errors_of(back.document.diagnostics).empty()) << text;
    ASSERT_EQ(back.lowered.graph, g) << text;
  }
}

} // namespace
} // namespace mermaidflow
