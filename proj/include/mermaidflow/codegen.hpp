#pragma once

// Deterministic program emission: graph -> ProgramIR -> text through
// `{{hole}}` templates, and a differ that re-extracts the call graph from
// program text and compares it with the source graph.
//
// Template file: sections introduced by a line `[[name]]`; the section body is
// every following line up to the next header, without the final newline.
// Sections: program, member, prompt_module, prompt_entry, branch, and per kind
// <Kind>.member, <Kind>.class, <Kind>.call, <Kind>.output.
//
// Holes: {{name}}; {{a|b|=text}} tries a, then b, then the literal "text".
// In call templates: binding, member, one hole per input port label, prompt
// (prompt reference or string literal) and attr.<key> (string literal).

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mermaidflow/graph.hpp"
#include "mermaidflow/validator.hpp"

namespace mermaidflow {

class CodegenError : public std::runtime_error {
 public:
  explicit CodegenError(const std::string &msg, std::vector<Diagnostic> ds = {})
      : std::runtime_error(msg), diagnostics(std::move(ds)) {}
  std::vector<Diagnostic> diagnostics;
};

// ---------------------------------------------------------------------------
// IR

struct ValueRef {
  enum class Source { payload, node };
  Source source = Source::payload;
  std::string name; // payload parameter or node id
  bool operator==(const ValueRef &o) const { return source == o.source && name == o.name; }
};

struct Argument {
  std::string port;
  std::vector<ValueRef> values; // one per in-edge, in edge order
  bool list = false;            // rendered as a list even with one value
};

struct Call {
  NodeId node;
  std::string kind;
  std::string binding;
  std::vector<Argument> args;
  std::map<std::string, std::string> attributes;
  std::optional<std::string> prompt_ref; // resolved prompt name
  std::string prompt_literal;            // otherwise the raw attribute value
  bool repair = false;                   // fail arm of a test branch
};

struct TestBranch {
  NodeId test;
  NodeId repair;
};

struct ProgramIR {
  Domain domain = Domain::math;
  std::vector<std::string> params;                 // entry payload names
  std::map<NodeId, std::string> payload_of;        // interface id -> parameter
  std::vector<Call> steps;                         // topological, repair last
  std::optional<TestBranch> branch;
  std::optional<NodeId> terminal;                  // when there is no branch
  PromptTable prompts;                             // referenced prompts only

  [[nodiscard]] const Call *step(const NodeId &id) const {
    for (const auto &c : steps)
      if (c.node == id)
        return &c;
    return nullptr;
  }
};

namespace detail {

inline const std::set<std::string> &python_reserved() {
  static const std::set<std::string> words{
      "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class",
      "continue", "def", "del", "elif", "else", "except", "finally", "for", "from", "global",
      "if", "import", "in", "is", "lambda", "nonlocal", "not", "or", "pass", "raise", "return",
      "try", "while", "with", "yield", "self", "operator", "prompt_custom", "result",
      "solutions", "weave", "Literal", "DatasetType", "create_llm_instance"};
  return words;
}

inline std::string snake(std::string_view id) {
  std::string s;
  for (char c : id)
    s.push_back(std::isalnum(static_cast<unsigned char>(c))
                    ? static_cast<char>(std::tolower(static_cast<unsigned char>(c)))
                    : '_');
  if (s.empty() || std::isdigit(static_cast<unsigned char>(s[0])))
    s = "n_" + s;
  return s;
}

} // namespace detail

// Lower-case snake names derived from node ids, made unique in id order.
// Interfaces become call parameters, everything else a result binding.
[[nodiscard]] inline std::map<NodeId, std::string> binding_names(const WorkflowGraph &g) {
  std::map<NodeId, std::string> out;
  std::set<std::string> used;
  for (const auto &n : g.nodes()) {
    auto base = detail::snake(n.id.str());
    auto name = base;
    bool reserved = !is_interface(n) && detail::python_reserved().count(name);
    for (int k = 2; reserved || used.count(name); ++k) {
      name = base + "_" + std::to_string(k);
      reserved = false;
    }
    used.insert(name);
    out[n.id] = name;
  }
  return out;
}

[[nodiscard]] inline ProgramIR lower_to_ir(const WorkflowGraph &g) {
  auto verdict = validate(g);
  if (!verdict.valid())
    throw CodegenError("workflow does not validate; refusing to emit", verdict.diagnostics);
  auto order = topological_order(g);
  if (!order)
    throw CodegenError("workflow has a cycle");
  auto roles = classify_interfaces(g);
  const NodeId exit = roles.exits.front();
  auto names = binding_names(g);

  ProgramIR ir;
  ir.domain = g.domain();
  std::vector<NodeId> payloads = roles.entries;
  payloads.insert(payloads.end(), roles.auxiliary.begin(), roles.auxiliary.end());
  for (const auto &id : payloads) {
    ir.params.push_back(names.at(id));
    ir.payload_of[id] = names.at(id);
  }

  bool executable = false;
  for (auto ei : g.in_edges(exit))
    executable |= !is_interface(g.node(g.edges()[ei].source));
  if (!executable)
    throw CodegenError("exit fed directly by entry; nothing to emit");

  // Test branch: a TestOp with a `fail` out-edge to a repair node that feeds
  // only the exit; the test's other out-edges must go to the exit.
  for (const auto &n : g.nodes()) {
    if (n.kind != kinds::test)
      continue;
    std::vector<NodeId> fail;
    bool other_targets = false;
    for (auto ei : g.out_edges(n.id)) {
      const auto &e = g.edges()[ei];
      if (e.label == "fail")
        fail.push_back(e.target);
      else if (e.target != exit)
        other_targets = true;
    }
    if (fail.empty())
      continue;
    if (ir.branch)
      throw CodegenError("more than one test branch; only a single repair branch is supported");
    if (fail.size() != 1 || other_targets)
      throw CodegenError("test " + n.id.str() + " branches in a shape other than one repair step");
    const auto &repair = g.node(fail.front());
    if (is_interface(repair))
      throw CodegenError("fail arm of " + n.id.str() + " must be a repair step");
    for (auto ei : g.out_edges(repair.id))
      if (g.edges()[ei].target != exit)
        throw CodegenError("repair step " + repair.id.str() +
                           " must feed the exit directly; deeper repair loops are not supported");
    std::set<NodeId> exit_preds;
    for (auto ei : g.in_edges(exit))
      exit_preds.insert(g.edges()[ei].source);
    if (exit_preds != std::set<NodeId>{n.id, repair.id})
      throw CodegenError("a test branch must be the only producer of the result");
    ir.branch = TestBranch{n.id, repair.id};
  }

  for (const auto &id : *order) {
    const auto &n = g.node(id);
    if (is_interface(n))
      continue;
    const auto *schema = g.schema_of(n);
    if (!schema || !schema->output_type)
      throw CodegenError("kind " + n.kind + " has no executable semantics");
    Call c;
    c.node = id;
    c.kind = n.kind;
    c.binding = names.at(id);
    c.attributes = n.attributes;
    for (const auto &port : schema->input_ports) {
      Argument a;
      a.port = port.label;
      a.list = port.min_count > 1;
      for (auto ei : g.in_edges(id)) {
        const auto &e = g.edges()[ei];
        if (bind_port(*schema, e.label) != &port)
          continue;
        const auto &src = g.node(e.source);
        a.values.push_back(is_interface(src)
                               ? ValueRef{ValueRef::Source::payload, names.at(src.id)}
                               : ValueRef{ValueRef::Source::node, src.id.str()});
      }
      if (!a.values.empty())
        c.args.push_back(std::move(a));
    }
    if (!schema->prompt_attribute.empty()) {
      auto it = n.attributes.find(schema->prompt_attribute);
      if (it != n.attributes.end()) {
        if (auto p = resolve_prompt(g.prompts(), it->second)) {
          c.prompt_ref = *p;
          ir.prompts.set(*p, *g.prompts().find(*p));
        } else {
          c.prompt_literal = it->second;
        }
      }
    }
    c.repair = ir.branch && ir.branch->repair == id;
    ir.steps.push_back(std::move(c));
  }
  // The repair step has no executable successors, so it can go last.
  std::stable_partition(ir.steps.begin(), ir.steps.end(),
                        [](const Call &c) { return !c.repair; });

  if (!ir.branch) {
    // Several producers feeding the exit: the last one in step order is the
    // result.
    std::set<NodeId> preds;
    for (auto ei : g.in_edges(exit))
      preds.insert(g.edges()[ei].source);
    for (const auto &c : ir.steps)
      if (preds.count(c.node))
        ir.terminal = c.node;
  }
  return ir;
}

// ---------------------------------------------------------------------------
// Templates

struct EmissionTemplate {
  std::map<std::string, std::string> sections;

  [[nodiscard]] bool has(const std::string &name) const { return sections.count(name) > 0; }
  [[nodiscard]] const std::string &get(const std::string &name) const {
    auto it = sections.find(name);
    if (it == sections.end())
      throw CodegenError("template section [[" + name + "]] is missing");
    return it->second;
  }
  [[nodiscard]] bool covers(std::string_view kind) const {
    std::string k(kind);
    return has(k + ".call") && has(k + ".output") && has(k + ".member") && has(k + ".class");
  }
  // kind -> runtime class and back.
  [[nodiscard]] std::optional<std::string> kind_of_class(std::string_view cls) const {
    for (const auto &[name, body] : sections) {
      auto dot = name.rfind(".class");
      if (dot != std::string::npos && dot + 6 == name.size() && body == cls)
        return name.substr(0, dot);
    }
    return std::nullopt;
  }
  [[nodiscard]] std::optional<std::string> kind_of_member(std::string_view member) const {
    for (const auto &[name, body] : sections) {
      auto dot = name.rfind(".member");
      if (dot != std::string::npos && dot + 7 == name.size() && body == member)
        return name.substr(0, dot);
    }
    return std::nullopt;
  }
};

[[nodiscard]] inline EmissionTemplate parse_templates(std::string_view text) {
  EmissionTemplate t;
  std::string current;
  std::string body;
  bool open = false;
  auto flush = [&] {
    if (!open)
      return;
    if (!body.empty() && body.back() == '\n')
      body.pop_back();
    t.sections[current] = body;
    body.clear();
  };
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    auto line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
    if (line.size() >= 4 && line.substr(0, 2) == "[[" && line.substr(line.size() - 2) == "]]") {
      flush();
      current = std::string(line.substr(2, line.size() - 4));
      if (t.sections.count(current))
        throw CodegenError("template section [[" + current + "]] defined twice");
      open = true;
    } else if (open) {
      body.append(line);
      body.push_back('\n');
    } else if (!detail::trim(line).empty() && line.front() != '#') {
      throw CodegenError("template text before the first section: " + std::string(line));
    }
    if (nl == std::string_view::npos)
      break;
    pos = nl + 1;
  }
  flush();
  for (const char *required : {"program", "member", "prompt_module", "prompt_entry", "branch"})
    if (!t.has(required))
      throw CodegenError(std::string("template section [[") + required + "]] is missing");
  return t;
}

inline constexpr std::string_view kDefaultTemplates = R"([[program]]
from typing import Literal
import workflow_runtime.operator as operator
import {{prompt_module}} as prompt_custom
from workflow_runtime.async_llm import create_llm_instance


DatasetType = Literal["HumanEval", "MBPP", "GSM8K", "MATH", "HotpotQA", "DROP"]

class Workflow:
    def __init__(
        self,
        name: str,
        llm_config,
        dataset: DatasetType,
    ) -> None:
        self.name = name
        self.dataset = dataset
        self.llm = create_llm_instance(llm_config)
{{members}}

    async def __call__(self, {{params}}):
        """Implementation of the workflow"""
{{body}}
        return {{terminal}}, self.llm.get_usage_summary()["total_cost"]
[[member]]
        self.{{member}} = operator.{{class}}(self.llm)
[[prompt_module]]
{{prompts}}
[[prompt_entry]]
{{name}} = """{{text}}"""
[[branch]]
{{result}} = {{pass_output}}
if not {{test}}['result']:
    {{repair_call}}
    {{retest_call}}
    {{result}} = {{repair_output}} if {{test}}['result'] else {{result}}
[[CustomOp.member]]
custom
[[CustomOp.class]]
Custom
[[CustomOp.call]]
{{binding}} = await self.{{member}}(input={{input}}, instruction={{prompt}}, role={{attr.role}})
[[CustomOp.output]]
{{binding}}['response']
[[ProgrammerOp.member]]
programmer
[[ProgrammerOp.class]]
Programmer
[[ProgrammerOp.call]]
{{binding}} = await self.{{member}}(problem={{problem}}, analysis={{analysis|prompt}})
[[ProgrammerOp.output]]
{{binding}}['output']
[[ScEnsembleOp.member]]
sc_ensemble
[[ScEnsembleOp.class]]
ScEnsemble
[[ScEnsembleOp.call]]
{{binding}} = await self.{{member}}(solutions={{solution}}, problem=problem)
[[ScEnsembleOp.output]]
{{binding}}['response']
[[TestOp.member]]
test
[[TestOp.class]]
Test
[[TestOp.call]]
{{binding}} = await self.{{member}}(problem={{problem|=problem}}, solution={{solution}}, entry_point={{entry_point|=entry_point}})
[[TestOp.output]]
{{binding}}['solution']
[[CustomCodeGenerateOp.member]]
custom_code_generate
[[CustomCodeGenerateOp.class]]
CustomCodeGenerate
[[CustomCodeGenerateOp.call]]
{{binding}} = await self.{{member}}(problem={{input}}, entry_point={{entry_point|=entry_point}}, instruction={{prompt}})
[[CustomCodeGenerateOp.output]]
{{binding}}['response']
[[DecisionOp.member]]
decision
[[DecisionOp.class]]
Decision
[[DecisionOp.call]]
{{binding}} = await self.{{member}}(input={{input}})
[[DecisionOp.output]]
{{binding}}['result']
)";

[[nodiscard]] inline const EmissionTemplate &default_templates() {
  static const EmissionTemplate t = parse_templates(kDefaultTemplates);
  return t;
}

[[nodiscard]] inline EmissionTemplate load_templates(const std::filesystem::path &dir) {
  auto file = dir / "python.tmpl";
  std::ifstream in(file, std::ios::binary);
  if (!in)
    throw CodegenError("cannot read template file " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_templates(ss.str());
}

namespace detail {

using HoleValues = std::map<std::string, std::string>;

// Fill every {{...}} hole; a hole with no value is an error.
inline std::string fill(std::string_view tmpl, const HoleValues &values,
                        const std::string &where) {
  std::string out;
  std::size_t pos = 0;
  while (true) {
    auto open = tmpl.find("{{", pos);
    if (open == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      return out;
    }
    auto close = tmpl.find("}}", open + 2);
    if (close == std::string_view::npos)
      throw CodegenError("unterminated hole in template " + where);
    out.append(tmpl.substr(pos, open - pos));
    auto spec = tmpl.substr(open + 2, close - open - 2);
    bool done = false;
    for (const auto &alt : split(spec, '|')) {
      if (!alt.empty() && alt.front() == '=') {
        out.append(alt.substr(1));
        done = true;
        break;
      }
      if (auto it = values.find(alt); it != values.end()) {
        out.append(it->second);
        done = true;
        break;
      }
    }
    if (!done)
      throw CodegenError("no value for hole {{" + std::string(spec) + "}} in template " + where);
    pos = close + 2;
  }
}

inline std::string py_string(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    switch (c) {
    case '\\': out += "\\\\"; break;
    case '"': out += "\\\""; break;
    case '\n': out += "\\n"; break;
    case '\t': out += "\\t"; break;
    case '\r': out += "\\r"; break;
    default: out.push_back(c);
    }
  }
  return out + "\"";
}

inline std::string py_block(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '\\')
      out += "\\\\";
    else if (c == '"')
      out += "\\\"";
    else
      out.push_back(c);
  }
  return out;
}

inline std::string indent(const std::string &text, const std::string &pad) {
  std::string out;
  for (const auto &line : raw_lines(text))
    out += line.empty() ? "\n" : pad + line + "\n";
  if (!out.empty())
    out.pop_back();
  return out;
}

} // namespace detail

struct EmitOptions {
  std::string prompt_module = "prompt";
};

struct EmittedProgram {
  std::string program;
  std::string prompt_module;
};

[[nodiscard]] inline EmittedProgram emit(const ProgramIR &ir,
                                         const EmissionTemplate &t = default_templates(),
                                         const EmitOptions &opts = {}) {
  std::map<std::string, const Call *> by_node;
  for (const auto &c : ir.steps) {
    if (!t.covers(c.kind))
      throw CodegenError("no template for kind " + c.kind);
    by_node[c.node.str()] = &c;
  }
  auto output_of = [&](const ValueRef &r) -> std::string {
    if (r.source == ValueRef::Source::payload)
      return r.name;
    const auto *c = by_node.at(r.name);
    return detail::fill(t.get(c->kind + ".output"), {{"binding", c->binding}},
                        c->kind + ".output");
  };
  auto holes_for = [&](const Call &c) {
    detail::HoleValues v{{"binding", c.binding}, {"member", t.get(c.kind + ".member")}};
    for (const auto &a : c.args) {
      std::vector<std::string> parts;
      for (const auto &r : a.values)
        parts.push_back(output_of(r));
      std::string joined;
      for (std::size_t i = 0; i < parts.size(); ++i)
        joined += (i ? ", " : "") + parts[i];
      v[a.port] = a.list || parts.size() > 1 ? "[" + joined + "]" : joined;
    }
    if (c.prompt_ref)
      v["prompt"] = "prompt_custom." + *c.prompt_ref;
    else
      v["prompt"] = detail::py_string(c.prompt_literal);
    for (const auto &[k, val] : c.attributes)
      v["attr." + k] = detail::py_string(val);
    return v;
  };
  auto render_call = [&](const Call &c, const detail::HoleValues &extra = {}) {
    auto v = holes_for(c);
    for (const auto &[k, val] : extra)
      v[k] = val;
    return detail::fill(t.get(c.kind + ".call"), v, c.kind + ".call");
  };

  const std::string pad(8, ' ');
  std::string body;
  for (const auto &c : ir.steps)
    if (!c.repair)
      body += pad + render_call(c) + "\n";

  std::string terminal;
  if (ir.branch) {
    const auto &test = *by_node.at(ir.branch->test.str());
    const auto &repair = *by_node.at(ir.branch->repair.str());
    ValueRef test_ref{ValueRef::Source::node, test.node.str()};
    ValueRef repair_ref{ValueRef::Source::node, repair.node.str()};
    // Re-test the repaired solution with the test's other inputs unchanged.
    Call retest = test;
    for (auto &a : retest.args)
      if (a.port == "solution")
        a.values = {repair_ref};
    detail::HoleValues v{{"result", "result"},
                         {"test", test.binding},
                         {"pass_output", output_of(test_ref)},
                         {"repair_call", render_call(repair)},
                         {"retest_call", render_call(retest)},
                         {"repair_output", output_of(repair_ref)}};
    body += detail::indent(detail::fill(t.get("branch"), v, "branch"), pad) + "\n";
    terminal = "result";
  } else {
    terminal = output_of({ValueRef::Source::node, ir.terminal->str()});
  }
  if (!body.empty())
    body.pop_back();

  std::string members;
  std::set<std::string> seen;
  for (const auto &c : ir.steps) {
    if (!seen.insert(c.kind).second)
      continue;
    members += detail::fill(t.get("member"),
                            {{"member", t.get(c.kind + ".member")},
                             {"class", t.get(c.kind + ".class")}},
                            "member") +
               "\n";
  }
  if (!members.empty())
    members.pop_back();

  std::string params;
  for (std::size_t i = 0; i < ir.params.size(); ++i)
    params += (i ? ", " : "") + ir.params[i] + ": str";

  EmittedProgram out;
  out.program = detail::fill(t.get("program"),
                             {{"members", members},
                              {"params", params},
                              {"body", body},
                              {"terminal", terminal},
                              {"prompt_module", opts.prompt_module}},
                             "program") +
                "\n";
  std::string entries;
  for (const auto &[name, text] : ir.prompts.entries())
    entries += (entries.empty() ? "" : "\n\n") +
               detail::fill(t.get("prompt_entry"), {{"name", name}, {"text", detail::py_block(text)}},
                            "prompt_entry");
  out.prompt_module =
      entries.empty() ? std::string()
                      : detail::fill(t.get("prompt_module"), {{"prompts", entries}}, "prompt_module") +
                            "\n";
  return out;
}

[[nodiscard]] inline EmittedProgram emit_workflow(const WorkflowGraph &g,
                                                  const EmissionTemplate &t = default_templates(),
                                                  const EmitOptions &opts = {}) {
  return emit(lower_to_ir(g), t, opts);
}

// ---------------------------------------------------------------------------
// Call-graph extraction

struct ExtractedCall {
  std::string binding;
  std::string member;
  std::string cls;                                       // runtime class, if declared
  std::map<std::string, std::vector<std::string>> args;  // keyword -> references
  int line = 0;
  bool conditional = false;
  std::optional<std::size_t> redefines; // earlier call this one re-runs
};

// References are "#<call index>" or "$<parameter>".
struct CallGraph {
  std::vector<std::string> params;
  std::map<std::string, std::string> member_class;
  std::vector<ExtractedCall> calls;
  std::vector<std::string> terminal;

  // Re-runs (a call inside a conditional that rebinds an earlier call of the
  // same class) are folded into the call they re-run.
  [[nodiscard]] std::size_t origin(std::size_t i) const {
    while (calls[i].redefines)
      i = *calls[i].redefines;
    return i;
  }
};

namespace detail {

struct LogicalLine {
  std::string text;
  int indent = 0;
  int line = 0;
};

// Joins physical lines while brackets are open; drops comments and
// docstrings.
inline std::vector<LogicalLine> logical_lines(std::string_view text) {
  std::vector<LogicalLine> out;
  auto lines = raw_lines(text);
  int depth = 0;
  bool in_doc = false;
  LogicalLine cur;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string raw = lines[i];
    if (!raw.empty() && raw.back() == '\r')
      raw.pop_back();
    auto t = trim(raw);
    if (in_doc) {
      if (t.find("\"\"\"") != std::string::npos)
        in_doc = false;
      continue;
    }
    if (depth == 0 && t.rfind("\"\"\"", 0) == 0) {
      if (t.size() < 6 || t.find("\"\"\"", 3) == std::string::npos)
        in_doc = true;
      continue;
    }
    // Strip a trailing comment outside strings, tracking bracket depth.
    std::string kept;
    char quote = 0;
    for (std::size_t k = 0; k < raw.size(); ++k) {
      char c = raw[k];
      if (quote) {
        kept.push_back(c);
        if (c == '\\' && k + 1 < raw.size())
          kept.push_back(raw[++k]);
        else if (c == quote)
          quote = 0;
        continue;
      }
      if (c == '#')
        break;
      if (c == '\'' || c == '"')
        quote = c;
      else if (c == '(' || c == '[' || c == '{')
        ++depth;
      else if (c == ')' || c == ']' || c == '}')
        depth = std::max(0, depth - 1);
      kept.push_back(c);
    }
    if (cur.text.empty()) {
      if (trim(kept).empty())
        continue;
      cur.indent = static_cast<int>(kept.find_first_not_of(' '));
      cur.line = static_cast<int>(i) + 1;
      cur.text = trim(kept);
    } else {
      cur.text += " " + trim(kept);
    }
    if (depth == 0) {
      out.push_back(cur);
      cur = LogicalLine{};
    }
  }
  if (!cur.text.empty())
    out.push_back(cur);
  return out;
}

// Splits at top-level commas.
inline std::vector<std::string> split_args(std::string_view s) {
  std::vector<std::string> out;
  int depth = 0;
  char quote = 0;
  std::string cur;
  for (std::size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    if (quote) {
      cur.push_back(c);
      if (c == '\\' && i + 1 < s.size())
        cur.push_back(s[++i]);
      else if (c == quote)
        quote = 0;
      continue;
    }
    if (c == '\'' || c == '"')
      quote = c;
    else if (c == '(' || c == '[' || c == '{')
      ++depth;
    else if (c == ')' || c == ']' || c == '}')
      --depth;
    if (c == ',' && depth == 0) {
      out.push_back(trim(cur));
      cur.clear();
      continue;
    }
    cur.push_back(c);
  }
  if (!trim(cur).empty())
    out.push_back(trim(cur));
  return out;
}

// Identifiers referenced by an expression, skipping strings and attribute
// names.
inline std::vector<std::string> identifiers(std::string_view s) {
  std::vector<std::string> out;
  char quote = 0;
  for (std::size_t i = 0; i < s.size();) {
    char c = s[i];
    if (quote) {
      if (c == '\\')
        ++i;
      else if (c == quote)
        quote = 0;
      ++i;
      continue;
    }
    if (c == '\'' || c == '"') {
      quote = c;
      ++i;
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      auto j = i;
      while (j < s.size() && (std::isalnum(static_cast<unsigned char>(s[j])) || s[j] == '_'))
        ++j;
      std::size_t b = i;
      while (b > 0 && s[b - 1] == ' ')
        --b;
      if (b == 0 || s[b - 1] != '.')
        out.emplace_back(s.substr(i, j - i));
      i = j;
      continue;
    }
    ++i;
  }
  return out;
}

inline bool is_name(std::string_view s) {
  return !s.empty() && is_identifier(s) && s.find('-') == std::string_view::npos;
}

} // namespace detail

[[nodiscard]] inline CallGraph extract_call_graph(std::string_view program) {
  CallGraph cg;
  // name -> references it stands for
  std::map<std::string, std::vector<std::string>> names;
  auto refs_of = [&](std::string_view expr) {
    std::vector<std::string> out;
    for (const auto &id : detail::identifiers(expr)) {
      auto it = names.find(id);
      if (it != names.end())
        out.insert(out.end(), it->second.begin(), it->second.end());
    }
    return out;
  };
  int body_indent = -1;
  bool in_call = false;
  for (const auto &ll : detail::logical_lines(program)) {
    const auto &s = ll.text;
    if (s.rfind("async def __call__(", 0) == 0 || s.rfind("def __call__(", 0) == 0) {
      auto open = s.find('('), close = s.rfind(')');
      for (const auto &p : detail::split_args(s.substr(open + 1, close - open - 1))) {
        auto name = detail::trim(p.substr(0, p.find_first_of(":=")));
        if (name == "self" || name.empty())
          continue;
        cg.params.push_back(name);
        names[name] = {"$" + name};
      }
      in_call = true;
      body_indent = -1;
      continue;
    }
    if (s.rfind("def ", 0) == 0 || s.rfind("class ", 0) == 0 || s.rfind("async def ", 0) == 0) {
      in_call = false;
      continue;
    }
    // self.member = operator.Class(...)
    if (s.rfind("self.", 0) == 0) {
      auto eq = s.find('=');
      auto op = s.find("operator.", eq == std::string::npos ? 0 : eq);
      if (eq != std::string::npos && op != std::string::npos) {
        auto member = detail::trim(s.substr(5, eq - 5));
        auto paren = s.find('(', op);
        cg.member_class[member] = detail::trim(s.substr(op + 9, paren - op - 9));
      }
      continue;
    }
    if (!in_call)
      continue;
    if (body_indent < 0)
      body_indent = ll.indent;
    if (s.rfind("return", 0) == 0 && (s.size() == 6 || s[6] == ' ' || s[6] == '(')) {
      auto parts = detail::split_args(s.substr(6));
      if (!parts.empty())
        cg.terminal = refs_of(parts.front());
      continue;
    }
    auto eq = s.find(" = ");
    if (eq == std::string::npos)
      continue;
    auto lhs = detail::trim(s.substr(0, eq));
    auto rhs = detail::trim(s.substr(eq + 3));
    if (!detail::is_name(lhs))
      continue;
    const std::string await_self = "await self.";
    if (rhs.rfind(await_self, 0) == 0) {
      auto paren = rhs.find('(');
      auto close = rhs.rfind(')');
      if (paren == std::string::npos || close == std::string::npos || close < paren)
        continue;
      ExtractedCall c;
      c.binding = lhs;
      c.member = detail::trim(rhs.substr(await_self.size(), paren - await_self.size()));
      if (auto it = cg.member_class.find(c.member); it != cg.member_class.end())
        c.cls = it->second;
      c.line = ll.line;
      c.conditional = ll.indent > body_indent;
      for (const auto &arg : detail::split_args(rhs.substr(paren + 1, close - paren - 1))) {
        auto k = arg.find('=');
        if (k == std::string::npos || (k + 1 < arg.size() && arg[k + 1] == '='))
          continue;
        c.args[detail::trim(arg.substr(0, k))] = refs_of(arg.substr(k + 1));
      }
      if (c.conditional) {
        auto it = names.find(lhs);
        if (it != names.end() && it->second.size() == 1 && it->second[0][0] == '#') {
          auto prev = static_cast<std::size_t>(std::stoul(it->second[0].substr(1)));
          if (cg.calls[prev].member == c.member || (!c.cls.empty() && cg.calls[prev].cls == c.cls))
            c.redefines = prev;
        }
      }
      names[lhs] = {"#" + std::to_string(cg.calls.size())};
      cg.calls.push_back(std::move(c));
      continue;
    }
    // Plain alias; a self-reference keeps the earlier meaning as well.
    names[lhs] = refs_of(rhs);
  }
  return cg;
}

// ---------------------------------------------------------------------------
// Structural diff

struct DiffIssue {
  std::string kind; // missing_call, orphan_call, kind_mismatch, argument_mismatch,
                    // arity_mismatch, terminal_mismatch
  std::string node;
  std::string call;
  std::string detail;
};

struct DiffReport {
  std::vector<DiffIssue> issues;
  bool renamed = false; // bindings matched by structure rather than by name
  [[nodiscard]] bool empty() const noexcept { return issues.empty(); }
};

[[nodiscard]] inline nlohmann::json to_json(const DiffReport &r) {
  nlohmann::json issues = nlohmann::json::array();
  for (const auto &i : r.issues)
    issues.push_back({{"kind", i.kind}, {"node", i.node}, {"call", i.call}, {"detail", i.detail}});
  return {{"issues", issues}, {"matched_by_structure", r.renamed}};
}

namespace detail {

// keyword -> port label, read from a call template.
inline std::map<std::string, std::string> keyword_ports(const std::string &call_tmpl,
                                                        const NodeTypeSchema &schema) {
  std::map<std::string, std::string> out;
  std::size_t pos = 0;
  while ((pos = call_tmpl.find("={{", pos)) != std::string::npos) {
    auto k = pos;
    while (k > 0 && (std::isalnum(static_cast<unsigned char>(call_tmpl[k - 1])) ||
                     call_tmpl[k - 1] == '_'))
      --k;
    auto close = call_tmpl.find("}}", pos);
    auto spec = call_tmpl.substr(pos + 3, close - pos - 3);
    auto first = spec.substr(0, spec.find('|'));
    if (schema.port(first))
      out[call_tmpl.substr(k, pos - k)] = first;
    pos = close;
  }
  return out;
}

class Differ {
 public:
  Differ(const WorkflowGraph &g, const CallGraph &cg, const EmissionTemplate &t)
      : g_(g), cg_(cg), t_(t), names_(binding_names(g)) {
    auto order = topological_order(g);
    for (const auto &id : *order)
      if (!is_interface(g.node(id)))
        order_.push_back(id);
    for (std::size_t i = 0; i < cg.calls.size(); ++i)
      if (!cg.calls[i].redefines)
        primary_.push_back(i);
    auto roles = classify_interfaces(g);
    exit_ = roles.exits.front();
  }

  DiffReport run() {
    std::map<NodeId, std::size_t> by_name;
    for (const auto &id : order_)
      for (auto i : primary_)
        if (cg_.calls[i].binding == names_.at(id))
          by_name[id] = i;
    DiffReport named = report(by_name);
    if (named.empty())
      return named;
    std::map<NodeId, std::size_t> m;
    std::set<std::size_t> used;
    if (primary_.size() == order_.size() && search(0, m, used)) {
      auto r = report(m);
      r.renamed = true;
      if (r.empty())
        return r;
    }
    return named;
  }

 private:
  std::string kind_of_call(const ExtractedCall &c) const {
    if (!c.cls.empty())
      if (auto k = t_.kind_of_class(c.cls))
        return *k;
    if (auto k = t_.kind_of_member(c.member))
      return *k;
    return {};
  }

  std::string ref_name(const std::string &ref, const std::map<std::size_t, NodeId> &inv) const {
    if (ref[0] == '$')
      return ref;
    auto i = cg_.origin(static_cast<std::size_t>(std::stoul(ref.substr(1))));
    auto it = inv.find(i);
    return it == inv.end() ? "?" + cg_.calls[i].binding : it->second.str();
  }

  // Dataflow issues for one node against one call.
  std::vector<DiffIssue> check_node(const NodeId &id, std::size_t ci,
                                    const std::map<std::size_t, NodeId> &inv) const {
    std::vector<DiffIssue> out;
    const auto &n = g_.node(id);
    const auto &call = cg_.calls[ci];
    auto kind = kind_of_call(call);
    if (kind != n.kind) {
      out.push_back({"kind_mismatch", id.str(), call.binding,
                     "call runs " + (kind.empty() ? call.member : kind) + ", node is " + n.kind});
      return out;
    }
    const auto *schema = g_.schema_of(n);
    if (!t_.has(n.kind + ".call"))
      return out;
    auto kw = keyword_ports(t_.get(n.kind + ".call"), *schema);
    std::map<std::string, std::string> port_kw;
    for (const auto &[k, p] : kw)
      port_kw[p] = k;
    for (const auto &port : schema->input_ports) {
      std::vector<std::string> want;
      for (auto ei : g_.in_edges(id)) {
        const auto &e = g_.edges()[ei];
        if (bind_port(*schema, e.label) != &port)
          continue;
        const auto &src = g_.node(e.source);
        want.push_back(is_interface(src) ? "$" + names_.at(src.id) : src.id.str());
      }
      auto k = port_kw.find(port.label);
      if (k == port_kw.end()) {
        if (!want.empty())
          out.push_back({"argument_mismatch", id.str(), call.binding,
                         "template has no argument for port " + port.label});
        continue;
      }
      std::vector<std::string> got;
      if (auto a = call.args.find(k->second); a != call.args.end())
        for (const auto &r : a->second)
          got.push_back(ref_name(r, inv));
      // Unconnected ports may take a template default; only node flow counts.
      if (want.empty()) {
        bool node_flow = std::any_of(got.begin(), got.end(),
                                     [](const std::string &s) { return s[0] != '$'; });
        if (node_flow)
          out.push_back({"argument_mismatch", id.str(), call.binding,
                         "port " + port.label + " has no edges but the call passes results"});
        continue;
      }
      std::sort(want.begin(), want.end());
      std::sort(got.begin(), got.end());
      if (want != got) {
        auto join = [](const std::vector<std::string> &v) {
          std::string s;
          for (const auto &x : v)
            s += (s.empty() ? "" : ",") + x;
          return s;
        };
        bool arity = n.kind == kinds::ensemble && want.size() != got.size();
        out.push_back({arity ? "arity_mismatch" : "argument_mismatch", id.str(), call.binding,
                       "port " + port.label + " expects [" + join(want) + "], call passes [" +
                           join(got) + "]"});
      }
    }
    return out;
  }

  DiffReport report(const std::map<NodeId, std::size_t> &m) const {
    DiffReport r;
    std::map<std::size_t, NodeId> inv;
    for (const auto &[id, i] : m)
      inv[i] = id;
    for (const auto &id : order_)
      if (!m.count(id))
        r.issues.push_back({"missing_call", id.str(), "", "node has no call"});
    for (auto i : primary_)
      if (!inv.count(i))
        r.issues.push_back({"orphan_call", "", cg_.calls[i].binding,
                            "call at line " + std::to_string(cg_.calls[i].line) +
                                " matches no node"});
    for (const auto &[id, i] : m)
      for (auto &issue : check_node(id, i, inv))
        r.issues.push_back(std::move(issue));
    std::set<std::string> want, got;
    for (auto ei : g_.in_edges(exit_)) {
      const auto &src = g_.node(g_.edges()[ei].source);
      want.insert(is_interface(src) ? "$" + names_.at(src.id) : src.id.str());
    }
    for (const auto &ref : cg_.terminal)
      got.insert(ref_name(ref, inv));
    // With several producers and no branch, one of them is returned.
    bool subset = std::includes(want.begin(), want.end(), got.begin(), got.end());
    if (got.empty() || !subset)
      r.issues.push_back({"terminal_mismatch", exit_.str(), "",
                          "returned value does not come from the exit's producers"});
    return r;
  }

  // Assign calls to nodes in topological order; a call fits a node when its
  // class and dataflow agree with the nodes already assigned.
  bool search(std::size_t k, std::map<NodeId, std::size_t> &m, std::set<std::size_t> &used) const {
    if (k == order_.size())
      return true;
    const auto &id = order_[k];
    std::map<std::size_t, NodeId> inv;
    for (const auto &[n, i] : m)
      inv[i] = n;
    for (auto i : primary_) {
      if (used.count(i))
        continue;
      if (!check_node(id, i, inv).empty())
        continue;
      m[id] = i;
      used.insert(i);
      if (search(k + 1, m, used))
        return true;
      m.erase(id);
      used.erase(i);
    }
    return false;
  }

  const WorkflowGraph &g_;
  const CallGraph &cg_;
  const EmissionTemplate &t_;
  std::map<NodeId, std::string> names_;
  std::vector<NodeId> order_;
  std::vector<std::size_t> primary_;
  NodeId exit_;
};

} // namespace detail

// Node/call bijection, dataflow per port, ensemble arity and the returned
// value. Bindings are first matched by the names emission would use; failing
// that, by structure (so listings written with other names can be compared).
[[nodiscard]] inline DiffReport structural_diff(std::string_view program, const WorkflowGraph &g,
                                                const EmissionTemplate &t = default_templates()) {
  if (!validate(g).valid())
    throw CodegenError("structural_diff needs a valid workflow");
  auto cg = extract_call_graph(program);
  return detail::Differ(g, cg, t).run();
}

} // namespace mermaidflow
