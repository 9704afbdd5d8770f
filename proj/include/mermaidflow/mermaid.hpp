#pragma once

// Mermaid flowchart dialect <-> WorkflowGraph.
//
// Supported statements: `flowchart TD` header, node declarations
// (`ID["label"]`, `ID([label])`, `ID{label}`, `ID[label]`, `ID(label)`),
// `classDef NAME styles`, `class ID[,ID...] NAME`, edges (`A --> B`,
// `A --> |label|B`, `A -- text --> B`), `%%` and `#` comment lines, and a
// trailing `<prompt> NAME="..." </prompt>` block with one entry per line.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "mermaidflow/diagnostic.hpp"
#include "mermaidflow/graph.hpp"

namespace mermaidflow {

enum class NodeShape { rect, quoted_rect, stadium, round, rhombus };

struct NodeDecl {
  NodeId id;
  NodeShape shape = NodeShape::rect;
  std::string display;
  std::map<std::string, std::string> attributes;
  SourceSpan span;
};

struct ClassDefStmt {
  std::string name;
  std::string styles; // verbatim
  SourceSpan span;
};

struct ClassAssignStmt {
  std::vector<NodeId> ids;
  std::string class_name;
  SourceSpan span;
};

struct EdgeStmt {
  NodeId source;
  NodeId target;
  std::string label;
  SourceSpan span;
};

struct CommentStmt {
  std::string text;
  SourceSpan span;
};

using Statement =
    std::variant<NodeDecl, ClassDefStmt, ClassAssignStmt, EdgeStmt, CommentStmt>;

struct PromptBlock {
  std::vector<std::pair<std::string, std::string>> entries; // in file order
  SourceSpan span;
};

struct MermaidDocument {
  std::string direction; // "TD" expected
  std::vector<Statement> statements;
  std::optional<PromptBlock> prompt_block;
  std::vector<Diagnostic> diagnostics; // syntax level
};

namespace detail {

inline Diagnostic syntax_error(std::string msg, int line, int col, int len) {
  return Diagnostic{Rule::SYNTAX, Severity::error, std::move(msg), {},
                    SourceSpan{line, col, len}};
}

inline std::string decode_entities(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    if (s.compare(i, 6, "#quot;") == 0) {
      out += '"';
      i += 6;
    } else if (s.compare(i, 4, "#39;") == 0) {
      out += '\'';
      i += 4;
    } else {
      out += s[i++];
    }
  }
  return out;
}

inline std::string encode_entities(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '"')
      out += "#quot;";
    else
      out += c;
  }
  return out;
}

inline std::size_t scan_identifier(std::string_view s, std::size_t pos) {
  if (pos >= s.size())
    return pos;
  auto c = static_cast<unsigned char>(s[pos]);
  if (!std::isalpha(c) && c != '_')
    return pos;
  ++pos;
  while (pos < s.size()) {
    auto d = static_cast<unsigned char>(s[pos]);
    if (!std::isalnum(d) && d != '_')
      break;
    ++pos;
  }
  return pos;
}

inline std::size_t skip_ws(std::string_view s, std::size_t pos) {
  while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t'))
    ++pos;
  return pos;
}

// Removes a trailing `%%` comment that is outside quotes.
inline std::string_view strip_trailing_comment(std::string_view s) {
  bool in_quote = false;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) {
    if (s[i] == '"')
      in_quote = !in_quote;
    else if (!in_quote && s[i] == '%' && s[i + 1] == '%')
      return s.substr(0, i);
  }
  return s;
}

inline std::string_view rtrim_view(std::string_view s) {
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == ';'))
    s.remove_suffix(1);
  return s;
}

struct AttrParse {
  std::map<std::string, std::string> attributes;
  std::optional<std::string> error;
};

// Parses `(key: value, key: 'quoted value')`. A bare value ends at a top-level
// ',' ')' or ']', or at the end of the label; an unclosed list closes at the
// end of the label.
inline AttrParse parse_attribute_list(std::string_view s) {
  AttrParse r;
  std::size_t i = 1; // past '('
  while (true) {
    i = skip_ws(s, i);
    if (i >= s.size() || s[i] == ')' || s[i] == ']')
      break;
    auto kend = scan_identifier(s, i);
    if (kend == i) {
      r.error = "expected attribute name in '" + std::string(s) + "'";
      return r;
    }
    std::string key(s.substr(i, kend - i));
    i = skip_ws(s, kend);
    if (i >= s.size() || s[i] != ':') {
      r.error = "expected ':' after attribute '" + key + "'";
      return r;
    }
    i = skip_ws(s, i + 1);
    std::string value;
    if (i < s.size() && (s[i] == '\'' || s[i] == '"')) {
      char q = s[i];
      auto close = s.find(q, i + 1);
      if (close == std::string_view::npos) {
        r.error = "unterminated string in attribute '" + key + "'";
        return r;
      }
      value = std::string(s.substr(i + 1, close - i - 1));
      i = skip_ws(s, close + 1);
    } else {
      int depth = 0;
      auto start = i;
      for (; i < s.size(); ++i) {
        char c = s[i];
        if (c == '(')
          ++depth;
        else if (c == ')' && depth > 0)
          --depth;
        else if (depth == 0 && (c == ',' || c == ')' || c == ']'))
          break;
      }
      value = trim(s.substr(start, i - start));
    }
    if (r.attributes.count(key)) {
      r.error = "duplicate attribute '" + key + "'";
      return r;
    }
    r.attributes.emplace(std::move(key), std::move(value));
    if (i < s.size() && s[i] == ',') {
      ++i;
      continue;
    }
    if (i >= s.size() || s[i] == ')' || s[i] == ']')
      break;
    r.error = "unexpected text after attribute value in '" + std::string(s) + "'";
    return r;
  }
  return r;
}

inline std::string escape_prompt(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
    case '\\':
      out += "\\\\";
      break;
    case '"':
      out += "\\\"";
      break;
    case '\n':
      out += "\\n";
      break;
    case '\t':
      out += "\\t";
      break;
    case '\r':
      out += "\\r";
      break;
    default:
      out += c;
    }
  }
  return out;
}

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  MermaidDocument run() {
    std::size_t pos = 0;
    int lineno = 0;
    while (pos <= text_.size()) {
      auto nl = text_.find('\n', pos);
      auto raw = text_.substr(pos, nl == std::string_view::npos ? std::string_view::npos
                                                                : nl - pos);
      ++lineno;
      if (!raw.empty() && raw.back() == '\r')
        raw.remove_suffix(1);
      line(raw, lineno);
      if (nl == std::string_view::npos)
        break;
      pos = nl + 1;
    }
    if (in_prompt_)
      doc_.diagnostics.push_back(syntax_error("unterminated <prompt> block",
                                              prompt_line_, 1, 8));
    if (!saw_header_)
      doc_.diagnostics.push_back(
          syntax_error("missing 'flowchart TD' header", 1, 1, 0));
    return std::move(doc_);
  }

 private:
  void line(std::string_view raw, int lineno) {
    auto indent = raw.find_first_not_of(" \t");
    if (indent == std::string_view::npos)
      return;
    auto body = raw.substr(indent);
    int col = static_cast<int>(indent) + 1;
    while (!body.empty() && (body.back() == ' ' || body.back() == '\t'))
      body.remove_suffix(1);

    if (in_prompt_) {
      prompt_line(body, lineno, col);
      return;
    }
    if (after_prompt_) {
      if (body.rfind("%%", 0) == 0 || body.front() == '#')
        return;
      doc_.diagnostics.push_back(syntax_error(
          "statement after <prompt> block", lineno, col, static_cast<int>(body.size())));
      return;
    }
    if (body.rfind("%%", 0) == 0 || body.front() == '#') {
      doc_.statements.emplace_back(
          CommentStmt{std::string(body), SourceSpan{lineno, col, static_cast<int>(body.size())}});
      return;
    }
    if (body.rfind("<prompt>", 0) == 0) {
      in_prompt_ = true;
      prompt_line_ = lineno;
      doc_.prompt_block = PromptBlock{{}, SourceSpan{lineno, col, 8}};
      auto rest = trim(body.substr(8));
      if (!rest.empty())
        prompt_line(rest, lineno, col + 8);
      return;
    }
    SourceSpan span{lineno, col, static_cast<int>(body.size())};
    auto full = strip_trailing_comment(body);
    while (!full.empty() && (full.back() == ' ' || full.back() == '\t'))
      full.remove_suffix(1);
    auto stmt = rtrim_view(full);
    if (!saw_header_) {
      header(stmt, span);
      return;
    }
    auto words = split_ws(stmt);
    if (!words.empty() && (words[0] == "flowchart" || words[0] == "graph")) {
      doc_.diagnostics.push_back(syntax_error("duplicate header", lineno, col, span.length));
      return;
    }
    if (!words.empty() && words[0] == "classDef") {
      class_def(full, span);
      return;
    }
    if (!words.empty() && words[0] == "class") {
      class_assign(words, span);
      return;
    }
    for (const char *kw : {"subgraph", "end", "style", "linkStyle", "click", "direction"}) {
      if (!words.empty() && words[0] == kw) {
        doc_.diagnostics.push_back(syntax_error(
            "unsupported statement '" + words[0] + "'", lineno, col, span.length));
        return;
      }
    }
    if (stmt.find("--") != std::string_view::npos && !starts_with_decl(stmt)) {
      edge(stmt, span);
      return;
    }
    node_decl(stmt, span);
  }

  static bool starts_with_decl(std::string_view stmt) {
    // `ID[...]` where the bracketed label itself contains "--".
    auto idend = scan_identifier(stmt, 0);
    if (idend == 0 || idend >= stmt.size())
      return false;
    char c = stmt[idend];
    return c == '[' || c == '(' || c == '{';
  }

  void header(std::string_view stmt, const SourceSpan &span) {
    auto words = split_ws(stmt);
    if (words.size() == 2 && (words[0] == "flowchart" || words[0] == "graph")) {
      static const std::set<std::string> dirs{"TD", "TB", "BT", "LR", "RL"};
      if (dirs.count(words[1])) {
        doc_.direction = words[1];
        saw_header_ = true;
        return;
      }
      doc_.diagnostics.push_back(syntax_error("unknown direction '" + words[1] + "'",
                                              span.line, span.column, span.length));
      saw_header_ = true;
      return;
    }
    doc_.diagnostics.push_back(syntax_error("expected 'flowchart TD' header",
                                            span.line, span.column, span.length));
    saw_header_ = true;
    doc_.direction = "TD";
    // Still try to make sense of the line as a statement.
    line(stmt, span.line);
  }

  void class_def(std::string_view stmt, const SourceSpan &span) {
    auto rest = trim(stmt.substr(8));
    auto nend = scan_identifier(rest, 0);
    if (nend == 0) {
      doc_.diagnostics.push_back(syntax_error("classDef needs a class name", span.line,
                                              span.column, span.length));
      return;
    }
    ClassDefStmt c{rest.substr(0, nend), trim(std::string_view(rest).substr(nend)), span};
    if (c.styles.empty() || c.styles == ";") {
      doc_.diagnostics.push_back(syntax_error("classDef '" + c.name + "' has no styles",
                                              span.line, span.column, span.length));
      return;
    }
    if (!class_defs_.insert(c.name).second)
      doc_.diagnostics.push_back(Diagnostic{Rule::SYNTAX, Severity::warning,
                                            "duplicate classDef '" + c.name + "'", c.name,
                                            span});
    doc_.statements.emplace_back(std::move(c));
  }

  void class_assign(const std::vector<std::string> &words, const SourceSpan &span) {
    if (words.size() != 3) {
      doc_.diagnostics.push_back(syntax_error("expected 'class ID[,ID...] NAME'",
                                              span.line, span.column, span.length));
      return;
    }
    ClassAssignStmt c;
    c.class_name = words[2];
    c.span = span;
    if (!is_identifier(c.class_name)) {
      doc_.diagnostics.push_back(syntax_error("invalid class name '" + c.class_name + "'",
                                              span.line, span.column, span.length));
      return;
    }
    for (const auto &id : split(words[1], ',')) {
      if (!is_identifier(id)) {
        doc_.diagnostics.push_back(syntax_error("invalid node id '" + id + "'",
                                                span.line, span.column, span.length));
        return;
      }
      c.ids.emplace_back(id);
    }
    for (const auto &id : c.ids) {
      auto [it, fresh] = assigned_.emplace(id, c.class_name);
      if (!fresh && it->second != c.class_name) {
        doc_.diagnostics.push_back(Diagnostic{
            Rule::SYNTAX, Severity::error,
            "conflicting class assignment for " + id.str() + " (" + it->second +
                " vs " + c.class_name + ")",
            id.str(), span});
        return;
      }
    }
    doc_.statements.emplace_back(std::move(c));
  }

  void edge(std::string_view stmt, const SourceSpan &span) {
    auto fail = [&](const std::string &msg) {
      doc_.diagnostics.push_back(
          syntax_error(msg, span.line, span.column, span.length));
    };
    auto send = scan_identifier(stmt, 0);
    if (send == 0)
      return fail("edge source must be a node id");
    EdgeStmt e;
    e.source = NodeId(std::string(stmt.substr(0, send)));
    e.span = span;
    auto i = skip_ws(stmt, send);
    if (stmt.compare(i, 3, "-->") == 0) {
      i = skip_ws(stmt, i + 3);
      if (i < stmt.size() && stmt[i] == '|') {
        auto close = stmt.find('|', i + 1);
        if (close == std::string_view::npos)
          return fail("unterminated edge label");
        e.label = trim(stmt.substr(i + 1, close - i - 1));
        if (e.label.empty())
          return fail("empty edge label");
        i = skip_ws(stmt, close + 1);
      }
    } else if (stmt.compare(i, 2, "--") == 0) {
      auto arrow = stmt.find("-->", i + 2);
      if (arrow == std::string_view::npos)
        return fail("expected '-->' to close edge text");
      e.label = trim(stmt.substr(i + 2, arrow - i - 2));
      if (e.label.empty())
        return fail("empty edge label");
      i = skip_ws(stmt, arrow + 3);
    } else {
      return fail("expected '-->' after edge source");
    }
    auto tend = scan_identifier(stmt, i);
    if (tend == i)
      return fail("edge is missing its target node");
    e.target = NodeId(std::string(stmt.substr(i, tend - i)));
    if (skip_ws(stmt, tend) != stmt.size())
      return fail("unexpected text after edge target");
    doc_.statements.emplace_back(std::move(e));
  }

  void node_decl(std::string_view stmt, const SourceSpan &span) {
    auto fail = [&](const std::string &msg) {
      doc_.diagnostics.push_back(
          syntax_error(msg, span.line, span.column, span.length));
    };
    auto idend = scan_identifier(stmt, 0);
    if (idend == 0 || idend >= stmt.size())
      return fail("unrecognized statement '" + std::string(stmt) + "'");
    NodeDecl d;
    d.id = NodeId(std::string(stmt.substr(0, idend)));
    d.span = span;
    auto rest = stmt.substr(idend);
    std::string_view label;
    std::string_view after;
    auto take = [&](std::string_view open, std::string_view close,
                    NodeShape shape) -> bool {
      if (rest.compare(0, open.size(), open) != 0)
        return false;
      auto end = rest.rfind(close);
      if (end == std::string_view::npos || end < open.size()) {
        if (open.back() == '"')
          fail("unterminated string in node " + d.id.str());
        else
          fail("unterminated node label for " + d.id.str());
        d.id = NodeId{};
        return true;
      }
      label = rest.substr(open.size(), end - open.size());
      after = rest.substr(end + close.size());
      d.shape = shape;
      return true;
    };
    if (!(take("[\"", "\"]", NodeShape::quoted_rect) ||
          take("([", "])", NodeShape::stadium) ||
          take("{", "}", NodeShape::rhombus) ||
          take("[", "]", NodeShape::rect) ||
          take("(", ")", NodeShape::round)))
      return fail("unrecognized statement '" + std::string(stmt) + "'");
    if (d.id.empty())
      return;
    if (!trim(after).empty())
      return fail("unexpected text after node declaration of " + d.id.str());
    if (d.shape == NodeShape::quoted_rect && label.find('"') != std::string_view::npos)
      return fail("stray quote in label of " + d.id.str());

    // Entities are decoded after splitting so that an encoded quote cannot
    // close a quoted attribute value.
    std::string_view text = label;
    std::size_t br = text.find("<br/>");
    std::size_t brlen = 5;
    if (br == std::string_view::npos) {
      br = text.find("<br>");
      brlen = 4;
    }
    if (br != std::string_view::npos) {
      auto tail = trim(text.substr(br + brlen));
      if (tail.empty()) {
        d.display = decode_entities(trim(text.substr(0, br)));
      } else if (tail.front() == '(') {
        auto attrs = parse_attribute_list(tail);
        if (attrs.error)
          return fail(*attrs.error);
        d.display = decode_entities(trim(text.substr(0, br)));
        for (auto &[k, v] : attrs.attributes)
          d.attributes.emplace(k, decode_entities(v));
      } else {
        d.display = decode_entities(text);
      }
    } else {
      d.display = decode_entities(trim(text));
    }
    if (!declared_.insert(d.id).second) {
      doc_.diagnostics.push_back(Diagnostic{Rule::SYNTAX, Severity::error,
                                            "duplicate node declaration " + d.id.str(),
                                            d.id.str(), span});
      return;
    }
    doc_.statements.emplace_back(std::move(d));
  }

  void prompt_line(std::string_view body, int lineno, int col) {
    auto close = body.find("</prompt>");
    auto entry = close == std::string_view::npos ? body : body.substr(0, close);
    entry = std::string_view(trim(entry)).empty() ? std::string_view{} : entry;
    if (!entry.empty())
      prompt_entry(entry, lineno, col);
    if (close != std::string_view::npos) {
      in_prompt_ = false;
      after_prompt_ = true;
      if (!trim(body.substr(close + 9)).empty())
        doc_.diagnostics.push_back(syntax_error("text after </prompt>", lineno,
                                                col + static_cast<int>(close) + 9, 0));
    }
  }

  void prompt_entry(std::string_view entry, int lineno, int col) {
    auto len = static_cast<int>(entry.size());
    auto fail = [&](const std::string &msg) {
      doc_.diagnostics.push_back(syntax_error(msg, lineno, col, len));
    };
    auto eq = entry.find('=');
    if (eq == std::string_view::npos)
      return fail("expected NAME=\"text\" in prompt block");
    auto name = trim(entry.substr(0, eq));
    if (!is_identifier(name))
      return fail("invalid prompt name '" + name + "'");
    auto i = skip_ws(entry, eq + 1);
    if (i >= entry.size() || entry[i] != '"')
      return fail("prompt " + name + " must be a double-quoted string");
    std::string text;
    bool closed = false;
    for (++i; i < entry.size(); ++i) {
      char c = entry[i];
      if (c == '\\') {
        if (i + 1 >= entry.size())
          break;
        char n = entry[++i];
        switch (n) {
        case 'n':
          text += '\n';
          break;
        case 't':
          text += '\t';
          break;
        case 'r':
          text += '\r';
          break;
        case '"':
          text += '"';
          break;
        case '\\':
          text += '\\';
          break;
        default:
          return fail(std::string("unknown escape '\\") + n + "' in prompt " + name);
        }
      } else if (c == '"') {
        closed = true;
        ++i;
        break;
      } else {
        text += c;
      }
    }
    if (!closed)
      return fail("unterminated string in prompt " + name);
    if (!trim(entry.substr(i)).empty())
      return fail("unexpected text after prompt " + name);
    for (const auto &[n, _] : doc_.prompt_block->entries)
      if (n == name)
        return fail("duplicate prompt name " + name);
    doc_.prompt_block->entries.emplace_back(name, std::move(text));
  }

  std::string_view text_;
  MermaidDocument doc_;
  bool saw_header_ = false;
  bool in_prompt_ = false;
  bool after_prompt_ = false;
  int prompt_line_ = 0;
  std::set<NodeId> declared_;
  std::set<std::string> class_defs_;
  std::map<NodeId, std::string> assigned_;
};

} // namespace detail

[[nodiscard]] inline MermaidDocument parse_workflow(std::string_view text) {
  return detail::Parser(text).run();
}

struct HardCheckResult {
  bool pass = false;
  std::vector<Diagnostic> diagnostics;
};

// Syntax-level compile of the supported dialect.
[[nodiscard]] inline HardCheckResult hard_check(std::string_view text) {
  auto doc = parse_workflow(text);
  HardCheckResult r;
  r.diagnostics = std::move(doc.diagnostics);
  r.pass = !has_errors(r.diagnostics);
  return r;
}

[[nodiscard]] inline Domain infer_domain(const MermaidDocument &doc,
                                         const Registry &registry) {
  for (const auto &s : doc.statements) {
    if (const auto *c = std::get_if<ClassAssignStmt>(&s)) {
      if (const auto *schema = registry.find(c->class_name))
        if (schema->domain_restriction == DomainRestriction::code_only)
          return Domain::code;
    } else if (const auto *d = std::get_if<NodeDecl>(&s)) {
      if (d->id.str() == reserved::entry_point)
        return Domain::code;
    }
  }
  return Domain::math;
}

struct LoweringResult {
  WorkflowGraph graph;
  std::vector<Diagnostic> diagnostics;
};

[[nodiscard]] inline LoweringResult
lower_to_graph(const MermaidDocument &doc,
               std::shared_ptr<const Registry> registry, Domain domain) {
  if (!registry)
    registry = default_registry();
  LoweringResult out;
  std::vector<NodeDecl> decls;
  std::map<NodeId, std::size_t> decl_index;
  std::set<std::string> class_defs;
  std::vector<Edge> edges;
  std::vector<const ClassAssignStmt *> assigns;

  auto declare = [&](const NodeDecl &d) {
    if (decl_index.count(d.id))
      return;
    decl_index.emplace(d.id, decls.size());
    decls.push_back(d);
  };
  for (const auto &s : doc.statements) {
    if (const auto *d = std::get_if<NodeDecl>(&s)) {
      declare(*d);
    } else if (const auto *c = std::get_if<ClassDefStmt>(&s)) {
      class_defs.insert(c->name);
    } else if (const auto *a = std::get_if<ClassAssignStmt>(&s)) {
      assigns.push_back(a);
    } else if (const auto *e = std::get_if<EdgeStmt>(&s)) {
      edges.push_back(Edge{e->source, e->target, e->label});
    }
  }
  // Edge endpoints without a declaration are implicit plain nodes.
  for (const auto &s : doc.statements) {
    if (const auto *e = std::get_if<EdgeStmt>(&s)) {
      for (const auto *id : {&e->source, &e->target}) {
        if (!decl_index.count(*id)) {
          NodeDecl implicit;
          implicit.id = *id;
          implicit.display = id->str();
          implicit.span = e->span;
          declare(implicit);
        }
      }
    }
  }

  std::map<NodeId, std::string> kind_of;
  for (const auto *a : assigns) {
    auto canonical = registry->canonical_kind(a->class_name);
    if (!canonical && !class_defs.count(a->class_name))
      out.diagnostics.push_back(Diagnostic{Rule::W4, Severity::error,
                                           "unknown class '" + a->class_name + "'",
                                           a->ids.empty() ? "" : a->ids.front().str(),
                                           a->span});
    for (const auto &id : a->ids) {
      if (!decl_index.count(id)) {
        out.diagnostics.push_back(Diagnostic{Rule::STRUCT, Severity::error,
                                             "class assignment to undeclared node " +
                                                 id.str(),
                                             id.str(), a->span});
        continue;
      }
      kind_of[id] = canonical.value_or(a->class_name);
    }
  }

  std::vector<Node> nodes;
  nodes.reserve(decls.size());
  for (const auto &d : decls) {
    Node n{d.id, {}, d.attributes, d.display};
    if (auto it = kind_of.find(d.id); it != kind_of.end()) {
      n.kind = it->second;
    } else if (d.shape == NodeShape::stadium) {
      n.kind = std::string(kinds::interface_kind);
    } else {
      out.diagnostics.push_back(Diagnostic{Rule::W4, Severity::error,
                                           "unclassified node " + d.id.str(),
                                           d.id.str(), d.span});
    }
    // A display text equal to what the serializer would print by default
    // carries no information; keep it empty so built and parsed graphs agree.
    const auto *schema = n.kind.empty() ? nullptr : registry->find(n.kind);
    if (n.display_label == n.id.str() ||
        (schema && !is_interface(n) && n.kind != kinds::decision &&
         n.display_label == schema->display_name))
      n.display_label.clear();
    nodes.push_back(std::move(n));
  }

  PromptTable prompts;
  if (doc.prompt_block)
    for (const auto &[name, text] : doc.prompt_block->entries)
      prompts.set(name, text);

  out.graph = build_graph(std::move(nodes), std::move(edges), std::move(prompts),
                          domain, std::move(registry));
  return out;
}

namespace detail {

inline bool is_bare_value(std::string_view v) {
  if (v.empty())
    return false;
  return std::all_of(v.begin(), v.end(), [](char c) {
    auto u = static_cast<unsigned char>(c);
    return std::isalnum(u) || c == '_' || c == '.' || c == '-';
  });
}

inline std::string render_attributes(const std::map<std::string, std::string> &attrs) {
  std::string out = "(";
  bool first = true;
  for (const auto &[k, v] : attrs) {
    if (!first)
      out += ", ";
    first = false;
    out += k;
    out += ": ";
    if (is_bare_value(v)) {
      out += v;
    } else {
      out += '\'';
      for (char c : v) {
        if (c == '\'')
          out += "#39;";
        else
          out += c;
      }
      out += '\'';
    }
  }
  out += ")";
  return out;
}

inline std::string render_decl(const WorkflowGraph &g, const Node &n) {
  const auto *schema = g.schema_of(n);
  if (is_interface(n)) {
    return n.id.str() + "([" + (n.display_label.empty() ? n.id.str() : n.display_label) +
           "])";
  }
  if (n.kind == kinds::decision) {
    return n.id.str() + "{" + (n.display_label.empty() ? n.id.str() : n.display_label) +
           "}";
  }
  std::string display = n.display_label;
  if (display.empty())
    display = schema ? schema->display_name : n.id.str();
  std::string label = display + "<br/>";
  if (!n.attributes.empty())
    label += render_attributes(n.attributes);
  return n.id.str() + "[\"" + encode_entities(label) + "\"]";
}

} // namespace detail

// Canonical text: header, node declarations (entry first, exit last, others
// by id), classDef block (standard classes always), class assignments, edges
// sorted by (source, target, label), prompt block. LF endings, two-space
// indent inside the flowchart body.
[[nodiscard]] inline std::string serialize_workflow(const WorkflowGraph &g) {
  auto roles = classify_interfaces(g);
  auto entry = primary_entry(roles);
  std::optional<NodeId> exit =
      roles.exits.size() == 1 ? std::optional<NodeId>(roles.exits.front()) : std::nullopt;

  std::vector<const Node *> order;
  if (entry)
    order.push_back(&g.node(*entry));
  for (const auto &id : roles.auxiliary)
    order.push_back(&g.node(id));
  for (const auto &n : g.nodes()) {
    bool placed = (entry && n.id == *entry) || (exit && n.id == *exit) ||
                  std::find(roles.auxiliary.begin(), roles.auxiliary.end(), n.id) !=
                      roles.auxiliary.end();
    if (!placed)
      order.push_back(&n);
  }
  if (exit)
    order.push_back(&g.node(*exit));

  std::string out = "flowchart TD\n";
  for (const auto *n : order)
    out += "  " + detail::render_decl(g, *n) + "\n";

  std::set<std::string> emitted;
  for (const auto &s : g.registry().schemas()) {
    if (!s.standard)
      continue;
    out += "  classDef " + s.style_class + " " + s.style + "\n";
    emitted.insert(s.kind);
  }
  std::set<std::string> extra;
  for (const auto &n : g.nodes())
    if (!n.kind.empty() && !emitted.count(n.kind) && g.registry().find(n.kind))
      extra.insert(n.kind);
  for (const auto &k : extra) {
    const auto *s = g.registry().find(k);
    out += "  classDef " + s->style_class + " " + s->style + "\n";
  }

  for (const auto *n : order)
    if (!n->kind.empty())
      out += "  class " + n->id.str() + " " + n->kind + "\n";
  for (const auto &e : g.edges()) {
    out += "  " + e.source.str() + " --> ";
    if (!e.label.empty())
      out += "|" + e.label + "|";
    out += e.target.str() + "\n";
  }
  if (!g.prompts().empty()) {
    out += "<prompt>\n";
    for (const auto &[name, text] : g.prompts().entries())
      out += name + "=\"" + detail::escape_prompt(text) + "\"\n";
    out += "</prompt>\n";
  }
  return out;
}

struct ParsedWorkflow {
  MermaidDocument document;
  LoweringResult lowered;
};

// parse + lower with the domain inferred from node kinds unless given.
[[nodiscard]] inline ParsedWorkflow
read_workflow(std::string_view text,
              std::shared_ptr<const Registry> registry = default_registry(),
              std::optional<Domain> domain = std::nullopt) {
  ParsedWorkflow p;
  p.document = parse_workflow(text);
  auto d = domain.value_or(infer_domain(p.document, *registry));
  p.lowered = lower_to_graph(p.document, std::move(registry), d);
  return p;
}

} // namespace mermaidflow
