#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace mermaidflow {

struct SourceSpan {
  int line = 1;   // 1-based
  int column = 1; // 1-based
  int length = 0;

  bool operator==(const SourceSpan &) const = default;
};

// Declaration order is the reporting order.
enum class Rule { SYNTAX, W1, W2, W3, W4, W5, STRUCT };
enum class Severity { error, warning };

[[nodiscard]] inline std::string_view to_string(Rule r) noexcept {
  switch (r) {
  case Rule::SYNTAX:
    return "SYNTAX";
  case Rule::W1:
    return "W1";
  case Rule::W2:
    return "W2";
  case Rule::W3:
    return "W3";
  case Rule::W4:
    return "W4";
  case Rule::W5:
    return "W5";
  case Rule::STRUCT:
    return "STRUCT";
  }
  return "?";
}

[[nodiscard]] inline std::optional<Rule> parse_rule(std::string_view s) {
  for (auto r : {Rule::SYNTAX, Rule::W1, Rule::W2, Rule::W3, Rule::W4, Rule::W5,
                 Rule::STRUCT})
    if (to_string(r) == s)
      return r;
  return std::nullopt;
}

[[nodiscard]] inline std::string_view to_string(Severity s) noexcept {
  return s == Severity::error ? "error" : "warning";
}

struct Diagnostic {
  Rule rule = Rule::STRUCT;
  Severity severity = Severity::error;
  std::string message;
  std::string subject; // node id, "A->B" edge, prompt name; empty if none
  std::optional<SourceSpan> span;

  bool operator==(const Diagnostic &) const = default;
};

[[nodiscard]] inline bool is_error(const Diagnostic &d) noexcept {
  return d.severity == Severity::error;
}

[[nodiscard]] inline bool has_errors(const std::vector<Diagnostic> &ds) {
  return std::any_of(ds.begin(), ds.end(), is_error);
}

// Stable: by rule, then subject.
inline void sort_diagnostics(std::vector<Diagnostic> &ds) {
  std::stable_sort(ds.begin(), ds.end(),
                   [](const Diagnostic &a, const Diagnostic &b) {
                     if (a.rule != b.rule)
                       return a.rule < b.rule;
                     return a.subject < b.subject;
                   });
}

// `RULE severity subject:location message`; '-' stands for a missing part.
[[nodiscard]] inline std::string render_line(const Diagnostic &d) {
  std::string out;
  out += to_string(d.rule);
  out += ' ';
  out += to_string(d.severity);
  out += ' ';
  out += d.subject.empty() ? "-" : d.subject;
  out += ':';
  if (d.span)
    out += std::to_string(d.span->line) + ":" + std::to_string(d.span->column);
  else
    out += '-';
  out += ' ';
  out += d.message;
  return out;
}

[[nodiscard]] inline std::string
render_lines(const std::vector<Diagnostic> &ds) {
  std::string out;
  for (const auto &d : ds) {
    out += render_line(d);
    out += '\n';
  }
  return out;
}

[[nodiscard]] inline nlohmann::json to_json(const Diagnostic &d) {
  nlohmann::json j{{"rule", to_string(d.rule)},
                   {"severity", to_string(d.severity)},
                   {"message", d.message}};
  j["subject"] = d.subject.empty() ? nlohmann::json() : nlohmann::json(d.subject);
  if (d.span)
    j["span"] = {{"line", d.span->line},
                 {"column", d.span->column},
                 {"length", d.span->length}};
  else
    j["span"] = nullptr;
  return j;
}

[[nodiscard]] inline nlohmann::json to_json(const std::vector<Diagnostic> &ds) {
  auto arr = nlohmann::json::array();
  for (const auto &d : ds)
    arr.push_back(to_json(d));
  return arr;
}

} // namespace mermaidflow
