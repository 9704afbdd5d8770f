#pragma once

// Evolution loop: history buffer, mixed uniform/softmax parent sampling,
// candidate generation with checker feedback, judge selection and
// evaluation. Proposer, judge and evaluator are interfaces; deterministic
// implementations are provided, plus adapters for external processes.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "mermaidflow/mermaid.hpp"
#include "mermaidflow/operators.hpp"
#include "mermaidflow/validator.hpp"

namespace mermaidflow {

struct EvolutionConfig {
  double lambda = 0.3;
  double alpha = 5.0;
  int candidate_pool = 4;
  int max_rounds = 20;
  int num_tries = 3;
  OperatorWeights operator_weights{};
  std::uint64_t seed = 0;
  double crossover_rate = 0.10;
  int site_budget = 16;
  bool parallel = false; // generate a round's candidates on worker threads

  void check() const {
    if (!(lambda >= 0.0 && lambda <= 1.0))
      throw std::invalid_argument("lambda must lie in [0, 1]");
    if (!(alpha >= 0.0))
      throw std::invalid_argument("alpha must be non-negative");
    if (candidate_pool < 1)
      throw std::invalid_argument("candidate_pool must be at least 1");
    if (max_rounds < 0)
      throw std::invalid_argument("max_rounds must be non-negative");
    if (num_tries < 1)
      throw std::invalid_argument("num_tries must be at least 1");
    if (site_budget < 1)
      throw std::invalid_argument("site_budget must be at least 1");
    if (!(crossover_rate >= 0.0 && crossover_rate <= 1.0))
      throw std::invalid_argument("crossover_rate must lie in [0, 1]");
    operator_weights.check();
  }

  // Weights with the crossover share pinned to crossover_rate and the other
  // kinds rescaled to fill the rest in their configured proportions.
  [[nodiscard]] OperatorWeights effective_weights() const {
    OperatorWeights w = operator_weights;
    double others = 0;
    for (auto k : kAllOperators)
      if (k != OperatorKind::Crossover)
        others += w[k];
    for (auto k : kAllOperators) {
      if (k == OperatorKind::Crossover)
        continue;
      w[k] = others > 0 ? w[k] / others * (1.0 - crossover_rate) : (1.0 - crossover_rate) / 5.0;
    }
    w[OperatorKind::Crossover] = crossover_rate;
    return w;
  }
};

[[nodiscard]] inline nlohmann::json to_json(const EvolutionConfig &c) {
  nlohmann::json weights;
  for (auto k : kAllOperators)
    weights[std::string(to_string(k))] = c.operator_weights[k];
  return {{"lambda", c.lambda},
          {"alpha", c.alpha},
          {"candidate_pool", c.candidate_pool},
          {"max_rounds", c.max_rounds},
          {"num_tries", c.num_tries},
          {"operator_weights", weights},
          {"seed", c.seed},
          {"crossover_rate", c.crossover_rate},
          {"site_budget", c.site_budget},
          {"parallel", c.parallel}};
}

[[nodiscard]] inline EvolutionConfig evolution_config_from_json(const nlohmann::json &j) {
  EvolutionConfig c;
  c.lambda = j.value("lambda", c.lambda);
  c.alpha = j.value("alpha", c.alpha);
  c.candidate_pool = j.value("candidate_pool", c.candidate_pool);
  c.max_rounds = j.value("max_rounds", c.max_rounds);
  c.num_tries = j.value("num_tries", c.num_tries);
  c.seed = j.value("seed", c.seed);
  c.crossover_rate = j.value("crossover_rate", c.crossover_rate);
  c.site_budget = j.value("site_budget", c.site_budget);
  c.parallel = j.value("parallel", c.parallel);
  if (j.contains("operator_weights"))
    for (auto k : kAllOperators)
      c.operator_weights[k] =
          j["operator_weights"].value(std::string(to_string(k)), c.operator_weights[k]);
  c.check();
  return c;
}

// ---------------------------------------------------------------------------
// History

struct HistoryEntry {
  WorkflowGraph workflow;
  std::string source; // canonical Mermaid text
  double score = 0.0;
  int round = 0;
  std::vector<int> parents;
  std::string modification;
};

class HistoryBuffer {
 public:
  // Entries are validated on insert and never modified afterwards.
  void append(HistoryEntry e) {
    if (!(e.score >= 0.0 && e.score <= 1.0))
      throw std::invalid_argument("history score must lie in [0, 1]");
    if (!validate(e.workflow).valid())
      throw std::invalid_argument("history entries must validate");
    for (int p : e.parents)
      if (p < 0 || p >= static_cast<int>(entries_.size()))
        throw std::invalid_argument("history parent index out of range");
    entries_.push_back(std::move(e));
  }

  [[nodiscard]] const std::vector<HistoryEntry> &entries() const noexcept { return entries_; }
  [[nodiscard]] std::size_t size() const noexcept { return entries_.size(); }
  [[nodiscard]] bool empty() const noexcept { return entries_.empty(); }
  [[nodiscard]] const HistoryEntry &operator[](std::size_t i) const { return entries_.at(i); }

  [[nodiscard]] std::vector<double> scores() const {
    std::vector<double> s;
    for (const auto &e : entries_)
      s.push_back(e.score);
    return s;
  }
  [[nodiscard]] double best_score() const {
    double b = 0;
    for (const auto &e : entries_)
      b = std::max(b, e.score);
    return b;
  }

 private:
  std::vector<HistoryEntry> entries_;
};

[[nodiscard]] inline nlohmann::json to_json(const HistoryEntry &e) {
  return {{"round", e.round},
          {"score", e.score},
          {"parents", e.parents},
          {"modification", e.modification},
          {"source", e.source}};
}

[[nodiscard]] inline std::string history_jsonl(const HistoryBuffer &h) {
  std::string out;
  for (const auto &e : h.entries())
    out += to_json(e).dump() + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Parent sampling

// P(i) = lambda / t + (1 - lambda) * softmax(alpha * score)_i. The softmax
// subtracts the maximum score first; the distribution is unchanged.
[[nodiscard]] inline std::vector<double> mixed_probabilities(const std::vector<double> &scores,
                                                             double lambda, double alpha) {
  if (scores.empty())
    throw std::invalid_argument("cannot sample from an empty history");
  const auto t = static_cast<double>(scores.size());
  const double top = *std::max_element(scores.begin(), scores.end());
  std::vector<double> e(scores.size());
  double z = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    e[i] = std::exp(alpha * (scores[i] - top));
    z += e[i];
  }
  std::vector<double> p(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i)
    p[i] = lambda / t + (1.0 - lambda) * e[i] / z;
  return p;
}

[[nodiscard]] inline std::size_t sample_index(const std::vector<double> &p,
                                              std::mt19937_64 &rng) {
  double u = detail::unit(rng), acc = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc)
      return i;
  }
  // u landed in the rounding slack above the last partial sum.
  for (std::size_t i = p.size(); i-- > 0;)
    if (p[i] > 0)
      return i;
  return p.size() - 1;
}

[[nodiscard]] inline std::size_t sample_parent(const std::vector<double> &scores,
                                               const EvolutionConfig &cfg,
                                               std::mt19937_64 &rng) {
  return sample_index(mixed_probabilities(scores, cfg.lambda, cfg.alpha), rng);
}

// Two distinct parents: the second is redrawn until it differs from the
// first. nullopt with fewer than two entries (single-parent mode).
[[nodiscard]] inline std::optional<std::pair<std::size_t, std::size_t>>
sample_parent_pair(const std::vector<double> &scores, const EvolutionConfig &cfg,
                   std::mt19937_64 &rng) {
  if (scores.size() < 2) {
    if (scores.empty())
      throw std::invalid_argument("cannot sample from an empty history");
    return std::nullopt;
  }
  auto p = mixed_probabilities(scores, cfg.lambda, cfg.alpha);
  auto a = sample_index(p, rng);
  for (int tries = 0; tries < 1024; ++tries) {
    auto b = sample_index(p, rng);
    if (b != a)
      return std::make_pair(a, b);
  }
  // Only reachable when the other entries have underflowed to ~0 mass:
  // draw from the rest directly.
  p[a] = 0;
  double z = 0;
  for (double x : p)
    z += x;
  if (z <= 0) {
    auto b = (a + 1) % p.size();
    return std::make_pair(a, b);
  }
  for (double &x : p)
    x /= z;
  return std::make_pair(a, sample_index(p, rng));
}

// ---------------------------------------------------------------------------
// Interfaces

struct PreviousAttempt {
  std::string text;
  std::vector<Diagnostic> errors;
};

struct ProposalRequest {
  std::vector<const HistoryEntry *> parents; // one or two
  std::optional<PreviousAttempt> previous;
  int attempt = 1;
  const EvolutionConfig *config = nullptr;
};

struct Proposal {
  std::string text;
  std::string modification;
};

class Proposer {
 public:
  virtual ~Proposer() = default;
  virtual Proposal propose(const ProposalRequest &req, std::mt19937_64 &rng) = 0;
  [[nodiscard]] virtual bool concurrent_safe() const { return true; }
};

inline constexpr int kJudgeDimensions = 5;
inline constexpr std::array<std::string_view, kJudgeDimensions> kJudgeDimensionNames{
    "workflow_coherence", "innovation", "complexity_balance", "prompt_quality",
    "modification_rationale"};

struct JudgeScore {
  std::array<int, kJudgeDimensions> dims{1, 1, 1, 1, 1};
  [[nodiscard]] int total() const {
    int t = 0;
    for (int d : dims)
      t += d;
    return t;
  }
};

struct CandidateView {
  const WorkflowGraph *graph = nullptr;
  const std::string *source = nullptr;
  const std::string *modification = nullptr;
};

class Judge {
 public:
  virtual ~Judge() = default;
  virtual std::vector<JudgeScore> score(const std::vector<CandidateView> &candidates,
                                        const std::vector<const HistoryEntry *> &parents,
                                        const HistoryBuffer &history) = 0;
  [[nodiscard]] virtual bool concurrent_safe() const { return true; }
};

class Evaluator {
 public:
  virtual ~Evaluator() = default;
  virtual double evaluate(const WorkflowGraph &g, const std::string &source) = 0;
  [[nodiscard]] virtual bool concurrent_safe() const { return true; }
};

// ---------------------------------------------------------------------------
// Deterministic proposer: one random rewrite of the parent(s).

class OperatorProposer : public Proposer {
 public:
  explicit OperatorProposer(RandomRewriteOptions opts = {}, int kind_retries = 8)
      : opts_(std::move(opts)), kind_retries_(kind_retries) {}

  Proposal propose(const ProposalRequest &req, std::mt19937_64 &rng) override {
    if (req.parents.empty())
      throw std::invalid_argument("proposal needs a parent");
    const auto &a = req.parents[0]->workflow;
    const WorkflowGraph *b = req.parents.size() > 1 ? &req.parents[1]->workflow : nullptr;
    auto weights = req.config ? req.config->effective_weights() : OperatorWeights{};
    auto opts = opts_;
    if (req.config)
      opts.site_budget = req.config->site_budget;
    std::string last_reason;
    for (int i = 0; i < kind_retries_; ++i) {
      auto r = apply_random(a, b, rng, weights, opts);
      if (auto *o = std::get_if<RewriteOutcome>(&r)) {
        const auto &child = o->graphs[detail::pick(rng, o->graphs.size())];
        return Proposal{serialize_workflow(child), o->description};
      }
      last_reason = std::get<NoApplicableRewrite>(r).reason;
    }
    // Nothing applied: hand back an empty text so the checker reports it.
    return Proposal{std::string(), "no applicable rewrite: " + last_reason};
  }

 private:
  RandomRewriteOptions opts_;
  int kind_retries_;
};

// ---------------------------------------------------------------------------
// Deterministic judge.

struct StructuralJudgeOptions {
  int band_low = 6;
  int band_high = 10;
  int max_prompt_words = 100;
};

namespace detail {

inline int scale10(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return 1 + static_cast<int>(std::lround(9.0 * x));
}

inline std::size_t word_count(std::string_view s) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : s) {
    bool ws = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!ws && !in_word)
      ++n;
    in_word = !ws;
  }
  return n;
}

// Normalized distance between two graphs over node and edge multisets.
inline double graph_distance(const WorkflowGraph &a, const WorkflowGraph &b) {
  auto key = [](const Node &n) {
    std::string k = n.id.str() + "|" + n.kind;
    for (const auto &[x, y] : n.attributes)
      k += "|" + x + "=" + y;
    return k;
  };
  std::multiset<std::string> na, nb, ea, eb;
  for (const auto &n : a.nodes())
    na.insert(key(n));
  for (const auto &n : b.nodes())
    nb.insert(key(n));
  for (const auto &e : a.edges())
    ea.insert(describe(e));
  for (const auto &e : b.edges())
    eb.insert(describe(e));
  auto symdiff = [](const std::multiset<std::string> &x, const std::multiset<std::string> &y) {
    std::vector<std::string> out;
    std::set_symmetric_difference(x.begin(), x.end(), y.begin(), y.end(),
                                  std::back_inserter(out));
    return out.size();
  };
  double total = static_cast<double>(na.size() + nb.size() + ea.size() + eb.size());
  if (total == 0)
    return 0;
  return static_cast<double>(symdiff(na, nb) + symdiff(ea, eb)) / total;
}

} // namespace detail

class StructuralJudge : public Judge {
 public:
  explicit StructuralJudge(StructuralJudgeOptions o = {}) : o_(o) {}

  [[nodiscard]] JudgeScore score_one(const WorkflowGraph &g, const std::string &modification,
                                     const std::vector<const HistoryEntry *> &parents) const {
    JudgeScore s;
    s.dims[0] = coherence(g);
    s.dims[1] = innovation(g, parents);
    s.dims[2] = complexity(g);
    s.dims[3] = prompt_quality(g);
    s.dims[4] = rationale(g, modification);
    return s;
  }

  std::vector<JudgeScore> score(const std::vector<CandidateView> &candidates,
                                const std::vector<const HistoryEntry *> &parents,
                                const HistoryBuffer &) override {
    std::vector<JudgeScore> out;
    for (const auto &c : candidates)
      out.push_back(score_one(*c.graph, *c.modification, parents));
    return out;
  }

  // Ports satisfied, ensemble fan-in margin above the minimum, explicit
  // labels on edges into label-requiring kinds.
  [[nodiscard]] int coherence(const WorkflowGraph &g) const {
    int ports = 0, satisfied = 0, labeled = 0, label_edges = 0;
    double margin = 0;
    int ensembles = 0;
    for (const auto &n : g.nodes()) {
      const auto *schema = g.schema_of(n);
      if (!schema || is_interface(n))
        continue;
      std::map<std::string, int> bound;
      for (auto ei : g.in_edges(n.id)) {
        const auto &e = g.edges()[ei];
        if (const auto *p = bind_port(*schema, e.label))
          ++bound[p->label];
        if (schema->requires_labels) {
          ++label_edges;
          labeled += !e.label.empty() && schema->port(e.label) ? 1 : 0;
        }
      }
      for (const auto &p : schema->input_ports) {
        if (!p.required)
          continue;
        ++ports;
        satisfied += bound[p.label] >= std::max(1, p.min_count) ? 1 : 0;
      }
      if (n.kind == kinds::ensemble) {
        ++ensembles;
        // Two inputs sit right at the ensemble minimum; seven or more is full.
        margin += std::clamp((static_cast<double>(g.in_degree(n.id)) - 2.0) / 5.0, 0.0, 1.0);
      }
    }
    double port_frac = ports ? static_cast<double>(satisfied) / ports : 1.0;
    double margin_avg = ensembles ? margin / ensembles : 1.0;
    double label_frac = label_edges ? static_cast<double>(labeled) / label_edges : 1.0;
    return detail::scale10(0.3 * port_frac + 0.5 * margin_avg + 0.2 * label_frac);
  }

  [[nodiscard]] int innovation(const WorkflowGraph &g,
                               const std::vector<const HistoryEntry *> &parents) const {
    if (parents.empty())
      return 10;
    double d = 1.0;
    for (const auto *p : parents)
      d = std::min(d, detail::graph_distance(g, p->workflow));
    return detail::scale10(3.0 * d);
  }

  [[nodiscard]] int complexity(const WorkflowGraph &g) const {
    int n = static_cast<int>(g.node_count());
    int off = n < o_.band_low ? o_.band_low - n : n > o_.band_high ? n - o_.band_high : 0;
    return std::max(1, 10 - 2 * off);
  }

  // Prompt attributes that resolve to a stored prompt or are usable inline
  // text, within the word budget.
  [[nodiscard]] int prompt_quality(const WorkflowGraph &g) const {
    int total = 0, good = 0;
    for (const auto &n : g.nodes()) {
      const auto *schema = g.schema_of(n);
      if (!schema || schema->prompt_attribute.empty())
        continue;
      ++total;
      auto it = n.attributes.find(schema->prompt_attribute);
      if (it == n.attributes.end() || it->second.empty())
        continue;
      std::string_view text = it->second;
      if (auto p = resolve_prompt(g.prompts(), it->second))
        text = *g.prompts().find(*p);
      else if (is_explicit_prompt_ref(it->second))
        continue;
      good += detail::word_count(text) <= static_cast<std::size_t>(o_.max_prompt_words) ? 1 : 0;
    }
    if (total == 0)
      return 5;
    return detail::scale10(static_cast<double>(good) / total);
  }

  [[nodiscard]] int rationale(const WorkflowGraph &g, const std::string &m) const {
    int s = 1;
    if (detail::trim(m).empty())
      return s;
    s += 3;
    for (auto k : kAllOperators)
      if (m.find(to_string(k)) != std::string::npos) {
        s += 3;
        break;
      }
    for (const auto &n : g.nodes())
      if (!is_interface(n) && m.find(n.id.str()) != std::string::npos) {
        s += 3;
        break;
      }
    return s;
  }

 private:
  StructuralJudgeOptions o_;
};

// ---------------------------------------------------------------------------
// Deterministic evaluator: similarity of structural features to a target.

struct WorkflowFeatures {
  bool has_ensemble = false;
  int branch_count = 0; // widest ensemble fan-in
  bool refine_tail = false;
  int depth = 0; // longest entry-to-exit path, in edges
};

[[nodiscard]] inline WorkflowFeatures workflow_features(const WorkflowGraph &g) {
  WorkflowFeatures f;
  std::set<NodeId> after_ensemble;
  for (const auto &n : g.nodes())
    if (n.kind == kinds::ensemble) {
      f.has_ensemble = true;
      f.branch_count = std::max(f.branch_count, static_cast<int>(g.in_degree(n.id)));
      for (const auto &m : detail::closure(g, {n.id}, true))
        if (m != n.id)
          after_ensemble.insert(m);
    }
  auto exit = exit_of(g);
  if (exit)
    for (auto ei : g.in_edges(*exit)) {
      const auto &src = g.node(g.edges()[ei].source);
      if (!is_interface(src) && src.kind != kinds::ensemble && after_ensemble.count(src.id))
        f.refine_tail = true;
    }
  auto d = depths(g);
  if (exit && d.count(*exit))
    f.depth = d.at(*exit);
  return f;
}

[[nodiscard]] inline nlohmann::json to_json(const WorkflowFeatures &f) {
  return {{"has_ensemble", f.has_ensemble},
          {"branch_count", f.branch_count},
          {"refine_tail", f.refine_tail},
          {"depth", f.depth}};
}

[[nodiscard]] inline WorkflowFeatures workflow_features_from_json(const nlohmann::json &j) {
  WorkflowFeatures f;
  f.has_ensemble = j.value("has_ensemble", false);
  f.branch_count = j.value("branch_count", 0);
  f.refine_tail = j.value("refine_tail", false);
  f.depth = j.value("depth", 0);
  return f;
}

class SyntheticTaskEvaluator : public Evaluator {
 public:
  explicit SyntheticTaskEvaluator(WorkflowFeatures target) : target_(target) {}

  [[nodiscard]] static double similarity(const WorkflowFeatures &f, const WorkflowFeatures &t) {
    auto closeness = [](int x, int want) {
      return std::max(0.0, 1.0 - std::abs(x - want) / static_cast<double>(std::max(want, 1)));
    };
    return 0.25 * (f.has_ensemble == t.has_ensemble ? 1.0 : 0.0) +
           0.25 * closeness(f.branch_count, t.branch_count) +
           0.25 * (f.refine_tail == t.refine_tail ? 1.0 : 0.0) +
           0.25 * closeness(f.depth, t.depth);
  }

  double evaluate(const WorkflowGraph &g, const std::string &) override {
    return similarity(workflow_features(g), target_);
  }

  [[nodiscard]] const WorkflowFeatures &target() const noexcept { return target_; }

 private:
  WorkflowFeatures target_;
};

// ---------------------------------------------------------------------------
// Candidate generation

struct Candidate {
  WorkflowGraph graph;
  std::string source;
  std::string modification;
  int tries = 0;
  std::vector<PreviousAttempt> failed; // earlier attempts with their errors
};

struct TriesExhausted {
  PreviousAttempt last;
  std::vector<PreviousAttempt> failed;
};

using OptimizeResult = std::variant<Candidate, TriesExhausted>;

namespace detail {
// Serializes calls into components that are not safe to share.
class CallGate {
 public:
  template <class F> auto run(bool safe, F &&f) {
    if (safe)
      return f();
    std::lock_guard<std::mutex> lock(m_);
    return f();
  }

 private:
  std::mutex m_;
};
} // namespace detail

// Propose, hard-check, soft-check; feed errors back; up to num_tries.
[[nodiscard]] inline OptimizeResult
optimize_workflow(const std::vector<const HistoryEntry *> &parents, const EvolutionConfig &cfg,
                  Proposer &proposer, std::mt19937_64 &rng, detail::CallGate *gate = nullptr) {
  if (parents.empty())
    throw std::invalid_argument("optimize_workflow needs a parent");
  const auto &reference = parents.front()->workflow;
  std::vector<PreviousAttempt> failed;
  std::optional<PreviousAttempt> prev;
  for (int attempt = 1; attempt <= cfg.num_tries; ++attempt) {
    ProposalRequest req{parents, prev, attempt, &cfg};
    Proposal p = gate ? gate->run(proposer.concurrent_safe(),
                                  [&] { return proposer.propose(req, rng); })
                      : proposer.propose(req, rng);
    auto parsed = read_workflow(p.text, reference.registry_ptr(), reference.domain());
    std::vector<Diagnostic> errs;
    for (const auto &d : parsed.document.diagnostics)
      if (is_error(d))
        errs.push_back(d);
    if (errs.empty()) {
      for (const auto &d : parsed.lowered.diagnostics)
        if (is_error(d) && d.rule != Rule::W4)
          errs.push_back(d);
      for (const auto &d : soft_check(parsed.lowered.graph))
        if (is_error(d))
          errs.push_back(d);
    }
    if (errs.empty()) {
      Candidate c;
      c.graph = std::move(parsed.lowered.graph);
      c.source = serialize_workflow(c.graph);
      c.modification = std::move(p.modification);
      c.tries = attempt;
      c.failed = std::move(failed);
      return c;
    }
    prev = PreviousAttempt{p.text, errs};
    failed.push_back(*prev);
  }
  TriesExhausted x;
  x.last = *prev;
  x.failed = std::move(failed);
  return x;
}

[[nodiscard]] inline std::mt19937_64 split_stream(std::uint64_t seed,
                                                  std::initializer_list<std::uint64_t> path) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed),
                                   static_cast<std::uint32_t>(seed >> 32)};
  for (auto p : path) {
    words.push_back(static_cast<std::uint32_t>(p));
    words.push_back(static_cast<std::uint32_t>(p >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return std::mt19937_64(seq);
}

struct CandidateSet {
  std::vector<Candidate> candidates;
  std::vector<TriesExhausted> exhausted; // omitted slots
};

// N independent slots, each with its own stream derived from (seed, round,
// slot). A candidate whose text repeats an earlier one is regenerated once.
[[nodiscard]] inline CandidateSet
generate_candidates(const std::vector<const HistoryEntry *> &parents, const EvolutionConfig &cfg,
                    Proposer &proposer, int round) {
  detail::CallGate gate;
  const auto n = static_cast<std::size_t>(cfg.candidate_pool);
  std::vector<std::optional<OptimizeResult>> slots(n);
  auto run_slot = [&](std::size_t slot, std::uint64_t salt) {
    auto rng = split_stream(cfg.seed, {static_cast<std::uint64_t>(round), slot + 1, salt});
    return optimize_workflow(parents, cfg, proposer, rng, &gate);
  };
  if (cfg.parallel && n > 1) {
    std::vector<std::thread> workers;
    for (std::size_t i = 0; i < n; ++i)
      workers.emplace_back([&, i] { slots[i] = run_slot(i, 0); });
    for (auto &w : workers)
      w.join();
  } else {
    for (std::size_t i = 0; i < n; ++i)
      slots[i] = run_slot(i, 0);
  }
  // Duplicate resolution runs in slot order so results do not depend on
  // scheduling.
  CandidateSet out;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < n; ++i) {
    auto r = std::move(*slots[i]);
    if (auto *c = std::get_if<Candidate>(&r); c && seen.count(c->source))
      r = run_slot(i, 1);
    if (auto *c = std::get_if<Candidate>(&r)) {
      seen.insert(c->source);
      out.candidates.push_back(std::move(*c));
    } else {
      out.exhausted.push_back(std::get<TriesExhausted>(std::move(r)));
    }
  }
  return out;
}

struct JudgeResult {
  std::size_t best = 0;
  std::vector<JudgeScore> table;
};

[[nodiscard]] inline JudgeResult judge_select(const std::vector<Candidate> &candidates,
                                              const std::vector<const HistoryEntry *> &parents,
                                              const HistoryBuffer &history, Judge &judge) {
  if (candidates.empty())
    throw std::invalid_argument("judge_select needs at least one candidate");
  std::vector<CandidateView> views;
  for (const auto &c : candidates)
    views.push_back(CandidateView{&c.graph, &c.source, &c.modification});
  JudgeResult r;
  r.table = judge.score(views, parents, history);
  if (r.table.size() != candidates.size())
    throw std::runtime_error("judge returned " + std::to_string(r.table.size()) +
                             " scores for " + std::to_string(candidates.size()) +
                             " candidates");
  for (const auto &s : r.table)
    for (int d : s.dims)
      if (d < 1 || d > 10)
        throw std::runtime_error("judge score outside [1, 10]");
  for (std::size_t i = 1; i < r.table.size(); ++i)
    if (r.table[i].total() > r.table[r.best].total())
      r.best = i;
  return r;
}

// ---------------------------------------------------------------------------
// The loop

struct RoundRecord {
  int round = 0;
  std::vector<int> parents;
  std::vector<std::string> modifications; // per candidate
  std::vector<JudgeScore> judge_table;
  int chosen = -1;
  double score = 0;
  bool skipped = false;
  std::string skip_reason;
  int exhausted_slots = 0;
};

[[nodiscard]] inline nlohmann::json to_json(const RoundRecord &r) {
  nlohmann::json table = nlohmann::json::array();
  for (const auto &s : r.judge_table)
    table.push_back(s.dims);
  return {{"round", r.round},         {"parents", r.parents},
          {"candidates", r.modifications}, {"judge", table},
          {"chosen", r.chosen},       {"score", r.score},
          {"skipped", r.skipped},     {"skip_reason", r.skip_reason},
          {"exhausted_slots", r.exhausted_slots}};
}

struct EvolutionResult {
  HistoryBuffer history;
  std::vector<RoundRecord> rounds;
};

using RoundObserver = std::function<void(const RoundRecord &, const HistoryBuffer &)>;

[[nodiscard]] inline EvolutionResult run_evolution(const std::vector<WorkflowGraph> &seeds,
                                                   const EvolutionConfig &cfg, Proposer &proposer,
                                                   Judge &judge, Evaluator &evaluator,
                                                   const RoundObserver &observer = {}) {
  cfg.check();
  if (seeds.empty())
    throw std::invalid_argument("evolution needs at least one seed workflow");
  EvolutionResult res;
  for (const auto &s : seeds) {
    if (!validate(s).valid())
      throw std::invalid_argument("seed workflows must validate");
    HistoryEntry e;
    e.workflow = s;
    e.source = serialize_workflow(s);
    e.score = evaluator.evaluate(s, e.source);
    e.round = 0;
    e.modification = "seed";
    res.history.append(std::move(e));
  }
  for (int round = 1; round <= cfg.max_rounds; ++round) {
    RoundRecord rec;
    rec.round = round;
    auto rng = split_stream(cfg.seed, {static_cast<std::uint64_t>(round), 0});
    auto scores = res.history.scores();
    std::vector<const HistoryEntry *> parents;
    if (auto pair = sample_parent_pair(scores, cfg, rng)) {
      rec.parents = {static_cast<int>(pair->first), static_cast<int>(pair->second)};
    } else {
      rec.parents = {static_cast<int>(sample_parent(scores, cfg, rng))};
    }
    for (int p : rec.parents)
      parents.push_back(&res.history[static_cast<std::size_t>(p)]);

    auto set = generate_candidates(parents, cfg, proposer, round);
    rec.exhausted_slots = static_cast<int>(set.exhausted.size());
    for (const auto &c : set.candidates)
      rec.modifications.push_back(c.modification);
    if (set.candidates.empty()) {
      rec.skipped = true;
      rec.skip_reason = "no candidate survived checking";
      res.rounds.push_back(rec);
      if (observer)
        observer(rec, res.history);
      continue;
    }
    auto verdict = judge_select(set.candidates, parents, res.history, judge);
    rec.judge_table = verdict.table;
    rec.chosen = static_cast<int>(verdict.best);
    auto &winner = set.candidates[verdict.best];
    double score = evaluator.evaluate(winner.graph, winner.source);
    if (!(score >= 0.0 && score <= 1.0)) {
      rec.skipped = true;
      rec.skip_reason = "evaluator returned a score outside [0, 1]";
      res.rounds.push_back(rec);
      if (observer)
        observer(rec, res.history);
      continue;
    }
    rec.score = score;
    HistoryEntry e;
    e.workflow = std::move(winner.graph);
    e.source = std::move(winner.source);
    e.score = score;
    e.round = round;
    e.parents = rec.parents;
    e.modification = std::move(winner.modification);
    res.history.append(std::move(e));
    res.rounds.push_back(rec);
    if (observer)
      observer(rec, res.history);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Run manifest: everything needed to replay a run.

struct RunManifest {
  EvolutionConfig config;
  std::vector<std::pair<std::string, std::string>> seeds; // (path as given, Mermaid text)
  WorkflowFeatures target;
  std::string domain;        // "math" / "code"; empty = infer per seed
  std::string registry_path; // informational
  std::string registry_text; // empty = built-in registry
  std::string proposer = "builtin";
  std::string judge = "builtin";
  std::string evaluator = "synthetic";
  std::string tool_version;
  std::string created_at; // not used on replay
};

[[nodiscard]] inline nlohmann::json to_json(const RunManifest &m) {
  nlohmann::json seeds = nlohmann::json::array();
  for (const auto &[name, text] : m.seeds)
    seeds.push_back({{"path", name}, {"source", text}});
  return {{"format", "mermaidflow-run/1"},
          {"config", to_json(m.config)},
          {"seeds", seeds},
          {"target", to_json(m.target)},
          {"domain", m.domain},
          {"registry_path", m.registry_path},
          {"registry_text", m.registry_text},
          {"proposer", m.proposer},
          {"judge", m.judge},
          {"evaluator", m.evaluator},
          {"tool_version", m.tool_version},
          {"created_at", m.created_at}};
}

[[nodiscard]] inline RunManifest manifest_from_json(const nlohmann::json &j) {
  if (j.value("format", "") != "mermaidflow-run/1")
    throw std::invalid_argument("not a run manifest (format mermaidflow-run/1)");
  RunManifest m;
  m.config = evolution_config_from_json(j.at("config"));
  for (const auto &s : j.at("seeds"))
    m.seeds.emplace_back(s.at("path").get<std::string>(), s.at("source").get<std::string>());
  m.target = workflow_features_from_json(j.value("target", nlohmann::json::object()));
  m.domain = j.value("domain", "");
  m.registry_path = j.value("registry_path", "");
  m.registry_text = j.value("registry_text", "");
  m.proposer = j.value("proposer", "builtin");
  m.judge = j.value("judge", "builtin");
  m.evaluator = j.value("evaluator", "synthetic");
  m.tool_version = j.value("tool_version", "");
  m.created_at = j.value("created_at", "");
  return m;
}

} // namespace mermaidflow
