#pragma once

// Adapters that delegate proposing, judging or evaluating to an external
// process. The process is started once and kept alive; every call writes one
// JSON object on a line to its stdin and reads one JSON line back from its
// stdout. POSIX only.
//
//   propose  -> {"type":"propose","attempt":n,"seed":s,
//                "parents":[{"source":..,"score":..}],
//                "previous":null | {"text":..,"errors":[diagnostic...]}}
//            <- {"text":..,"modification":..}
//   judge    -> {"type":"judge","candidates":[{"source":..,"modification":..}],
//                "parents":[source...]}
//            <- {"scores":[[c,i,x,p,r], ...]}     five integers in [1,10]
//   evaluate -> {"type":"evaluate","source":..}
//            <- {"score":x}                          x in [0,1]
//
// A response of {"error":"..."} raises ExternalProcessError.

#include <csignal>
#include <cstdio>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "mermaidflow/evolution.hpp"

namespace mermaidflow {

class ExternalProcessError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ExternalProcess {
 public:
  // argv[0] is resolved through PATH.
  explicit ExternalProcess(std::vector<std::string> argv) : argv_(std::move(argv)) {
    if (argv_.empty())
      throw ExternalProcessError("external command is empty");
  }
  ExternalProcess(const ExternalProcess &) = delete;
  ExternalProcess &operator=(const ExternalProcess &) = delete;
  ~ExternalProcess() { stop(); }

  nlohmann::json call(const nlohmann::json &request) {
    std::lock_guard<std::mutex> lock(m_);
    start();
    std::string line = request.dump() + "\n";
    if (std::fwrite(line.data(), 1, line.size(), to_) != line.size() || std::fflush(to_) != 0)
      fail("cannot write to external process");
    std::string reply;
    for (int c; (c = std::fgetc(from_)) != EOF && c != '\n';)
      reply.push_back(static_cast<char>(c));
    if (reply.empty())
      fail("external process closed its output");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(reply);
    } catch (const nlohmann::json::parse_error &e) {
      throw ExternalProcessError("external process sent invalid JSON: " + std::string(e.what()));
    }
    if (j.is_object() && j.contains("error"))
      throw ExternalProcessError("external process error: " + j["error"].dump());
    return j;
  }

 private:
  void start() {
    if (pid_ > 0)
      return;
    int in[2], out[2];
    if (pipe(in) != 0 || pipe(out) != 0)
      throw ExternalProcessError("pipe failed");
    std::signal(SIGPIPE, SIG_IGN);
    pid_ = fork();
    if (pid_ < 0)
      throw ExternalProcessError("fork failed");
    if (pid_ == 0) {
      dup2(in[0], STDIN_FILENO);
      dup2(out[1], STDOUT_FILENO);
      close(in[0]);
      close(in[1]);
      close(out[0]);
      close(out[1]);
      std::vector<char *> args;
      for (auto &a : argv_)
        args.push_back(a.data());
      args.push_back(nullptr);
      execvp(args[0], args.data());
      _exit(127);
    }
    close(in[0]);
    close(out[1]);
    to_ = fdopen(in[1], "w");
    from_ = fdopen(out[0], "r");
  }

  void stop() {
    if (to_)
      std::fclose(to_);
    if (from_)
      std::fclose(from_);
    to_ = from_ = nullptr;
    if (pid_ > 0) {
      int status = 0;
      waitpid(pid_, &status, 0);
    }
    pid_ = -1;
  }

  [[noreturn]] void fail(const std::string &why) {
    stop();
    throw ExternalProcessError(why + " (" + argv_.front() + ")");
  }

  std::vector<std::string> argv_;
  pid_t pid_ = -1;
  FILE *to_ = nullptr;
  FILE *from_ = nullptr;
  std::mutex m_;
};

// Each adapter declares whether the external side may receive concurrent
// calls; the engine serializes calls otherwise. Calls through one process
// are always serialized by the process itself.

class ExternalProposer : public Proposer {
 public:
  explicit ExternalProposer(std::vector<std::string> argv, bool concurrent_safe = false)
      : proc_(std::move(argv)), safe_(concurrent_safe) {}

  Proposal propose(const ProposalRequest &req, std::mt19937_64 &rng) override {
    nlohmann::json parents = nlohmann::json::array();
    for (const auto *p : req.parents)
      parents.push_back({{"source", p->source}, {"score", p->score}});
    nlohmann::json prev = nullptr;
    if (req.previous)
      prev = {{"text", req.previous->text}, {"errors", to_json(req.previous->errors)}};
    auto r = proc_.call({{"type", "propose"},
                         {"attempt", req.attempt},
                         {"seed", rng()},
                         {"parents", parents},
                         {"previous", prev}});
    return Proposal{r.value("text", ""), r.value("modification", "")};
  }
  [[nodiscard]] bool concurrent_safe() const override { return safe_; }

 private:
  ExternalProcess proc_;
  bool safe_;
};

class ExternalJudge : public Judge {
 public:
  explicit ExternalJudge(std::vector<std::string> argv, bool concurrent_safe = false)
      : proc_(std::move(argv)), safe_(concurrent_safe) {}

  std::vector<JudgeScore> score(const std::vector<CandidateView> &candidates,
                                const std::vector<const HistoryEntry *> &parents,
                                const HistoryBuffer &) override {
    nlohmann::json cs = nlohmann::json::array(), ps = nlohmann::json::array();
    for (const auto &c : candidates)
      cs.push_back({{"source", *c.source}, {"modification", *c.modification}});
    for (const auto *p : parents)
      ps.push_back(p->source);
    auto r = proc_.call({{"type", "judge"}, {"candidates", cs}, {"parents", ps}});
    std::vector<JudgeScore> out;
    for (const auto &row : r.at("scores")) {
      JudgeScore s;
      if (row.size() != kJudgeDimensions)
        throw ExternalProcessError("judge row must have five scores");
      for (int i = 0; i < kJudgeDimensions; ++i)
        s.dims[static_cast<std::size_t>(i)] = row.at(static_cast<std::size_t>(i)).get<int>();
      out.push_back(s);
    }
    return out;
  }
  [[nodiscard]] bool concurrent_safe() const override { return safe_; }

 private:
  ExternalProcess proc_;
  bool safe_;
};

class ExternalEvaluator : public Evaluator {
 public:
  explicit ExternalEvaluator(std::vector<std::string> argv, bool concurrent_safe = false)
      : proc_(std::move(argv)), safe_(concurrent_safe) {}

  double evaluate(const WorkflowGraph &, const std::string &source) override {
    auto r = proc_.call({{"type", "evaluate"}, {"source", source}});
    return r.at("score").get<double>();
  }
  [[nodiscard]] bool concurrent_safe() const override { return safe_; }

 private:
  ExternalProcess proc_;
  bool safe_;
};

} // namespace mermaidflow
