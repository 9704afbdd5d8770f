// Drives the built command-line tool end to end.

#include <cstdlib>
#include <filesystem>

#include <sys/wait.h>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "mermaidflow/codegen.hpp"
#include "mermaidflow/validator.hpp"
#include "test_support.hpp"

using namespace mermaidflow;
using namespace mermaidflow::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("mermaidflow_cli_" + std::string(::testing::UnitTest::GetInstance()
                                                 ->current_test_info()
                                                 ->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Outcome run(const std::string &args, const std::string &env = {}) {
    auto out = dir_ / "stdout", err = dir_ / "stderr";
    std::string cmd = "cd '" + dir_.string() + "' && " + env + " '" + MERMAIDFLOW_CLI + "' " +
                      args + " >'" + out.string() + "' 2>'" + err.string() + "'";
    int status = std::system(cmd.c_str());
    Outcome r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = read_file(out);
    r.err = read_file(err);
    return r;
  }

  static std::string corpus(const std::string &name) {
    return "'" + (source_dir() / "corpus" / (name + ".mmd")).string() + "'";
  }
  static std::string data(const std::string &name) {
    return "'" + (source_dir() / "tests" / "data" / name).string() + "'";
  }
  static std::string demo_config() {
    return "'" + (source_dir() / "config" / "demo.conf").string() + "'";
  }

  fs::path dir_;
};

} // namespace

TEST_F(Cli, ValidateCorpus) {
  for (const auto &name : corpus_names()) {
    auto r = run("validate " + corpus(name));
    EXPECT_EQ(r.code, 0) << name << "\n" << r.err;
  }
}

TEST_F(Cli, ValidateReportsSingleW5Line) {
  auto r = run("validate " + data("single_branch_ensemble.mmd"));
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("W5 error ENSEMBLE", 0), 0u) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
}

TEST_F(Cli, ValidateMissingFileAndStdin) {
  EXPECT_EQ(run("validate does_not_exist.mmd").code, 2);
  auto r = run("validate - < " + corpus("mbpp_round8"));
  EXPECT_EQ(r.code, 0) << r.err;
}

TEST_F(Cli, ValidateJson) {
  auto r = run("--json validate " + data("single_branch_ensemble.mmd"));
  EXPECT_EQ(r.code, 1);
  auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["q"], 0);
  ASSERT_EQ(j["diagnostics"].size(), 1u);
  EXPECT_EQ(j["diagnostics"][0]["rule"], "W5");
}

TEST_F(Cli, MutateSubstitutionIsLocalAndDeterministic) {
  auto a = run("mutate " + corpus("math_round16") + " --op substitution --seed 5");
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.err.rfind("Substitution:", 0), 0u);
  auto b = run("mutate " + corpus("math_round16") + " --op substitution --seed 5");
  EXPECT_EQ(a.out, b.out);
  auto before = corpus_graph("math_round16");
  auto after = read_workflow(a.out).lowered.graph;
  ASSERT_TRUE(validate(after).valid());
  // Same node set and edges; exactly one node's attributes differ.
  ASSERT_EQ(before.nodes().size(), after.nodes().size());
  EXPECT_EQ(before.edges(), after.edges());
  int changed = 0;
  for (const auto &n : before.nodes()) {
    const auto *m = after.find(n.id);
    ASSERT_NE(m, nullptr);
    EXPECT_EQ(m->kind, n.kind);
    changed += m->attributes != n.attributes ? 1 : 0;
  }
  EXPECT_EQ(changed, 1);
}

TEST_F(Cli, MutateCrossoverGivesTwoValidProducts) {
  auto r = run("mutate " + corpus("gsm8k_round16") + " " + corpus("math_round16") +
               " --op crossover --seed 9");
  ASSERT_EQ(r.code, 0) << r.err;
  auto sep = r.out.find("%% --- product 2 ---\n");
  ASSERT_NE(sep, std::string::npos);
  EXPECT_TRUE(validate(r.out.substr(0, sep)).valid());
  EXPECT_TRUE(validate(r.out.substr(sep)).valid());
  auto j = nlohmann::json::parse(run("--json mutate " + corpus("gsm8k_round16") + " " +
                                     corpus("math_round16") + " --op crossover --seed 9")
                                     .out);
  EXPECT_EQ(j["products"].size(), 2u);
}

TEST_F(Cli, MutateExitCodes) {
  // No node can be removed without breaking typing.
  EXPECT_EQ(run("mutate " + data("ensemble_only.mmd") + " --op deletion --seed 1").code, 3);
  EXPECT_EQ(run("mutate " + corpus("minimal") + " --op deletion --seed 1").code, 3);
  EXPECT_EQ(run("mutate " + data("single_branch_ensemble.mmd") + " --op addition").code, 1);
  EXPECT_EQ(run("mutate " + corpus("minimal") + " --op teleport").code, 2);
  EXPECT_EQ(run("mutate " + corpus("minimal") + " --op crossover").code, 2);
  EXPECT_EQ(run("mutate").code, 2);
}

TEST_F(Cli, EmitCorpusAndRunDiff) {
  for (const auto &name : corpus_names()) {
    auto r = run("emit " + corpus(name) + " --out-dir gen");
    ASSERT_EQ(r.code, 0) << name << "\n" << r.err;
    auto program = read_file(dir_ / "gen" / (name + "_workflow.py"));
    EXPECT_TRUE(fs::exists(dir_ / "gen" / (name + "_prompt.py")));
    EXPECT_NE(program.find("import " + name + "_prompt as prompt_custom"), std::string::npos)
        << program.substr(0, 400);
    EXPECT_TRUE(structural_diff(program, corpus_graph(name)).empty());
  }
  auto he = read_file(dir_ / "gen" / "humaneval_round5_workflow.py");
  std::size_t branches = 0;
  for (auto pos = he.find("if not "); pos != std::string::npos; pos = he.find("if not ", pos + 1))
    ++branches;
  EXPECT_EQ(branches, 1u);
}

TEST_F(Cli, EmitFailures) {
  auto r = run("emit " + corpus("minimal"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("nothing to emit"), std::string::npos);
  EXPECT_EQ(run("emit " + data("single_branch_ensemble.mmd")).code, 1);
  EXPECT_EQ(run("emit " + corpus("gsm8k_round16") + " --templates no_such_dir").code, 2);
}

TEST_F(Cli, EmitWithShippedTemplates) {
  auto r = run("emit " + corpus("gsm8k_round16") + " --templates '" +
               (source_dir() / "templates" / "default").string() + "'");
  EXPECT_EQ(r.code, 0) << r.err;
}

TEST_F(Cli, ExportDot) {
  auto r = run("export-dot " + corpus("gsm8k_round16"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("digraph \"gsm8k_round16\"", 0), 0u);
  auto bad = run("export-dot " + data("single_branch_ensemble.mmd"));
  EXPECT_EQ(bad.code, 0);
  EXPECT_EQ(bad.out.rfind("// diagnostics:", 0), 0u);
  EXPECT_EQ(run("export-dot - < /dev/null").code, 2);
  std::ofstream(dir_ / "garbage.mmd") << "flowchart TD\n  A -->\n";
  EXPECT_EQ(run("export-dot garbage.mmd").code, 2);
}

TEST_F(Cli, EvolveDemoAndReplay) {
  auto r = run("evolve --config " + demo_config() + " --out first");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("round 20"), std::string::npos);
  EXPECT_NE(r.out.find("op="), std::string::npos);
  EXPECT_NE(r.out.find("judge="), std::string::npos);
  auto history = read_file(dir_ / "first" / "history.jsonl");
  auto lines = std::count(history.begin(), history.end(), '\n');
  EXPECT_GE(lines, 2);
  EXPECT_LE(lines, 21);

  auto again = run("evolve --config " + demo_config() + " --out second");
  ASSERT_EQ(again.code, 0);
  EXPECT_EQ(read_file(dir_ / "second" / "history.jsonl"), history);

  auto replay = run("evolve --replay first/manifest.json --out third");
  ASSERT_EQ(replay.code, 0) << replay.err;
  EXPECT_EQ(read_file(dir_ / "third" / "history.jsonl"), history);
}

TEST_F(Cli, EvolveOverridesAndErrors) {
  auto zero = run("evolve --config " + demo_config() + " --out zero --max-rounds 0");
  ASSERT_EQ(zero.code, 0) << zero.err;
  auto history = read_file(dir_ / "zero" / "history.jsonl");
  EXPECT_EQ(std::count(history.begin(), history.end(), '\n'), 1);

  auto env = run("evolve --config " + demo_config() + " --out env", "MERMAIDFLOW_MAX_ROUNDS=2");
  ASSERT_EQ(env.code, 0) << env.err;
  auto manifest = nlohmann::json::parse(read_file(dir_ / "env" / "manifest.json"));
  EXPECT_EQ(manifest["config"]["max_rounds"], 2);
  auto flag = run("evolve --config " + demo_config() + " --out flag --max-rounds 1",
                  "MERMAIDFLOW_MAX_ROUNDS=2");
  manifest = nlohmann::json::parse(read_file(dir_ / "flag" / "manifest.json"));
  EXPECT_EQ(manifest["config"]["max_rounds"], 1);

  EXPECT_EQ(run("evolve --config " + demo_config() + " --lambda 3").code, 2);
  EXPECT_EQ(run("evolve --config missing.conf").code, 2);
  EXPECT_EQ(run("evolve").code, 2);
  std::ofstream(dir_ / "bad_seed.conf")
      << "seed_workflow = " << (source_dir() / "tests" / "data" / "single_branch_ensemble.mmd").string()
      << "\n";
  EXPECT_EQ(run("evolve --config bad_seed.conf").code, 2);
}

TEST_F(Cli, EvolveAllRoundsFailing) {
  // A proposer that only ever returns broken text: every round is skipped.
  std::ofstream(dir_ / "broken.py") << "import sys, json\n"
                                       "for line in sys.stdin:\n"
                                       "    print(json.dumps({'text': 'flowchart TD\\n  A -->', "
                                       "'modification': 'broken'}), flush=True)\n";
  std::ofstream(dir_ / "failing.conf")
      << "seed_workflow = " << (source_dir() / "config" / "demo_seed.mmd").string() << "\n"
      << "max_rounds = 2\nproposer = python3 " << (dir_ / "broken.py").string() << "\n";
  auto r = run("evolve --config failing.conf --out fail");
  EXPECT_EQ(r.code, 1) << r.err;
  EXPECT_NE(r.out.find("skipped"), std::string::npos);
}

TEST_F(Cli, EvolveJsonLines) {
  auto r = run("--json evolve --config " + demo_config() + " --out j --max-rounds 3");
  ASSERT_EQ(r.code, 0);
  int n = 0;
  for (const auto &line : detail::raw_lines(r.out))
    if (!line.empty()) {
      EXPECT_TRUE(nlohmann::json::accept(line)) << line;
      ++n;
    }
  EXPECT_EQ(n, 4); // three rounds and a summary
}
