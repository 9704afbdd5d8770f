#include <gtest/gtest.h>

#include "mermaidflow/dot.hpp"
#include "mermaidflow/run.hpp"
#include "test_support.hpp"

using namespace mermaidflow;
using namespace mermaidflow::testing;

namespace {

EnvLookup no_env() {
  return [](const std::string &) -> std::optional<std::string> { return std::nullopt; };
}

EnvLookup env_of(std::map<std::string, std::string> vars) {
  return [vars](const std::string &k) -> std::optional<std::string> {
    if (auto it = vars.find(k); it != vars.end())
      return it->second;
    return std::nullopt;
  };
}

const char *kBasic = R"(# comment
seed_workflow = seeds/a.mmd
lambda = 0.5   # trailing comment
max_rounds = 7
)";

} // namespace

TEST(RunConfig, ParsesKeysAndResolvesPaths) {
  auto s = parse_run_config(kBasic, "/base", no_env());
  EXPECT_DOUBLE_EQ(s.config.lambda, 0.5);
  EXPECT_EQ(s.config.max_rounds, 7);
  EXPECT_DOUBLE_EQ(s.config.alpha, 5.0);
  ASSERT_EQ(s.seed_paths.size(), 1u);
  EXPECT_EQ(s.seed_paths[0], std::filesystem::path("/base/seeds/a.mmd"));
  EXPECT_EQ(s.output, std::filesystem::path("run"));
}

TEST(RunConfig, PrecedenceFlagOverEnvOverFile) {
  auto file_only = parse_run_config(kBasic, "", no_env());
  EXPECT_EQ(file_only.config.max_rounds, 7);
  auto with_env = parse_run_config(kBasic, "", env_of({{"MERMAIDFLOW_MAX_ROUNDS", "9"}}));
  EXPECT_EQ(with_env.config.max_rounds, 9);
  auto with_flag = parse_run_config(kBasic, "", env_of({{"MERMAIDFLOW_MAX_ROUNDS", "9"}}),
                                    {{"max_rounds", "11"}});
  EXPECT_EQ(with_flag.config.max_rounds, 11);
  auto defaults = parse_run_config("seed_workflow = a.mmd\n", "", no_env());
  EXPECT_EQ(defaults.config.max_rounds, 20);
  EXPECT_EQ(defaults.config.candidate_pool, 4);
  EXPECT_DOUBLE_EQ(defaults.config.crossover_rate, 0.10);
}

TEST(RunConfig, WeightsAreNormalized) {
  auto s = parse_run_config("seed_workflow = a.mmd\nweight.addition = 2\nweight.deletion = 0\n"
                            "weight.substitution = 1\nweight.rewiring = 1\n"
                            "weight.subgraphmutation = 0\nweight.crossover = 0\n",
                            "", no_env());
  const auto &w = s.config.operator_weights;
  EXPECT_DOUBLE_EQ(w[OperatorKind::Addition], 0.5);
  EXPECT_DOUBLE_EQ(w[OperatorKind::Substitution], 0.25);
  EXPECT_DOUBLE_EQ(w[OperatorKind::Deletion], 0.0);
  auto eff = s.config.effective_weights();
  EXPECT_DOUBLE_EQ(eff[OperatorKind::Crossover], 0.10);
  EXPECT_NEAR(eff[OperatorKind::Addition], 0.45, 1e-12);
}

TEST(RunConfig, RejectsBadInput) {
  EXPECT_THROW((void)parse_run_config("lambda = 0.5\n", "", no_env()), ConfigError); // no seed
  EXPECT_THROW((void)parse_run_config("seed_workflow = a\nlambda = 2\n", "", no_env()),
               ConfigError);
  EXPECT_THROW((void)parse_run_config("seed_workflow = a\nlamda = 0.2\n", "", no_env()),
               ConfigError);
  EXPECT_THROW((void)parse_run_config("seed_workflow = a\nmax_rounds = ten\n", "", no_env()),
               ConfigError);
  EXPECT_THROW((void)parse_run_config("seed_workflow = a\njust words\n", "", no_env()),
               ConfigError);
  EXPECT_THROW((void)parse_run_config("seed_workflow = a\nweight.teleport = 1\n", "", no_env()),
               ConfigError);
  EXPECT_THROW((void)parse_run_config("seed_workflow = a\n", "",
                                      env_of({{"MERMAIDFLOW_SEED", "-4"}})),
               ConfigError);
}

TEST(RunConfig, DemoConfigLoads) {
  auto s = load_run_config(source_dir() / "config" / "demo.conf", no_env());
  EXPECT_EQ(s.config.max_rounds, 20);
  EXPECT_EQ(s.config.candidate_pool, 4);
  EXPECT_DOUBLE_EQ(s.config.lambda, 0.3);
  EXPECT_DOUBLE_EQ(s.config.alpha, 5.0);
  EXPECT_DOUBLE_EQ(s.config.crossover_rate, 0.10);
  ASSERT_EQ(s.seed_paths.size(), 1u);
  EXPECT_TRUE(std::filesystem::exists(s.seed_paths[0]));
}

TEST(RunManifest, ReplayIsByteIdentical) {
  auto s = load_run_config(source_dir() / "config" / "demo.conf", no_env());
  auto m = make_manifest(s);
  EXPECT_EQ(m.tool_version, std::string(kToolVersion));
  EXPECT_FALSE(m.created_at.empty());
  auto first = run_manifest(m);
  auto back = manifest_from_json(nlohmann::json::parse(to_json(m).dump()));
  auto second = run_manifest(back);
  EXPECT_EQ(history_jsonl(first.history), history_jsonl(second.history));
  EXPECT_GT(first.history.best_score(), first.history[0].score);
}

TEST(RunManifest, InvalidSeedIsAConfigError) {
  RunManifest m;
  m.seeds = {{"bad", read_file(source_dir() / "tests" / "data" / "single_branch_ensemble.mmd")}};
  EXPECT_THROW((void)prepare_run(m), ConfigError);
}

TEST(RunManifest, OperatorOfModification) {
  EXPECT_EQ(operator_of("Addition: inserted C2 on PROBLEM->C1"), "Addition");
  EXPECT_EQ(operator_of("seed"), "-");
  EXPECT_EQ(operator_of("rename: x"), "-");
}

TEST(Dot, CorpusShapeAndLabels) {
  auto g = corpus_graph("gsm8k_round16");
  auto dot = to_dot(g);
  int nodes = 0, edges = 0, labeled = 0;
  for (const auto &line : detail::raw_lines(dot)) {
    if (line.find(" -> ") != std::string::npos) {
      ++edges;
      if (line.find("[label=\"\"") == std::string::npos && line.find("[label=") != std::string::npos)
        ++labeled;
    } else if (line.find("shape=") != std::string::npos) {
      ++nodes;
    }
  }
  EXPECT_EQ(nodes, 10);
  EXPECT_EQ(edges, 14);
  EXPECT_EQ(labeled, 14);
  EXPECT_EQ(dot.rfind("digraph", 0), 0u); // valid graph: no diagnostics header
  EXPECT_NE(dot.find("fillcolor=\"#f9c2c2\""), std::string::npos);
  EXPECT_NE(dot.find("shape=ellipse"), std::string::npos);
}

TEST(Dot, InvalidGraphGetsDiagnosticsHeader) {
  auto text = read_file(source_dir() / "tests" / "data" / "single_branch_ensemble.mmd");
  auto g = read_workflow(text).lowered.graph;
  auto dot = to_dot(g);
  EXPECT_EQ(dot.rfind("// diagnostics:", 0), 0u);
  EXPECT_NE(dot.find("W5 error ENSEMBLE"), std::string::npos);
  EXPECT_NE(dot.find("digraph"), std::string::npos);
}

TEST(Dot, QuotesSpecialCharacters) {
  EXPECT_EQ(detail::dot_quote("a\"b\\c\nd"), "\"a\\\"b\\\\c\\nd\"");
}
