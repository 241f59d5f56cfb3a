#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "arel/config.hpp"
#include "arel/experiment.hpp"
#include "arel/io.hpp"

using namespace arel;

TEST_CASE("config files parse with comments and whitespace", "[config]") {
  const std::string text = R"(
# comparison run
env.name = two_button
env.agents = 2
env.horizon = 20
strategy = arel
alpha = 0.8          # mixing weight
omega = 20
regularizer = variance
seeds = 3, 5, 8
episodes = 100
)";
  auto cfg = parse_config_text(text);
  REQUIRE(cfg.env.task == Task::TwoButton);
  REQUIRE(cfg.alpha == 0.8);
  REQUIRE(cfg.seeds == std::vector<std::uint64_t>{3, 5, 8});
  REQUIRE(cfg.episodes == 100);
  // untouched keys keep their defaults
  REQUIRE(cfg.heads == 4);
  REQUIRE(cfg.embed_dim == 64);
}

TEST_CASE("unknown keys are rejected by name", "[config]") {
  REQUIRE_THROWS_MATCHES(parse_config_text("episodse = 5\n"), ConfigError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("episodse")));
}

TEST_CASE("constrained fields are validated on load", "[config]") {
  REQUIRE_THROWS_AS(parse_config_text("alpha = 1.5\n"), ConfigError);
  REQUIRE_THROWS_AS(parse_config_text("omega = -1\n"), ConfigError);
  REQUIRE_THROWS_AS(parse_config_text("depth = 0\n"), ConfigError);
  REQUIRE_THROWS_AS(parse_config_text("heads = 3\nembed_dim = 64\n"), ConfigError);
  REQUIRE_THROWS_AS(parse_config_text("strategy = maddpg\n"), ConfigError);
  REQUIRE_THROWS_AS(parse_config_text("alpha = banana\n"), ConfigError);
  REQUIRE_THROWS_AS(parse_config_text("alpha = 1\nalpha = 0\n"), ConfigError);
  REQUIRE_THROWS_AS(parse_config_text("seeds = \n"), ConfigError);
}

TEST_CASE("ablation grids are expressible as config sweeps", "[config]") {
  for (double alpha : {1.0, 0.8, 0.5}) {
    auto cfg = parse_config_text("alpha = " + std::to_string(alpha) + "\n");
    REQUIRE(cfg.alpha == Catch::Approx(alpha));
  }
  for (double omega : {0.1, 1.0, 10.0, 20.0, 50.0, 100.0}) {
    auto cfg = parse_config_text("omega = " + std::to_string(omega) + "\n");
    REQUIRE(cfg.omega == Catch::Approx(omega));
  }
  auto uniform = parse_config_text("agent_attention = uniform\n");
  REQUIRE(uniform.uniform_agent_attention);
  for (int depth : {1, 3, 6}) {
    auto cfg = parse_config_text("depth = " + std::to_string(depth) + "\n");
    REQUIRE(cfg.depth == depth);
  }
}

TEST_CASE("canonical text round-trips to the same hash", "[config]") {
  auto cfg = parse_config_text("env.name = mini_nav\nenv.agents = 3\nalpha = 0.5\nomega = 10\n");
  auto reparsed = parse_config_text(cfg.canonical_text());
  REQUIRE(config_hash(cfg) == config_hash(reparsed));
  REQUIRE(cfg.canonical_text() == reparsed.canonical_text());
}

TEST_CASE("atomic text writes land complete", "[io]") {
  namespace fs = std::filesystem;
  const std::string path = "/tmp/arel_test_io/inner/file.txt";
  fs::remove_all("/tmp/arel_test_io");
  atomic_write_text(path, "hello\n");
  REQUIRE(read_text(path) == "hello\n");
  REQUIRE_FALSE(fs::exists(path + ".tmp"));
  atomic_write_text(path, "replaced\n");
  REQUIRE(read_text(path) == "replaced\n");
  fs::remove_all("/tmp/arel_test_io");
}

TEST_CASE("attention traces export as labelled JSON", "[io]") {
  Rng rng(3);
  AttentionConfig acfg;
  acfg.obs_dim = 3;
  acfg.embed_dim = 8;
  acfg.heads = 2;
  acfg.max_time = 4;
  AttentionStack stack(acfg, rng);
  Tensor obs({4, 2, 3});
  for (double& v : obs.values()) v = rng.uniform(-1, 1);
  AttentionTrace trace;
  stack.forward(obs, {}, &trace);
  auto j = trace_to_json(trace);
  REQUIRE(j["blocks"].size() == 1);
  const auto& tem = j["blocks"][0]["temporal"];
  REQUIRE(tem["axes"] == nlohmann::json({"head", "agent", "t_query", "t_key"}));
  REQUIRE(tem["weights"].size() == 2);      // heads
  REQUIRE(tem["weights"][0].size() == 2);   // agents
  REQUIRE(tem["weights"][0][0].size() == 4);  // queries
  const auto& agt = j["blocks"][0]["agent"];
  REQUIRE(agt["axes"] == nlohmann::json({"head", "t", "agent_query", "agent_key"}));
  // weight rows parse back as normalized distributions
  double s = 0.0;
  for (const auto& v : agt["weights"][0][0][0]) s += v.get<double>();
  REQUIRE(s == Catch::Approx(1.0).margin(1e-9));
}
