#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "arel/envs.hpp"

using namespace arel;

namespace {

EnvSpec nav_spec(int agents = 3, int grid = 7, int horizon = 6) {
  EnvSpec s;
  s.task = Task::MiniNav;
  s.agents = agents;
  s.grid = grid;
  s.horizon = horizon;
  return s;
}

EnvSpec button_spec(int horizon = 8, int grid = 7) {
  EnvSpec s;
  s.task = Task::TwoButton;
  s.agents = 2;
  s.grid = grid;
  s.horizon = horizon;
  return s;
}

std::vector<int> all_stay(int n) { return std::vector<int>(static_cast<std::size_t>(n), kStay); }

}  // namespace

TEST_CASE("reset with the same seed reproduces the layout", "[envs]") {
  GridEnv a(nav_spec()), b(nav_spec());
  a.reset(123);
  b.reset(123);
  REQUIRE(a.state().agents.size() == 3);
  REQUIRE(a.state().landmarks.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    REQUIRE(a.state().agents[i] == b.state().agents[i]);
    REQUIRE(a.state().landmarks[i] == b.state().landmarks[i]);
  }
  a.reset(124);
  bool any_diff = false;
  for (std::size_t i = 0; i < 3; ++i) any_diff = any_diff || !(a.state().agents[i] == b.state().agents[i]);
  REQUIRE(any_diff);
}

TEST_CASE("two_button places two mirrored buttons", "[envs]") {
  GridEnv env(button_spec());
  env.reset(5);
  REQUIRE(env.state().landmarks.size() == 2);
  REQUIRE_FALSE(env.state().landmarks[0] == env.state().landmarks[1]);
  REQUIRE(env.state().landmarks[0].row == env.state().landmarks[1].row);
  REQUIRE_FALSE(env.success());
}

TEST_CASE("infeasible layouts are configuration errors", "[envs]") {
  EnvSpec s = nav_spec(5, 2);
  REQUIRE_THROWS_AS(GridEnv(s), ConfigError);
  EnvSpec b = button_spec(8, 3);
  REQUIRE_THROWS_AS(GridEnv(b), ConfigError);
}

TEST_CASE("rewards stay hidden until the final step", "[envs]") {
  GridEnv env(nav_spec(2, 5, 4));
  env.reset(9);
  Rng rng(10);
  double last = 0.0;
  for (int t = 0; t < 4; ++t) {
    std::vector<int> acts{rng.uniform_int(0, 4), rng.uniform_int(0, 4)};
    auto res = env.step(acts);
    if (t < 3) {
      REQUIRE(res.revealed_reward == 0.0);
      REQUIRE_FALSE(res.done);
    } else {
      REQUIRE(res.done);
      last = res.revealed_reward;
    }
  }
  REQUIRE(std::fabs(last - env.hidden_sum()) <= 1e-12);
  REQUIRE(env.hidden_rewards().size() == 4);
  REQUIRE_THROWS_AS(env.step(all_stay(2)), ContractError);
}

TEST_CASE("distinct-button presses open the door, same-button presses do not", "[envs]") {
  GridEnv env(button_spec(4));
  const auto buttons = [&] {
    env.reset(1);
    return env.state().landmarks;
  }();

  env.reset_with({buttons[0], buttons[1]}, buttons);
  auto res = env.step({kPress, kPress});
  REQUIRE(env.success());
  // bonus minus zero distance shaping = lambda3
  REQUIRE(env.hidden_rewards()[0] == Catch::Approx(1.0));

  env.reset_with({buttons[0], buttons[0]}, buttons);
  env.step({kPress, kPress});
  REQUIRE_FALSE(env.success());
  REQUIRE(env.hidden_rewards()[0] < 0.5);  // only the shaping penalty for the far agent

  // pressing while off the buttons does nothing
  env.reset_with({GridPos{0, 0}, GridPos{0, 1}}, buttons);
  env.step({kPress, kPress});
  REQUIRE_FALSE(env.success());
}

TEST_CASE("invalid actions are contract errors", "[envs]") {
  GridEnv env(button_spec(4));
  env.reset(2);
  REQUIRE_THROWS_AS(env.step({kPress, 17}), ContractError);
  REQUIRE_THROWS_AS(env.step({kPress}), ContractError);
}

TEST_CASE("observation of a co-located landmark is a zero offset", "[envs]") {
  EnvSpec s = nav_spec(1, 5, 3);
  s.obs_k = 1;
  GridEnv env(s);
  env.reset_with({GridPos{2, 2}}, {GridPos{2, 2}});
  auto obs = env.observe(0);
  REQUIRE(static_cast<int>(obs.size()) == env.obs_dim());
  REQUIRE(obs[2] == 0.0);  // landmark offset (0, 0)
  REQUIRE(obs[3] == 0.0);
  REQUIRE(obs[4] == 0.0);  // no other agents: zero padding
  REQUIRE(obs[5] == 0.0);
}

TEST_CASE("observation length is constant regardless of proximity", "[envs]") {
  GridEnv env(nav_spec(3, 7, 3));
  env.reset(77);
  const auto len = env.observe(0).size();
  for (int t = 0; t < 3; ++t) env.step(all_stay(3));
  REQUIRE(env.observe(0).size() == len);
  REQUIRE(static_cast<int>(len) == env.obs_dim());
}

TEST_CASE("equidistant neighbours are ordered by index", "[envs]") {
  EnvSpec s = nav_spec(3, 7, 3);
  s.obs_k = 2;
  GridEnv env(s);
  // agents 1 and 2 equidistant from agent 0
  env.reset_with({GridPos{3, 3}, GridPos{3, 5}, GridPos{5, 3}},
                 {GridPos{0, 0}, GridPos{0, 6}, GridPos{6, 6}});
  auto ints = env.observe_ints(0);
  // slots after own position and 2 landmark slots: first other agent is index 1
  REQUIRE(ints[6] == 0);
  REQUIRE(ints[7] == 2);  // agent 1 at (3,5)
  REQUIRE(ints[8] == 2);
  REQUIRE(ints[9] == 0);  // agent 2 at (5,3)

  // swapping the two equidistant agents swaps only the slot order
  env.reset_with({GridPos{3, 3}, GridPos{5, 3}, GridPos{3, 5}},
                 {GridPos{0, 0}, GridPos{0, 6}, GridPos{6, 6}});
  auto swapped = env.observe_ints(0);
  REQUIRE(swapped[6] == 2);
  REQUIRE(swapped[7] == 0);
  REQUIRE(swapped[8] == 0);
  REQUIRE(swapped[9] == 2);
}

TEST_CASE("episodic masking holds for random seeds and policies", "[envs][property]") {
  Rng outer(31);
  for (int trial = 0; trial < 10; ++trial) {
    GridEnv env(trial % 2 == 0 ? nav_spec(2, 5, 5) : button_spec(5, 5));
    env.reset(outer.next_u64());
    for (int t = 0; t < 5; ++t) {
      std::vector<int> acts;
      for (int i = 0; i < env.spec().agents; ++i) acts.push_back(outer.uniform_int(0, kNumActions - 1));
      auto res = env.step(acts);
      if (t < 4) {
        REQUIRE(res.revealed_reward == 0.0);
      } else {
        REQUIRE(std::fabs(res.revealed_reward - env.hidden_sum()) <= 1e-12);
      }
    }
  }
}

TEST_CASE("a seed and action sequence fully determine the trajectory", "[envs][property]") {
  auto run = [] {
    GridEnv env(nav_spec(2, 6, 6));
    std::vector<double> log = env.reset(55);
    Rng rng(56);
    for (int t = 0; t < 6; ++t) {
      auto res = env.step({rng.uniform_int(0, 5), rng.uniform_int(0, 5)});
      log.insert(log.end(), res.observations.begin(), res.observations.end());
      log.push_back(res.revealed_reward);
    }
    return log;
  };
  REQUIRE(run() == run());
}

TEST_CASE("relabeling agents permutes observations and preserves the reward", "[envs][property]") {
  EnvSpec s = nav_spec(3, 6, 5);
  GridEnv a(s), b(s);
  const std::vector<GridPos> landmarks{GridPos{0, 0}, GridPos{5, 5}, GridPos{2, 4}};
  const std::vector<GridPos> agents{GridPos{1, 1}, GridPos{4, 2}, GridPos{3, 3}};
  // permutation (0 1 2) -> (2 0 1)
  const std::vector<GridPos> permuted{agents[2], agents[0], agents[1]};

  a.reset_with(agents, landmarks);
  b.reset_with(permuted, landmarks);
  Rng rng(71);
  for (int t = 0; t < 5; ++t) {
    std::vector<int> acts{rng.uniform_int(0, 5), rng.uniform_int(0, 5), rng.uniform_int(0, 5)};
    const std::vector<int> acts_permuted{acts[2], acts[0], acts[1]};
    a.step(acts);
    b.step(acts_permuted);
    // agent i of A corresponds to agent (i+1)%3 ... mapping: B's agent 0 is A's agent 2
    REQUIRE(b.observe_ints(0) == a.observe_ints(2));
    REQUIRE(b.observe_ints(1) == a.observe_ints(0));
    REQUIRE(b.observe_ints(2) == a.observe_ints(1));
  }
  REQUIRE(a.hidden_sum() == Catch::Approx(b.hidden_sum()).margin(1e-12));
}

TEST_CASE("large-N configurations are constructible", "[envs]") {
  for (int n : {6, 15}) {
    GridEnv env(nav_spec(n, 9, 3));
    env.reset(3);
    REQUIRE(static_cast<int>(env.state().agents.size()) == n);
    env.step(all_stay(n));
  }
}
