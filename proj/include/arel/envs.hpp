#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "arel/common.hpp"

// Miniature episodic-reward grid tasks. Per-step rewards are computed and
// accumulated but hidden: step() reveals 0 until the final step, which
// reveals the accumulated sum. The hidden per-step values stay available for
// evaluation only.
//
// mini_nav   N agents, N landmarks; per-step penalty for distance to the
//            nearest landmark and for agents sharing a cell.
// two_button two buttons and a door; pressing both buttons in the same step
//            opens the door and earns the bonus, plus the usual distance
//            shaping toward the buttons.

namespace arel {

enum class Task { MiniNav, TwoButton };

inline const char* task_name(Task t) { return t == Task::MiniNav ? "mini_nav" : "two_button"; }

inline Task parse_task(const std::string& s) {
  if (s == "mini_nav") return Task::MiniNav;
  if (s == "two_button") return Task::TwoButton;
  throw ConfigError("unknown env '" + s + "' (expected mini_nav or two_button)");
}

struct GridPos {
  int row = 0;
  int col = 0;
  bool operator==(const GridPos&) const = default;
};

inline int manhattan(GridPos a, GridPos b) { return std::abs(a.row - b.row) + std::abs(a.col - b.col); }

struct EnvSpec {
  Task task = Task::TwoButton;
  int agents = 2;
  int grid = 7;
  int horizon = 20;  // T
  int obs_k = 2;     // nearest-k entities in each observation
  double lambda1 = 0.05;  // distance penalty weight
  double lambda2 = 0.10;  // collision penalty weight (mini_nav)
  double lambda3 = 1.00;  // simultaneous-press bonus (two_button)

  int landmarks() const { return task == Task::MiniNav ? agents : 2; }

  void validate() const {
    if (agents < 1) throw ConfigError("env: agents must be >= 1");
    if (horizon < 1) throw ConfigError("env: horizon must be >= 1");
    if (grid < 2) throw ConfigError("env: grid must be >= 2");
    if (obs_k < 0) throw ConfigError("env: obs_k must be >= 0");
    if (!std::isfinite(lambda1) || !std::isfinite(lambda2) || !std::isfinite(lambda3)) {
      throw ConfigError("env: reward coefficients must be finite");
    }
    if (landmarks() > grid * grid) {
      throw ConfigError("env: " + std::to_string(landmarks()) + " landmarks do not fit a " +
                        std::to_string(grid) + "x" + std::to_string(grid) + " grid");
    }
    if (task == Task::TwoButton && grid < 4) throw ConfigError("env: two_button needs grid >= 4");
  }
};

/// Actions shared by every task.
enum Action : int { kStay = 0, kUp = 1, kDown = 2, kLeft = 3, kRight = 4, kPress = 5 };
inline constexpr int kNumActions = 6;

struct EnvState {
  std::vector<GridPos> agents;
  std::vector<GridPos> landmarks;  // buttons for two_button
  int step = 0;
  bool door_open = false;
  std::vector<double> hidden;  // per-step hidden rewards, evaluation only
};

struct StepResult {
  std::vector<double> observations;  // N x obs_dim
  double revealed_reward = 0.0;      // 0 until the final step
  bool done = false;
};

class GridEnv {
 public:
  explicit GridEnv(EnvSpec spec) : spec_(spec) { spec_.validate(); }

  const EnvSpec& spec() const { return spec_; }
  int obs_dim() const { return 2 + 4 * spec_.obs_k; }
  int num_actions() const { return kNumActions; }

  /// Seeds the layout: agents always randomized; mini_nav landmarks
  /// randomized to distinct cells, two_button buttons at fixed mirrored
  /// positions.
  std::vector<double> reset(std::uint64_t seed) {
    Rng rng(seed ^ 0x5eedf00dULL);
    state_ = EnvState{};
    state_.agents.resize(static_cast<std::size_t>(spec_.agents));
    for (auto& a : state_.agents) a = random_cell(rng);
    if (spec_.task == Task::MiniNav) {
      state_.landmarks.clear();
      while (static_cast<int>(state_.landmarks.size()) < spec_.landmarks()) {
        GridPos p = random_cell(rng);
        bool dup = false;
        for (const auto& l : state_.landmarks) dup = dup || l == p;
        if (!dup) state_.landmarks.push_back(p);
      }
    } else {
      const int mid = spec_.grid / 2;
      state_.landmarks = {GridPos{mid, 1}, GridPos{mid, spec_.grid - 2}};
    }
    return observe_all();
  }

  /// Places an explicit layout (tests and exact-oracle runs).
  std::vector<double> reset_with(std::vector<GridPos> agents, std::vector<GridPos> landmarks) {
    if (static_cast<int>(agents.size()) != spec_.agents ||
        static_cast<int>(landmarks.size()) != spec_.landmarks()) {
      throw ContractError("reset_with: layout does not match the spec");
    }
    for (const auto& p : agents) check_inside(p);
    for (const auto& p : landmarks) check_inside(p);
    state_ = EnvState{};
    state_.agents = std::move(agents);
    state_.landmarks = std::move(landmarks);
    return observe_all();
  }

  StepResult step(const std::vector<int>& joint_action) {
    if (state_.step >= spec_.horizon) throw ContractError("step: episode already finished");
    if (static_cast<int>(joint_action.size()) != spec_.agents) {
      throw ContractError("step: expected one action per agent");
    }
    for (int a : joint_action) {
      if (a < 0 || a >= kNumActions) throw ContractError("step: invalid action id " + std::to_string(a));
    }
    for (std::size_t i = 0; i < state_.agents.size(); ++i) {
      apply_move(state_.agents[i], joint_action[i]);
    }
    state_.hidden.push_back(step_reward(joint_action));
    ++state_.step;

    StepResult out;
    out.observations = observe_all();
    out.done = state_.step == spec_.horizon;
    out.revealed_reward = out.done ? pairwise_sum(state_.hidden) : 0.0;
    return out;
  }

  /// Observation: own position, then the k nearest landmarks and k nearest
  /// other agents as relative offsets (nearest by Manhattan distance, ties
  /// broken by lowest index, zero-padded), all scaled by the grid size.
  std::vector<double> observe(int agent) const {
    const auto key = observe_ints(agent);
    std::vector<double> out(key.size());
    const double s = 1.0 / static_cast<double>(spec_.grid - 1);
    for (std::size_t i = 0; i < key.size(); ++i) out[i] = key[i] * s;
    return out;
  }

  /// Integer feature vector underlying observe(); exact, suitable for
  /// tabular policy keys.
  std::vector<int> observe_ints(int agent) const {
    if (agent < 0 || agent >= spec_.agents) throw ContractError("observe: agent index out of range");
    const GridPos self = state_.agents[static_cast<std::size_t>(agent)];
    std::vector<int> out;
    out.reserve(static_cast<std::size_t>(obs_dim()));
    out.push_back(self.row);
    out.push_back(self.col);
    append_nearest(out, self, state_.landmarks, -1);
    append_nearest(out, self, state_.agents, agent);
    return out;
  }

  std::uint64_t observe_key(int agent) const {
    const auto ints = observe_ints(agent);
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (int v : ints) {
      h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(v + (1 << 16)));
      h *= 1099511628211ULL;
    }
    return h;
  }

  const EnvState& state() const { return state_; }
  const std::vector<double>& hidden_rewards() const { return state_.hidden; }
  double hidden_sum() const { return pairwise_sum(state_.hidden); }
  bool success() const { return spec_.task == Task::TwoButton ? state_.door_open : false; }

  /// Fraction of agents standing on distinct landmarks (mini_nav coverage
  /// metric used by evaluation).
  double coverage() const {
    int covered = 0;
    for (const auto& l : state_.landmarks) {
      for (const auto& a : state_.agents) {
        if (a == l) {
          ++covered;
          break;
        }
      }
    }
    return static_cast<double>(covered) / static_cast<double>(state_.landmarks.size());
  }

 private:
  GridPos random_cell(Rng& rng) const {
    return GridPos{rng.uniform_int(0, spec_.grid - 1), rng.uniform_int(0, spec_.grid - 1)};
  }

  void check_inside(GridPos p) const {
    if (p.row < 0 || p.row >= spec_.grid || p.col < 0 || p.col >= spec_.grid) {
      throw ContractError("position outside the grid");
    }
  }

  void apply_move(GridPos& p, int action) const {
    switch (action) {
      case kUp: p.row = std::max(0, p.row - 1); break;
      case kDown: p.row = std::min(spec_.grid - 1, p.row + 1); break;
      case kLeft: p.col = std::max(0, p.col - 1); break;
      case kRight: p.col = std::min(spec_.grid - 1, p.col + 1); break;
      default: break;  // stay / press keep the position
    }
  }

  double step_reward(const std::vector<int>& joint_action) {
    double r = 0.0;
    for (const auto& a : state_.agents) {
      int best = spec_.grid * 2;
      for (const auto& l : state_.landmarks) best = std::min(best, manhattan(a, l));
      r -= spec_.lambda1 * best;
    }
    if (spec_.task == Task::MiniNav) {
      int collisions = 0;
      for (std::size_t i = 0; i < state_.agents.size(); ++i)
        for (std::size_t j = i + 1; j < state_.agents.size(); ++j)
          if (state_.agents[i] == state_.agents[j]) ++collisions;
      r -= spec_.lambda2 * collisions;
    } else {
      // bonus only when distinct buttons are pressed in the same step
      std::vector<bool> pressed(state_.landmarks.size(), false);
      for (std::size_t i = 0; i < state_.agents.size(); ++i) {
        if (joint_action[i] != kPress) continue;
        for (std::size_t b = 0; b < state_.landmarks.size(); ++b) {
          if (state_.agents[i] == state_.landmarks[b]) pressed[b] = true;
        }
      }
      const int distinct = static_cast<int>(std::count(pressed.begin(), pressed.end(), true));
      if (distinct >= 2) {
        r += spec_.lambda3;
        state_.door_open = true;
      }
    }
    return r;
  }

  void append_nearest(std::vector<int>& out, GridPos self, const std::vector<GridPos>& entities,
                      int skip_index) const {
    std::vector<int> order;
    for (int i = 0; i < static_cast<int>(entities.size()); ++i) {
      if (i != skip_index) order.push_back(i);
    }
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return manhattan(self, entities[static_cast<std::size_t>(a)]) <
             manhattan(self, entities[static_cast<std::size_t>(b)]);
    });
    for (int k = 0; k < spec_.obs_k; ++k) {
      if (k < static_cast<int>(order.size())) {
        const GridPos e = entities[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])];
        out.push_back(e.row - self.row);
        out.push_back(e.col - self.col);
      } else {
        out.push_back(0);
        out.push_back(0);
      }
    }
  }

  std::vector<double> observe_all() const {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(spec_.agents) * obs_dim());
    for (int i = 0; i < spec_.agents; ++i) {
      auto o = observe(i);
      out.insert(out.end(), o.begin(), o.end());
    }
    return out;
  }

  EnvSpec spec_;
  EnvState state_;
};

}  // namespace arel
