#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <unordered_map>
#include <vector>

#include "arel/checkpoint.hpp"
#include "arel/envs.hpp"
#include "arel/redistribution.hpp"

// A deliberately simple decentralized learner: per-observation tabular
// softmax policies trained with REINFORCE and a running-mean baseline. It
// consumes whatever dense reward the active redistribution strategy
// produces, so differences between strategies are isolated from the policy
// machinery. Homogeneous agents share one table.

namespace arel {

enum class Strategy { Arel, Uniform, Final };

inline const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::Arel: return "arel";
    case Strategy::Uniform: return "uniform";
    case Strategy::Final: return "final";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "arel") return Strategy::Arel;
  if (s == "uniform") return Strategy::Uniform;
  if (s == "final") return Strategy::Final;
  throw ConfigError("unknown strategy '" + s + "' (expected arel, uniform or final)");
}

class TabularPolicy {
 public:
  explicit TabularPolicy(int num_actions) : num_actions_(num_actions) {
    if (num_actions_ < 1) throw ConfigError("policy: at least one action required");
  }

  int num_actions() const { return num_actions_; }
  std::size_t table_size() const { return prefs_.size(); }

  /// Softmax action probabilities; unseen observations are uniform.
  std::vector<double> probs(std::uint64_t key) const {
    std::vector<double> p(static_cast<std::size_t>(num_actions_));
    auto it = prefs_.find(key);
    if (it == prefs_.end()) {
      const double u = 1.0 / num_actions_;
      for (double& v : p) v = u;
      return p;
    }
    double mx = it->second[0];
    for (double v : it->second) mx = std::max(mx, v);
    double z = 0.0;
    for (int a = 0; a < num_actions_; ++a) {
      p[static_cast<std::size_t>(a)] = std::exp(it->second[static_cast<std::size_t>(a)] - mx);
      z += p[static_cast<std::size_t>(a)];
    }
    for (double& v : p) v /= z;
    return p;
  }

  /// Samples from the epsilon-softened policy: (1-eps) * softmax + eps/|A|.
  int sample(std::uint64_t key, double epsilon, Rng& rng) const {
    if (epsilon < 0.0 || epsilon > 1.0) throw ContractError("sample: epsilon outside [0, 1]");
    if (rng.uniform() < epsilon) return rng.uniform_int(0, num_actions_ - 1);
    const auto p = probs(key);
    double u = rng.uniform();
    for (int a = 0; a < num_actions_; ++a) {
      u -= p[static_cast<std::size_t>(a)];
      if (u <= 0.0) return a;
    }
    return num_actions_ - 1;
  }

  /// Highest-probability action, ties broken by lowest id.
  int greedy(std::uint64_t key) const {
    const auto p = probs(key);
    int best = 0;
    for (int a = 1; a < num_actions_; ++a) {
      if (p[static_cast<std::size_t>(a)] > p[static_cast<std::size_t>(best)]) best = a;
    }
    return best;
  }

  /// Score-function step: prefs[key] += lr * advantage * (onehot(a) - pi).
  void reinforce(std::uint64_t key, int action, double advantage, double lr) {
    if (action < 0 || action >= num_actions_) throw ContractError("reinforce: invalid action");
    auto p = probs(key);
    auto& row = prefs_.try_emplace(key, std::vector<double>(static_cast<std::size_t>(num_actions_), 0.0))
                    .first->second;
    for (int a = 0; a < num_actions_; ++a) {
      const double indicator = a == action ? 1.0 : 0.0;
      row[static_cast<std::size_t>(a)] += lr * advantage * (indicator - p[static_cast<std::size_t>(a)]);
    }
  }

  std::vector<CheckpointRecord> to_records() const {
    std::vector<CheckpointRecord> out;
    out.reserve(prefs_.size());
    for (const auto& [key, row] : prefs_) {
      char name[32];
      std::snprintf(name, sizeof(name), "policy/%016llx", static_cast<unsigned long long>(key));
      out.push_back({name, Shape{num_actions_}, row});
    }
    return out;
  }

  static TabularPolicy from_records(const std::vector<CheckpointRecord>& records, int num_actions) {
    TabularPolicy p(num_actions);
    for (const auto& r : records) {
      if (r.name.rfind("policy/", 0) != 0) continue;
      if (r.shape != Shape{num_actions}) {
        throw ValidationError("policy record " + r.name + " has wrong shape " + shape_str(r.shape));
      }
      const std::uint64_t key = std::strtoull(r.name.c_str() + 7, nullptr, 16);
      p.prefs_[key] = r.values;
    }
    return p;
  }

 private:
  int num_actions_;
  std::unordered_map<std::uint64_t, std::vector<double>> prefs_;
};

// ---------------------------------------------------------------------------
// Rollouts
// ---------------------------------------------------------------------------

struct RolloutResult {
  Trajectory trajectory;
  std::vector<std::uint64_t> obs_keys;  // T*N, for the tabular update
  bool success = false;
  double hidden_return = 0.0;  // true return from hidden rewards (evaluation)
  double coverage = 0.0;
};

/// Plays one full fixed-horizon episode. Exploration comes only from the
/// epsilon mixture here; the environment itself is deterministic given the
/// reset seed.
inline RolloutResult rollout(GridEnv& env, const TabularPolicy& policy, double epsilon, std::uint64_t env_seed,
                             Rng& action_rng, long long episode_id = -1) {
  env.reset(env_seed);
  const EnvSpec& spec = env.spec();
  RolloutResult out;
  Trajectory& traj = out.trajectory;
  traj.T = spec.horizon;
  traj.N = spec.agents;
  traj.obs_dim = env.obs_dim();
  traj.seed = env_seed;
  traj.episode_id = episode_id;
  traj.observations.reserve(static_cast<std::size_t>(traj.T) * traj.N * traj.obs_dim);
  traj.actions.reserve(static_cast<std::size_t>(traj.T) * traj.N);
  out.obs_keys.reserve(static_cast<std::size_t>(traj.T) * traj.N);

  double revealed = 0.0;
  for (int t = 0; t < spec.horizon; ++t) {
    std::vector<int> acts(static_cast<std::size_t>(spec.agents));
    for (int i = 0; i < spec.agents; ++i) {
      const auto obs = env.observe(i);
      traj.observations.insert(traj.observations.end(), obs.begin(), obs.end());
      const std::uint64_t key = env.observe_key(i);
      out.obs_keys.push_back(key);
      acts[static_cast<std::size_t>(i)] = policy.sample(key, epsilon, action_rng);
    }
    traj.actions.insert(traj.actions.end(), acts.begin(), acts.end());
    auto res = env.step(acts);
    if (res.done) revealed = res.revealed_reward;
  }
  traj.episodic_reward = revealed;
  traj.hidden_rewards = env.hidden_rewards();
  out.success = env.success();
  out.hidden_return = env.hidden_sum();
  out.coverage = env.coverage();
  return out;
}

// ---------------------------------------------------------------------------
// Policy update
// ---------------------------------------------------------------------------

struct PolicyUpdateConfig {
  double lr = 0.05;
  double gamma = 1.0;
  double baseline_rate = 0.05;  // EMA rate of the running-mean baseline
};

/// REINFORCE with baseline on one episode of dense rewards: every agent
/// ascends log pi(a_t | o_t) * (G_t - b) where G_t is the gamma-discounted
/// tail sum of dense rewards.
inline void policy_update(TabularPolicy& policy, const RolloutResult& ro, const std::vector<double>& dense_rewards,
                          const PolicyUpdateConfig& cfg, double& baseline) {
  const Trajectory& traj = ro.trajectory;
  if (static_cast<int>(dense_rewards.size()) != traj.T) {
    throw ContractError("policy_update: dense reward length must equal the horizon");
  }
  std::vector<double> tail(static_cast<std::size_t>(traj.T));
  double g = 0.0;
  for (int t = traj.T - 1; t >= 0; --t) {
    g = dense_rewards[static_cast<std::size_t>(t)] + cfg.gamma * g;
    if (!std::isfinite(g)) throw NumericError("policy_update: non-finite return at t=" + std::to_string(t));
    tail[static_cast<std::size_t>(t)] = g;
  }
  double mean_g = 0.0;
  for (int t = 0; t < traj.T; ++t) {
    const double adv = tail[static_cast<std::size_t>(t)] - baseline;
    for (int i = 0; i < traj.N; ++i) {
      const std::size_t ix = static_cast<std::size_t>(t * traj.N + i);
      policy.reinforce(ro.obs_keys[ix], traj.actions[ix], adv, cfg.lr);
    }
    mean_g += tail[static_cast<std::size_t>(t)];
  }
  mean_g /= traj.T;
  baseline += cfg.baseline_rate * (mean_g - baseline);
}

/// Dense reward for one episode under the active strategy. The credit model
/// is consulted with its current parameters every time (never cached).
inline std::vector<double> strategy_rewards(Strategy strategy, const Trajectory& traj, const CreditModel* model,
                                            double alpha) {
  switch (strategy) {
    case Strategy::Arel: {
      if (!model) throw ContractError("strategy_rewards: credit model required for arel");
      auto pred = model->redistribute(traj.observations_tensor(), traj.episode_id);
      return mix_rewards(pred.values, traj.episodic_reward, alpha);
    }
    case Strategy::Uniform: {
      return std::vector<double>(static_cast<std::size_t>(traj.T),
                                 traj.episodic_reward / static_cast<double>(traj.T));
    }
    case Strategy::Final: {
      std::vector<double> out(static_cast<std::size_t>(traj.T), 0.0);
      out.back() = traj.episodic_reward;
      return out;
    }
  }
  throw ContractError("strategy_rewards: unreachable");
}

}  // namespace arel
