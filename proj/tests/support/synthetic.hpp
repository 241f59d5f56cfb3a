#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "arel/redistribution.hpp"

// Synthetic decomposition task used as an independent oracle: episodes whose
// hidden per-step rewards are a known function of the observations, summed
// into the episodic reward. Training sees only the sum; evaluation compares
// predictions against the hidden values.

namespace arel::testing {

struct SyntheticSpec {
  int T = 10;
  int N = 3;
  int obs_dim = 6;
  // observations decompose into a per-agent episode latent plus step noise;
  // the hidden reward is a fixed linear functional of the joint observation
  double episode_scale = 1.0;
  double step_scale = 0.5;
  // weight of a cross-agent routing term: the same functional applied to the
  // agent holding the largest episode-level leading coordinate
  double interaction = 0.0;
  std::uint64_t seed = 1;
};

/// Hidden reward at one step.
inline double synthetic_step_reward(const SyntheticSpec& spec, const std::vector<double>& weights,
                                    const double* step_obs, int lead) {
  const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(spec.N));
  double linear = 0.0;
  for (int i = 0; i < spec.N; ++i) {
    const double* o = step_obs + static_cast<std::size_t>(i) * spec.obs_dim;
    for (int d = 0; d < spec.obs_dim; ++d) linear += weights[static_cast<std::size_t>(d)] * o[d];
  }
  double routed = 0.0;
  if (spec.interaction != 0.0) {
    const double* o = step_obs + static_cast<std::size_t>(lead) * spec.obs_dim;
    for (int d = 0; d < spec.obs_dim; ++d) routed += weights[static_cast<std::size_t>(d)] * o[d];
  }
  return inv_sqrt_n * linear + spec.interaction * routed;
}

inline std::vector<double> synthetic_weights(const SyntheticSpec& spec) {
  Rng rng(spec.seed ^ 0xabcdef12345ull);
  std::vector<double> w(static_cast<std::size_t>(spec.obs_dim));
  double norm = 0.0;
  for (double& v : w) {
    v = rng.normal();
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (double& v : w) v /= norm;
  return w;
}

/// data_seed controls the observation draws; the reward weights depend only
/// on spec.seed, so held-out sets share the generator.
inline std::vector<Trajectory> make_synthetic_dataset(const SyntheticSpec& spec, int episodes,
                                                      long long id_base = 0, std::uint64_t data_seed = 0) {
  const auto weights = synthetic_weights(spec);
  Rng rng(data_seed ? data_seed : spec.seed);
  std::vector<Trajectory> out;
  out.reserve(static_cast<std::size_t>(episodes));
  for (int e = 0; e < episodes; ++e) {
    Trajectory t;
    t.T = spec.T;
    t.N = spec.N;
    t.obs_dim = spec.obs_dim;
    t.seed = spec.seed;
    t.episode_id = id_base + e;
    t.observations.resize(static_cast<std::size_t>(spec.T) * spec.N * spec.obs_dim);
    t.actions.assign(static_cast<std::size_t>(spec.T) * spec.N, 0);

    // per-agent episode latents; the agent with the largest leading
    // coordinate carries the routed reward share
    std::vector<double> latent(static_cast<std::size_t>(spec.N) * spec.obs_dim);
    for (double& v : latent) v = spec.episode_scale * rng.uniform(-1.0, 1.0);
    int lead = 0;
    for (int i = 1; i < spec.N; ++i) {
      if (latent[static_cast<std::size_t>(i) * spec.obs_dim] > latent[static_cast<std::size_t>(lead) * spec.obs_dim]) {
        lead = i;
      }
    }
    for (int step = 0; step < spec.T; ++step) {
      for (int i = 0; i < spec.N; ++i) {
        for (int d = 0; d < spec.obs_dim; ++d) {
          t.observations[static_cast<std::size_t>((step * spec.N + i) * spec.obs_dim + d)] =
              latent[static_cast<std::size_t>(i * spec.obs_dim + d)] + spec.step_scale * rng.uniform(-1.0, 1.0);
        }
      }
    }
    t.hidden_rewards.resize(static_cast<std::size_t>(spec.T));
    for (int step = 0; step < spec.T; ++step) {
      const double* so = t.observations.data() + static_cast<std::size_t>(step) * spec.N * spec.obs_dim;
      t.hidden_rewards[static_cast<std::size_t>(step)] = synthetic_step_reward(spec, weights, so, lead);
    }
    t.episodic_reward = pairwise_sum(t.hidden_rewards);
    out.push_back(std::move(t));
  }
  return out;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

/// Correlation between predicted and hidden per-step rewards over a dataset.
inline double heldout_correlation(const CreditModel& model, const std::vector<Trajectory>& data) {
  std::vector<double> pred, truth;
  for (const auto& t : data) {
    auto r = model.redistribute(t.observations_tensor(), t.episode_id);
    pred.insert(pred.end(), r.values.begin(), r.values.end());
    truth.insert(truth.end(), t.hidden_rewards.begin(), t.hidden_rewards.end());
  }
  return pearson(pred, truth);
}

}  // namespace arel::testing
