#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "arel/credit.hpp"

// Executable checks of the theory on exactly enumerable instances:
//   - return-equivalent decision processes share optimal policy sets,
//     verified by exhaustive enumeration of deterministic joint policies;
//   - a shared intermediate state makes uniform redistribution infeasible
//     (positive least-squares lower bound);
//   - the total loss is bounded by the bias-variance expression;
//   - prediction variance at initialization decreases with width.

namespace arel {

// ---------------------------------------------------------------------------
// Finite decision process with trajectory-level rewards. Transitions are
// Markov; the reward may depend on the entire observation/action trajectory
// tau = (o_0, a_0, ..., a_{T-1}, o_T), returned as per-step values.
// ---------------------------------------------------------------------------

struct DecPosdpSpec {
  int num_states = 0;
  int num_agents = 0;
  int num_actions = 0;  // per agent
  int horizon = 0;
  std::vector<double> initial;                    // p(s0), size num_states
  std::vector<std::vector<double>> transitions;   // [s * JA + ja] -> next-state distribution
  std::vector<std::vector<int>> observation;      // [agent][state] -> observation id
  std::function<std::vector<double>(const std::vector<int>& obs_seq, const std::vector<int>& act_seq)>
      step_rewards;  // length-horizon per-step rewards for a trajectory

  int joint_actions() const {
    int ja = 1;
    for (int i = 0; i < num_agents; ++i) ja *= num_actions;
    return ja;
  }

  void validate() const {
    if (num_states < 1 || num_agents < 1 || num_actions < 1 || horizon < 1) {
      throw ContractError("decposdp: non-positive dimensions");
    }
    if (static_cast<int>(initial.size()) != num_states) throw ContractError("decposdp: bad initial distribution size");
    auto check_dist = [](const std::vector<double>& d, const char* what) {
      double s = 0.0;
      for (double v : d) {
        if (v < -1e-12) throw ContractError(std::string("decposdp: negative probability in ") + what);
        s += v;
      }
      if (std::fabs(s - 1.0) > 1e-12) throw ContractError(std::string("decposdp: ") + what + " does not sum to 1");
    };
    check_dist(initial, "initial distribution");
    if (static_cast<int>(transitions.size()) != num_states * joint_actions()) {
      throw ContractError("decposdp: transition table size mismatch");
    }
    for (const auto& row : transitions) {
      if (static_cast<int>(row.size()) != num_states) throw ContractError("decposdp: transition row size mismatch");
      check_dist(row, "transition row");
    }
    if (static_cast<int>(observation.size()) != num_agents) throw ContractError("decposdp: observation map size mismatch");
    for (const auto& m : observation) {
      if (static_cast<int>(m.size()) != num_states) throw ContractError("decposdp: observation row size mismatch");
    }
    if (!step_rewards) throw ContractError("decposdp: reward function missing");
  }

  /// Distinct observation ids per agent, densified.
  std::vector<std::vector<int>> dense_observation_ids() const {
    std::vector<std::vector<int>> dense(static_cast<std::size_t>(num_agents),
                                        std::vector<int>(static_cast<std::size_t>(num_states)));
    for (int i = 0; i < num_agents; ++i) {
      std::map<int, int> remap;
      for (int s = 0; s < num_states; ++s) {
        const int o = observation[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)];
        auto [it, inserted] = remap.emplace(o, static_cast<int>(remap.size()));
        dense[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)] = it->second;
      }
    }
    return dense;
  }
};

/// Per-agent stochastic policies over dense observation ids.
struct JointPolicy {
  std::vector<std::vector<std::vector<double>>> pi;  // [agent][obs][action]

  static JointPolicy deterministic(const std::vector<std::vector<int>>& action_of, int num_actions) {
    JointPolicy p;
    p.pi.resize(action_of.size());
    for (std::size_t i = 0; i < action_of.size(); ++i) {
      p.pi[i].assign(action_of[i].size(), std::vector<double>(static_cast<std::size_t>(num_actions), 0.0));
      for (std::size_t o = 0; o < action_of[i].size(); ++o) {
        p.pi[i][o][static_cast<std::size_t>(action_of[i][o])] = 1.0;
      }
    }
    return p;
  }
};

namespace detail {

inline void decode_joint_action(int ja, int agents, int actions, std::vector<int>& out) {
  out.resize(static_cast<std::size_t>(agents));
  for (int i = agents - 1; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = ja % actions;
    ja /= actions;
  }
}

}  // namespace detail

/// Exact expected return: sum over all trajectories of probability times
/// total reward. Guarded by the enumeration budget |S|^T * |A_joint|^T.
inline double expected_return(const DecPosdpSpec& spec, const JointPolicy& policy) {
  spec.validate();
  const double budget = std::pow(static_cast<double>(spec.num_states), spec.horizon) *
                        std::pow(static_cast<double>(spec.joint_actions()), spec.horizon);
  if (budget > 1e6) throw SizeError("expected_return: enumeration budget exceeded");

  const auto dense = spec.dense_observation_ids();
  const int ja_count = spec.joint_actions();
  std::vector<int> joint(static_cast<std::size_t>(spec.num_agents));
  double total = 0.0;

  std::vector<int> obs_seq, act_seq;
  obs_seq.reserve(static_cast<std::size_t>(spec.horizon + 1) * spec.num_agents);
  act_seq.reserve(static_cast<std::size_t>(spec.horizon) * spec.num_agents);

  std::function<void(int, int, double)> recurse = [&](int t, int state, double prob) {
    for (int i = 0; i < spec.num_agents; ++i) {
      obs_seq.push_back(spec.observation[static_cast<std::size_t>(i)][static_cast<std::size_t>(state)]);
    }
    if (t == spec.horizon) {
      const auto rewards = spec.step_rewards(obs_seq, act_seq);
      total += prob * pairwise_sum(rewards);
    } else {
      for (int ja = 0; ja < ja_count; ++ja) {
        detail::decode_joint_action(ja, spec.num_agents, spec.num_actions, joint);
        double pa = 1.0;
        for (int i = 0; i < spec.num_agents; ++i) {
          const int o = dense[static_cast<std::size_t>(i)][static_cast<std::size_t>(state)];
          pa *= policy.pi[static_cast<std::size_t>(i)][static_cast<std::size_t>(o)]
                         [static_cast<std::size_t>(joint[static_cast<std::size_t>(i)])];
          if (pa == 0.0) break;
        }
        if (pa == 0.0) continue;
        const auto& row = spec.transitions[static_cast<std::size_t>(state * ja_count + ja)];
        for (int i = 0; i < spec.num_agents; ++i) act_seq.push_back(joint[static_cast<std::size_t>(i)]);
        for (int ns = 0; ns < spec.num_states; ++ns) {
          if (row[static_cast<std::size_t>(ns)] == 0.0) continue;
          recurse(t + 1, ns, prob * pa * row[static_cast<std::size_t>(ns)]);
        }
        act_seq.resize(act_seq.size() - static_cast<std::size_t>(spec.num_agents));
      }
    }
    obs_seq.resize(obs_seq.size() - static_cast<std::size_t>(spec.num_agents));
  };

  for (int s0 = 0; s0 < spec.num_states; ++s0) {
    if (spec.initial[static_cast<std::size_t>(s0)] == 0.0) continue;
    recurse(0, s0, spec.initial[static_cast<std::size_t>(s0)]);
  }
  return total;
}

/// Single Monte-Carlo rollout oracle for cross-checking expected_return.
inline double sample_return(const DecPosdpSpec& spec, const JointPolicy& policy, Rng& rng) {
  const auto dense = spec.dense_observation_ids();
  auto draw = [&rng](const std::vector<double>& dist) {
    double u = rng.uniform();
    for (std::size_t i = 0; i < dist.size(); ++i) {
      u -= dist[i];
      if (u <= 0.0) return static_cast<int>(i);
    }
    return static_cast<int>(dist.size()) - 1;
  };
  std::vector<int> obs_seq, act_seq;
  int state = draw(spec.initial);
  for (int t = 0; t <= spec.horizon; ++t) {
    for (int i = 0; i < spec.num_agents; ++i) {
      obs_seq.push_back(spec.observation[static_cast<std::size_t>(i)][static_cast<std::size_t>(state)]);
    }
    if (t == spec.horizon) break;
    int ja = 0;
    for (int i = 0; i < spec.num_agents; ++i) {
      const int o = dense[static_cast<std::size_t>(i)][static_cast<std::size_t>(state)];
      const int a = draw(policy.pi[static_cast<std::size_t>(i)][static_cast<std::size_t>(o)]);
      act_seq.push_back(a);
      ja = ja * spec.num_actions + a;
    }
    state = draw(spec.transitions[static_cast<std::size_t>(state * spec.joint_actions() + ja)]);
  }
  return pairwise_sum(spec.step_rewards(obs_seq, act_seq));
}

/// All deterministic joint policies (odometer over per-agent observation ->
/// action tables).
inline std::vector<JointPolicy> enumerate_deterministic_policies(const DecPosdpSpec& spec) {
  const auto dense = spec.dense_observation_ids();
  std::vector<int> obs_count(static_cast<std::size_t>(spec.num_agents), 0);
  for (int i = 0; i < spec.num_agents; ++i) {
    for (int s = 0; s < spec.num_states; ++s) {
      obs_count[static_cast<std::size_t>(i)] =
          std::max(obs_count[static_cast<std::size_t>(i)], dense[static_cast<std::size_t>(i)][static_cast<std::size_t>(s)] + 1);
    }
  }
  std::vector<std::vector<int>> action_of(static_cast<std::size_t>(spec.num_agents));
  for (int i = 0; i < spec.num_agents; ++i) {
    action_of[static_cast<std::size_t>(i)].assign(static_cast<std::size_t>(obs_count[static_cast<std::size_t>(i)]), 0);
  }
  std::vector<JointPolicy> out;
  while (true) {
    out.push_back(JointPolicy::deterministic(action_of, spec.num_actions));
    // odometer increment
    int i = 0;
    std::size_t o = 0;
    while (i < spec.num_agents) {
      auto& slot = action_of[static_cast<std::size_t>(i)][o];
      if (++slot < spec.num_actions) break;
      slot = 0;
      if (++o == action_of[static_cast<std::size_t>(i)].size()) {
        o = 0;
        ++i;
      }
    }
    if (i == spec.num_agents) break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Return equivalence (optimal-policy sets)
// ---------------------------------------------------------------------------

struct EquivalenceVerdict {
  bool structures_match = false;
  bool return_equivalent = false;  // per-trajectory totals agree
  bool same_optimal_sets = false;
  std::vector<int> optimal_a, optimal_b;  // indices into the enumerated policy list
  double best_a = 0.0, best_b = 0.0;
};

namespace detail {

/// Visits every trajectory with positive transition support (policy-free).
template <typename Fn>
void for_each_supported_trajectory(const DecPosdpSpec& spec, Fn&& fn) {
  const int ja_count = spec.joint_actions();
  std::vector<int> joint(static_cast<std::size_t>(spec.num_agents));
  std::vector<int> obs_seq, act_seq;
  std::function<void(int, int)> recurse = [&](int t, int state) {
    for (int i = 0; i < spec.num_agents; ++i) {
      obs_seq.push_back(spec.observation[static_cast<std::size_t>(i)][static_cast<std::size_t>(state)]);
    }
    if (t == spec.horizon) {
      fn(obs_seq, act_seq);
    } else {
      for (int ja = 0; ja < ja_count; ++ja) {
        decode_joint_action(ja, spec.num_agents, spec.num_actions, joint);
        const auto& row = spec.transitions[static_cast<std::size_t>(state * ja_count + ja)];
        for (int i = 0; i < spec.num_agents; ++i) act_seq.push_back(joint[static_cast<std::size_t>(i)]);
        for (int ns = 0; ns < spec.num_states; ++ns) {
          if (row[static_cast<std::size_t>(ns)] == 0.0) continue;
          recurse(t + 1, ns);
        }
        act_seq.resize(act_seq.size() - static_cast<std::size_t>(spec.num_agents));
      }
    }
    obs_seq.resize(obs_seq.size() - static_cast<std::size_t>(spec.num_agents));
  };
  for (int s0 = 0; s0 < spec.num_states; ++s0) {
    if (spec.initial[static_cast<std::size_t>(s0)] == 0.0) continue;
    recurse(0, s0);
  }
}

inline std::vector<int> argmax_set(const std::vector<double>& values, double tol = 1e-9) {
  double best = values[0];
  for (double v : values) best = std::max(best, v);
  std::vector<int> out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] >= best - tol * std::max(1.0, std::fabs(best))) out.push_back(static_cast<int>(i));
  }
  return out;
}

}  // namespace detail

/// Checks Definition/Theorem structure: both processes must share states,
/// observations and transitions (contract error otherwise). If per-trajectory
/// returns agree, asserts the exhaustively enumerated optimal-policy sets are
/// identical.
inline EquivalenceVerdict check_return_equivalence(const DecPosdpSpec& a, const DecPosdpSpec& b) {
  a.validate();
  b.validate();
  if (a.num_states != b.num_states || a.num_agents != b.num_agents || a.num_actions != b.num_actions ||
      a.horizon != b.horizon || a.initial != b.initial || a.observation != b.observation ||
      a.transitions != b.transitions) {
    throw ContractError("check_return_equivalence: processes differ beyond their reward functions");
  }
  EquivalenceVerdict v;
  v.structures_match = true;

  bool equal_returns = true;
  detail::for_each_supported_trajectory(a, [&](const std::vector<int>& obs_seq, const std::vector<int>& act_seq) {
    if (!equal_returns) return;
    const double ra = pairwise_sum(a.step_rewards(obs_seq, act_seq));
    const double rb = pairwise_sum(b.step_rewards(obs_seq, act_seq));
    if (std::fabs(ra - rb) > 1e-12 * std::max(1.0, std::fabs(ra))) equal_returns = false;
  });
  v.return_equivalent = equal_returns;
  if (!equal_returns) return v;  // hypothesis violated; not a theorem instance

  const auto policies = enumerate_deterministic_policies(a);
  std::vector<double> ea, eb;
  ea.reserve(policies.size());
  eb.reserve(policies.size());
  for (const auto& p : policies) {
    ea.push_back(expected_return(a, p));
    eb.push_back(expected_return(b, p));
  }
  v.optimal_a = detail::argmax_set(ea);
  v.optimal_b = detail::argmax_set(eb);
  v.best_a = *std::max_element(ea.begin(), ea.end());
  v.best_b = *std::max_element(eb.begin(), eb.end());
  v.same_optimal_sets = v.optimal_a == v.optimal_b;
  return v;
}

// ---------------------------------------------------------------------------
// Randomized return-equivalent instance family
// ---------------------------------------------------------------------------

struct TheoremFamilySummary {
  int instances = 0;
  int matched = 0;  // identical optimal sets
  bool ok = false;
};

/// Random Dec-POSDP with per-trajectory random step rewards derived from a
/// deterministic hash, so the reward function is pure.
inline DecPosdpSpec random_decposdp(int states, int agents, int actions, int horizon, std::uint64_t seed) {
  Rng rng(seed);
  DecPosdpSpec spec;
  spec.num_states = states;
  spec.num_agents = agents;
  spec.num_actions = actions;
  spec.horizon = horizon;
  spec.initial.resize(static_cast<std::size_t>(states));
  double z = 0.0;
  for (double& v : spec.initial) {
    v = 0.05 + rng.uniform();
    z += v;
  }
  for (double& v : spec.initial) v /= z;
  spec.transitions.resize(static_cast<std::size_t>(states) * spec.joint_actions());
  for (auto& row : spec.transitions) {
    row.resize(static_cast<std::size_t>(states));
    double rz = 0.0;
    for (double& v : row) {
      v = 0.05 + rng.uniform();
      rz += v;
    }
    for (double& v : row) v /= rz;
  }
  spec.observation.resize(static_cast<std::size_t>(agents));
  for (auto& m : spec.observation) {
    m.resize(static_cast<std::size_t>(states));
    if (rng.uniform() < 0.5) {
      for (int s = 0; s < states; ++s) m[static_cast<std::size_t>(s)] = s;  // fully observed
    } else {
      for (int s = 0; s < states; ++s) m[static_cast<std::size_t>(s)] = rng.uniform_int(0, states - 1);
    }
  }
  const std::uint64_t reward_seed = rng.next_u64();
  const int T = horizon;
  spec.step_rewards = [reward_seed, T](const std::vector<int>& obs_seq, const std::vector<int>& act_seq) {
    std::uint64_t h = reward_seed;
    auto fold = [&h](int v) {
      h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(v)) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    };
    for (int v : obs_seq) fold(v);
    fold(-7);
    for (int v : act_seq) fold(v);
    Rng r(h);
    std::vector<double> out(static_cast<std::size_t>(T));
    for (double& v : out) v = r.uniform(-1.0, 1.0);
    return out;
  };
  return spec;
}

/// Return-equivalent sibling: the final step's reward mass is moved to step
/// zero along every trajectory (totals preserved, per-step values changed).
inline DecPosdpSpec move_reward_mass(const DecPosdpSpec& a) {
  DecPosdpSpec b = a;
  auto base = a.step_rewards;
  b.step_rewards = [base](const std::vector<int>& obs_seq, const std::vector<int>& act_seq) {
    auto r = base(obs_seq, act_seq);
    if (r.size() >= 2) {
      r[0] += r.back();
      r.back() = 0.0;
    }
    return r;
  };
  return b;
}

inline TheoremFamilySummary run_theorem1_family(int instances, std::uint64_t seed, int states = 2, int agents = 2,
                                                int actions = 2, int horizon = 3) {
  TheoremFamilySummary summary;
  summary.instances = instances;
  Rng rng(seed);
  for (int i = 0; i < instances; ++i) {
    const auto a = random_decposdp(states, agents, actions, horizon, rng.next_u64());
    const auto b = move_reward_mass(a);
    const auto v = check_return_equivalence(a, b);
    if (!v.return_equivalent) continue;  // cannot happen by construction
    if (v.same_optimal_sets) ++summary.matched;
  }
  summary.ok = summary.matched == summary.instances;
  return summary;
}

// ---------------------------------------------------------------------------
// Uniform redistribution infeasibility
// ---------------------------------------------------------------------------

namespace detail {

/// Minimum of ||Ax - y||^2 for small dense systems via normal equations with
/// partial pivoting; near-zero pivots leave the variable at zero (any exact
/// solution of a consistent underdetermined system has residual 0). Returns
/// the residual sum of squares.
inline double least_squares_rss(int m, int n, const std::vector<double>& A, const std::vector<double>& y) {
  std::vector<double> G(static_cast<std::size_t>(n) * n, 0.0);  // A^T A
  std::vector<double> c(static_cast<std::size_t>(n), 0.0);      // A^T y
  for (int i = 0; i < m; ++i) {
    for (int p = 0; p < n; ++p) {
      c[static_cast<std::size_t>(p)] += A[static_cast<std::size_t>(i * n + p)] * y[static_cast<std::size_t>(i)];
      for (int q = 0; q < n; ++q) {
        G[static_cast<std::size_t>(p * n + q)] +=
            A[static_cast<std::size_t>(i * n + p)] * A[static_cast<std::size_t>(i * n + q)];
      }
    }
  }
  std::vector<int> col(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) col[static_cast<std::size_t>(i)] = i;
  std::vector<double> x(static_cast<std::size_t>(n), 0.0);
  int rank = 0;
  for (int k = 0; k < n; ++k) {
    int piv = -1;
    double best = 1e-12;
    for (int r = rank; r < n; ++r) {
      if (std::fabs(G[static_cast<std::size_t>(r * n + k)]) > best) {
        best = std::fabs(G[static_cast<std::size_t>(r * n + k)]);
        piv = r;
      }
    }
    if (piv < 0) continue;  // free variable, stays zero
    for (int q = 0; q < n; ++q) {
      std::swap(G[static_cast<std::size_t>(rank * n + q)], G[static_cast<std::size_t>(piv * n + q)]);
    }
    std::swap(c[static_cast<std::size_t>(rank)], c[static_cast<std::size_t>(piv)]);
    for (int r = 0; r < n; ++r) {
      if (r == rank) continue;
      const double f = G[static_cast<std::size_t>(r * n + k)] / G[static_cast<std::size_t>(rank * n + k)];
      if (f == 0.0) continue;
      for (int q = 0; q < n; ++q) {
        G[static_cast<std::size_t>(r * n + q)] -= f * G[static_cast<std::size_t>(rank * n + q)];
      }
      c[static_cast<std::size_t>(r)] -= f * c[static_cast<std::size_t>(rank)];
    }
    col[static_cast<std::size_t>(rank)] = k;
    ++rank;
  }
  for (int r = 0; r < rank; ++r) {
    x[static_cast<std::size_t>(col[static_cast<std::size_t>(r)])] =
        c[static_cast<std::size_t>(r)] / G[static_cast<std::size_t>(r * n + col[static_cast<std::size_t>(r)])];
  }
  double rss = 0.0;
  for (int i = 0; i < m; ++i) {
    double pred = 0.0;
    for (int p = 0; p < n; ++p) pred += A[static_cast<std::size_t>(i * n + p)] * x[static_cast<std::size_t>(p)];
    rss += (pred - y[static_cast<std::size_t>(i)]) * (pred - y[static_cast<std::size_t>(i)]);
  }
  return rss;
}

}  // namespace detail

struct UniformInfeasibilityVerdict {
  double constrained_min = 0.0;    // min regression loss: uniform per episode + shared state
  double relaxed_min = 0.0;        // shared-state constraint dropped
  double unconstrained_min = 0.0;  // state-consistent but non-uniform (5 free values)
  bool infeasible = false;         // no assignment reaches l_r = 0 and l_v = 0 together
};

/// Two length-3 episodes (a, s, b) and (c, s, d) sharing the middle state s,
/// with totals Rj and Rk. Zero variance forces a uniform value per episode
/// and the shared state forces the two values to coincide; the least-squares
/// minimum of the regression loss under that constraint is solved exactly
/// and is strictly positive whenever Rj != Rk. Dropping either constraint
/// brings the minimum back to zero.
inline UniformInfeasibilityVerdict check_uniform_infeasibility(double L = 3.0, double Rj = 3.0, double Rk = 6.0) {
  if (L < 1.0) throw ContractError("check_uniform_infeasibility: L must be >= 1");
  UniformInfeasibilityVerdict v;
  // uniform + shared state: one free value u, episode sums L*u
  {
    const std::vector<double> A{L, L};
    const std::vector<double> y{Rj, Rk};
    v.constrained_min = detail::least_squares_rss(2, 1, A, y) / (2.0 * L);
  }
  // uniform without the shared state: independent values per episode
  {
    const std::vector<double> A{L, 0.0, 0.0, L};
    const std::vector<double> y{Rj, Rk};
    v.relaxed_min = detail::least_squares_rss(2, 2, A, y) / (2.0 * L);
  }
  // state-consistent but non-uniform: one value per distinct state (for
  // L = 3 that is five free variables, two own states per episode plus the
  // shared middle state)
  {
    const int steps = static_cast<int>(L);
    const int n = 2 * (steps - 1) + 1;
    const int shared = n - 1;
    std::vector<double> A(static_cast<std::size_t>(2 * n), 0.0);
    for (int t = 0; t < steps - 1; ++t) {
      A[static_cast<std::size_t>(t)] = 1.0;                // episode j's own states
      A[static_cast<std::size_t>(n + steps - 1 + t)] = 1.0;  // episode k's own states
    }
    A[static_cast<std::size_t>(shared)] = 1.0;
    A[static_cast<std::size_t>(n + shared)] = 1.0;
    const std::vector<double> y{Rj, Rk};
    v.unconstrained_min = detail::least_squares_rss(2, n, A, y) / (2.0 * L);
  }
  v.infeasible = v.constrained_min > 0.0;
  return v;
}

// ---------------------------------------------------------------------------
// Loss bound (bias-variance form)
// ---------------------------------------------------------------------------

struct LossBoundVerdict {
  double loss_total = 0.0;
  double bound = 0.0;
  double slack = 0.0;  // bound - loss_total
  bool ok = false;
};

/// Evaluates both sides of loss_total <= sum_t [(1 + omega/T) Var_t +
/// bias_t^2] empirically over an explicit predictor ensemble. The ground
/// truth sums into the episodic reward by construction.
inline LossBoundVerdict evaluate_loss_bound(const std::vector<std::vector<double>>& predictions,
                                            const std::vector<double>& truth, double omega) {
  if (predictions.empty() || truth.empty()) throw ContractError("evaluate_loss_bound: empty ensemble");
  const int T = static_cast<int>(truth.size());
  const int S = static_cast<int>(predictions.size());
  const double episodic = pairwise_sum(truth);

  LossBoundVerdict v;
  for (const auto& fs : predictions) {
    if (static_cast<int>(fs.size()) != T) throw ContractError("evaluate_loss_bound: prediction length mismatch");
    double sum_f = 0.0;
    for (double x : fs) sum_f += x;
    const double timemean = sum_f / T;
    const double resid = sum_f - episodic;
    double var_time = 0.0;
    for (double x : fs) var_time += (x - timemean) * (x - timemean);
    v.loss_total += resid * resid / T + omega * var_time / T;
  }
  v.loss_total /= S;

  for (int t = 0; t < T; ++t) {
    double mean_t = 0.0;
    for (const auto& fs : predictions) mean_t += fs[static_cast<std::size_t>(t)];
    mean_t /= S;
    double var_t = 0.0;
    for (const auto& fs : predictions) {
      var_t += (fs[static_cast<std::size_t>(t)] - mean_t) * (fs[static_cast<std::size_t>(t)] - mean_t);
    }
    var_t /= S;
    const double bias = mean_t - truth[static_cast<std::size_t>(t)];
    v.bound += (1.0 + omega / T) * var_t + bias * bias;
  }
  v.slack = v.bound - v.loss_total;
  v.ok = v.slack >= -1e-9;
  return v;
}

/// Builds a random predictor ensemble satisfying the derivation's hypotheses
/// (every sample's time-mean equals the common ensemble mean: deviations are
/// time-centered and sign-symmetrized), then evaluates both sides.
inline LossBoundVerdict check_loss_bound(int T, double omega, int sample_pairs, Rng& rng) {
  if (T < 1 || sample_pairs < 1) throw ContractError("check_loss_bound: bad sizes");
  std::vector<double> truth(static_cast<std::size_t>(T));
  for (double& v : truth) v = rng.uniform(-1.0, 1.0);
  const double mu = rng.uniform(-1.0, 1.0);

  const int S = 2 * sample_pairs;
  std::vector<std::vector<double>> f(static_cast<std::size_t>(S), std::vector<double>(static_cast<std::size_t>(T)));
  for (int p = 0; p < sample_pairs; ++p) {
    std::vector<double> d(static_cast<std::size_t>(T));
    double m = 0.0;
    for (double& v : d) {
      v = rng.uniform(-1.0, 1.0);
      m += v;
    }
    m /= T;
    for (double& v : d) v -= m;
    for (int t = 0; t < T; ++t) {
      f[static_cast<std::size_t>(2 * p)][static_cast<std::size_t>(t)] = mu + d[static_cast<std::size_t>(t)];
      f[static_cast<std::size_t>(2 * p + 1)][static_cast<std::size_t>(t)] = mu - d[static_cast<std::size_t>(t)];
    }
  }
  return evaluate_loss_bound(f, truth, omega);
}

// ---------------------------------------------------------------------------
// Width-variance trend
// ---------------------------------------------------------------------------

struct WidthVarianceVerdict {
  std::vector<int> widths;
  std::vector<double> variances;
  std::vector<std::vector<double>> outputs;  // raw per-init outputs per width
  double slope = 0.0;                        // d log(var) / d log(width)
  bool sufficient_span = false;
  bool ok = false;  // slope <= -0.5 when the span is sufficient
};

/// Least-squares slope of log(variance) against log(width).
inline double loglog_slope(const std::vector<int>& widths, const std::vector<double>& variances) {
  const std::size_t n = widths.size();
  double mx = 0.0, my = 0.0;
  std::vector<double> xs(n), ys(n);
  for (std::size_t i = 0; i < n; ++i) {
    xs[i] = std::log(static_cast<double>(widths[i]));
    ys[i] = std::log(std::max(variances[i], 1e-300));
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    num += (xs[i] - mx) * (ys[i] - my);
    den += (xs[i] - mx) * (xs[i] - mx);
  }
  return num / den;
}

/// Variance over random initializations theta_0 ~ N(0, I/P) (P = parameter
/// count) of the credit-head output at a fixed input, as a function of the
/// hidden width. Only the decreasing trend is assertable; the theorem's
/// constant is unknown.
inline WidthVarianceVerdict check_width_variance_trend(const std::vector<int>& widths, int inits, Rng& rng,
                                                       int feature_dim = 16) {
  WidthVarianceVerdict v;
  v.widths = widths;
  Tensor z({1, 1, feature_dim});
  for (double& x : z.values()) x = rng.uniform(-1.0, 1.0);

  for (int w : widths) {
    std::vector<double> outputs;
    outputs.reserve(static_cast<std::size_t>(inits));
    for (int i = 0; i < inits; ++i) {
      Rng init_rng = rng.spawn();
      CreditHead head(feature_dim, init_rng, w);
      std::vector<std::pair<std::string, Tensor>> params;
      head.collect_parameters(params);
      long long count = 0;
      for (auto& [name, t] : params) count += t.size();
      const double std = 1.0 / std::sqrt(static_cast<double>(count));
      for (auto& [name, t] : params) {
        Tensor tt = t;
        for (double& x : tt.values()) x = init_rng.normal(0.0, std);
      }
      outputs.push_back(head.forward(z).values()[0]);
    }
    double m = 0.0;
    for (double x : outputs) m += x;
    m /= inits;
    double var = 0.0;
    for (double x : outputs) var += (x - m) * (x - m);
    var /= inits;
    v.variances.push_back(var);
    v.outputs.push_back(std::move(outputs));
  }

  if (widths.size() < 2 ||
      static_cast<double>(widths.back()) / widths.front() < 10.0) {  // needs at least a decade of span
    v.sufficient_span = false;
    return v;
  }
  v.sufficient_span = true;
  v.slope = loglog_slope(widths, v.variances);
  v.ok = v.slope <= -0.5;
  return v;
}

}  // namespace arel
