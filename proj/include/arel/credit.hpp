#pragma once

#include <string>
#include <utility>
#include <vector>

#include "arel/attention.hpp"
#include "arel/tensor.hpp"

// Permutation-invariant credit readout and the losses used to train it.
// The readout is a sum decomposition: rhat_t = g2(sum_i g1(z_{t,i})), with g1
// and g2 shared across agents and time, so reordering agents cannot change
// the prediction. The agent sum uses deterministic pairwise summation.

namespace arel {

/// Per-timestep predicted rewards for one episode.
struct RedistributedReward {
  std::vector<double> values;
  long long episode_id = -1;

  double total() const { return pairwise_sum(values); }
};

class CreditHead {
 public:
  CreditHead(int embed_dim, Rng& rng, int hidden = 50)
      : g1a_(embed_dim, hidden, rng), g1b_(hidden, hidden, rng), g2a_(hidden, hidden, rng), g2b_(hidden, 1, rng) {}

  /// z is T x N x D; returns the length-T prediction vector.
  Tensor forward(const Tensor& z) const {
    if (z.rank() != 3) throw ShapeError("credit head: input must be T x N x D");
    if (z.dim(1) < 1) throw ContractError("credit head: at least one agent required");
    const int T = z.dim(0);
    Tensor a = relu(g1a_.apply(z));        // T x N x H
    Tensor bfeat = relu(g1b_.apply(a));    // T x N x H
    Tensor pooled = sum_axis(bfeat, 1);    // T x H, pairwise over agents
    Tensor h = relu(g2a_.apply(pooled));   // T x H
    Tensor r = g2b_.apply(h);              // T x 1
    return reshape(r, {T});
  }

  RedistributedReward predict_rewards(const Tensor& z, long long episode_id = -1) const {
    Tensor r = forward(z);
    RedistributedReward out;
    out.values = r.values();
    out.episode_id = episode_id;
    for (double v : out.values) {
      if (!std::isfinite(v)) throw NumericError("predict_rewards: non-finite prediction");
    }
    return out;
  }

  void collect_parameters(std::vector<std::pair<std::string, Tensor>>& out) const {
    out.emplace_back("credit.g1a.w", g1a_.w);
    out.emplace_back("credit.g1a.b", g1a_.b);
    out.emplace_back("credit.g1b.w", g1b_.w);
    out.emplace_back("credit.g1b.b", g1b_.b);
    out.emplace_back("credit.g2a.w", g2a_.w);
    out.emplace_back("credit.g2a.b", g2a_.b);
    out.emplace_back("credit.g2b.w", g2b_.w);
    out.emplace_back("credit.g2b.b", g2b_.b);
  }

 private:
  Linear g1a_, g1b_, g2a_, g2b_;
};

// ---------------------------------------------------------------------------
// Losses. Each takes per-episode prediction vectors (ragged lengths allowed)
// and reduces by the arithmetic mean over episodes.
// ---------------------------------------------------------------------------

enum class Regularizer { Variance, L1, L2 };

inline const char* regularizer_name(Regularizer r) {
  switch (r) {
    case Regularizer::Variance: return "variance";
    case Regularizer::L1: return "l1";
    case Regularizer::L2: return "l2";
  }
  return "?";
}

inline Regularizer parse_regularizer(const std::string& s) {
  if (s == "variance") return Regularizer::Variance;
  if (s == "l1") return Regularizer::L1;
  if (s == "l2") return Regularizer::L2;
  throw ConfigError("unknown regularizer '" + s + "' (expected variance, l1 or l2)");
}

namespace detail {

inline void check_batch(const std::vector<Tensor>& rhat) {
  if (rhat.empty()) throw ContractError("loss: empty episode batch");
  for (const auto& r : rhat) {
    if (r.rank() != 1) throw ShapeError("loss: predictions must be length-T vectors");
  }
}

template <typename PerEpisode>
Tensor batch_mean(const std::vector<Tensor>& rhat, PerEpisode per_episode) {
  Tensor acc = per_episode(0);
  for (std::size_t e = 1; e < rhat.size(); ++e) acc = add(acc, per_episode(e));
  return mul_scalar(acc, 1.0 / static_cast<double>(rhat.size()));
}

}  // namespace detail

/// (1/T) * (sum_t rhat_t - R_T)^2, averaged over the batch.
inline Tensor regression_loss(const std::vector<Tensor>& rhat, const std::vector<double>& episodic_reward) {
  detail::check_batch(rhat);
  if (rhat.size() != episodic_reward.size()) throw ShapeError("regression_loss: batch sizes differ");
  return detail::batch_mean(rhat, [&](std::size_t e) {
    const double T = static_cast<double>(rhat[e].dim(0));
    Tensor d = add_scalar(sum(rhat[e]), -episodic_reward[e]);
    return mul_scalar(mul(d, d), 1.0 / T);
  });
}

/// Population variance of rhat over time, averaged over the batch.
inline Tensor variance_loss(const std::vector<Tensor>& rhat) {
  detail::check_batch(rhat);
  return detail::batch_mean(rhat, [&](std::size_t e) {
    Tensor dev = sub(rhat[e], mean(rhat[e]));
    return mean(mul(dev, dev));
  });
}

inline Tensor l1_loss(const std::vector<Tensor>& rhat) {
  detail::check_batch(rhat);
  return detail::batch_mean(rhat, [&](std::size_t e) { return mean(abs(rhat[e])); });
}

inline Tensor l2_loss(const std::vector<Tensor>& rhat) {
  detail::check_batch(rhat);
  return detail::batch_mean(rhat, [&](std::size_t e) { return mean(mul(rhat[e], rhat[e])); });
}

/// Regression loss plus omega times the selected regularizer.
inline Tensor total_loss(const std::vector<Tensor>& rhat, const std::vector<double>& episodic_reward,
                         Regularizer reg, double omega) {
  if (omega < 0.0) throw ConfigError("total_loss: omega must be >= 0");
  Tensor lr = regression_loss(rhat, episodic_reward);
  Tensor lreg;
  switch (reg) {
    case Regularizer::Variance: lreg = variance_loss(rhat); break;
    case Regularizer::L1: lreg = l1_loss(rhat); break;
    case Regularizer::L2: lreg = l2_loss(rhat); break;
  }
  return add(lr, mul_scalar(lreg, omega));
}

// ---------------------------------------------------------------------------
// Full credit model: attention stack composed with the readout.
// ---------------------------------------------------------------------------

struct CreditModelConfig {
  AttentionConfig attention;
  int credit_hidden = 50;
};

class CreditModel {
 public:
  CreditModel(CreditModelConfig cfg, Rng& rng)
      : cfg_(cfg), stack_(cfg.attention, rng), head_(cfg.attention.embed_dim, rng, cfg.credit_hidden) {}

  const CreditModelConfig& config() const { return cfg_; }
  const AttentionStack& stack() const { return stack_; }
  const CreditHead& head() const { return head_; }

  /// Differentiable forward pass: obs (T x N x obs_dim) -> rhat (length T).
  Tensor forward(const Tensor& obs, const std::vector<int>& group_ids = {}, AttentionTrace* trace = nullptr) const {
    return head_.forward(stack_.forward(obs, group_ids, trace));
  }

  /// Forward-only prediction (no tape is consulted outside training).
  RedistributedReward redistribute(const Tensor& obs, long long episode_id = -1,
                                   const std::vector<int>& group_ids = {}, AttentionTrace* trace = nullptr) const {
    Tensor r = forward(obs, group_ids, trace);
    RedistributedReward out;
    out.values = r.values();
    out.episode_id = episode_id;
    for (double v : out.values) {
      if (!std::isfinite(v)) throw NumericError("redistribute: non-finite prediction");
    }
    return out;
  }

  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    stack_.collect_parameters(out);
    head_.collect_parameters(out);
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

 private:
  CreditModelConfig cfg_;
  AttentionStack stack_;
  CreditHead head_;
};

}  // namespace arel
