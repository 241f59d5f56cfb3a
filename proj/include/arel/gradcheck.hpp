#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "arel/credit.hpp"
#include "arel/tensor.hpp"

// Central finite-difference gradient checking. The numeric side only ever
// evaluates the forward pass, so it stays independent of the backward rules
// it is used to verify.

namespace arel {

struct GradCheckResult {
  bool ok = true;
  double max_rel_err = 0.0;
  std::string detail;  // first failing coordinate, if any
};

/// Compares reverse-mode gradients of `loss_fn` (a scalar function of the
/// `inputs`, rebuilt per call) against central differences.
///
/// Relative error uses max(1, |analytic|, |numeric|) in the denominator so
/// near-zero gradients are compared absolutely.
inline GradCheckResult gradcheck(const std::function<Tensor()>& loss_fn, std::vector<Tensor> inputs,
                                 double h = 1e-5, double tol = 1e-4) {
  GradCheckResult res;

  // Analytic gradients.
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.drop_grad();
  }
  {
    Tape tape;
    Tensor loss = loss_fn();
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& t : inputs) {
    analytic.push_back(t.has_grad() ? t.grad() : std::vector<double>(static_cast<std::size_t>(t.size()), 0.0));
  }

  auto eval = [&]() {
    Tensor loss = loss_fn();  // no tape: forward only
    return loss.value();
  };

  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    auto& vals = inputs[ti].values();
    for (std::size_t j = 0; j < vals.size(); ++j) {
      const double orig = vals[j];
      vals[j] = orig + h;
      const double fp = eval();
      vals[j] = orig - h;
      const double fm = eval();
      vals[j] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[ti][j];
      const double denom = std::max({1.0, std::fabs(a), std::fabs(numeric)});
      const double rel = std::fabs(a - numeric) / denom;
      if (rel > res.max_rel_err) res.max_rel_err = rel;
      if (rel > tol && res.ok) {
        res.ok = false;
        res.detail = "input " + std::to_string(ti) + " coord " + std::to_string(j) + ": analytic " +
                     std::to_string(a) + " vs numeric " + std::to_string(numeric);
      }
    }
  }
  for (auto& t : inputs) t.drop_grad();
  return res;
}

// ---------------------------------------------------------------------------
// Randomized suite over every differentiable operation plus the composed
// attention + credit stack.
// ---------------------------------------------------------------------------

struct GradSuiteEntry {
  std::string name;
  int instances = 0;
  double max_rel_err = 0.0;
  bool ok = true;
  std::string detail;
};

struct GradSuiteResult {
  std::vector<GradSuiteEntry> entries;
  bool ok = true;
  double seconds = 0.0;

  const GradSuiteEntry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }
};

namespace detail {

inline Tensor random_uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

/// Uniform values kept away from zero (relu/abs kinks).
inline Tensor random_kink_free(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) {
    v = rng.uniform(-1.0, 1.0);
    if (std::fabs(v) < 0.05) v += v >= 0 ? 0.1 : -0.1;
  }
  return t;
}

}  // namespace detail

/// Runs `instances` random cases per operation at the given tolerance and
/// finite-difference step. Deterministic per seed.
inline GradSuiteResult run_gradcheck_suite(int instances, std::uint64_t seed, double h = 1e-5,
                                           double tol = 1e-4) {
  const auto t0 = std::chrono::steady_clock::now();
  GradSuiteResult suite;
  Rng rng(seed);

  auto run_entry = [&](const std::string& name, auto&& make_case) {
    GradSuiteEntry entry;
    entry.name = name;
    entry.instances = instances;
    for (int i = 0; i < instances; ++i) {
      GradCheckResult r = make_case(rng);
      entry.max_rel_err = std::max(entry.max_rel_err, r.max_rel_err);
      if (!r.ok && entry.ok) {
        entry.ok = false;
        entry.detail = r.detail;
      }
    }
    suite.ok = suite.ok && entry.ok;
    suite.entries.push_back(std::move(entry));
  };

  run_entry("matmul", [&, h, tol](Rng& r) {
    const int b = r.uniform_int(1, 3), p = r.uniform_int(1, 4), q = r.uniform_int(1, 4), s = r.uniform_int(1, 4);
    Tensor a = detail::random_uniform({b, p, q}, r);
    Tensor c = r.uniform() < 0.5 ? detail::random_uniform({q, s}, r) : detail::random_uniform({b, q, s}, r);
    Tensor w = detail::random_uniform({b, p, s}, r);
    return gradcheck([&] { return sum(mul(matmul(a, c), w)); }, {a, c}, h, tol);
  });

  run_entry("add_sub_mul_broadcast", [&, h, tol](Rng& r) {
    const int n = r.uniform_int(1, 4), d = r.uniform_int(1, 4);
    Tensor a = detail::random_uniform({n, d}, r);
    Tensor b = detail::random_uniform({d}, r);
    Tensor c = detail::random_uniform({n, 1}, r);
    return gradcheck([&] { return mean(mul(sub(add(a, b), c), a)); }, {a, b, c}, h, tol);
  });

  run_entry("relu", [&, h, tol](Rng& r) {
    Tensor x = detail::random_kink_free({r.uniform_int(2, 5), r.uniform_int(2, 5)}, r);
    Tensor w = detail::random_uniform(x.shape(), r);
    return gradcheck([&] { return sum(mul(relu(x), w)); }, {x}, h, tol);
  });

  run_entry("abs", [&, h, tol](Rng& r) {
    Tensor x = detail::random_kink_free({r.uniform_int(2, 5)}, r);
    Tensor w = detail::random_uniform(x.shape(), r);
    return gradcheck([&] { return sum(mul(abs(x), w)); }, {x}, h, tol);
  });

  run_entry("softmax_lastdim", [&, h, tol](Rng& r) {
    const int rows = r.uniform_int(1, 4), L = r.uniform_int(2, 6);
    Tensor x = detail::random_uniform({rows, L}, r, -3.0, 3.0);
    Tensor w = detail::random_uniform(x.shape(), r);
    Tensor mask({L}, 0.0);
    const int cut = r.uniform_int(1, L);
    for (int j = cut; j < L; ++j) mask.values()[static_cast<std::size_t>(j)] = -kMaskLarge;
    const bool use_mask = r.uniform() < 0.5;
    return gradcheck(
        [&] {
          return sum(mul(use_mask ? softmax_lastdim(x, mask) : softmax_lastdim(x), w));
        },
        {x}, h, tol);
  });

  run_entry("layer_norm", [&, h, tol](Rng& r) {
    const int rows = r.uniform_int(1, 3), d = r.uniform_int(2, 6);
    Tensor x = detail::random_uniform({rows, d}, r, -2.0, 2.0);
    Tensor gain = detail::random_uniform({d}, r, 0.5, 1.5);
    Tensor bias = detail::random_uniform({d}, r);
    Tensor w = detail::random_uniform(x.shape(), r);
    return gradcheck([&] { return sum(mul(layer_norm(x, gain, bias), w)); }, {x, gain, bias}, h, tol);
  });

  run_entry("transpose_reshape_slice_concat", [&, h, tol](Rng& r) {
    const int a = r.uniform_int(2, 3), b = r.uniform_int(2, 3), c = 4;
    Tensor x = detail::random_uniform({a, b, c}, r);
    Tensor w1 = detail::random_uniform({a, c, b}, r);
    Tensor w2 = detail::random_uniform({b, a, c}, r);
    Tensor w3 = detail::random_uniform({a, b, c}, r);
    return gradcheck(
        [&] {
          Tensor t1 = sum(mul(transpose_last_two(x), w1));
          Tensor t2 = sum(mul(transpose01(x), w2));
          Tensor lo = slice_lastdim(x, 0, 2);
          Tensor hi = slice_lastdim(x, 2, 2);
          Tensor t3 = sum(mul(reshape(concat_lastdim({hi, lo}), {a, b, c}), w3));
          return add(add(t1, t2), t3);
        },
        {x}, h, tol);
  });

  run_entry("rows_lookup", [&, h, tol](Rng& r) {
    const int rows = r.uniform_int(2, 5), d = r.uniform_int(2, 4), k = r.uniform_int(1, 6);
    Tensor table = detail::random_uniform({rows, d}, r);
    std::vector<int> idx(static_cast<std::size_t>(k));
    for (int& v : idx) v = r.uniform_int(0, rows - 1);
    Tensor w = detail::random_uniform({k, d}, r);
    return gradcheck([&] { return sum(mul(rows_lookup(table, idx), w)); }, {table}, h, tol);
  });

  run_entry("reductions", [&, h, tol](Rng& r) {
    const int a = r.uniform_int(2, 4), b = r.uniform_int(2, 4), c = r.uniform_int(1, 3);
    Tensor x = detail::random_uniform({a, b, c}, r);
    Tensor w = detail::random_uniform({a, c}, r);
    return gradcheck(
        [&] {
          Tensor pooled = sum_axis(x, 1);
          return add(add(sum(mul(pooled, w)), mean(x)), mul_scalar(sum(x), 0.25));
        },
        {x}, h, tol);
  });

  run_entry("attention_credit_stack", [&, h, tol](Rng& r) {
    CreditModelConfig cfg;
    cfg.attention.obs_dim = 4;
    cfg.attention.embed_dim = 8;
    cfg.attention.heads = 2;
    cfg.attention.depth = 1;
    cfg.attention.max_time = 3;
    cfg.credit_hidden = 6;
    CreditModel model(cfg, r);
    Tensor obs = detail::random_uniform({3, 2, 4}, r);
    std::vector<Tensor> inputs{obs};
    for (auto& t : model.parameters()) inputs.push_back(t);
    return gradcheck(
        [&] {
          std::vector<Tensor> rhat{model.forward(obs)};
          return total_loss(rhat, {0.7}, Regularizer::Variance, 20.0);
        },
        inputs, h, tol);
  });

  suite.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return suite;
}

}  // namespace arel
