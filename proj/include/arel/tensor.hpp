#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <utility>

#include "arel/common.hpp"

// Dense float64 tensors with reverse-mode automatic differentiation.
//
// The design is define-by-run: a Tape is opened for the duration of one
// forward pass, every operation executed while it is active appends a node,
// and backward() replays the nodes in reverse creation order (creation order
// is a topological order by construction). Without an active tape operations
// run forward-only, which is what rollouts and frozen-parameter inference use.
//
// Everything is single-threaded per tape/model instance; independent model
// instances may live on different threads.

namespace arel {

using Shape = std::vector<int>;

inline long long numel_of(const Shape& s) {
  long long n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) { return "[" + join(s, ", ") + "]"; }

inline void check_shape_valid(const Shape& s) {
  for (int d : s) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(s));
  }
}

namespace detail {

inline std::vector<long long> row_major_strides(const Shape& s) {
  std::vector<long long> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

/// Trailing-aligned broadcast shape; each aligned pair of dims must be equal
/// or one of them 1.
inline Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  const int ra = static_cast<int>(a.size()), rb = static_cast<int>(b.size());
  const int r = std::max(ra, rb);
  Shape out(r);
  for (int i = 0; i < r; ++i) {
    const int da = i < r - ra ? 1 : a[i - (r - ra)];
    const int db = i < r - rb ? 1 : b[i - (r - rb)];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

/// Strides into a tensor of shape `in`, viewed through the broadcast shape
/// `out` (trailing-aligned); broadcast dimensions get stride 0.
inline std::vector<long long> broadcast_strides(const Shape& in, const Shape& out) {
  const int r = static_cast<int>(out.size());
  const int ri = static_cast<int>(in.size());
  const auto st = row_major_strides(in);
  std::vector<long long> eff(r, 0);
  for (int i = 0; i < ri; ++i) {
    const int o = i + (r - ri);
    eff[o] = in[i] == 1 && out[o] != 1 ? 0 : st[i];
  }
  return eff;
}

}  // namespace detail

class Tensor;

struct TensorNode {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first accumulation
  std::vector<double> saved; // op-specific buffers for the backward rule
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward;

  bool has_grad() const { return !grad.empty(); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
  }
};

/// Toggles NaN/Inf detection after every operation (slow; meant for tests
/// and the training divergence guard).
inline bool& finite_checks_enabled() {
  static bool enabled = false;
  return enabled;
}

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false)
      : node_(std::make_shared<TensorNode>()) {
    check_shape_valid(shape);
    node_->shape = std::move(shape);
    node_->values.assign(static_cast<std::size_t>(numel_of(node_->shape)), fill);
    node_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<TensorNode>()) {
    check_shape_valid(shape);
    if (numel_of(shape) != static_cast<long long>(values.size())) {
      throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                       shape_str(shape));
    }
    node_->shape = std::move(shape);
    node_->values = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  long long size() const { return static_cast<long long>(node_->values.size()); }

  std::vector<double>& values() { return node_->values; }
  const std::vector<double>& values() const { return node_->values; }

  /// Scalar read; the tensor must hold exactly one element.
  double value() const {
    if (size() != 1) throw ContractError("value(): tensor of shape " + shape_str(shape()) + " is not scalar");
    return node_->values[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    node_->requires_grad = b;
    return *this;
  }

  bool has_grad() const { return node_->has_grad(); }
  std::vector<double>& grad() {
    if (!node_->has_grad()) throw ContractError("grad(): no gradient has been accumulated");
    return node_->grad;
  }
  const std::vector<double>& grad() const {
    if (!node_->has_grad()) throw ContractError("grad(): no gradient has been accumulated");
    return node_->grad;
  }
  void zero_grad() { node_->grad.assign(node_->values.size(), 0.0); }
  void drop_grad() { node_->grad.clear(); }

  Tensor clone() const {
    Tensor t(node_->shape, node_->values, node_->requires_grad);
    return t;
  }

  const std::shared_ptr<TensorNode>& node() const { return node_; }

 private:
  std::shared_ptr<TensorNode> node_;
};

/// Gaussian-filled tensor, N(mean, stddev^2).
inline Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, double mean = 0.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.normal(mean, stddev);
  return t;
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

class Tape {
 public:
  Tape() : prev_(current_ptr()) { current_ptr() = this; }
  ~Tape() { current_ptr() = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current() { return current_ptr(); }

  void record(const std::shared_ptr<TensorNode>& node) { ops_.push_back(node); }
  std::size_t size() const { return ops_.size(); }

  /// Accumulates dloss/dleaf into every requires_grad leaf reachable from
  /// `loss`. Gradients of intermediate (taped) nodes are reset first, so
  /// calling backward twice accumulates leaf gradients additively.
  void backward(const Tensor& loss) {
    if (ops_.empty()) throw ContractError("backward: tape is empty");
    if (loss.size() != 1) {
      throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    }
    for (auto& n : ops_) n->grad.clear();
    loss.node()->ensure_grad();
    loss.node()->grad[0] = 1.0;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
      TensorNode& n = **it;
      if (n.has_grad() && n.backward) n.backward(n);
    }
  }

 private:
  static Tape*& current_ptr() {
    static thread_local Tape* current = nullptr;
    return current;
  }
  std::vector<std::shared_ptr<TensorNode>> ops_;
  Tape* prev_ = nullptr;
};

inline void backward(const Tensor& loss) {
  Tape* t = Tape::current();
  if (!t) throw ContractError("backward: no active tape");
  t->backward(loss);
}

namespace detail {

inline void maybe_check_finite(const char* op, const std::vector<double>& v) {
  if (!finite_checks_enabled()) return;
  for (double x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + " produced a non-finite value");
  }
}

/// Wires up a freshly computed output node: records it on the active tape and
/// attaches the backward rule when any input participates in the graph.
inline Tensor make_op(const char* op, Shape shape, std::vector<double> values,
                      std::vector<Tensor> inputs, std::function<void(TensorNode&)> backward_fn,
                      std::vector<double> saved = {}) {
  maybe_check_finite(op, values);
  Tensor out(std::move(shape), std::move(values));
  Tape* tape = Tape::current();
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.requires_grad();
  if (tape && needs) {
    auto& node = *out.node();
    node.requires_grad = true;
    node.saved = std::move(saved);
    node.parents.reserve(inputs.size());
    for (const auto& in : inputs) node.parents.push_back(in.node());
    node.backward = std::move(backward_fn);
    tape->record(out.node());
  }
  return out;
}

/// Iterates a broadcast elementwise pair, calling fn(out_index, a_off, b_off).
template <typename Fn>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, Fn&& fn) {
  const auto sa = broadcast_strides(a, out);
  const auto sb = broadcast_strides(b, out);
  const int r = static_cast<int>(out.size());
  const long long n = numel_of(out);
  std::vector<int> idx(static_cast<std::size_t>(r), 0);
  long long oa = 0, ob = 0;
  for (long long i = 0; i < n; ++i) {
    fn(i, oa, ob);
    for (int d = r - 1; d >= 0; --d) {
      oa += sa[d];
      ob += sb[d];
      if (++idx[d] < out[d]) break;
      idx[d] = 0;
      oa -= sa[d] * out[d];
      ob -= sb[d] * out[d];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops (broadcast-from-1, trailing-aligned)
// ---------------------------------------------------------------------------

namespace detail {

template <typename Fwd, typename DfDa, typename DfDb>
Tensor elementwise_binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, DfDa dfda,
                          DfDb dfdb) {
  const Shape out_shape = broadcast_shapes(a.shape(), b.shape(), op);
  std::vector<double> out(static_cast<std::size_t>(numel_of(out_shape)));
  const auto& av = a.values();
  const auto& bv = b.values();
  for_each_broadcast(out_shape, a.shape(), b.shape(), [&](long long i, long long oa, long long ob) {
    out[static_cast<std::size_t>(i)] = fwd(av[static_cast<std::size_t>(oa)], bv[static_cast<std::size_t>(ob)]);
  });
  Shape ash = a.shape(), bsh = b.shape();
  auto backward_fn = [ash, bsh, out_shape, dfda, dfdb](TensorNode& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) pa.ensure_grad();
    if (pb.requires_grad) pb.ensure_grad();
    for_each_broadcast(out_shape, ash, bsh, [&](long long i, long long oa, long long ob) {
      const double g = self.grad[static_cast<std::size_t>(i)];
      const double x = pa.values[static_cast<std::size_t>(oa)];
      const double y = pb.values[static_cast<std::size_t>(ob)];
      if (pa.requires_grad) pa.grad[static_cast<std::size_t>(oa)] += g * dfda(x, y);
      if (pb.requires_grad) pb.grad[static_cast<std::size_t>(ob)] += g * dfdb(x, y);
    });
  };
  return make_op(op, out_shape, std::move(out), {a, b}, std::move(backward_fn));
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::elementwise_binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::elementwise_binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::elementwise_binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

namespace detail {

template <typename Fwd, typename Df>
Tensor elementwise_unary(const char* op, const Tensor& a, Fwd fwd, Df df) {
  std::vector<double> out(a.values().size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.values()[i]);
  auto backward_fn = [df](TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) p.grad[i] += self.grad[i] * df(p.values[i]);
  };
  return make_op(op, a.shape(), std::move(out), {a}, std::move(backward_fn));
}

}  // namespace detail

inline Tensor relu(const Tensor& a) {
  return detail::elementwise_unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor abs(const Tensor& a) {
  return detail::elementwise_unary(
      "abs", a, [](double x) { return std::fabs(x); }, [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Tensor mul_scalar(const Tensor& a, double c) {
  return detail::elementwise_unary(
      "mul_scalar", a, [c](double x) { return x * c; }, [c](double) { return c; });
}

inline Tensor add_scalar(const Tensor& a, double c) {
  return detail::elementwise_unary(
      "add_scalar", a, [c](double x) { return x + c; }, [](double) { return 1.0; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return mul_scalar(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return mul_scalar(a, c); }

// ---------------------------------------------------------------------------
// matmul: a [..., p, q] x b [..., q, r] -> [..., p, r]; leading batch
// dimensions agree or broadcast from size 1.
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul: operands must have rank >= 2, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const int p = a.dim(a.rank() - 2), q = a.dim(a.rank() - 1);
  const int q2 = b.dim(b.rank() - 2), r = b.dim(b.rank() - 1);
  if (q != q2) {
    throw ShapeError("matmul: inner dimensions disagree between " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  const Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  const Shape batch = detail::broadcast_shapes(batch_a, batch_b, "matmul");
  Shape out_shape = batch;
  out_shape.push_back(p);
  out_shape.push_back(r);

  const long long bc = numel_of(batch);
  const auto sa = detail::broadcast_strides(batch_a, batch);
  const auto sb = detail::broadcast_strides(batch_b, batch);
  const long long mat_a = static_cast<long long>(p) * q;
  const long long mat_b = static_cast<long long>(q) * r;
  const long long mat_o = static_cast<long long>(p) * r;

  // Base offset of each operand for every batch element.
  std::vector<long long> base_a(static_cast<std::size_t>(bc)), base_b(static_cast<std::size_t>(bc));
  {
    std::vector<int> idx(batch.size(), 0);
    long long oa = 0, ob = 0;
    for (long long i = 0; i < bc; ++i) {
      base_a[static_cast<std::size_t>(i)] = oa * 1;  // per-batch matrix offset applied below
      base_b[static_cast<std::size_t>(i)] = ob * 1;
      for (int d = static_cast<int>(batch.size()) - 1; d >= 0; --d) {
        oa += sa[static_cast<std::size_t>(d)];
        ob += sb[static_cast<std::size_t>(d)];
        if (++idx[static_cast<std::size_t>(d)] < batch[static_cast<std::size_t>(d)]) break;
        idx[static_cast<std::size_t>(d)] = 0;
        oa -= sa[static_cast<std::size_t>(d)] * batch[static_cast<std::size_t>(d)];
        ob -= sb[static_cast<std::size_t>(d)] * batch[static_cast<std::size_t>(d)];
      }
    }
  }
  // broadcast_strides above was computed on batch shapes whose unit is one
  // matrix, so scale the offsets up to element units.
  for (auto& v : base_a) v *= mat_a;
  for (auto& v : base_b) v *= mat_b;

  std::vector<double> out(static_cast<std::size_t>(bc * mat_o), 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (long long bi = 0; bi < bc; ++bi) {
    const double* A = av.data() + base_a[static_cast<std::size_t>(bi)];
    const double* B = bv.data() + base_b[static_cast<std::size_t>(bi)];
    double* O = out.data() + bi * mat_o;
    for (int i = 0; i < p; ++i) {
      for (int k = 0; k < q; ++k) {
        const double aik = A[static_cast<long long>(i) * q + k];
        if (aik == 0.0) continue;
        const double* Bk = B + static_cast<long long>(k) * r;
        double* Oi = O + static_cast<long long>(i) * r;
        for (int j = 0; j < r; ++j) Oi[j] += aik * Bk[j];
      }
    }
  }

  auto backward_fn = [bc, p, q, r, mat_a, mat_b, mat_o, base_a, base_b](TensorNode& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) pa.ensure_grad();
    if (pb.requires_grad) pb.ensure_grad();
    for (long long bi = 0; bi < bc; ++bi) {
      const double* G = self.grad.data() + bi * mat_o;
      const double* A = pa.values.data() + base_a[static_cast<std::size_t>(bi)];
      const double* B = pb.values.data() + base_b[static_cast<std::size_t>(bi)];
      if (pa.requires_grad) {
        double* dA = pa.grad.data() + base_a[static_cast<std::size_t>(bi)];
        // dA += G * B^T
        for (int i = 0; i < p; ++i) {
          for (int k = 0; k < q; ++k) {
            double acc = 0.0;
            const double* Gi = G + static_cast<long long>(i) * r;
            const double* Bk = B + static_cast<long long>(k) * r;
            for (int j = 0; j < r; ++j) acc += Gi[j] * Bk[j];
            dA[static_cast<long long>(i) * q + k] += acc;
          }
        }
      }
      if (pb.requires_grad) {
        double* dB = pb.grad.data() + base_b[static_cast<std::size_t>(bi)];
        // dB += A^T * G
        for (int k = 0; k < q; ++k) {
          for (int i = 0; i < p; ++i) {
            const double aik = A[static_cast<long long>(i) * q + k];
            if (aik == 0.0) continue;
            const double* Gi = G + static_cast<long long>(i) * r;
            double* dBk = dB + static_cast<long long>(k) * r;
            for (int j = 0; j < r; ++j) dBk[j] += aik * Gi[j];
          }
        }
      }
    }
  };
  return detail::make_op("matmul", std::move(out_shape), std::move(out), {a, b}, std::move(backward_fn));
}

// ---------------------------------------------------------------------------
// softmax over the last dimension, with an optional additive mask of
// {0, -kMaskLarge} entries that broadcasts to the input shape.
// ---------------------------------------------------------------------------

inline constexpr double kMaskLarge = 1e9;

inline Tensor softmax_lastdim(const Tensor& x, const std::optional<Tensor>& additive_mask = std::nullopt) {
  const int L = x.dim(x.rank() - 1);
  std::vector<double> z = x.values();
  if (additive_mask) {
    const Tensor& m = *additive_mask;
    if (m.requires_grad()) throw ContractError("softmax_lastdim: mask must not require gradients");
    detail::for_each_broadcast(x.shape(), x.shape(), m.shape(), [&](long long i, long long, long long om) {
      z[static_cast<std::size_t>(i)] += m.values()[static_cast<std::size_t>(om)];
    });
  }
  const std::size_t rows = z.size() / static_cast<std::size_t>(L);
  std::vector<double> out(z.size());
  for (std::size_t row = 0; row < rows; ++row) {
    double* zr = z.data() + row * static_cast<std::size_t>(L);
    double* yr = out.data() + row * static_cast<std::size_t>(L);
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < L; ++j) mx = std::max(mx, zr[j]);
    if (mx <= -kMaskLarge / 2) throw ContractError("fully masked attention row");
    double s = 0.0;
    for (int j = 0; j < L; ++j) {
      yr[j] = std::exp(zr[j] - mx);
      s += yr[j];
    }
    for (int j = 0; j < L; ++j) yr[j] /= s;
  }
  auto backward_fn = [L](TensorNode& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.ensure_grad();
    const std::size_t rows = self.values.size() / static_cast<std::size_t>(L);
    for (std::size_t row = 0; row < rows; ++row) {
      const double* y = self.values.data() + row * static_cast<std::size_t>(L);
      const double* g = self.grad.data() + row * static_cast<std::size_t>(L);
      double dot = 0.0;
      for (int j = 0; j < L; ++j) dot += y[j] * g[j];
      double* dx = p.grad.data() + row * static_cast<std::size_t>(L);
      for (int j = 0; j < L; ++j) dx[j] += y[j] * (g[j] - dot);
    }
  };
  return detail::make_op("softmax_lastdim", x.shape(), std::move(out), {x}, std::move(backward_fn));
}

// ---------------------------------------------------------------------------
// Layer normalization over the last dimension with learnable gain/bias.
// ---------------------------------------------------------------------------

inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
  if (x.rank() < 1) throw ShapeError("layer_norm: input must have rank >= 1");
  const int D = x.dim(x.rank() - 1);
  if (gain.rank() != 1 || gain.dim(0) != D || bias.rank() != 1 || bias.dim(0) != D) {
    throw ShapeError("layer_norm: gain/bias must be length-" + std::to_string(D) + " vectors, got " +
                     shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
  }
  const std::size_t rows = x.values().size() / static_cast<std::size_t>(D);
  std::vector<double> out(x.values().size());
  // saved: xhat for every element, then inv_std per row.
  std::vector<double> saved(x.values().size() + rows);
  for (std::size_t row = 0; row < rows; ++row) {
    const double* xr = x.values().data() + row * static_cast<std::size_t>(D);
    double mean = 0.0;
    for (int j = 0; j < D; ++j) mean += xr[j];
    mean /= D;
    double var = 0.0;
    for (int j = 0; j < D; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= D;
    const double inv_std = 1.0 / std::sqrt(var + eps);
    saved[x.values().size() + row] = inv_std;
    double* yr = out.data() + row * static_cast<std::size_t>(D);
    double* xh = saved.data() + row * static_cast<std::size_t>(D);
    for (int j = 0; j < D; ++j) {
      xh[j] = (xr[j] - mean) * inv_std;
      yr[j] = gain.values()[static_cast<std::size_t>(j)] * xh[j] + bias.values()[static_cast<std::size_t>(j)];
    }
  }
  auto backward_fn = [D](TensorNode& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    const std::size_t n = self.values.size();
    const std::size_t rows = n / static_cast<std::size_t>(D);
    if (px.requires_grad) px.ensure_grad();
    if (pg.requires_grad) pg.ensure_grad();
    if (pb.requires_grad) pb.ensure_grad();
    for (std::size_t row = 0; row < rows; ++row) {
      const double* g = self.grad.data() + row * static_cast<std::size_t>(D);
      const double* xh = self.saved.data() + row * static_cast<std::size_t>(D);
      const double inv_std = self.saved[n + row];
      if (pg.requires_grad || pb.requires_grad) {
        for (int j = 0; j < D; ++j) {
          if (pg.requires_grad) pg.grad[static_cast<std::size_t>(j)] += g[j] * xh[j];
          if (pb.requires_grad) pb.grad[static_cast<std::size_t>(j)] += g[j];
        }
      }
      if (px.requires_grad) {
        double mean_dxh = 0.0, mean_dxh_xh = 0.0;
        for (int j = 0; j < D; ++j) {
          const double dxh = g[j] * pg.values[static_cast<std::size_t>(j)];
          mean_dxh += dxh;
          mean_dxh_xh += dxh * xh[j];
        }
        mean_dxh /= D;
        mean_dxh_xh /= D;
        double* dx = px.grad.data() + row * static_cast<std::size_t>(D);
        for (int j = 0; j < D; ++j) {
          const double dxh = g[j] * pg.values[static_cast<std::size_t>(j)];
          dx[j] += inv_std * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
        }
      }
    }
  };
  return detail::make_op("layer_norm", x.shape(), std::move(out), {x, gain, bias}, std::move(backward_fn),
                         std::move(saved));
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

inline Tensor transpose_last_two(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose_last_two: rank must be >= 2, got " + shape_str(x.shape()));
  Shape out_shape = x.shape();
  const int r = x.rank();
  std::swap(out_shape[static_cast<std::size_t>(r - 2)], out_shape[static_cast<std::size_t>(r - 1)]);
  const int p = x.dim(r - 2), q = x.dim(r - 1);
  const long long mats = numel_of(x.shape()) / (static_cast<long long>(p) * q);
  std::vector<double> out(x.values().size());
  for (long long m = 0; m < mats; ++m) {
    const double* src = x.values().data() + m * p * q;
    double* dst = out.data() + m * p * q;
    for (int i = 0; i < p; ++i)
      for (int j = 0; j < q; ++j) dst[static_cast<long long>(j) * p + i] = src[static_cast<long long>(i) * q + j];
  }
  auto backward_fn = [p, q, mats](TensorNode& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    px.ensure_grad();
    for (long long m = 0; m < mats; ++m) {
      const double* g = self.grad.data() + m * p * q;
      double* dx = px.grad.data() + m * p * q;
      for (int i = 0; i < p; ++i)
        for (int j = 0; j < q; ++j) dx[static_cast<long long>(i) * q + j] += g[static_cast<long long>(j) * p + i];
    }
  };
  return detail::make_op("transpose_last_two", std::move(out_shape), std::move(out), {x}, std::move(backward_fn));
}

/// Swaps the first two axes of a rank-3 tensor.
inline Tensor transpose01(const Tensor& x) {
  if (x.rank() != 3) throw ShapeError("transpose01: rank-3 tensor required, got " + shape_str(x.shape()));
  const int A = x.dim(0), B = x.dim(1), C = x.dim(2);
  Shape out_shape{B, A, C};
  std::vector<double> out(x.values().size());
  for (int i = 0; i < A; ++i)
    for (int j = 0; j < B; ++j) {
      const double* src = x.values().data() + (static_cast<long long>(i) * B + j) * C;
      double* dst = out.data() + (static_cast<long long>(j) * A + i) * C;
      std::copy(src, src + C, dst);
    }
  auto backward_fn = [A, B, C](TensorNode& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    px.ensure_grad();
    for (int j = 0; j < B; ++j)
      for (int i = 0; i < A; ++i) {
        const double* g = self.grad.data() + (static_cast<long long>(j) * A + i) * C;
        double* dx = px.grad.data() + (static_cast<long long>(i) * B + j) * C;
        for (int c = 0; c < C; ++c) dx[c] += g[c];
      }
  };
  return detail::make_op("transpose01", std::move(out_shape), std::move(out), {x}, std::move(backward_fn));
}

inline Tensor reshape(const Tensor& x, Shape new_shape) {
  check_shape_valid(new_shape);
  if (numel_of(new_shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(new_shape));
  }
  auto backward_fn = [](TensorNode& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    px.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) px.grad[i] += self.grad[i];
  };
  return detail::make_op("reshape", std::move(new_shape), x.values(), {x}, std::move(backward_fn));
}

inline Tensor slice_lastdim(const Tensor& x, int offset, int width) {
  const int D = x.dim(x.rank() - 1);
  if (offset < 0 || width <= 0 || offset + width > D) {
    throw ShapeError("slice_lastdim: window [" + std::to_string(offset) + ", " +
                     std::to_string(offset + width) + ") out of range for last dim " + std::to_string(D));
  }
  Shape out_shape = x.shape();
  out_shape.back() = width;
  const std::size_t rows = x.values().size() / static_cast<std::size_t>(D);
  std::vector<double> out(rows * static_cast<std::size_t>(width));
  for (std::size_t row = 0; row < rows; ++row) {
    const double* src = x.values().data() + row * static_cast<std::size_t>(D) + offset;
    std::copy(src, src + width, out.data() + row * static_cast<std::size_t>(width));
  }
  auto backward_fn = [D, offset, width](TensorNode& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    px.ensure_grad();
    const std::size_t rows = self.values.size() / static_cast<std::size_t>(width);
    for (std::size_t row = 0; row < rows; ++row) {
      const double* g = self.grad.data() + row * static_cast<std::size_t>(width);
      double* dx = px.grad.data() + row * static_cast<std::size_t>(D) + offset;
      for (int j = 0; j < width; ++j) dx[j] += g[j];
    }
  };
  return detail::make_op("slice_lastdim", std::move(out_shape), std::move(out), {x}, std::move(backward_fn));
}

inline Tensor concat_lastdim(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_lastdim: no inputs");
  Shape lead = parts[0].shape();
  lead.pop_back();
  int total = 0;
  for (const auto& p : parts) {
    Shape l = p.shape();
    const int w = l.back();
    l.pop_back();
    if (l != lead) throw ShapeError("concat_lastdim: leading dimensions differ");
    total += w;
  }
  Shape out_shape = lead;
  out_shape.push_back(total);
  const std::size_t rows = static_cast<std::size_t>(numel_of(lead));
  std::vector<double> out(rows * static_cast<std::size_t>(total));
  std::vector<int> widths;
  int at = 0;
  for (const auto& p : parts) {
    const int w = p.shape().back();
    widths.push_back(w);
    for (std::size_t row = 0; row < rows; ++row) {
      const double* src = p.values().data() + row * static_cast<std::size_t>(w);
      std::copy(src, src + w, out.data() + row * static_cast<std::size_t>(total) + at);
    }
    at += w;
  }
  auto backward_fn = [widths, total](TensorNode& self) {
    const std::size_t rows = self.values.size() / static_cast<std::size_t>(total);
    int at = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      auto& p = *self.parents[k];
      const int w = widths[k];
      if (p.requires_grad) {
        p.ensure_grad();
        for (std::size_t row = 0; row < rows; ++row) {
          const double* g = self.grad.data() + row * static_cast<std::size_t>(total) + at;
          double* dx = p.grad.data() + row * static_cast<std::size_t>(w);
          for (int j = 0; j < w; ++j) dx[j] += g[j];
        }
      }
      at += w;
    }
  };
  return detail::make_op("concat_lastdim", std::move(out_shape), std::move(out), parts, std::move(backward_fn));
}

/// Gathers rows of a rank-2 table: out[i, :] = table[indices[i], :].
/// Duplicate indices accumulate gradients additively.
inline Tensor rows_lookup(const Tensor& table, const std::vector<int>& indices) {
  if (table.rank() != 2) throw ShapeError("rows_lookup: table must be rank-2, got " + shape_str(table.shape()));
  const int R = table.dim(0), D = table.dim(1);
  for (int ix : indices) {
    if (ix < 0 || ix >= R) {
      throw ContractError("rows_lookup: index " + std::to_string(ix) + " outside table with " +
                          std::to_string(R) + " rows");
    }
  }
  Shape out_shape{static_cast<int>(indices.size()), D};
  std::vector<double> out(indices.size() * static_cast<std::size_t>(D));
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const double* src = table.values().data() + static_cast<std::size_t>(indices[i]) * D;
    std::copy(src, src + D, out.data() + i * static_cast<std::size_t>(D));
  }
  auto backward_fn = [indices, D](TensorNode& self) {
    auto& pt = *self.parents[0];
    if (!pt.requires_grad) return;
    pt.ensure_grad();
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const double* g = self.grad.data() + i * static_cast<std::size_t>(D);
      double* dst = pt.grad.data() + static_cast<std::size_t>(indices[i]) * D;
      for (int j = 0; j < D; ++j) dst[j] += g[j];
    }
  };
  return detail::make_op("rows_lookup", std::move(out_shape), std::move(out), {table}, std::move(backward_fn));
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& x) {
  std::vector<double> out{pairwise_sum(x.values())};
  auto backward_fn = [](TensorNode& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    px.ensure_grad();
    const double g = self.grad[0];
    for (double& v : px.grad) v += g;
  };
  return detail::make_op("sum", Shape{1}, std::move(out), {x}, std::move(backward_fn));
}

inline Tensor mean(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.size());
  std::vector<double> out{pairwise_sum(x.values()) * inv};
  auto backward_fn = [inv](TensorNode& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    px.ensure_grad();
    const double g = self.grad[0] * inv;
    for (double& v : px.grad) v += g;
  };
  return detail::make_op("mean", Shape{1}, std::move(out), {x}, std::move(backward_fn));
}

/// Reduces one axis by deterministic pairwise summation.
inline Tensor sum_axis(const Tensor& x, int axis) {
  if (axis < 0 || axis >= x.rank()) throw ShapeError("sum_axis: axis out of range");
  const Shape& s = x.shape();
  Shape out_shape;
  for (int i = 0; i < x.rank(); ++i)
    if (i != axis) out_shape.push_back(s[static_cast<std::size_t>(i)]);
  if (out_shape.empty()) out_shape.push_back(1);

  long long outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < x.rank(); ++i) inner *= s[static_cast<std::size_t>(i)];
  const int K = s[static_cast<std::size_t>(axis)];

  std::vector<double> out(static_cast<std::size_t>(outer * inner));
  std::vector<double> buf(static_cast<std::size_t>(K));
  for (long long o = 0; o < outer; ++o) {
    for (long long in = 0; in < inner; ++in) {
      for (int k = 0; k < K; ++k) buf[static_cast<std::size_t>(k)] = x.values()[static_cast<std::size_t>((o * K + k) * inner + in)];
      out[static_cast<std::size_t>(o * inner + in)] = pairwise_sum(buf);
    }
  }
  auto backward_fn = [outer, inner, K](TensorNode& self) {
    auto& px = *self.parents[0];
    if (!px.requires_grad) return;
    px.ensure_grad();
    for (long long o = 0; o < outer; ++o)
      for (int k = 0; k < K; ++k)
        for (long long in = 0; in < inner; ++in)
          px.grad[static_cast<std::size_t>((o * K + k) * inner + in)] += self.grad[static_cast<std::size_t>(o * inner + in)];
  };
  return detail::make_op("sum_axis", std::move(out_shape), std::move(out), {x}, std::move(backward_fn));
}

}  // namespace arel
