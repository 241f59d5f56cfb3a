#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "arel/gradcheck.hpp"
#include "arel/optim.hpp"
#include "arel/tensor.hpp"

using namespace arel;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(-scale, scale);
  return t;
}

}  // namespace

TEST_CASE("matmul identity and hand-computed products", "[tensor]") {
  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor m({2, 2}, {1, 2, 3, 4});
  Tensor out = matmul(eye, m);
  REQUIRE(out.values() == std::vector<double>{1, 2, 3, 4});

  Tensor a({1, 2}, {1, 2});
  Tensor b({2, 1}, {3, 4});
  REQUIRE(matmul(a, b).values() == std::vector<double>{11});
}

TEST_CASE("matmul shape errors name both shapes", "[tensor]") {
  Tensor a({2, 3});
  Tensor b({2, 2});
  REQUIRE_THROWS_MATCHES(matmul(a, b), ShapeError,
                         Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("[2, 3]") &&
                                                         Catch::Matchers::ContainsSubstring("[2, 2]")));
}

TEST_CASE("matmul broadcasts batch dimensions from size 1", "[tensor]") {
  Rng rng(7);
  Tensor a = random_tensor({3, 2, 4}, rng);
  Tensor b = random_tensor({4, 5}, rng);
  Tensor out = matmul(a, b);
  REQUIRE(out.shape() == Shape{3, 2, 5});
  // batch 0 equals the unbatched product
  Tensor a0({2, 4}, std::vector<double>(a.values().begin(), a.values().begin() + 8));
  Tensor ref = matmul(a0, b);
  for (int i = 0; i < 10; ++i) REQUIRE(out.values()[i] == Catch::Approx(ref.values()[i]).margin(1e-15));
}

TEST_CASE("matmul gradient matches finite differences", "[tensor][gradcheck]") {
  Rng rng(11);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  auto res = gradcheck([&] { return sum(matmul(a, b)); }, {a, b}, 1e-5, 1e-6);
  INFO(res.detail);
  REQUIRE(res.ok);
}

TEST_CASE("softmax basics", "[tensor]") {
  Tensor x({2}, {0, 0});
  Tensor y = softmax_lastdim(x);
  REQUIRE(y.values()[0] == Catch::Approx(0.5).margin(1e-15));
  REQUIRE(y.values()[1] == Catch::Approx(0.5).margin(1e-15));

  Tensor mask({2}, {0, -kMaskLarge});
  Tensor ym = softmax_lastdim(x, mask);
  REQUIRE(ym.values()[0] == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(ym.values()[1] <= 1e-300);
}

TEST_CASE("softmax matches direct formula evaluation", "[tensor]") {
  Tensor x({3}, {1, 2, 3});
  Tensor y = softmax_lastdim(x);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) {
    REQUIRE(y.values()[static_cast<std::size_t>(i)] == Catch::Approx(std::exp(1.0 + i) / z).margin(1e-12));
  }
}

TEST_CASE("softmax rows sum to one and masked mass vanishes", "[tensor][property]") {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const int rows = rng.uniform_int(1, 4), L = rng.uniform_int(2, 7);
    Tensor x = random_tensor({rows, L}, rng, 5.0);
    Tensor mask({L}, 0.0);
    const int cut = rng.uniform_int(1, L);  // first `cut` entries visible
    for (int j = cut; j < L; ++j) mask.values()[static_cast<std::size_t>(j)] = -kMaskLarge;
    Tensor y = softmax_lastdim(x, mask);
    for (int r = 0; r < rows; ++r) {
      double s = 0.0;
      for (int j = 0; j < L; ++j) s += y.values()[static_cast<std::size_t>(r * L + j)];
      REQUIRE(s == Catch::Approx(1.0).margin(1e-12));
      for (int j = cut; j < L; ++j) REQUIRE(y.values()[static_cast<std::size_t>(r * L + j)] < 1e-12);
    }
  }
}

TEST_CASE("softmax rejects fully masked rows", "[tensor]") {
  Tensor x({2}, {1, 2});
  Tensor mask({2}, {-kMaskLarge, -kMaskLarge});
  REQUIRE_THROWS_AS(softmax_lastdim(x, mask), ContractError);
}

TEST_CASE("layer_norm collapses constant rows to the bias", "[tensor]") {
  Tensor x({3}, {5, 5, 5});
  Tensor gain({3}, 1.0), bias({3}, 0.0);
  Tensor y = layer_norm(x, gain, bias);
  for (double v : y.values()) REQUIRE(v == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("layer_norm normalizes a two-point row", "[tensor]") {
  Tensor x({2}, {1, 3});
  Tensor gain({2}, 1.0), bias({2}, 0.0);
  Tensor y = layer_norm(x, gain, bias);
  REQUIRE(y.values()[0] == Catch::Approx(-1.0).margin(1e-4));
  REQUIRE(y.values()[1] == Catch::Approx(1.0).margin(1e-4));
}

TEST_CASE("layer_norm gradient matches finite differences", "[tensor][gradcheck]") {
  Rng rng(13);
  Tensor x = random_tensor({3, 5}, rng);
  Tensor gain = random_tensor({5}, rng);
  Tensor bias = random_tensor({5}, rng);
  Tensor w = random_tensor({3, 5}, rng);  // mixes outputs so the loss is not symmetric
  auto res = gradcheck([&] { return sum(mul(layer_norm(x, gain, bias), w)); }, {x, gain, bias}, 1e-5, 1e-5);
  INFO(res.detail);
  REQUIRE(res.ok);
}

TEST_CASE("elementwise and reduction basics", "[tensor]") {
  Tensor x({2}, {-1, 2});
  REQUIRE(relu(x).values() == std::vector<double>{0, 2});
  Tensor m({2}, {2, 4});
  REQUIRE(mean(m).value() == Catch::Approx(3.0));
  REQUIRE(arel::abs(x).values() == std::vector<double>{1, 2});
}

TEST_CASE("broadcast add rejects incompatible shapes", "[tensor]") {
  Tensor a({2, 3});
  Tensor b({4});
  REQUIRE_THROWS_AS(add(a, b), ShapeError);
}

TEST_CASE("every differentiable op passes the finite-difference oracle", "[tensor][gradcheck][property]") {
  Rng rng(101);
  for (int trial = 0; trial < 8; ++trial) {
    const int p = rng.uniform_int(1, 3), q = rng.uniform_int(1, 3), r = rng.uniform_int(1, 3);
    Tensor a = random_tensor({p, q}, rng);
    Tensor b = random_tensor({q, r}, rng);
    Tensor c = random_tensor({p, r}, rng);
    Tensor bias = random_tensor({r}, rng);
    auto res = gradcheck([&] { return mean(mul(add(matmul(a, b), bias), c)); }, {a, b, c, bias}, 1e-5, 1e-5);
    INFO(res.detail);
    REQUIRE(res.ok);
  }
  for (int trial = 0; trial < 8; ++trial) {
    const int n = rng.uniform_int(2, 5), d = rng.uniform_int(2, 5);
    // keep values away from relu/abs kinks
    Tensor x(Shape{n, d});
    for (double& v : x.values()) {
      v = rng.uniform(-1.0, 1.0);
      if (std::fabs(v) < 0.05) v += v >= 0 ? 0.1 : -0.1;
    }
    Tensor w = random_tensor({n, d}, rng);
    auto res1 = gradcheck([&] { return sum(mul(relu(x), w)); }, {x}, 1e-5, 1e-5);
    INFO(res1.detail);
    REQUIRE(res1.ok);
    auto res2 = gradcheck([&] { return sum(mul(arel::abs(x), w)); }, {x}, 1e-5, 1e-5);
    REQUIRE(res2.ok);
    auto res3 = gradcheck([&] { return sum(mul(softmax_lastdim(x), w)); }, {x}, 1e-5, 1e-5);
    REQUIRE(res3.ok);
    auto res4 = gradcheck([&] { return sum(mul(transpose_last_two(x), transpose_last_two(w))); }, {x}, 1e-5, 1e-5);
    REQUIRE(res4.ok);
    auto res5 = gradcheck([&] { return mean(mul(sum_axis(reshape(x, {n, d, 1}), 1), Tensor({n, 1}, 2.0))); },
                          {x}, 1e-5, 1e-5);
    REQUIRE(res5.ok);
  }
  for (int trial = 0; trial < 4; ++trial) {
    Tensor x = random_tensor({2, 3, 4}, rng);
    Tensor w = random_tensor({3, 2, 4}, rng);
    auto res = gradcheck([&] { return sum(mul(transpose01(x), w)); }, {x}, 1e-5, 1e-5);
    REQUIRE(res.ok);
    Tensor w2 = random_tensor({2, 3, 2}, rng);
    auto res6 =
        gradcheck([&] { return sum(mul(slice_lastdim(x, 1, 2), w2)); }, {x}, 1e-5, 1e-5);
    REQUIRE(res6.ok);
    Tensor w3 = random_tensor({2, 3, 4}, rng);
    auto res7 = gradcheck(
        [&] {
          auto lo = slice_lastdim(x, 0, 2);
          auto hi = slice_lastdim(x, 2, 2);
          return sum(mul(concat_lastdim({hi, lo}), w3));
        },
        {x}, 1e-5, 1e-5);
    REQUIRE(res7.ok);
  }
  {
    Tensor table = random_tensor({4, 3}, rng);
    std::vector<int> idx{0, 2, 2, 1};
    Tensor w = random_tensor({4, 3}, rng);
    auto res = gradcheck([&] { return sum(mul(rows_lookup(table, idx), w)); }, {table}, 1e-5, 1e-5);
    REQUIRE(res.ok);
  }
}

TEST_CASE("backward on sum gives all-ones gradient", "[tensor]") {
  Tensor x({2, 3}, 4.0, true);
  Tape tape;
  Tensor loss = sum(x);
  tape.backward(loss);
  for (double g : x.grad()) REQUIRE(g == 1.0);
}

TEST_CASE("backward of x*x at 3 gives 6", "[tensor]") {
  Tensor x = Tensor::scalar(3.0).set_requires_grad(true);
  Tape tape;
  Tensor loss = mul(x, x);
  tape.backward(loss);
  REQUIRE(x.grad()[0] == Catch::Approx(6.0));
}

TEST_CASE("backward requires a scalar loss and accumulates additively", "[tensor]") {
  Tensor x({3}, {1, 2, 3});
  x.set_requires_grad(true);
  Tape tape;
  Tensor y = mul(x, x);
  REQUIRE_THROWS_AS(tape.backward(y), ContractError);
  Tensor loss = sum(y);
  tape.backward(loss);
  tape.backward(loss);
  REQUIRE(x.grad()[0] == Catch::Approx(4.0));  // two passes of 2*x
  REQUIRE(x.grad()[2] == Catch::Approx(12.0));
}

TEST_CASE("forward is deterministic for a fixed seed", "[tensor][property]") {
  auto run = [] {
    Rng rng(42);
    Tensor a = random_tensor({4, 4}, rng);
    Tensor b = random_tensor({4, 4}, rng);
    return softmax_lastdim(matmul(a, b)).values();
  };
  REQUIRE(run() == run());
}

TEST_CASE("adam single step follows the bias-corrected formula", "[optim]") {
  Tensor p({2}, {1.0, -2.0}, true);
  p.zero_grad();
  p.grad()[0] = 0.3;
  p.grad()[1] = -0.7;
  AdamConfig cfg;
  cfg.lr = 1e-2;
  Adam opt({p}, cfg);
  opt.step();
  // fresh state: mhat = g, vhat = g^2 -> step = lr * g / (|g| + eps)
  const double d0 = 1e-2 * 0.3 / (std::sqrt(0.3 * 0.3) + 1e-8);
  const double d1 = 1e-2 * -0.7 / (std::sqrt(0.7 * 0.7) + 1e-8);
  REQUIRE(p.values()[0] == Catch::Approx(1.0 - d0).epsilon(1e-12));
  REQUIRE(p.values()[1] == Catch::Approx(-2.0 - d1).epsilon(1e-12));
  for (double g : p.grad()) REQUIRE(g == 0.0);  // gradients consumed and zeroed
}

TEST_CASE("adam leaves parameters unchanged under zero gradient", "[optim]") {
  Tensor p({3}, {1, 2, 3}, true);
  p.zero_grad();
  Adam opt({p});
  opt.step();
  REQUIRE(p.values() == std::vector<double>{1, 2, 3});
}

TEST_CASE("adam moves monotonically against a constant gradient", "[optim]") {
  Tensor p({1}, {0.5}, true);
  AdamConfig cfg;
  cfg.lr = 1e-3;
  Adam opt({p}, cfg);
  double prev = p.values()[0];
  for (int i = 0; i < 2; ++i) {
    p.zero_grad();
    p.grad()[0] = 1.0;
    opt.step();
    REQUIRE(p.values()[0] < prev);
    prev = p.values()[0];
  }
}

TEST_CASE("adam rejects a missing gradient", "[optim]") {
  Tensor p({2}, 1.0, true);
  Adam opt({p});
  REQUIRE_THROWS_AS(opt.step(), ContractError);
}

TEST_CASE("finite check flag detects non-finite results", "[tensor]") {
  finite_checks_enabled() = true;
  Tensor x = Tensor::scalar(1e308);
  REQUIRE_THROWS_AS(add(x, x), NumericError);
  finite_checks_enabled() = false;
}
