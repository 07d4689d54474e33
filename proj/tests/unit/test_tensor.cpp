// Copyright 2026 The tomt Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#include "tomt/gradcheck.hpp"
#include "tomt/rng.hpp"
#include "tomt/selftest.hpp"
#include "tomt/tensor.hpp"

using namespace tomt;

namespace {

Tensor rand_tensor(Shape shape, Rng& rng, bool requires_grad = true) {
  std::vector<float> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return Tensor::leaf(std::move(shape), std::move(v), requires_grad);
}

std::vector<float> copy(std::span<const float> s) { return {s.begin(), s.end()}; }

}  // namespace

TEST_CASE("matmul with identity returns the operand") {
  Rng rng(3);
  const auto a = rand_tensor({3, 3}, rng, false);
  const auto eye = Tensor::leaf({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const auto out = matmul(eye, a);
  CHECK(out.shape() == Shape{3, 3});
  for (std::size_t i = 0; i < 9; ++i) CHECK(out.data()[i] == a.data()[i]);
}

TEST_CASE("softmax of equal logits is uniform") {
  const auto out = softmax(Tensor::leaf({3}, {0, 0, 0}));
  for (float v : out.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-7));
}

TEST_CASE("causal softmax zeroes the future") {
  Rng rng(5);
  const auto out = causal_softmax(rand_tensor({4, 4}, rng, false));
  for (std::size_t r = 0; r < 4; ++r) {
    double total = 0;
    for (std::size_t c = 0; c < 4; ++c) {
      if (c > r) CHECK(out.at(r, c) == 0.0f);
      total += out.at(r, c);
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("cross-entropy gradient is softmax minus one-hot") {
  Rng rng(11);
  const auto z = rand_tensor({1, 5}, rng);
  const std::uint32_t k = 2;
  backward(cross_entropy(z, std::span<const std::uint32_t>(&k, 1)), Channel::Nll);
  const auto p = softmax(Tensor::leaf({5}, copy(z.data())));
  for (std::size_t j = 0; j < 5; ++j) {
    const double expected = p.data()[j] - (j == k ? 1.0 : 0.0);
    CHECK(z.grad(Channel::Nll)[j] == doctest::Approx(expected).epsilon(1e-6));
  }
  // and the identity holds against central differences
  auto z2 = rand_tensor({1, 5}, rng);
  std::vector<Tensor> params{z2};
  const auto res = finite_difference_check<float>(
      [&] { return cross_entropy(z2, std::span<const std::uint32_t>(&k, 1)); }, params);
  CHECK(res.max_relative_error < 1e-2);
}

TEST_CASE("backward accumulates into the selected channel only") {
  auto x = Tensor::leaf({}, {3.0f}, true);
  backward(mul(x, x), Channel::Nll);
  CHECK(x.grad(Channel::Nll)[0] == 6.0f);
  CHECK(x.grad(Channel::Rl)[0] == 0.0f);

  SUBCASE("re-running forward and backward adds") {
    backward(mul(x, x), Channel::Nll);
    CHECK(x.grad(Channel::Nll)[0] == 12.0f);
  }
  SUBCASE("a second loss into RL leaves NLL alone") {
    backward(scale(mul(x, mul(x, x)), 2.0), Channel::Rl);  // d/dx 2x^3 = 54
    CHECK(x.grad(Channel::Nll)[0] == 6.0f);
    CHECK(x.grad(Channel::Rl)[0] == 54.0f);
  }
}

TEST_CASE("backward misuse is reported") {
  auto x = Tensor::leaf({2}, {1, 2}, true);
  CHECK_THROWS_AS(backward(mul(x, x), Channel::Nll), GraphError);
  const auto loss = sum(mul(x, x));
  backward(loss, Channel::Nll);
  CHECK_THROWS_AS(backward(loss, Channel::Nll), GraphError);
}

TEST_CASE("shape errors name the op and both shapes") {
  const auto a = Tensor::zeros({2, 3});
  const auto b = Tensor::zeros({2, 3});
  try {
    (void)matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
  }
  CHECK_THROWS_AS((void)add(a, Tensor::zeros({3, 2})), ShapeError);
  CHECK_THROWS_AS((void)causal_softmax(a), ShapeError);
  const std::uint32_t bad = 7;
  CHECK_THROWS_AS((void)embedding(a, std::span<const std::uint32_t>(&bad, 1)), ShapeError);
}

TEST_CASE("non-finite forward results raise NumericError") {
  const auto big = Tensor::leaf({1}, {std::numeric_limits<float>::max()});
  CHECK_THROWS_AS((void)scale(big, 10.0), NumericError);
  const auto nan = Tensor::leaf({1}, {std::numeric_limits<float>::quiet_NaN()});
  CHECK_THROWS_AS((void)add(nan, nan), NumericError);
}

TEST_CASE("no-grad guard records nothing") {
  auto x = Tensor::leaf({2}, {1, 2}, true);
  {
    NoGradGuard guard;
    const auto y = sum(mul(x, x));
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(sum(mul(x, x)).requires_grad());
}

TEST_CASE("finite differences: analytic examples") {
  auto x = Tensor::leaf({2}, {1, 2}, true);
  std::vector<Tensor> params{x};
  const auto res = finite_difference_check<float>([&] { return sum(mul(x, x)); }, params);
  CHECK(res.max_relative_error < 1e-4);
  CHECK(res.coordinates == 2);
  // the accumulators the caller had are preserved
  CHECK(x.grad(Channel::Nll)[0] == 0.0f);

  const auto constant = finite_difference_check<float>([] { return Tensor::scalar(4.0f); }, params);
  CHECK(constant.max_relative_error == 0.0);

  int calls = 0;
  CHECK_THROWS(finite_difference_check<float>(
      [&] { return Tensor::scalar(static_cast<float>(++calls)); }, params));
  GradCheckOptions bad;
  bad.epsilon = 0.5;
  CHECK_THROWS(finite_difference_check<float>([&] { return sum(x); }, params, bad));
}

TEST_CASE("channel isolation holds bytewise across random graphs") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    Rng rng(seed);
    auto a = rand_tensor({3, 4}, rng);
    auto b = rand_tensor({4, 2}, rng);
    backward(sum(gelu(matmul(a, b))), Channel::Rl);
    const auto rl_a = copy(a.grad(Channel::Rl));
    const auto rl_b = copy(b.grad(Channel::Rl));
    backward(cross_entropy(matmul(a, b), std::vector<std::uint32_t>{0, 1, 1}), Channel::Nll);
    CHECK(std::memcmp(rl_a.data(), a.grad(Channel::Rl).data(), rl_a.size() * sizeof(float)) == 0);
    CHECK(std::memcmp(rl_b.data(), b.grad(Channel::Rl).data(), rl_b.size() * sizeof(float)) == 0);
  }
}

TEST_CASE("backward is linear in the loss scale") {
  Rng rng(42);
  for (int trial = 0; trial < 10; ++trial) {
    auto a = rand_tensor({3, 5}, rng);
    const double factor = 0.25 + 4.0 * rng.uniform();
    auto build = [&] { return cross_entropy(a, std::vector<std::uint32_t>{1, 4, 0}); };
    backward(build(), Channel::Nll);
    backward(scale(build(), factor), Channel::Rl);
    for (std::size_t i = 0; i < a.numel(); ++i) {
      const double base = factor * a.grad(Channel::Nll)[i];
      const double scaled = a.grad(Channel::Rl)[i];
      CHECK(std::abs(scaled - base) <= 1e-5 * std::max(std::abs(base), 1e-6));
    }
  }
}

TEST_CASE("every op passes the gradient check over 100 seeds") {
  for (const auto& op : selftest::op_cases()) {
    double worst32 = 0.0, worst64 = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      worst32 = std::max(worst32, op.run(seed, selftest::CheckPrecision::Mixed).max_relative_error);
      worst64 = std::max(worst64, op.run(seed, selftest::CheckPrecision::Float64).max_relative_error);
    }
    INFO(op.name, " mixed=", worst32, " float64=", worst64);
    CHECK(worst32 < 1e-2);
    CHECK(worst64 < 1e-5);
  }
}
