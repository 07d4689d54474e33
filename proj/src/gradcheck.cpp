// Copyright 2026 The tomt Authors
// SPDX-License-Identifier: Apache-2.0

#include "tomt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>

#include "tomt/rng.hpp"

namespace tomt {
namespace {

template <typename T>
std::vector<std::vector<double>> analytic_gradients(const std::function<BasicTensor<T>()>& loss_fn,
                                                    std::span<BasicTensor<T>> params) {
  // Preserve whatever the caller had accumulated.
  std::vector<std::vector<T>> saved;
  saved.reserve(params.size());
  for (auto& p : params) {
    const auto g = p.grad(Channel::Nll);
    saved.emplace_back(g.begin(), g.end());
    p.zero_grad(Channel::Nll);
  }
  backward(loss_fn(), Channel::Nll);
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto g = params[k].mutable_grad(Channel::Nll);
    out.emplace_back(g.begin(), g.end());
    std::copy(saved[k].begin(), saved[k].end(), g.begin());
  }
  return out;
}

template <typename T>
double evaluate(const std::function<BasicTensor<T>()>& loss_fn) {
  NoGradGuard guard;
  return static_cast<double>(loss_fn().item());
}

std::vector<std::size_t> sample_coordinates(std::size_t numel, std::size_t limit, Rng& rng) {
  std::vector<std::size_t> idx(numel);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (limit == 0 || limit >= numel) return idx;
  for (std::size_t i = 0; i < limit; ++i) {
    const std::size_t j = i + rng.below(numel - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(limit);
  std::sort(idx.begin(), idx.end());
  return idx;
}

template <typename A, typename B>
GradCheckResult run_check(const std::function<BasicTensor<A>()>& analytic_fn,
                          std::span<BasicTensor<A>> analytic_params,
                          const std::function<BasicTensor<B>()>& oracle_fn,
                          std::span<BasicTensor<B>> oracle_params, const GradCheckOptions& options) {
  if (!(options.epsilon >= 1e-6 && options.epsilon <= 1e-2)) {
    throw std::invalid_argument("finite_difference_check: epsilon must lie in [1e-6, 1e-2]");
  }
  if (analytic_params.size() != oracle_params.size()) {
    throw std::invalid_argument("finite_difference_check: parameter lists differ in length");
  }
  const double first = evaluate(oracle_fn);
  const double second = evaluate(oracle_fn);
  if (std::memcmp(&first, &second, sizeof(double)) != 0) {
    throw std::runtime_error("finite_difference_check: loss function is non-deterministic");
  }

  const auto analytic = analytic_gradients(analytic_fn, analytic_params);
  double scale = 0.0;
  for (const auto& g : analytic) {
    for (double v : g) scale = std::max(scale, std::abs(v));
  }
  const double floor = std::max(1e-8, options.scale_floor * scale);

  Rng rng(options.seed);
  GradCheckResult result;
  for (std::size_t k = 0; k < oracle_params.size(); ++k) {
    auto values = oracle_params[k].leaf_values();
    if (values.size() != analytic[k].size()) {
      throw std::invalid_argument("finite_difference_check: oracle tensor #" + std::to_string(k) +
                                  " does not mirror the analytic tensor");
    }
    for (std::size_t i : sample_coordinates(values.size(), options.max_coords_per_tensor, rng)) {
      const B original = values[i];
      const B plus = static_cast<B>(original + options.epsilon);
      const B minus = static_cast<B>(original - options.epsilon);
      values[i] = plus;
      const double lp = evaluate(oracle_fn);
      values[i] = minus;
      const double lm = evaluate(oracle_fn);
      values[i] = original;
      const double fd = (lp - lm) / (static_cast<double>(plus) - static_cast<double>(minus));
      const double an = analytic[k][i];
      const double denom = std::max({std::abs(an), std::abs(fd), floor});
      const double rel = std::abs(an - fd) / denom;
      ++result.coordinates;
      if (result.worst.empty() || rel > result.max_relative_error) {
        result.max_relative_error = rel;
        std::ostringstream os;
        os << "tensor#" << k << "[" << i << "]: analytic=" << an << " fd=" << fd;
        result.worst = os.str();
      }
    }
  }
  return result;
}

}  // namespace

template <typename T>
GradCheckResult finite_difference_check(const std::function<BasicTensor<T>()>& loss_fn,
                                        std::span<BasicTensor<T>> params,
                                        const GradCheckOptions& options) {
  return run_check<T, T>(loss_fn, params, loss_fn, params, options);
}

GradCheckResult finite_difference_check(const std::function<Tensor()>& loss32, std::span<Tensor> params32,
                                        const std::function<Tensor64()>& loss64,
                                        std::span<Tensor64> params64, const GradCheckOptions& options) {
  return run_check<float, double>(loss32, params32, loss64, params64, options);
}

template GradCheckResult finite_difference_check<float>(const std::function<Tensor()>&, std::span<Tensor>,
                                                        const GradCheckOptions&);
template GradCheckResult finite_difference_check<double>(const std::function<Tensor64()>&,
                                                         std::span<Tensor64>, const GradCheckOptions&);

}  // namespace tomt
