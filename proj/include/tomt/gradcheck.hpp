// Copyright 2026 The tomt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "tomt/tensor.hpp"

namespace tomt {

struct GradCheckOptions {
  double epsilon = 1e-3;
  /// Coordinates sampled per tensor; 0 checks every coordinate.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t seed = 0;
  /// Denominator floor as a fraction of the largest analytic gradient
  /// magnitude, so coordinates far below the gradient scale are judged on
  /// absolute error.
  double scale_floor = 1e-3;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
  /// "tensor#k[i]: analytic=... fd=..." for the worst coordinate.
  std::string worst;
};

/// Compares analytic gradients against central differences.
///
/// relative error = |analytic - fd| / max(|analytic|, |fd|, floor), maximised
/// over the sampled coordinates, where floor = max(1e-8, scale_floor * max|analytic|). The loss is evaluated twice up front and a
/// bitwise mismatch is reported as an error (non-deterministic loss).
/// Existing gradient accumulators on `params` are preserved.
template <typename T>
GradCheckResult finite_difference_check(const std::function<BasicTensor<T>()>& loss_fn,
                                        std::span<BasicTensor<T>> params,
                                        const GradCheckOptions& options = {});

/// Mixed-precision variant: analytic gradients come from the 32-bit graph,
/// central differences from a 64-bit replica (`params64` must mirror
/// `params32` element for element).
GradCheckResult finite_difference_check(const std::function<Tensor()>& loss32,
                                        std::span<Tensor> params32,
                                        const std::function<Tensor64()>& loss64,
                                        std::span<Tensor64> params64,
                                        const GradCheckOptions& options = {});

}  // namespace tomt
