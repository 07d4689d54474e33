// Copyright 2026 The tomt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tomt/conversation.hpp"
#include "tomt/gradcheck.hpp"
#include "tomt/model.hpp"

namespace tomt::selftest {

enum class CheckPrecision {
  Float32,  // analytic gradients and central differences both 32-bit
  Mixed,    // 32-bit analytic gradients, 64-bit central differences
  Float64,  // everything 64-bit
};

std::string_view to_string(CheckPrecision p) noexcept;

/// One randomised gradient check per forward op; the seed picks shapes and values.
struct OpCase {
  std::string name;
  std::function<GradCheckResult(std::uint64_t seed, CheckPrecision precision)> run;
};

std::vector<OpCase> op_cases();

/// Whole-model check: both streams' cross-entropy on a random sequence,
/// `coords_per_tensor` sampled coordinates per parameter (0 = all).
GradCheckResult model_check(const ModelConfig& config, std::uint64_t seed, CheckPrecision precision,
                            std::size_t coords_per_tensor);

/// Named pass/fail line of a suite.
struct Outcome {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct Options {
  std::uint64_t seed = 0;
  std::size_t gradient_seeds = 100;
  std::size_t audit_seeds = 20;
  std::size_t property_cases = 1000;
  /// Route the RL channel into Prediction heads; the audit must catch it.
  bool inject_prediction_rl = false;
};

/// The head layouts the routing audit sweeps.
std::vector<ModelConfig> audit_layouts();

/// Every op at 32-bit (64-bit oracle) < 1e-2 and pure 64-bit < 1e-5, plus
/// the whole default model.
std::vector<Outcome> gradient_suite(const Options& options);
/// One line per algorithm: all seeds x layouts audited, zero violations.
std::vector<Outcome> routing_suite(const Options& options);
/// Perspective switch involution and state/append coherence.
std::vector<Outcome> perspective_suite(const Options& options);

std::vector<Outcome> run_all(const Options& options);

/// A random two-party conversation with arbitrary byte texts.
Conversation random_conversation(Rng& rng, std::size_t max_messages = 8);

}  // namespace tomt::selftest
