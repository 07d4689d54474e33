// Copyright 2026 The tomt Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>

namespace tomt {

/// SplitMix64 step; used for seeding and stream derivation.
constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  state += 0x9E3779B97F4A7C15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// xoshiro256** generator. All randomness in the library flows through
/// explicit instances of this type; there is no global generator.
///
/// Distribution helpers are implemented here rather than taken from
/// <random> because the standard distributions are implementation-defined
/// and would break bytewise reproducibility across toolchains.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept;

  /// Derive an independent sub-stream, e.g. Rng::stream(root, "init").
  static Rng stream(std::uint64_t root_seed, std::string_view name,
                    std::uint64_t index = 0) noexcept;

  std::uint64_t next_u64() noexcept;
  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform() noexcept;
  /// Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound) noexcept;
  /// Standard normal via Box-Muller (no cached spare, so state is simple).
  double normal() noexcept;
  /// Sample an index with probability proportional to weights[i].
  std::size_t categorical(std::span<const double> weights) noexcept;

  using State = std::array<std::uint64_t, 4>;
  const State& state() const noexcept { return s_; }

 private:
  State s_{};
};

/// 64-bit FNV-1a, used only to turn stream names into seeds.
constexpr std::uint64_t fnv1a64(std::string_view text) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace tomt
