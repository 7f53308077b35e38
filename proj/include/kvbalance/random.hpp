// Copyright 2026 The kvbalance Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>

namespace kvb {

/// SplitMix64 finalizer; used to derive independent child seeds.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Deterministic child seed for (master, a, b). Used for the merge-reduce
/// schedule (level, batch ordinal) and for per-bucket cascades.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) noexcept;

/// Single-owner seeded generator. Copying is disabled; use reseeded() or
/// child() to obtain an independent source.
class RandomSource {
 public:
  explicit RandomSource(std::uint64_t seed) : seed_(seed), engine_(mix64(seed)) {}
  RandomSource(const RandomSource&) = delete;
  RandomSource& operator=(const RandomSource&) = delete;
  RandomSource(RandomSource&&) noexcept = default;
  RandomSource& operator=(RandomSource&&) noexcept = default;

  std::uint64_t seed() const noexcept { return seed_; }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller (no cached second variate).
  double normal() noexcept;

  /// Uniform integer in [0, bound) by rejection; bound must be > 0.
  std::uint64_t below(std::uint64_t bound) noexcept;

  std::uint64_t next_u64() noexcept { return engine_(); }

  RandomSource reseeded() const { return RandomSource(seed_); }
  RandomSource child(std::uint64_t a, std::uint64_t b = 0) const {
    return RandomSource(derive_seed(seed_, a, b));
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace kvb
