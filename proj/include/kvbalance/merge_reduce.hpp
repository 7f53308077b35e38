// Copyright 2026 The kvbalance Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "kvbalance/balance.hpp"
#include "kvbalance/core.hpp"

namespace kvb {

struct MRConfig {
  /// Batch size: level 0 is compressed every t pushes.
  std::size_t t = 2;
  /// Depth; the deepest level is T and retained pairs there carry weight 2^T.
  std::size_t T = 0;
  BalanceConfig balance;
  std::size_t key_dim = 1;
  std::size_t value_dim = 1;
  /// Master seed of the compression schedule.
  std::uint64_t seed = 0;
  /// Hard cap on pushes; zero means unbounded.
  std::size_t max_n = 0;

  void validate() const;
};

struct LevelSnapshot {
  std::size_t level = 0;
  std::vector<KVPair> pairs;
};

/// Emitted after every balance call of the cascade.
struct CompressionEvent {
  std::size_t level = 0;    // input level; output lands in level + 1
  std::size_t ordinal = 0;  // 0-based count of earlier compressions at this level
  std::vector<KVPair> input;
  std::vector<std::size_t> selected;  // positions into `input`
  std::size_t fail_count = 0;
};

/// Seed for the `ordinal`-th compression of `level` under master seed `seed`.
std::uint64_t compression_seed(std::uint64_t seed, std::size_t level, std::size_t ordinal) noexcept;

/// Streaming merge-and-reduce cascade over softmax_balance. Levels C^0..C^T
/// hold pairs of weight 2^i; every t pushes C^0 is halved into C^1, and the
/// cascade continues upward while the batch counter stays even.
class MergeReduce {
 public:
  explicit MergeReduce(MRConfig cfg);

  void push(KVPair pair);

  /// Read-only copy of C^0..C^T.
  std::vector<LevelSnapshot> levels() const;
  const std::vector<KVPair>& level(std::size_t i) const { return levels_.at(i); }

  /// sum_i 2^i sum_{(k, v) in C^i} exp(<k, q> / sqrt(d)) v.
  RealVector estimate(const RealVector& q) const;
  /// Same sum accumulated into `out` (size value_dim) with an extra weight.
  void accumulate(std::span<const double> q, double weight, std::span<double> out) const;

  std::size_t processed() const noexcept { return processed_; }
  std::size_t retained() const noexcept;
  std::size_t peak_retained() const noexcept { return peak_retained_; }
  /// sum_i 2^i |C^i|.
  std::size_t weighted_count() const noexcept;
  std::size_t fail_count() const noexcept { return fail_count_; }
  std::size_t norm_violations() const noexcept { return norm_violations_; }
  /// Number of pushes made past t * 2^T.
  std::size_t overflow_count() const noexcept { return overflow_count_; }
  std::size_t compressions() const noexcept;
  /// t * (T + 1) plus whatever level T holds beyond t after overflow.
  std::size_t memory_bound() const noexcept;
  const MRConfig& config() const noexcept { return cfg_; }

  void set_observer(std::function<void(const CompressionEvent&)> observer) { observer_ = std::move(observer); }

 private:
  void cascade();

  MRConfig cfg_;
  std::vector<std::vector<KVPair>> levels_;
  std::vector<std::size_t> ordinals_;
  std::size_t processed_ = 0;
  std::size_t peak_retained_ = 0;
  std::size_t fail_count_ = 0;
  std::size_t norm_violations_ = 0;
  std::size_t overflow_count_ = 0;
  std::size_t level_t_peak_ = 0;
  std::function<void(const CompressionEvent&)> observer_;
};

}  // namespace kvb
