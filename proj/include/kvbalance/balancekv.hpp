// Copyright 2026 The kvbalance Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <vector>

#include "kvbalance/balance.hpp"
#include "kvbalance/core.hpp"
#include "kvbalance/merge_reduce.hpp"

namespace kvb {

/// Dyadic value-norm bucket: 2^(i-1) <= ||v|| <= 2^i.
struct BucketKey {
  int i = 0;
  friend auto operator<=>(const BucketKey&, const BucketKey&) = default;
};

/// i = ceil(log2 ||v||), with exact powers of two mapped to their own
/// exponent. Returns nullopt for the zero vector.
std::optional<BucketKey> bucket_index(const RealVector& v);

struct BatchSchedule {
  std::size_t t = 2;
  std::size_t T = 0;
  /// True when the formula asked for t >= n and compression is disabled.
  bool no_compression = false;
};

/// t = ceil(kappa * ln^2(d n) * sqrt(d) * exp(2 r^2 / sqrt d) / epsilon), rounded
/// up to an even number, and T = max(0, ceil(log2(n / t))). When t >= n the
/// schedule degenerates to t = n, T = 0.
BatchSchedule theorem_batch_size(const StreamParams& params, double kappa = 0.05);

struct BalanceKVConfig {
  StreamParams params;
  std::size_t t = 2;
  std::size_t T = 0;
  SelectionMode mode = SelectionMode::kStrictHalf;
  FailPolicy fail_policy = FailPolicy::kClampContinue;
  double cap_scale = 30.0;
  std::uint64_t seed = 0;
  bool pruning = true;
  /// Reject pushes beyond params.n.
  bool enforce_capacity = true;

  void validate() const;
  /// Per-call failure probability handed to every balance call: delta / (4 n).
  double inner_delta() const { return params.delta / (4.0 * static_cast<double>(params.n)); }
};

struct EstimatorDiagnostics {
  std::size_t fail_count = 0;
  std::size_t live_buckets = 0;
  std::size_t pruned_buckets = 0;
  std::size_t retained_numerator = 0;
  std::size_t retained_denominator = 0;
  std::size_t norm_violations = 0;
};

struct EstimatorOutput {
  RealVector numerator;
  double denominator = 0.0;
  RealVector z;
  EstimatorDiagnostics diagnostics;
};

/// Streaming attention estimator: one merge-reduce cascade per value-norm
/// bucket for the numerator and one scalar cascade (all values 1) for the
/// softmax normalizer.
class BalanceKV {
 public:
  explicit BalanceKV(BalanceKVConfig cfg);

  void push(const TokenTriple& token);

  /// Erase every numerator bucket with 2^i <= (eps / 2n) e^{-r^2/sqrt d} v_max.
  /// Returns the keys erased by this call.
  std::vector<BucketKey> prune();
  double prune_threshold() const;

  EstimatorOutput estimate(const RealVector& q) const;

  std::vector<BucketKey> bucket_keys() const;
  const MergeReduce& numerator(BucketKey key) const { return *numerators_.at(key).cascade; }
  const MergeReduce& denominator() const { return denominator_; }
  const std::set<BucketKey>& pruned() const noexcept { return pruned_; }
  /// Tokens routed to every bucket since the start, including erased ones.
  const std::map<BucketKey, std::size_t>& routed_counts() const noexcept { return routed_; }
  /// Tokens lost with erased buckets.
  std::size_t pruned_tokens() const noexcept { return pruned_tokens_; }
  std::size_t zero_value_tokens() const noexcept { return zero_value_tokens_; }
  double v_max() const noexcept { return v_max_; }
  std::size_t processed() const noexcept { return processed_; }
  std::size_t norm_violations() const noexcept;
  std::size_t fail_count() const noexcept;
  std::size_t retained() const noexcept;
  std::size_t peak_retained() const noexcept { return peak_retained_; }
  /// Sum of the live cascades' bounds: (#live buckets + 1) * t * (T + 1),
  /// widened by per-cascade overflow at level T.
  std::size_t current_memory_bound() const noexcept;
  /// Largest current_memory_bound() seen after any push; peak_retained() never exceeds it.
  std::size_t memory_bound() const noexcept { return std::max(peak_memory_bound_, current_memory_bound()); }
  const BalanceKVConfig& config() const noexcept { return cfg_; }

 private:
  struct Bucket {
    std::unique_ptr<MergeReduce> cascade;
  };

  MRConfig cascade_config(std::size_t value_dim, double r_value, std::uint64_t seed) const;

  BalanceKVConfig cfg_;
  std::map<BucketKey, Bucket> numerators_;
  MergeReduce denominator_;
  std::set<BucketKey> pruned_;
  std::map<BucketKey, std::size_t> routed_;
  std::map<BucketKey, std::size_t> generation_;
  double v_max_ = 0.0;
  std::size_t processed_ = 0;
  std::uint64_t last_index_ = 0;
  std::size_t pruned_tokens_ = 0;
  std::size_t zero_value_tokens_ = 0;
  std::size_t input_norm_violations_ = 0;
  std::size_t retired_fail_count_ = 0;
  std::size_t peak_retained_ = 0;
  std::size_t peak_memory_bound_ = 0;
};

}  // namespace kvb
