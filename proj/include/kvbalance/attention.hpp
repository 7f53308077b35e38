// Copyright 2026 The kvbalance Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "kvbalance/core.hpp"
#include "kvbalance/random.hpp"

namespace kvb {

struct AttentionResult {
  RealVector output;
  std::vector<double> softmax_weights;
  double softmax_l2 = 0.0;
  double value_frobenius = 0.0;
};

/// softmax(K q / sqrt d)^T V with max-subtraction.
AttentionResult exact_attention(const RealVector& q, std::span<const KVPair> pairs);

/// ||z - Attn||_2 / (||softmax||_2 * ||V||_F).
double objective_error(const RealVector& z, const AttentionResult& exact);
double objective_error(const RealVector& z, const RealVector& q, std::span<const KVPair> pairs);

/// ||z - Attn||_2 / ||Attn||_2. Throws UndefinedMetric when Attn is zero.
double empirical_relative_error(const RealVector& z, const AttentionResult& exact);
double empirical_relative_error(const RealVector& z, const RealVector& q, std::span<const KVPair> pairs);

/// Positions of exactly ceil(rate * n) pairs drawn without replacement, in
/// ascending order.
std::vector<std::size_t> uniform_sample_positions(std::size_t n, double rate, RandomSource& rng);
std::vector<KVPair> uniform_compress(std::span<const KVPair> pairs, double rate, RandomSource& rng);

// --- retention ------------------------------------------------------------

enum class MiddleCompressor {
  kIdentity,   // keep every middle token
  kDrop,       // discard the middle (sink + recent only)
  kUniform,    // uniform sample without replacement, reweighted
  kBalanceKV,  // streaming BalanceKV over the middle tokens
};

struct RetentionPolicy {
  enum class Kind { kUniformSample, kSinkRecent };
  Kind kind = Kind::kSinkRecent;
  /// UniformSample: fraction kept of each prefix. SinkRecent + kUniform: fraction of the middle.
  double rate = 1.0;
  std::uint64_t seed = 0;
  std::size_t sink_count = 0;
  std::size_t recent_count = 0;
  MiddleCompressor inner = MiddleCompressor::kIdentity;
  /// Recent window slides with the query step instead of being anchored at n - recent.
  bool sliding_recent = false;

  void validate() const;
};

/// 1-based stream position with its estimator weight.
struct WeightedIndex {
  std::uint64_t index = 0;
  double weight = 1.0;
};

/// Numerator and denominator terms may come from different token sets.
struct RetainedSet {
  std::vector<WeightedIndex> numerator;
  std::vector<WeightedIndex> denominator;
};

/// Stream split: sink = [1, sink_end], middle = [middle_begin, middle_end],
/// recent starts at recent_begin. `passthrough` marks streams too short to split.
struct RetentionRegions {
  std::size_t sink_end = 0;
  std::size_t middle_begin = 1;
  std::size_t middle_end = 0;
  std::size_t recent_begin = 1;
  bool passthrough = false;

  std::size_t middle_size() const { return middle_end >= middle_begin ? middle_end - middle_begin + 1 : 0; }
};

RetentionRegions retention_regions(std::size_t n, std::size_t sink_count, std::size_t recent_count);

/// Retained set at query step j. `middle` holds the already-compressed middle
/// for the uniform and BalanceKV compressors; identity and drop ignore it.
RetainedSet apply_retention(std::size_t n, const RetentionPolicy& policy, std::size_t step, const RetainedSet& middle);

/// z = sum_w w exp(<k, q>/sqrt d) v / sum_w w exp(<k, q>/sqrt d) over a retained set.
struct KernelSums {
  std::vector<double> numerator;
  double denominator = 0.0;
};
KernelSums retained_kernel_sums(std::span<const TokenTriple> stream, const RetainedSet& retained,
                                const RealVector& q);
RealVector retained_estimate(std::span<const TokenTriple> stream, const RetainedSet& retained, const RealVector& q);

std::vector<KVPair> prefix_pairs(std::span<const TokenTriple> stream, std::size_t step);

}  // namespace kvb
