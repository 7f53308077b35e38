// Copyright 2026 The kvbalance Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "kvbalance/core.hpp"
#include "kvbalance/random.hpp"

namespace kvb {

enum class SelectionMode {
  /// Output the smaller of the two signed classes (the +1 class on ties).
  kSmallerHalf,
  /// Output exactly floor(n/2) items; see balance.cpp for the rebalancing rule.
  kStrictHalf,
};

enum class FailPolicy {
  /// Throw BalanceFailure when |y^T eta| exceeds c * R^2.
  kAbort,
  /// Clamp the sign probability into [0, 1] and count the event.
  kClampContinue,
};

struct BalanceConfig {
  double delta = 0.01;
  double r_key = 1.0;
  double r_value = 1.0;
  SelectionMode mode = SelectionMode::kSmallerHalf;
  FailPolicy fail_policy = FailPolicy::kClampContinue;
  /// Multiplier in c = cap_scale * log(n / delta).
  double cap_scale = 30.0;
  /// Declared upper bound n on the stream length used in c. Zero means "use the
  /// number of items actually supplied". Fixing it makes the walk prefix-stable.
  std::size_t max_items = 0;

  void validate() const;
};

/// c = cap_scale * log(n / delta), with n clamped to at least 1.
double discrepancy_cap(std::size_t n, double delta, double cap_scale = 30.0);

/// Running state of one online signing walk. Each call to step() assigns the
/// sign of the next item given its affinities to all previously signed items.
class WalkState {
 public:
  /// `cap` is c, `scale` is R; the admissible band is |y^T eta| <= c * R^2.
  WalkState(double cap, double scale, FailPolicy policy);

  /// `affinity_row[i]` is the inner product of the incoming item with item i,
  /// for every already signed i. A trailing entry for the incoming item itself
  /// is accepted and ignored (its sign is still zero).
  int step(std::span<const double> affinity_row, RandomSource& rng);

  /// p = 1/2 - y / (2 c R^2), clamped into [0, 1].
  double probability_for(double signed_sum) const noexcept;

  const std::vector<int>& signs() const noexcept { return signs_; }
  /// y^T eta observed at each step, in order.
  const std::vector<double>& signed_sums() const noexcept { return signed_sums_; }
  const std::vector<double>& probabilities() const noexcept { return probabilities_; }
  double cap() const noexcept { return cap_; }
  double scale() const noexcept { return scale_; }
  double threshold() const noexcept { return threshold_; }
  std::size_t fail_count() const noexcept { return fail_count_; }

 private:
  double cap_;
  double scale_;
  double threshold_;
  FailPolicy policy_;
  std::size_t fail_count_ = 0;
  std::vector<int> signs_;
  std::vector<double> signed_sums_;
  std::vector<double> probabilities_;
};

struct BalanceOutcome {
  /// Positions (ascending) of the output subset within the input sequence.
  std::vector<std::size_t> selected;
  /// Signs drawn by the walk, before any StrictHalf rebalancing.
  std::vector<int> walk_signs;
  /// +1 for selected items, -1 for the complement.
  std::vector<int> final_signs;
  /// y^T eta at each step.
  std::vector<double> signed_sums;
  std::size_t fail_count = 0;
  std::size_t norm_violations = 0;
  /// Items moved into the output by StrictHalf.
  std::size_t moved = 0;
  double cap = 0.0;
  double scale = 0.0;
};

/// Plain inner-product self-balancing walk. Uses cfg.delta, mode, fail_policy,
/// cap_scale and max_items; the radius `r` replaces r_key/r_value.
BalanceOutcome balance_vectors(std::span<const RealVector> items, double r, const BalanceConfig& cfg,
                               RandomSource& rng);

/// Subset form of balance_vectors.
std::vector<RealVector> self_balancing_walk(std::span<const RealVector> items, double r, const BalanceConfig& cfg,
                                            RandomSource& rng);

/// Softmax-kernel walk over (key, value) pairs: the walk runs on the implicit
/// vectors phi(k) (x) v using pair_affinity for every inner product, with
/// R = exp(r_key^2 / (2 sqrt d)) * r_value.
BalanceOutcome softmax_balance_partition(std::span<const KVPair> pairs, const BalanceConfig& cfg,
                                         RandomSource& rng);

/// Subset form. Output preserves input order.
std::vector<KVPair> softmax_balance(std::span<const KVPair> pairs, const BalanceConfig& cfg, RandomSource& rng);

}  // namespace kvb
