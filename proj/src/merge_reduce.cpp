// Copyright 2026 The kvbalance Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvbalance/merge_reduce.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kvbalance/random.hpp"

namespace kvb {

void MRConfig::validate() const {
  if (t < 2) throw InvalidArgument("merge-reduce batch size t must be >= 2");
  if (T > 62) throw InvalidArgument("merge-reduce depth T must be <= 62");
  if (key_dim < 1 || value_dim < 1) throw InvalidArgument("merge-reduce dimensions must be >= 1");
  balance.validate();
}

std::uint64_t compression_seed(std::uint64_t seed, std::size_t level, std::size_t ordinal) noexcept {
  return derive_seed(seed, level, ordinal);
}

MergeReduce::MergeReduce(MRConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  levels_.resize(cfg_.T + 1);
  ordinals_.assign(cfg_.T + 1, 0);
}

void MergeReduce::push(KVPair pair) {
  require_dim(pair.key.dim(), cfg_.key_dim, "merge-reduce key");
  require_dim(pair.value.dim(), cfg_.value_dim, "merge-reduce value");
  if (cfg_.max_n != 0 && processed_ >= cfg_.max_n) {
    throw CapacityExceeded("merge-reduce capacity of " + std::to_string(cfg_.max_n) + " pairs exceeded");
  }
  if (processed_ >= (cfg_.t << cfg_.T)) ++overflow_count_;

  levels_[0].push_back(std::move(pair));
  ++processed_;
  peak_retained_ = std::max(peak_retained_, retained());
  if (cfg_.T == 0) level_t_peak_ = std::max(level_t_peak_, levels_[0].size());
  if (processed_ % cfg_.t == 0) cascade();
}

void MergeReduce::cascade() {
  std::size_t batches = processed_ / cfg_.t;
  for (std::size_t i = 0; i < cfg_.T; ++i) {
    auto& input = levels_[i];
    RandomSource rng(compression_seed(cfg_.seed, i, ordinals_[i]));
    const auto outcome = softmax_balance_partition(input, cfg_.balance, rng);
    fail_count_ += outcome.fail_count;
    norm_violations_ += outcome.norm_violations;

    if (observer_) {
      observer_(CompressionEvent{i, ordinals_[i], input, outcome.selected, outcome.fail_count});
    }
    ++ordinals_[i];

    auto& next = levels_[i + 1];
    for (std::size_t pos : outcome.selected) next.push_back(std::move(input[pos]));
    input.clear();
    if (i + 1 == cfg_.T) level_t_peak_ = std::max(level_t_peak_, next.size());

    if (batches % 2 != 0) break;
    batches /= 2;
  }
}

std::vector<LevelSnapshot> MergeReduce::levels() const {
  std::vector<LevelSnapshot> out;
  out.reserve(levels_.size());
  for (std::size_t i = 0; i < levels_.size(); ++i) out.push_back({i, levels_[i]});
  return out;
}

void MergeReduce::accumulate(std::span<const double> q, double weight, std::span<double> out) const {
  require_dim(q.size(), cfg_.key_dim, "merge-reduce query");
  require_dim(out.size(), cfg_.value_dim, "merge-reduce output");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg_.key_dim));
  for (std::size_t i = 0; i < levels_.size(); ++i) {
    const double level_weight = weight * std::ldexp(1.0, static_cast<int>(i));
    for (const auto& pair : levels_[i]) {
      const auto k = pair.key.view();
      double kq = 0.0;
      for (std::size_t c = 0; c < k.size(); ++c) kq += k[c] * q[c];
      const double w = level_weight * guarded_exp(kq * inv_sqrt_d);
      const auto v = pair.value.view();
      for (std::size_t c = 0; c < v.size(); ++c) out[c] += w * v[c];
    }
  }
}

RealVector MergeReduce::estimate(const RealVector& q) const {
  std::vector<double> out(cfg_.value_dim, 0.0);
  accumulate(q.view(), 1.0, out);
  return RealVector(std::move(out));
}

std::size_t MergeReduce::retained() const noexcept {
  std::size_t total = 0;
  for (const auto& level : levels_) total += level.size();
  return total;
}

std::size_t MergeReduce::weighted_count() const noexcept {
  std::size_t total = 0;
  for (std::size_t i = 0; i < levels_.size(); ++i) total += levels_[i].size() << i;
  return total;
}

std::size_t MergeReduce::compressions() const noexcept {
  std::size_t total = 0;
  for (std::size_t c : ordinals_) total += c;
  return total;
}

std::size_t MergeReduce::memory_bound() const noexcept {
  return cfg_.t * cfg_.T + std::max(cfg_.t, level_t_peak_);
}

}  // namespace kvb
