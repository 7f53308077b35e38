// Copyright 2026 The kvbalance Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvbalance/balancekv.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include "kvbalance/random.hpp"

namespace kvb {

namespace {

constexpr std::uint64_t kDenominatorTag = 0x44454e4f4dULL;
constexpr std::uint64_t kNumeratorTag = 0x4e554d4552ULL;

}  // namespace

std::optional<BucketKey> bucket_index(const RealVector& v) {
  const double norm = l2_norm(v);
  if (!(norm > 0.0)) return std::nullopt;
  int exponent = 0;
  const double mantissa = std::frexp(norm, &exponent);  // norm = mantissa * 2^exponent, mantissa in [0.5, 1)
  if (mantissa == 0.5) return BucketKey{exponent - 1};
  return BucketKey{exponent};
}

BatchSchedule theorem_batch_size(const StreamParams& params, double kappa) {
  params.validate();
  if (!(kappa > 0.0) || !std::isfinite(kappa)) throw InvalidArgument("kappa must be > 0");
  const double d = static_cast<double>(params.d);
  const double n = static_cast<double>(params.n);
  const double log_dn = std::log(d * n);
  const double raw =
      kappa * log_dn * log_dn * std::sqrt(d) * std::exp(2.0 * params.r * params.r / std::sqrt(d)) / params.epsilon;

  BatchSchedule out;
  if (!(raw < n)) {
    out.t = std::max<std::size_t>(params.n, 2);
    out.T = 0;
    out.no_compression = true;
    return out;
  }
  auto t = static_cast<std::size_t>(std::ceil(raw));
  if (t % 2 != 0) ++t;
  t = std::max<std::size_t>(t, 2);
  if (t >= params.n) {
    out.t = std::max<std::size_t>(params.n, 2);
    out.no_compression = true;
    return out;
  }
  out.t = t;
  while ((t << out.T) < params.n) ++out.T;
  return out;
}

void BalanceKVConfig::validate() const {
  params.validate();
  if (t < 2) throw InvalidArgument("batch size t must be >= 2");
  if (T > 62) throw InvalidArgument("depth T must be <= 62");
  if (!(cap_scale > 0.0)) throw InvalidArgument("cap_scale must be > 0");
}

MRConfig BalanceKV::cascade_config(std::size_t value_dim, double r_value, std::uint64_t seed) const {
  MRConfig mr;
  mr.t = cfg_.t;
  mr.T = cfg_.T;
  mr.key_dim = cfg_.params.d;
  mr.value_dim = value_dim;
  mr.seed = seed;
  mr.balance.delta = cfg_.inner_delta();
  mr.balance.r_key = cfg_.params.r;
  mr.balance.r_value = r_value;
  mr.balance.mode = cfg_.mode;
  mr.balance.fail_policy = cfg_.fail_policy;
  mr.balance.cap_scale = cfg_.cap_scale;
  return mr;
}

BalanceKV::BalanceKV(BalanceKVConfig cfg)
    : cfg_((cfg.validate(), std::move(cfg))),
      denominator_(cascade_config(1, 1.0, derive_seed(cfg_.seed, kDenominatorTag, 0))) {}

void BalanceKV::push(const TokenTriple& token) {
  const auto& p = cfg_.params;
  require_dim(token.query.dim(), p.d, "token query");
  require_dim(token.key.dim(), p.d, "token key");
  require_dim(token.value.dim(), p.s, "token value");
  if (processed_ > 0 && token.index <= last_index_) {
    throw ContractViolation("token index " + std::to_string(token.index) + " is not strictly increasing");
  }
  if (cfg_.enforce_capacity && processed_ >= p.n) {
    throw CapacityExceeded("stream longer than configured n = " + std::to_string(p.n));
  }
  const double tolerance = p.r * (1.0 + 1e-9);
  if (l2_norm(token.key) > tolerance) ++input_norm_violations_;
  if (l2_norm(token.query) > tolerance) ++input_norm_violations_;

  const double value_norm = l2_norm(token.value);
  if (const auto key = bucket_index(token.value)) {
    auto it = numerators_.find(*key);
    if (it == numerators_.end()) {
      const std::size_t gen = generation_[*key]++;
      const auto tag = kNumeratorTag ^ static_cast<std::uint64_t>(static_cast<std::int64_t>(key->i));
      auto cascade = std::make_unique<MergeReduce>(
          cascade_config(p.s, std::ldexp(1.0, key->i), derive_seed(cfg_.seed, tag, gen)));
      it = numerators_.emplace(*key, Bucket{std::move(cascade)}).first;
      pruned_.erase(*key);
    }
    it->second.cascade->push(KVPair{token.key, token.value, token.index});
    ++routed_[*key];
  } else {
    ++zero_value_tokens_;
  }
  v_max_ = std::max(v_max_, value_norm);
  if (cfg_.pruning) prune();

  denominator_.push(KVPair{token.key, RealVector{1.0}, token.index});
  ++processed_;
  last_index_ = token.index;
  peak_retained_ = std::max(peak_retained_, retained());
  peak_memory_bound_ = std::max(peak_memory_bound_, current_memory_bound());
}

double BalanceKV::prune_threshold() const {
  const auto& p = cfg_.params;
  return p.epsilon / (2.0 * static_cast<double>(p.n)) * std::exp(-p.r * p.r / std::sqrt(static_cast<double>(p.d))) *
         v_max_;
}

std::vector<BucketKey> BalanceKV::prune() {
  const double threshold = prune_threshold();
  std::vector<BucketKey> erased;
  for (auto it = numerators_.begin(); it != numerators_.end();) {
    if (std::ldexp(1.0, it->first.i) <= threshold) {
      erased.push_back(it->first);
      pruned_.insert(it->first);
      pruned_tokens_ += it->second.cascade->processed();
      retired_fail_count_ += it->second.cascade->fail_count();
      it = numerators_.erase(it);
    } else {
      ++it;
    }
  }
  return erased;
}

EstimatorOutput BalanceKV::estimate(const RealVector& q) const {
  require_dim(q.dim(), cfg_.params.d, "estimate query");
  if (processed_ == 0) throw EstimationFailure("estimate requested before any token was ingested");

  std::vector<double> numerator(cfg_.params.s, 0.0);
  EstimatorDiagnostics diag;
  for (const auto& [key, bucket] : numerators_) {
    bucket.cascade->accumulate(q.view(), 1.0, numerator);
    diag.retained_numerator += bucket.cascade->retained();
  }
  double denominator = 0.0;
  denominator_.accumulate(q.view(), 1.0, std::span<double>(&denominator, 1));
  diag.retained_denominator = denominator_.retained();
  diag.live_buckets = numerators_.size();
  diag.pruned_buckets = pruned_.size();
  diag.fail_count = fail_count();
  diag.norm_violations = norm_violations();

  if (!(denominator > 0.0) || !std::isfinite(denominator)) {
    std::ostringstream msg;
    msg << "softmax normalizer estimate " << denominator << " is not positive (fail_count=" << diag.fail_count
        << ", live_buckets=" << diag.live_buckets << ", retained_denominator=" << diag.retained_denominator << ")";
    throw EstimationFailure(msg.str());
  }
  std::vector<double> z(numerator);
  for (double& x : z) x /= denominator;
  return EstimatorOutput{RealVector(std::move(numerator)), denominator, RealVector(std::move(z)), diag};
}

std::vector<BucketKey> BalanceKV::bucket_keys() const {
  std::vector<BucketKey> keys;
  for (const auto& [key, bucket] : numerators_) keys.push_back(key);
  return keys;
}

std::size_t BalanceKV::norm_violations() const noexcept {
  std::size_t total = input_norm_violations_ + denominator_.norm_violations();
  for (const auto& [key, bucket] : numerators_) total += bucket.cascade->norm_violations();
  return total;
}

std::size_t BalanceKV::fail_count() const noexcept {
  std::size_t total = retired_fail_count_ + denominator_.fail_count();
  for (const auto& [key, bucket] : numerators_) total += bucket.cascade->fail_count();
  return total;
}

std::size_t BalanceKV::retained() const noexcept {
  std::size_t total = denominator_.retained();
  for (const auto& [key, bucket] : numerators_) total += bucket.cascade->retained();
  return total;
}

std::size_t BalanceKV::current_memory_bound() const noexcept {
  std::size_t total = denominator_.memory_bound();
  for (const auto& [key, bucket] : numerators_) total += bucket.cascade->memory_bound();
  return total;
}

}  // namespace kvb
