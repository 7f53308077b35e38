// Copyright 2026 The kvbalance Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvbalance/attention.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace kvb {

AttentionResult exact_attention(const RealVector& q, std::span<const KVPair> pairs) {
  if (pairs.empty()) throw InvalidArgument("exact_attention needs at least one pair");
  const std::size_t d = q.dim();
  const std::size_t s = pairs[0].value.dim();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  std::vector<double> logits(pairs.size());
  double max_logit = -INFINITY;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    require_dim(pairs[i].key.dim(), d, "exact_attention key");
    require_dim(pairs[i].value.dim(), s, "exact_attention value");
    logits[i] = dot(pairs[i].key.view(), q.view()) * inv_sqrt_d;
    max_logit = std::max(max_logit, logits[i]);
  }
  double total = 0.0;
  for (double& x : logits) {
    x = std::exp(x - max_logit);
    total += x;
  }

  AttentionResult out;
  out.softmax_weights = std::move(logits);
  std::vector<double> output(s, 0.0);
  double weight_sq = 0.0;
  double value_sq = 0.0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    double& w = out.softmax_weights[i];
    w /= total;
    weight_sq += w * w;
    const auto v = pairs[i].value.view();
    for (std::size_t c = 0; c < s; ++c) {
      output[c] += w * v[c];
      value_sq += v[c] * v[c];
    }
  }
  out.output = RealVector(std::move(output));
  out.softmax_l2 = std::sqrt(weight_sq);
  out.value_frobenius = std::sqrt(value_sq);
  return out;
}

namespace {

double distance(const RealVector& a, const RealVector& b) {
  require_dim(a.dim(), b.dim(), "error metric");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) {
    const double diff = a[i] - b[i];
    acc += diff * diff;
  }
  return std::sqrt(acc);
}

}  // namespace

double objective_error(const RealVector& z, const AttentionResult& exact) {
  const double scale = exact.softmax_l2 * exact.value_frobenius;
  const double err = distance(z, exact.output);
  if (scale == 0.0) return err == 0.0 ? 0.0 : INFINITY;
  return err / scale;
}

double objective_error(const RealVector& z, const RealVector& q, std::span<const KVPair> pairs) {
  return objective_error(z, exact_attention(q, pairs));
}

double empirical_relative_error(const RealVector& z, const AttentionResult& exact) {
  const double norm = l2_norm(exact.output);
  if (norm == 0.0) throw UndefinedMetric("relative error undefined: exact attention output is zero");
  return distance(z, exact.output) / norm;
}

double empirical_relative_error(const RealVector& z, const RealVector& q, std::span<const KVPair> pairs) {
  return empirical_relative_error(z, exact_attention(q, pairs));
}

std::vector<std::size_t> uniform_sample_positions(std::size_t n, double rate, RandomSource& rng) {
  if (!(rate > 0.0 && rate <= 1.0)) throw InvalidArgument("uniform sampling rate must lie in (0, 1]");
  const auto keep = std::min<std::size_t>(n, static_cast<std::size_t>(std::ceil(rate * static_cast<double>(n))));
  // Partial Fisher-Yates over positions; result sorted for stable iteration order.
  std::vector<std::size_t> positions(n);
  std::iota(positions.begin(), positions.end(), std::size_t{0});
  for (std::size_t i = 0; i < keep; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(positions[i], positions[j]);
  }
  positions.resize(keep);
  std::sort(positions.begin(), positions.end());
  return positions;
}

std::vector<KVPair> uniform_compress(std::span<const KVPair> pairs, double rate, RandomSource& rng) {
  std::vector<KVPair> kept;
  for (std::size_t i : uniform_sample_positions(pairs.size(), rate, rng)) kept.push_back(pairs[i]);
  return kept;
}

void RetentionPolicy::validate() const {
  if (!(rate > 0.0 && rate <= 1.0)) throw InvalidArgument("retention rate must lie in (0, 1]");
}

RetentionRegions retention_regions(std::size_t n, std::size_t sink_count, std::size_t recent_count) {
  RetentionRegions r;
  if (sink_count + recent_count >= n) {
    r.passthrough = true;
    r.sink_end = n;
    r.middle_begin = n + 1;
    r.middle_end = n;
    r.recent_begin = n + 1;
    return r;
  }
  r.sink_end = sink_count;
  r.middle_begin = sink_count + 1;
  r.middle_end = n - recent_count;
  r.recent_begin = n - recent_count + 1;
  return r;
}

RetainedSet apply_retention(std::size_t n, const RetentionPolicy& policy, std::size_t step,
                            const RetainedSet& middle) {
  policy.validate();
  if (step < 1 || step > n) throw InvalidArgument("query step out of range");
  RetainedSet out;
  auto add_exact = [&](std::size_t first, std::size_t last) {
    for (std::size_t i = first; i <= last && i <= step; ++i) {
      out.numerator.push_back({i, 1.0});
      out.denominator.push_back({i, 1.0});
    }
  };

  if (policy.kind == RetentionPolicy::Kind::kUniformSample) {
    RandomSource rng(derive_seed(policy.seed, 0x554e49ULL, step));
    const auto positions = uniform_sample_positions(step, policy.rate, rng);
    const double weight = static_cast<double>(step) / static_cast<double>(positions.size());
    for (std::size_t p : positions) {
      out.numerator.push_back({p + 1, weight});
      out.denominator.push_back({p + 1, weight});
    }
    return out;
  }

  const auto regions = retention_regions(n, policy.sink_count, policy.recent_count);
  if (regions.passthrough) {
    add_exact(1, step);
    return out;
  }
  std::size_t recent_begin = regions.recent_begin;
  if (policy.sliding_recent) {
    recent_begin = step > policy.recent_count ? step - policy.recent_count + 1 : 1;
    recent_begin = std::max(recent_begin, regions.middle_begin);
  }
  add_exact(1, regions.sink_end);
  const auto middle_limit = std::min<std::size_t>(step, recent_begin - 1);
  if (policy.inner == MiddleCompressor::kIdentity) {
    add_exact(regions.middle_begin, middle_limit);
  } else if (policy.inner != MiddleCompressor::kDrop) {
    for (const auto& w : middle.numerator) {
      if (w.index <= middle_limit) out.numerator.push_back(w);
    }
    for (const auto& w : middle.denominator) {
      if (w.index <= middle_limit) out.denominator.push_back(w);
    }
  }
  add_exact(recent_begin, step);
  return out;
}

KernelSums retained_kernel_sums(std::span<const TokenTriple> stream, const RetainedSet& retained,
                                const RealVector& q) {
  KernelSums sums;
  if (stream.empty()) return sums;
  const std::size_t d = q.dim();
  const std::size_t s = stream[0].value.dim();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  sums.numerator.assign(s, 0.0);
  auto kernel = [&](std::uint64_t index) {
    if (index < 1 || index > stream.size()) throw InvalidArgument("retained index out of range");
    const auto& tok = stream[index - 1];
    return guarded_exp(dot(tok.key.view(), q.view()) * inv_sqrt_d);
  };
  for (const auto& w : retained.numerator) {
    const double k = w.weight * kernel(w.index);
    const auto v = stream[w.index - 1].value.view();
    for (std::size_t c = 0; c < s; ++c) sums.numerator[c] += k * v[c];
  }
  for (const auto& w : retained.denominator) sums.denominator += w.weight * kernel(w.index);
  return sums;
}

RealVector retained_estimate(std::span<const TokenTriple> stream, const RetainedSet& retained,
                             const RealVector& q) {
  auto sums = retained_kernel_sums(stream, retained, q);
  if (!(sums.denominator > 0.0)) throw EstimationFailure("retained set has non-positive normalizer");
  for (double& x : sums.numerator) x /= sums.denominator;
  return RealVector(std::move(sums.numerator));
}

std::vector<KVPair> prefix_pairs(std::span<const TokenTriple> stream, std::size_t step) {
  std::vector<KVPair> pairs;
  pairs.reserve(step);
  for (std::size_t i = 0; i < step && i < stream.size(); ++i) {
    pairs.push_back({stream[i].key, stream[i].value, stream[i].index});
  }
  return pairs;
}

}  // namespace kvb
