// Copyright 2026 The kvbalance Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <vector>

#include "doctest.h"
#include "kvbalance/attention.hpp"
#include "kvbalance/synthetic.hpp"
#include "oracles.hpp"

using namespace kvb;

TEST_CASE("exact attention on trivial inputs") {
  const RealVector q{0.3, -0.2};
  const std::vector<KVPair> one{{RealVector{1.0, 2.0}, RealVector{4.0, -1.0, 0.5}, 1}};
  const auto single = exact_attention(q, one);
  CHECK(single.output == RealVector{4.0, -1.0, 0.5});

  const std::vector<KVPair> twins{{RealVector{1.0, 2.0}, RealVector{4.0, 0.0}, 1},
                                  {RealVector{1.0, 2.0}, RealVector{0.0, 2.0}, 2}};
  const auto mid = exact_attention(q, twins);
  CHECK(mid.output[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(mid.output[1] == doctest::Approx(1.0).epsilon(1e-15));

  CHECK_THROWS_AS(exact_attention(q, std::vector<KVPair>{}), InvalidArgument);
}

TEST_CASE("exact attention matches the naive reference on an integer fixture") {
  const RealVector q{1.0, -2.0, 3.0};
  std::vector<KVPair> pairs;
  const int keys[8][3] = {{1, 0, 2}, {-1, 3, 0}, {2, 2, -1}, {0, -1, 1}, {3, 0, 0}, {-2, 1, 2}, {1, 1, 1}, {0, 0, -3}};
  const int vals[8][2] = {{1, 2}, {-3, 0}, {4, -1}, {0, 5}, {2, 2}, {-1, -4}, {3, 1}, {6, 0}};
  for (int i = 0; i < 8; ++i) {
    pairs.push_back({RealVector{double(keys[i][0]), double(keys[i][1]), double(keys[i][2])},
                     RealVector{double(vals[i][0]), double(vals[i][1])}, std::uint64_t(i + 1)});
  }
  const auto got = exact_attention(q, pairs);
  const auto ref = oracle::naive_attention(q, pairs);
  for (std::size_t c = 0; c < 2; ++c) CHECK(got.output[c] == doctest::Approx(ref[c]).epsilon(1e-12));
  double sum = 0.0;
  for (double w : got.softmax_weights) sum += w;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("softmax stays finite for huge scores") {
  const RealVector q{1.0, 0.0};
  std::vector<KVPair> pairs{{RealVector{600.0 * std::sqrt(2.0), 0.0}, RealVector{1.0}, 1},
                            {RealVector{-600.0 * std::sqrt(2.0), 0.0}, RealVector{2.0}, 2},
                            {RealVector{599.0 * std::sqrt(2.0), 0.0}, RealVector{3.0}, 3}};
  const auto out = exact_attention(q, pairs);
  CHECK(std::isfinite(out.output[0]));
  const double e = std::exp(-1.0);
  CHECK(out.output[0] == doctest::Approx((1.0 + 3.0 * e) / (1.0 + e)).epsilon(1e-12));
}

TEST_CASE("objective error") {
  // Zero keys give uniform weights: Attn = (1/2, 1/2), ||softmax|| = sqrt(1/2), ||V||_F = sqrt(2).
  const RealVector q{0.7};
  const std::vector<KVPair> pairs{{RealVector{0.0}, RealVector{1.0, 0.0}, 1}, {RealVector{0.0}, RealVector{0.0, 1.0}, 2}};
  const auto exact = exact_attention(q, pairs);
  CHECK(objective_error(exact.output, exact) == 0.0);
  CHECK(exact.softmax_l2 == doctest::Approx(std::sqrt(0.5)).epsilon(1e-15));
  CHECK(exact.value_frobenius == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
  const double unit = exact.softmax_l2 * exact.value_frobenius;
  CHECK(objective_error(RealVector{0.5 + unit, 0.5}, exact) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(objective_error(RealVector{1.0, 0.5}, q, pairs) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("empirical relative error") {
  const RealVector q{0.7};
  const std::vector<KVPair> pairs{{RealVector{0.0}, RealVector{1.0, 0.0}, 1}, {RealVector{0.0}, RealVector{0.0, 1.0}, 2}};
  const auto exact = exact_attention(q, pairs);
  CHECK(empirical_relative_error(exact.output, exact) == 0.0);
  CHECK(empirical_relative_error(RealVector{1.0, 1.0}, exact) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(empirical_relative_error(RealVector{1.0, 0.5}, q, pairs) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-14));

  const std::vector<KVPair> zero{{RealVector{0.0}, RealVector{0.0, 0.0}, 1}};
  CHECK_THROWS_AS(empirical_relative_error(RealVector{1.0, 0.0}, q, zero), UndefinedMetric);
}

TEST_CASE("relative error is scale invariant") {
  RandomSource rng(6);
  const auto pairs = oracle::unit_pairs(rng, 30, 4, 3);
  const auto q = oracle::gaussian(rng, 4);
  const RealVector z{0.1, -0.2, 0.05};
  std::vector<KVPair> scaled;
  for (const auto& p : pairs) {
    std::vector<double> v(p.value.entries());
    for (double& x : v) x *= 7.5;
    scaled.push_back({p.key, RealVector(std::move(v)), p.index});
  }
  const RealVector z_scaled{0.75, -1.5, 0.375};
  CHECK(empirical_relative_error(z_scaled, q, scaled) ==
        doctest::Approx(empirical_relative_error(z, q, pairs)).epsilon(1e-12));
}

TEST_CASE("uniform sampling sizes") {
  RandomSource rng(1);
  const auto pairs = oracle::unit_pairs(rng, 10, 2, 2);
  RandomSource a(2);
  CHECK(uniform_compress(pairs, 1.0, a).size() == 10);
  RandomSource b(3);
  CHECK(uniform_compress(std::span(pairs).first(2), 0.5, b).size() == 1);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    RandomSource r(seed);
    const auto pos = uniform_sample_positions(1024, 0.25, r);
    CHECK(pos.size() == 256);
    CHECK(std::adjacent_find(pos.begin(), pos.end(), [](auto x, auto y) { return x >= y; }) == pos.end());
    CHECK(pos.back() < 1024);
  }
  RandomSource c(4);
  CHECK_THROWS_AS(uniform_sample_positions(10, 0.0, c), InvalidArgument);
}

TEST_CASE("reweighted uniform numerator is unbiased") {
  RandomSource data(7);
  const auto pairs = oracle::unit_pairs(data, 512, 4, 2);
  const auto q = oracle::gaussian(data, 4);
  const auto exact = oracle::kernel_sum(q, pairs);
  const int trials = 400;
  std::vector<double> mean(2, 0.0), sq(2, 0.0);
  for (int s = 0; s < trials; ++s) {
    RandomSource rng(s);
    const auto kept = uniform_compress(pairs, 0.25, rng);
    const auto sum = oracle::kernel_sum(q, kept);
    for (int c = 0; c < 2; ++c) {
      const double est = 4.0 * sum[c];
      mean[c] += est / trials;
      sq[c] += est * est / trials;
    }
  }
  for (int c = 0; c < 2; ++c) {
    const double se = std::sqrt((sq[c] - mean[c] * mean[c]) / trials);
    CHECK(std::abs(mean[c] - exact[c]) <= 3.0 * se);
  }
}

TEST_CASE("retention regions and policies") {
  const auto r = retention_regions(600, 256, 256);
  CHECK(r.middle_size() == 88);
  CHECK(r.middle_begin == 257);
  CHECK(r.middle_end == 344);
  CHECK(r.recent_begin == 345);
  CHECK(retention_regions(500, 256, 256).passthrough);

  RetentionPolicy id;
  id.kind = RetentionPolicy::Kind::kSinkRecent;
  const auto all = apply_retention(40, id, 40, RetainedSet{});
  CHECK(all.numerator.size() == 40);
  CHECK(all.denominator.size() == 40);

  RetentionPolicy sr;
  sr.sink_count = 4;
  sr.recent_count = 4;
  sr.inner = MiddleCompressor::kUniform;
  RetainedSet middle;
  middle.numerator = {{6, 2.0}, {9, 2.0}};
  middle.denominator = {{7, 2.0}};
  const auto at20 = apply_retention(20, sr, 20, middle);
  CHECK(at20.numerator.size() == 4 + 2 + 4);
  CHECK(at20.denominator.size() == 4 + 1 + 4);
  const auto at8 = apply_retention(20, sr, 8, middle);
  CHECK(at8.numerator.size() == 4 + 1);

  sr.sliding_recent = true;
  const auto slide = apply_retention(20, sr, 12, middle);
  // sink 1..4, middle limited to index <= 8, recent 9..12
  CHECK(slide.numerator.size() == 4 + 1 + 4);

  RetentionPolicy uni;
  uni.kind = RetentionPolicy::Kind::kUniformSample;
  uni.rate = 0.25;
  const auto u = apply_retention(100, uni, 100, RetainedSet{});
  CHECK(u.numerator.size() == 25);
  CHECK(u.numerator[0].weight == 4.0);
  CHECK_THROWS_AS(apply_retention(100, uni, 101, RetainedSet{}), InvalidArgument);

  RetentionPolicy drop;
  drop.sink_count = 4;
  drop.recent_count = 4;
  drop.inner = MiddleCompressor::kDrop;
  CHECK(apply_retention(20, drop, 20, middle).numerator.size() == 8);
}

TEST_CASE("retained estimate with everything kept equals exact attention") {
  SyntheticParams sp;
  sp.n = 64;
  sp.d = 4;
  sp.s = 3;
  sp.seed = 2;
  const auto tokens = generate_synthetic(sp).tokens();
  RetentionPolicy id;
  const auto all = apply_retention(64, id, 64, RetainedSet{});
  const auto& q = tokens[63].query;
  const auto z = retained_estimate(tokens, all, q);
  const auto ref = oracle::naive_attention(q, prefix_pairs(tokens, 64));
  for (std::size_t c = 0; c < 3; ++c) CHECK(z[c] == doctest::Approx(ref[c]).epsilon(1e-12));
  CHECK_THROWS_AS(retained_estimate(tokens, RetainedSet{}, q), EstimationFailure);
}

TEST_CASE("exact attention agrees with the naive reference on random instances") {
  RandomSource rng(100);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(64), d = 1 + rng.below(8), s = 1 + rng.below(8);
    std::vector<KVPair> pairs;
    for (std::size_t i = 0; i < n; ++i) pairs.push_back({oracle::gaussian(rng, d, 2.0), oracle::gaussian(rng, s), i + 1});
    const auto q = oracle::gaussian(rng, d, 2.0);
    const auto got = exact_attention(q, pairs).output;
    const auto ref = oracle::naive_attention(q, pairs);
    double diff = 0.0;
    for (std::size_t c = 0; c < s; ++c) diff += (got[c] - ref[c]) * (got[c] - ref[c]);
    worst = std::max(worst, std::sqrt(diff) / oracle::norm(ref));
  }
  CHECK(worst <= 1e-10);
}
