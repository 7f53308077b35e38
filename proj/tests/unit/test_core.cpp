// Copyright 2026 The kvbalance Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <set>
#include <vector>

#include "doctest.h"
#include "kvbalance/core.hpp"
#include "kvbalance/random.hpp"
#include "oracles.hpp"

using namespace kvb;

TEST_CASE("RealVector rejects non-finite entries") {
  CHECK_THROWS_AS(RealVector({1.0, std::numeric_limits<double>::quiet_NaN()}), ContractViolation);
  CHECK_THROWS_AS(RealVector({std::numeric_limits<double>::infinity()}), ContractViolation);
  const float f[] = {1.0f, std::numeric_limits<float>::infinity()};
  CHECK_THROWS_AS(RealVector::from_floats(f), ContractViolation);
  RealVector z(3);
  CHECK(z.dim() == 3);
  CHECK(l2_norm(z) == 0.0);
}

TEST_CASE("exp_kernel fixed values") {
  CHECK(exp_kernel(RealVector{0.0, 0.0}, RealVector{3.0, -2.0}, 2) == 1.0);
  CHECK(exp_kernel(RealVector{1.0}, RealVector{1.0}, 1) == doctest::Approx(std::exp(1.0)).epsilon(1e-15));
  CHECK(exp_kernel(RealVector{1, 1, 1, 1}, RealVector{1, -1, 1, -1}, 4) == 1.0);
  CHECK_THROWS_AS(exp_kernel(RealVector{1.0, 2.0}, RealVector{1.0}, 2), ContractViolation);
}

TEST_CASE("exp_kernel is symmetric") {
  RandomSource rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = oracle::gaussian(rng, 7);
    const auto b = oracle::gaussian(rng, 7);
    CHECK(exp_kernel(a, b, 7) == exp_kernel(b, a, 7));
  }
}

TEST_CASE("pair_affinity values") {
  const KVPair a{RealVector{0.3, -0.7}, RealVector{1.2, 0.5}, 1};
  const KVPair b{RealVector{-0.4, 0.9}, RealVector{0.25, -1.1}, 2};
  const double direct = std::exp((0.3 * -0.4 + -0.7 * 0.9) / std::sqrt(2.0)) * (1.2 * 0.25 + 0.5 * -1.1);
  CHECK(pair_affinity(a, b, 2) == doctest::Approx(direct).epsilon(1e-14));
  CHECK(pair_affinity(a, b, 2) == doctest::Approx(-0.14710267788645784).epsilon(1e-14));

  const KVPair orth_a{RealVector{5.0, 1.0}, RealVector{1.0, 0.0}, 1};
  const KVPair orth_b{RealVector{2.0, -3.0}, RealVector{0.0, 4.0}, 2};
  CHECK(pair_affinity(orth_a, orth_b, 2) == 0.0);

  const KVPair unit{RealVector{0.0, 0.0}, RealVector{0.6, 0.8}, 1};
  CHECK(pair_affinity(unit, unit, 2) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("pair_affinity self value is the feature norm squared") {
  RandomSource rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const KVPair p{oracle::gaussian(rng, 5, 0.6), oracle::gaussian(rng, 3), 1};
    const double k2 = l2_norm(p.key) * l2_norm(p.key);
    const double v2 = l2_norm(p.value) * l2_norm(p.value);
    CHECK(pair_affinity(p, p, 5) == doctest::Approx(std::exp(k2 / std::sqrt(5.0)) * v2).epsilon(1e-12));
  }
}

TEST_CASE("norms") {
  CHECK(l2_norm(RealVector(4)) == 0.0);
  CHECK(l2_norm(RealVector{3.0, 4.0}) == 5.0);
  const std::vector<RealVector> rows{RealVector{1.0, 0.0}, RealVector{0.0, 1.0}};
  CHECK(frobenius_norm(rows) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-15));
}

TEST_CASE("guarded_exp clamps and counts") {
  reset_exp_clamp_count();
  CHECK(guarded_exp(1.5) == std::exp(1.5));
  CHECK(exp_clamp_count() == 0);
  CHECK(guarded_exp(800.0) == std::exp(700.0));
  CHECK(guarded_exp(-800.0) == std::exp(-700.0));
  CHECK(exp_clamp_count() == 2);
  reset_exp_clamp_count();
}

TEST_CASE("RandomSource determinism and ranges") {
  RandomSource a(42);
  RandomSource b(42);
  RandomSource c(43);
  bool differs = false;
  for (int i = 0; i < 1000; ++i) {
    const double x = a.uniform();
    CHECK(x == b.uniform());
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
    differs = differs || (x != c.uniform());
  }
  CHECK(differs);

  RandomSource r(5);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    const auto v = r.below(7);
    CHECK(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);

  const RandomSource parent(9);
  auto c1 = parent.child(1, 2);
  auto c2 = parent.child(1, 2);
  auto c3 = parent.child(2, 1);
  const auto x1 = c1.next_u64();
  CHECK(x1 == c2.next_u64());
  CHECK(x1 != c3.next_u64());
  CHECK(derive_seed(1, 2, 3) != derive_seed(1, 3, 2));
}

TEST_CASE("StreamParams validation") {
  StreamParams p;
  CHECK_NOTHROW(p.validate());
  p.epsilon = 1.0;
  CHECK_THROWS_AS(p.validate(), InvalidArgument);
  p.epsilon = 0.5;
  p.d = 0;
  CHECK_THROWS_AS(p.validate(), InvalidArgument);
  p.d = 1;
  p.r = 0.0;
  CHECK_THROWS_AS(p.validate(), InvalidArgument);
}
