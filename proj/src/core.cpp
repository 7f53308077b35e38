// Copyright 2026 The kvbalance Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvbalance/core.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>

#include "kvbalance/random.hpp"

namespace kvb {

namespace {

constexpr double kExpClamp = 700.0;
std::atomic<std::uint64_t> g_exp_clamps{0};

void require_finite(std::span<const double> entries) {
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!std::isfinite(entries[i])) {
      throw ContractViolation("non-finite vector entry at position " + std::to_string(i));
    }
  }
}

}  // namespace

RealVector::RealVector(std::initializer_list<double> entries) : entries_(entries) {
  require_finite(entries_);
}

RealVector::RealVector(std::vector<double> entries) : entries_(std::move(entries)) {
  require_finite(entries_);
}

RealVector RealVector::from_span(std::span<const double> entries) {
  return RealVector(std::vector<double>(entries.begin(), entries.end()));
}

RealVector RealVector::from_floats(std::span<const float> entries) {
  return RealVector(std::vector<double>(entries.begin(), entries.end()));
}

void StreamParams::validate() const {
  if (n < 1) throw InvalidArgument("stream length n must be >= 1");
  if (d < 1) throw InvalidArgument("key dimension d must be >= 1");
  if (s < 1) throw InvalidArgument("value dimension s must be >= 1");
  if (!(r > 0.0) || !std::isfinite(r)) throw InvalidArgument("norm bound r must be > 0");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw InvalidArgument("epsilon must lie in (0, 1)");
  if (!(delta > 0.0 && delta < 1.0)) throw InvalidArgument("delta must lie in (0, 1)");
}

void require_dim(std::size_t got, std::size_t expected, const char* what) {
  if (got != expected) {
    throw ContractViolation(std::string(what) + ": dimension " + std::to_string(got) + " != expected " +
                            std::to_string(expected));
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  require_dim(b.size(), a.size(), "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double l2_norm(std::span<const double> v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

double frobenius_norm(std::span<const RealVector> rows) {
  double acc = 0.0;
  for (const auto& row : rows) {
    for (double x : row.view()) acc += x * x;
  }
  return std::sqrt(acc);
}

double guarded_exp(double x) {
  if (x > kExpClamp || x < -kExpClamp) {
    g_exp_clamps.fetch_add(1, std::memory_order_relaxed);
    x = std::clamp(x, -kExpClamp, kExpClamp);
  }
  return std::exp(x);
}

std::uint64_t exp_clamp_count() noexcept { return g_exp_clamps.load(std::memory_order_relaxed); }
void reset_exp_clamp_count() noexcept { g_exp_clamps.store(0, std::memory_order_relaxed); }

double exp_kernel(const RealVector& k, const RealVector& q, std::size_t d) {
  require_dim(k.dim(), d, "exp_kernel key");
  require_dim(q.dim(), d, "exp_kernel query");
  return guarded_exp(dot(k.view(), q.view()) / std::sqrt(static_cast<double>(d)));
}

double pair_affinity(const KVPair& a, const KVPair& b, std::size_t d) {
  require_dim(a.value.dim(), b.value.dim(), "pair_affinity value");
  return exp_kernel(a.key, b.key, d) * dot(a.value.view(), b.value.view());
}

// --- random ---------------------------------------------------------------

std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) noexcept {
  return mix64(mix64(mix64(master) ^ (a + 0x632be59bd9b4e019ULL)) ^ (b + 0x85157af5ULL));
}

double RandomSource::normal() noexcept {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::uint64_t RandomSource::below(std::uint64_t bound) noexcept {
  const std::uint64_t limit = bound * (UINT64_MAX / bound);
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return x % bound;
}

}  // namespace kvb
