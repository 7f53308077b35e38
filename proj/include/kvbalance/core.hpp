// Copyright 2026 The kvbalance Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

#include "kvbalance/errors.hpp"

namespace kvb {

/// Immutable dense vector of finite doubles. The dimension is fixed at
/// construction; every constructor rejects NaN/Inf with ContractViolation.
class RealVector {
 public:
  RealVector() = default;
  /// Zero vector of the given dimension.
  explicit RealVector(std::size_t dim) : entries_(dim, 0.0) {}
  RealVector(std::initializer_list<double> entries);
  explicit RealVector(std::vector<double> entries);
  static RealVector from_span(std::span<const double> entries);
  static RealVector from_floats(std::span<const float> entries);

  std::size_t dim() const noexcept { return entries_.size(); }
  double operator[](std::size_t i) const noexcept { return entries_[i]; }
  std::span<const double> view() const noexcept { return entries_; }
  const std::vector<double>& entries() const noexcept { return entries_; }

  friend bool operator==(const RealVector&, const RealVector&) = default;

 private:
  std::vector<double> entries_;
};

/// One stream element; `index` is the 1-based stream position.
struct TokenTriple {
  RealVector query;
  RealVector key;
  RealVector value;
  std::uint64_t index = 0;
};

/// A (key, value) pair tagged with its original stream position.
struct KVPair {
  RealVector key;
  RealVector value;
  std::uint64_t index = 0;
};

struct StreamParams {
  std::size_t n = 1;
  std::size_t d = 1;
  std::size_t s = 1;
  double r = 1.0;
  double epsilon = 0.5;
  double delta = 0.01;

  /// Throws InvalidArgument unless n, d, s >= 1, r > 0 and epsilon, delta lie in (0, 1).
  void validate() const;
};

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);
inline double l2_norm(const RealVector& v) { return l2_norm(v.view()); }
double frobenius_norm(std::span<const RealVector> rows);

/// exp(x) with the argument clamped to [-700, 700]. Each clamp increments a
/// process-wide counter readable through exp_clamp_count().
double guarded_exp(double x);
std::uint64_t exp_clamp_count() noexcept;
void reset_exp_clamp_count() noexcept;

/// exp(<k, q> / sqrt(d)).
double exp_kernel(const RealVector& k, const RealVector& q, std::size_t d);

/// exp(<a.key, b.key> / sqrt(d)) * <a.value, b.value>: the inner product of the
/// implicit features phi(k_a) (x) v_a and phi(k_b) (x) v_b. The feature map is
/// never materialized.
double pair_affinity(const KVPair& a, const KVPair& b, std::size_t d);

/// Throws ContractViolation when `got != expected`.
void require_dim(std::size_t got, std::size_t expected, const char* what);

}  // namespace kvb
