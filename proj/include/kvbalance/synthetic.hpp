// Copyright 2026 The kvbalance Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "kvbalance/stream_file.hpp"

namespace kvb {

enum class ValueNormProfile {
  kConstant,       // every ||v|| == value_norm
  kLogUniform,     // log ||v|| uniform on [log lo, log hi]
  kDyadicMixture,  // band b uniform in [dyadic_min_exp, dyadic_max_exp], ||v|| uniform in (2^(b-1), 2^b]
};

ValueNormProfile parse_value_profile(const std::string& name);
std::string to_string(ValueNormProfile profile);

struct SyntheticParams {
  std::size_t n = 1024;
  std::size_t d = 16;
  std::size_t s = 16;
  /// Bound on query and key norms; radii are drawn uniformly in (0, r].
  double r = 1.0;
  ValueNormProfile profile = ValueNormProfile::kConstant;
  double value_norm = 1.0;
  double lo = 0.5;
  double hi = 2.0;
  int dyadic_min_exp = -3;
  int dyadic_max_exp = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Gaussian directions rescaled to the requested norms, stored as float32.
StreamData generate_synthetic(const SyntheticParams& params);

}  // namespace kvb
