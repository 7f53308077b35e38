// Copyright 2026 The kvbalance Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvbalance/synthetic.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "kvbalance/random.hpp"

namespace kvb {

ValueNormProfile parse_value_profile(const std::string& name) {
  if (name == "constant") return ValueNormProfile::kConstant;
  if (name == "log_uniform") return ValueNormProfile::kLogUniform;
  if (name == "dyadic_mixture") return ValueNormProfile::kDyadicMixture;
  throw InvalidArgument("unknown value-norm profile '" + name + "'");
}

std::string to_string(ValueNormProfile profile) {
  switch (profile) {
    case ValueNormProfile::kConstant: return "constant";
    case ValueNormProfile::kLogUniform: return "log_uniform";
    case ValueNormProfile::kDyadicMixture: return "dyadic_mixture";
  }
  return "unknown";
}

void SyntheticParams::validate() const {
  if (d < 1 || s < 1) throw InvalidArgument("synthetic dimensions must be >= 1");
  if (n > std::numeric_limits<std::uint32_t>::max()) throw InvalidArgument("synthetic n exceeds u32");
  if (!(r > 0.0)) throw InvalidArgument("synthetic norm bound r must be > 0");
  if (!(value_norm > 0.0)) throw InvalidArgument("synthetic value_norm must be > 0");
  if (!(lo > 0.0 && hi >= lo)) throw InvalidArgument("log_uniform needs 0 < lo <= hi");
  if (dyadic_min_exp > dyadic_max_exp) throw InvalidArgument("dyadic_min_exp must be <= dyadic_max_exp");
}

namespace {

// Writes `dim` floats of a Gaussian direction scaled to `norm`. The float norm
// never exceeds `limit` (rounding can push it up by an ulp otherwise).
void emit_direction(RandomSource& rng, std::size_t dim, double norm, double limit, std::vector<float>& out) {
  std::vector<double> g(dim);
  double sq = 0.0;
  do {
    sq = 0.0;
    for (double& x : g) {
      x = rng.normal();
      sq += x * x;
    }
  } while (sq == 0.0);
  double scale = norm / std::sqrt(sq);
  for (int attempt = 0; attempt < 8; ++attempt) {
    double fsq = 0.0;
    for (double x : g) {
      const double f = static_cast<float>(x * scale);
      fsq += f * f;
    }
    if (std::sqrt(fsq) <= limit) break;
    scale *= 1.0 - 1e-6;
  }
  for (double x : g) out.push_back(static_cast<float>(x * scale));
}

}  // namespace

StreamData generate_synthetic(const SyntheticParams& params) {
  params.validate();
  StreamData data;
  data.n = static_cast<std::uint32_t>(params.n);
  data.d = static_cast<std::uint32_t>(params.d);
  data.s = static_cast<std::uint32_t>(params.s);
  data.payload.reserve(params.n * data.record_floats());

  RandomSource rng(params.seed);
  const double inf = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < params.n; ++i) {
    const double q_radius = params.r * (1.0 - rng.uniform());  // (0, r]
    emit_direction(rng, params.d, q_radius, params.r, data.payload);
    const double k_radius = params.r * (1.0 - rng.uniform());
    emit_direction(rng, params.d, k_radius, params.r, data.payload);

    double norm = params.value_norm;
    double limit = inf;
    switch (params.profile) {
      case ValueNormProfile::kConstant:
        limit = norm;  // keeps every value in one dyadic bucket
        break;
      case ValueNormProfile::kLogUniform: {
        const double lo = std::log(params.lo);
        const double hi = std::log(params.hi);
        norm = std::exp(lo + (hi - lo) * rng.uniform());
        limit = params.hi;
        break;
      }
      case ValueNormProfile::kDyadicMixture: {
        const auto bands = static_cast<std::uint64_t>(params.dyadic_max_exp - params.dyadic_min_exp + 1);
        const int band = params.dyadic_min_exp + static_cast<int>(rng.below(bands));
        const double top = std::ldexp(1.0, band);
        norm = top * (1.0 - 0.5 * rng.uniform());  // (2^(b-1), 2^b]
        limit = top;
        break;
      }
    }
    emit_direction(rng, params.s, norm, limit, data.payload);
  }
  return data;
}

}  // namespace kvb
