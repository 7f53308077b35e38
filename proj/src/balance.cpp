// Copyright 2026 The kvbalance Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvbalance/balance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace kvb {

BalanceFailure::BalanceFailure(std::size_t step, double signed_sum, double threshold)
    : Error(ErrorCode::kBalanceFailure, "balance walk FAIL at step " + std::to_string(step) + ": |y^T eta| = " +
                                            std::to_string(std::abs(signed_sum)) + " > " + std::to_string(threshold)),
      step_(step),
      signed_sum_(signed_sum),
      threshold_(threshold) {}

void BalanceConfig::validate() const {
  if (!(delta > 0.0 && delta < 1.0)) throw InvalidArgument("balance delta must lie in (0, 1)");
  if (!(r_key > 0.0) || !std::isfinite(r_key)) throw InvalidArgument("balance r_key must be > 0");
  if (!(r_value > 0.0) || !std::isfinite(r_value)) throw InvalidArgument("balance r_value must be > 0");
  if (!(cap_scale > 0.0) || !std::isfinite(cap_scale)) throw InvalidArgument("balance cap_scale must be > 0");
}

double discrepancy_cap(std::size_t n, double delta, double cap_scale) {
  const double items = static_cast<double>(std::max<std::size_t>(n, 1));
  return cap_scale * std::log(items / delta);
}

WalkState::WalkState(double cap, double scale, FailPolicy policy)
    : cap_(cap), scale_(scale), threshold_(cap * scale * scale), policy_(policy) {
  if (!(threshold_ > 0.0) || !std::isfinite(threshold_)) {
    throw InvalidArgument("walk threshold c * R^2 must be positive and finite");
  }
}

double WalkState::probability_for(double signed_sum) const noexcept {
  return std::clamp(0.5 - signed_sum / (2.0 * threshold_), 0.0, 1.0);
}

int WalkState::step(std::span<const double> affinity_row, RandomSource& rng) {
  const std::size_t assigned = signs_.size();
  if (affinity_row.size() != assigned && affinity_row.size() != assigned + 1) {
    throw ContractViolation("walk_step: affinity row has " + std::to_string(affinity_row.size()) +
                            " entries for " + std::to_string(assigned) + " signed items");
  }
  double y = 0.0;
  for (std::size_t i = 0; i < assigned; ++i) y += affinity_row[i] * signs_[i];
  signed_sums_.push_back(y);
  if (std::abs(y) > threshold_) {
    if (policy_ == FailPolicy::kAbort) throw BalanceFailure(assigned + 1, y, threshold_);
    ++fail_count_;
  }
  const double p = probability_for(y);
  probabilities_.push_back(p);
  const int sign = rng.uniform() < p ? +1 : -1;
  signs_.push_back(sign);
  return sign;
}

namespace {

// Drives one walk over n items. `affinity(i, j)` returns <u_i, u_j> for i <= j.
template <class Affinity>
BalanceOutcome run_walk(std::size_t n, double cap, double scale, const BalanceConfig& cfg, RandomSource& rng,
                        Affinity&& affinity) {
  BalanceOutcome out;
  out.cap = cap;
  out.scale = scale;
  if (n == 0) return out;

  WalkState walk(cap, scale, cfg.fail_policy);
  // contribution[i] = <u_i, w> for the final signed sum w = sum_k eta_k u_k.
  std::vector<double> contribution(n, 0.0);
  std::vector<double> row;
  row.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    row.resize(j);
    for (std::size_t i = 0; i < j; ++i) row[i] = affinity(i, j);
    const int sign = walk.step(row, rng);
    contribution[j] = walk.signed_sums().back() + sign * affinity(j, j);
    for (std::size_t i = 0; i < j; ++i) contribution[i] += sign * row[i];
  }

  out.walk_signs = walk.signs();
  out.signed_sums = walk.signed_sums();
  out.fail_count = walk.fail_count();

  const auto plus = static_cast<std::size_t>(std::count(out.walk_signs.begin(), out.walk_signs.end(), +1));
  const std::size_t minus = n - plus;
  const int chosen = plus <= minus ? +1 : -1;

  out.final_signs.assign(n, -1);
  for (std::size_t i = 0; i < n; ++i) {
    if (out.walk_signs[i] == chosen) out.final_signs[i] = +1;
  }

  if (cfg.mode == SelectionMode::kStrictHalf) {
    const std::size_t target = n / 2;
    const std::size_t have = std::min(plus, minus);
    if (have < target) {
      // Pull the complement items whose projection onto the final signed sum
      // is smallest; ties go to the lower position.
      std::vector<std::size_t> candidates;
      for (std::size_t i = 0; i < n; ++i) {
        if (out.final_signs[i] == -1) candidates.push_back(i);
      }
      std::stable_sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
        return std::abs(contribution[a]) < std::abs(contribution[b]);
      });
      out.moved = target - have;
      for (std::size_t m = 0; m < out.moved; ++m) out.final_signs[candidates[m]] = +1;
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (out.final_signs[i] == +1) out.selected.push_back(i);
  }
  return out;
}

bool exceeds(double norm, double bound) { return norm > bound * (1.0 + 1e-9); }

void note_norm_violation(const BalanceConfig& cfg, BalanceOutcome& out, const std::string& what) {
  if (cfg.fail_policy == FailPolicy::kAbort) throw ContractViolation(what);
  ++out.norm_violations;
}

}  // namespace

BalanceOutcome balance_vectors(std::span<const RealVector> items, double r, const BalanceConfig& cfg,
                               RandomSource& rng) {
  cfg.validate();
  if (!(r > 0.0)) throw InvalidArgument("self_balancing_walk radius must be > 0");
  const std::size_t n = items.size();
  std::size_t violations = 0;
  for (std::size_t i = 0; i < n; ++i) {
    require_dim(items[i].dim(), items[0].dim(), "self_balancing_walk item");
    if (exceeds(l2_norm(items[i]), r)) {
      if (cfg.fail_policy == FailPolicy::kAbort) {
        throw ContractViolation("self_balancing_walk: item " + std::to_string(i) + " exceeds radius");
      }
      ++violations;
    }
  }
  const double cap = discrepancy_cap(cfg.max_items ? cfg.max_items : n, cfg.delta, cfg.cap_scale);
  auto out = run_walk(n, cap, r, cfg, rng,
                      [&](std::size_t i, std::size_t j) { return dot(items[i].view(), items[j].view()); });
  out.norm_violations = violations;
  return out;
}

std::vector<RealVector> self_balancing_walk(std::span<const RealVector> items, double r, const BalanceConfig& cfg,
                                            RandomSource& rng) {
  const auto outcome = balance_vectors(items, r, cfg, rng);
  std::vector<RealVector> subset;
  subset.reserve(outcome.selected.size());
  for (std::size_t i : outcome.selected) subset.push_back(items[i]);
  return subset;
}

BalanceOutcome softmax_balance_partition(std::span<const KVPair> pairs, const BalanceConfig& cfg,
                                         RandomSource& rng) {
  cfg.validate();
  const std::size_t n = pairs.size();
  if (n == 0) return {};

  const std::size_t d = pairs[0].key.dim();
  const std::size_t s = pairs[0].value.dim();
  if (d == 0) throw ContractViolation("softmax_balance: empty keys");
  BalanceOutcome checks;
  for (std::size_t i = 0; i < n; ++i) {
    require_dim(pairs[i].key.dim(), d, "softmax_balance key");
    require_dim(pairs[i].value.dim(), s, "softmax_balance value");
    if (exceeds(l2_norm(pairs[i].key), cfg.r_key)) {
      note_norm_violation(cfg, checks, "softmax_balance: key " + std::to_string(i) + " exceeds r_key");
    }
    if (exceeds(l2_norm(pairs[i].value), cfg.r_value)) {
      note_norm_violation(cfg, checks, "softmax_balance: value " + std::to_string(i) + " exceeds r_value");
    }
  }

  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double scale = guarded_exp(cfg.r_key * cfg.r_key * inv_sqrt_d / 2.0) * cfg.r_value;
  const double cap = discrepancy_cap(cfg.max_items ? cfg.max_items : n, cfg.delta, cfg.cap_scale);

  auto affinity = [&](std::size_t i, std::size_t j) {
    const double* ki = pairs[i].key.view().data();
    const double* kj = pairs[j].key.view().data();
    const double* vi = pairs[i].value.view().data();
    const double* vj = pairs[j].value.view().data();
    double kk = 0.0;
    for (std::size_t c = 0; c < d; ++c) kk += ki[c] * kj[c];
    double vv = 0.0;
    for (std::size_t c = 0; c < s; ++c) vv += vi[c] * vj[c];
    return guarded_exp(kk * inv_sqrt_d) * vv;
  };
  auto out = run_walk(n, cap, scale, cfg, rng, affinity);
  out.norm_violations = checks.norm_violations;
  return out;
}

std::vector<KVPair> softmax_balance(std::span<const KVPair> pairs, const BalanceConfig& cfg, RandomSource& rng) {
  const auto outcome = softmax_balance_partition(pairs, cfg, rng);
  std::vector<KVPair> subset;
  subset.reserve(outcome.selected.size());
  for (std::size_t i : outcome.selected) subset.push_back(pairs[i]);
  return subset;
}

}  // namespace kvb
