// Copyright 2026 The kvbalance Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvbalance/verify.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "kvbalance/attention.hpp"
#include "kvbalance/balancekv.hpp"
#include "kvbalance/experiment.hpp"
#include "kvbalance/merge_reduce.hpp"

namespace kvb {

namespace {

BalanceKVConfig make_config(const CompressOptions& o, std::size_t n, std::size_t d, std::size_t s, double r) {
  BalanceKVConfig cfg;
  cfg.params = StreamParams{n, d, s, r, o.epsilon, o.delta};
  cfg.t = o.t;
  cfg.T = o.T;
  cfg.mode = o.mode;
  cfg.fail_policy = o.fail_policy;
  cfg.cap_scale = o.cap_scale;
  cfg.seed = o.seed;
  cfg.pruning = o.pruning;
  return cfg;
}

double resolve_r(const CompressOptions& o, const std::vector<TokenTriple>& tokens) {
  if (o.r > 0.0) return o.r;
  const double r = max_key_query_norm(tokens);
  return r > 0.0 ? r : 1.0;
}

void append_levels(const MergeReduce& mr, const std::string& cascade, std::optional<int> bucket,
                   std::vector<RetainedEntry>& out) {
  const auto& levels = mr.levels();
  for (const auto& snap : levels) {
    for (const auto& pair : snap.pairs) {
      out.push_back({cascade, bucket, snap.level, std::ldexp(1.0, static_cast<int>(snap.level)), pair.index});
    }
  }
}

CheckResult check(std::string name, bool passed, std::string detail) {
  return {std::move(name), passed, std::move(detail)};
}

}  // namespace

std::vector<RetainedEntry> compress_stream(const StreamData& data, const CompressOptions& options) {
  const auto tokens = data.tokens();
  std::vector<RetainedEntry> out;
  if (tokens.empty()) return out;
  const auto regions = retention_regions(tokens.size(), options.sink, options.recent);
  if (regions.passthrough) {
    for (const auto& tok : tokens) out.push_back({"sink", std::nullopt, 0, 1.0, tok.index});
    return out;
  }
  for (std::size_t i = 1; i <= regions.sink_end; ++i) out.push_back({"sink", std::nullopt, 0, 1.0, i});
  const std::size_t m = regions.middle_size();
  if (m > 0) {
    BalanceKV bkv(make_config(options, m, data.d, data.s, resolve_r(options, tokens)));
    for (std::size_t i = regions.middle_begin; i <= regions.middle_end; ++i) bkv.push(tokens[i - 1]);
    for (const auto key : bkv.bucket_keys()) append_levels(bkv.numerator(key), "numerator", key.i, out);
    append_levels(bkv.denominator(), "denominator", std::nullopt, out);
  }
  for (std::size_t i = regions.recent_begin; i <= tokens.size(); ++i) {
    out.push_back({"recent", std::nullopt, 0, 1.0, i});
  }
  return out;
}

void write_retained_csv(std::ostream& out, const std::vector<RetainedEntry>& entries) {
  out << "cascade,bucket,level,weight,index\r\n";
  for (const auto& e : entries) {
    out << e.cascade << ',' << (e.bucket ? std::to_string(*e.bucket) : std::string()) << ',' << e.level << ','
        << format_double(e.weight) << ',' << e.index << "\r\n";
  }
}

std::vector<CheckResult> verify_stream(const StreamData& data, const CompressOptions& options) {
  std::vector<CheckResult> results;
  std::vector<TokenTriple> tokens;
  try {
    tokens = data.tokens();
    results.push_back(check("stream_format", true, std::to_string(tokens.size()) + " finite records"));
  } catch (const Error& e) {
    results.push_back(check("stream_format", false, e.what()));
    return results;
  }
  if (tokens.empty()) return results;
  const std::size_t n = tokens.size();
  const std::size_t d = data.d;
  const std::size_t s = data.s;
  const double r = resolve_r(options, tokens);
  const auto pairs = prefix_pairs(tokens, n);

  // Balance partition and signed sums on the first batch-sized slice.
  {
    const std::size_t m = std::min<std::size_t>(n, std::max<std::size_t>(options.t * 2, 2));
    const std::span<const KVPair> batch(pairs.data(), m);
    double r_value = 0.0;
    for (const auto& p : batch) r_value = std::max(r_value, l2_norm(p.value));
    if (r_value == 0.0) r_value = 1.0;
    bool partition_ok = true;
    bool sums_ok = true;
    double worst = 0.0;
    std::ostringstream detail;
    for (auto mode : {SelectionMode::kSmallerHalf, SelectionMode::kStrictHalf}) {
      BalanceConfig cfg;
      cfg.delta = options.delta;
      cfg.r_key = r;
      cfg.r_value = r_value;
      cfg.mode = mode;
      cfg.fail_policy = FailPolicy::kClampContinue;
      cfg.cap_scale = options.cap_scale;
      RandomSource rng(derive_seed(options.seed, 0x564552ULL, static_cast<std::uint64_t>(mode)));
      const auto out = softmax_balance_partition(batch, cfg, rng);
      const std::set<std::size_t> chosen(out.selected.begin(), out.selected.end());
      if (chosen.size() != out.selected.size() || (chosen.size() && *chosen.rbegin() >= m)) partition_ok = false;
      const bool size_ok = mode == SelectionMode::kStrictHalf ? out.selected.size() == m / 2
                                                              : out.selected.size() <= m / 2;
      if (!size_ok) partition_ok = false;
      for (std::size_t j = 0; j < m; ++j) {
        double brute = 0.0;
        double mass = 0.0;
        for (std::size_t i = 0; i < j; ++i) {
          const double a = pair_affinity(batch[i], batch[j], d);
          brute += out.walk_signs[i] * a;
          mass += std::abs(a);
        }
        const double err = std::abs(brute - out.signed_sums[j]) / std::max(mass, 1e-300);
        worst = std::max(worst, err);
        if (err > 1e-9) sums_ok = false;
      }
    }
    detail << "batch of " << m << " pairs, both selection modes";
    results.push_back(check("balance_partition", partition_ok, detail.str()));
    std::ostringstream sums_detail;
    sums_detail << "max relative deviation " << worst;
    results.push_back(check("signed_sum_consistency", sums_ok, sums_detail.str()));
  }

  // Merge-reduce conservation, budget and provenance on the raw stream.
  {
    MRConfig cfg;
    cfg.t = options.t;
    cfg.T = options.T;
    cfg.key_dim = d;
    cfg.value_dim = s;
    cfg.seed = options.seed;
    cfg.balance.delta = options.delta / (4.0 * static_cast<double>(n));
    cfg.balance.r_key = r;
    double r_value = 0.0;
    for (const auto& p : pairs) r_value = std::max(r_value, l2_norm(p.value));
    cfg.balance.r_value = r_value > 0.0 ? r_value : 1.0;
    cfg.balance.mode = SelectionMode::kStrictHalf;
    cfg.balance.cap_scale = options.cap_scale;
    MergeReduce mr(cfg);
    bool conserved = true;
    std::size_t first_bad = 0;
    for (const auto& p : pairs) {
      mr.push(p);
      if (conserved && mr.weighted_count() != mr.processed()) {
        conserved = false;
        first_bad = mr.processed();
      }
    }
    results.push_back(check("merge_reduce_conservation", conserved,
                            conserved ? "sum 2^i |C^i| == processed at all " + std::to_string(n) + " steps"
                                      : "first mismatch at step " + std::to_string(first_bad)));
    const bool budget = mr.peak_retained() <= mr.memory_bound();
    results.push_back(check("merge_reduce_budget", budget,
                            "peak " + std::to_string(mr.peak_retained()) + " <= bound " +
                                std::to_string(mr.memory_bound())));
    std::set<std::uint64_t> seen;
    bool provenance = true;
    for (const auto& snap : mr.levels()) {
      for (const auto& p : snap.pairs) {
        if (p.index < 1 || p.index > n || !seen.insert(p.index).second) provenance = false;
      }
    }
    results.push_back(check("level_provenance", provenance,
                            std::to_string(seen.size()) + " retained indices, each from the input and unique"));
  }

  // Full estimator: bucket partition, pruning safety, denominators, budget.
  {
    BalanceKV bkv(make_config(options, n, d, s, r));
    bool denominators = true;
    std::size_t first_bad = 0;
    for (std::size_t j = 0; j < n; ++j) {
      bkv.push(tokens[j]);
      try {
        const auto out = bkv.estimate(tokens[j].query);
        if (!(out.denominator > 0.0) && denominators) {
          denominators = false;
          first_bad = j + 1;
        }
      } catch (const EstimationFailure&) {
        if (denominators) first_bad = j + 1;
        denominators = false;
      }
    }
    std::size_t routed = 0;
    for (const auto& [key, count] : bkv.routed_counts()) routed += count;
    bool bucketed = routed + bkv.zero_value_tokens() == n;
    for (const auto key : bkv.bucket_keys()) {
      for (const auto& snap : bkv.numerator(key).levels()) {
        for (const auto& p : snap.pairs) {
          const auto b = bucket_index(p.value);
          if (!b || *b != key) bucketed = false;
        }
      }
    }
    results.push_back(check("bucket_partition", bucketed,
                            std::to_string(bkv.routed_counts().size()) + " buckets, " +
                                std::to_string(bkv.zero_value_tokens()) + " zero-value tokens"));
    bool pruning_safe = true;
    for (const auto key : bkv.pruned()) {
      if (std::ldexp(1.0, key.i) > bkv.prune_threshold()) pruning_safe = false;
    }
    results.push_back(check("pruning_safety", pruning_safe,
                            std::to_string(bkv.pruned().size()) + " pruned buckets, " +
                                std::to_string(bkv.pruned_tokens()) + " tokens dropped"));
    results.push_back(check("denominator_positive", denominators,
                            denominators ? "positive at every step" : "failed at step " + std::to_string(first_bad)));
    results.push_back(check("estimator_budget", bkv.peak_retained() <= bkv.memory_bound(),
                            "peak " + std::to_string(bkv.peak_retained()) + " <= bound " +
                                std::to_string(bkv.memory_bound())));
  }

  // T = 0 reproduces exact attention.
  {
    auto o = options;
    o.T = 0;
    o.pruning = false;
    BalanceKV bkv(make_config(o, n, d, s, r));
    double worst = 0.0;
    const std::size_t tail = std::min<std::size_t>(n, 16);
    for (std::size_t j = 0; j < n; ++j) {
      bkv.push(tokens[j]);
      if (j + tail < n) continue;
      const auto exact = exact_attention(tokens[j].query, std::span<const KVPair>(pairs).first(j + 1));
      const auto z = bkv.estimate(tokens[j].query).z;
      double diff = 0.0;
      double norm = 0.0;
      for (std::size_t c = 0; c < s; ++c) {
        diff += (z[c] - exact.output[c]) * (z[c] - exact.output[c]);
        norm += exact.output[c] * exact.output[c];
      }
      worst = std::max(worst, std::sqrt(diff) / std::max(std::sqrt(norm), 1e-300));
    }
    std::ostringstream detail;
    detail << "max relative deviation " << worst << " over the last " << tail << " steps";
    results.push_back(check("no_compression_identity", worst <= 1e-10, detail.str()));
  }
  return results;
}

}  // namespace kvb
