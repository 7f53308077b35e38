// Copyright 2026 The kvbalance Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "kvbalance/balance.hpp"
#include "kvbalance/stream_file.hpp"

namespace kvb {

struct CompressOptions {
  std::size_t t = 4;
  std::size_t T = 1;
  SelectionMode mode = SelectionMode::kSmallerHalf;
  FailPolicy fail_policy = FailPolicy::kClampContinue;
  double cap_scale = 30.0;
  std::uint64_t seed = 0;
  std::size_t sink = 0;
  std::size_t recent = 0;
  double epsilon = 0.5;
  double delta = 0.01;
  /// 0 takes the largest key/query norm of the stream.
  double r = 0.0;
  bool pruning = true;
};

/// One retained pair. `cascade` is sink, numerator, denominator or recent;
/// `bucket` is the dyadic exponent for numerator rows.
struct RetainedEntry {
  std::string cascade;
  std::optional<int> bucket;
  std::size_t level = 0;
  double weight = 1.0;
  std::uint64_t index = 0;
};

/// Runs BalanceKV over the middle of the stream once and lists what it keeps,
/// with sink and recent tokens passed through at weight 1.
std::vector<RetainedEntry> compress_stream(const StreamData& data, const CompressOptions& options);
void write_retained_csv(std::ostream& out, const std::vector<RetainedEntry>& entries);

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Invariant suite over a stream: balance partition and size contracts,
/// signed-sum consistency, merge-reduce conservation and provenance, bucket
/// partition, pruning safety, denominator positivity, budget accounting and
/// the no-compression identity.
std::vector<CheckResult> verify_stream(const StreamData& data, const CompressOptions& options);

}  // namespace kvb
