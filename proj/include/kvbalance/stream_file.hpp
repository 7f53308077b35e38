// Copyright 2026 The kvbalance Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kvbalance/core.hpp"

namespace kvb {

/// In-memory image of a "BKV1" stream file.
///
/// Layout, all little-endian:
///   magic   4 bytes  "BKV1"
///   version u16      (kStreamVersion)
///   n       u32      record count
///   d       u32      query/key dimension
///   s       u32      value dimension
///   n records of q[d] k[d] v[s], float32 each
///
/// The header is 18 bytes; file size is 18 + n * (2d + s) * 4.
struct StreamData {
  static constexpr char kMagic[4] = {'B', 'K', 'V', '1'};
  static constexpr std::uint16_t kStreamVersion = 1;
  static constexpr std::size_t kHeaderBytes = 18;

  std::uint16_t version = kStreamVersion;
  std::uint32_t n = 0;
  std::uint32_t d = 0;
  std::uint32_t s = 0;
  /// Row-major records of 2d + s floats.
  std::vector<float> payload;

  std::size_t record_floats() const noexcept { return 2 * static_cast<std::size_t>(d) + s; }
  std::size_t file_bytes() const noexcept { return kHeaderBytes + payload.size() * sizeof(float); }

  std::span<const float> query(std::size_t i) const;
  std::span<const float> key(std::size_t i) const;
  std::span<const float> value(std::size_t i) const;

  /// Throws FormatError on size mismatch or non-finite floats.
  void validate() const;

  /// Tokens with 1-based indices, widened to double.
  std::vector<TokenTriple> tokens() const;
};

std::vector<std::uint8_t> encode_stream(const StreamData& data);
StreamData decode_stream(std::span<const std::uint8_t> bytes);

void write_stream_file(const std::string& path, const StreamData& data);
StreamData read_stream_file(const std::string& path);

}  // namespace kvb
