// Copyright 2026 The kvbalance Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvbalance/stream_file.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace kvb {

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 0; shift < 32; shift += 8) out.push_back(static_cast<std::uint8_t>((v >> shift) & 0xff));
}

std::uint16_t get_u16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

std::span<const float> StreamData::query(std::size_t i) const {
  return std::span<const float>(payload).subspan(i * record_floats(), d);
}

std::span<const float> StreamData::key(std::size_t i) const {
  return std::span<const float>(payload).subspan(i * record_floats() + d, d);
}

std::span<const float> StreamData::value(std::size_t i) const {
  return std::span<const float>(payload).subspan(i * record_floats() + 2 * static_cast<std::size_t>(d), s);
}

void StreamData::validate() const {
  if (payload.size() != static_cast<std::size_t>(n) * record_floats()) {
    throw FormatError("stream payload holds " + std::to_string(payload.size()) + " floats, expected " +
                      std::to_string(static_cast<std::size_t>(n) * record_floats()));
  }
  if (n > 0 && (d == 0 || s == 0)) throw FormatError("stream dimensions must be positive");
  for (std::size_t i = 0; i < payload.size(); ++i) {
    if (!std::isfinite(payload[i])) throw FormatError("non-finite float at payload offset " + std::to_string(i));
  }
}

std::vector<TokenTriple> StreamData::tokens() const {
  validate();
  std::vector<TokenTriple> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({RealVector::from_floats(query(i)), RealVector::from_floats(key(i)),
                   RealVector::from_floats(value(i)), i + 1});
  }
  return out;
}

std::vector<std::uint8_t> encode_stream(const StreamData& data) {
  data.validate();
  std::vector<std::uint8_t> out;
  out.reserve(data.file_bytes());
  out.insert(out.end(), std::begin(StreamData::kMagic), std::end(StreamData::kMagic));
  put_u16(out, data.version);
  put_u32(out, data.n);
  put_u32(out, data.d);
  put_u32(out, data.s);
  for (float f : data.payload) put_u32(out, std::bit_cast<std::uint32_t>(f));
  return out;
}

StreamData decode_stream(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < StreamData::kHeaderBytes) throw FormatError("stream file shorter than its 18-byte header");
  if (std::memcmp(bytes.data(), StreamData::kMagic, 4) != 0) throw FormatError("bad stream magic (expected BKV1)");
  StreamData data;
  data.version = get_u16(bytes.data() + 4);
  if (data.version != StreamData::kStreamVersion) {
    throw FormatError("unsupported stream version " + std::to_string(data.version));
  }
  data.n = get_u32(bytes.data() + 6);
  data.d = get_u32(bytes.data() + 10);
  data.s = get_u32(bytes.data() + 14);
  const std::size_t floats = static_cast<std::size_t>(data.n) * data.record_floats();
  if (bytes.size() != StreamData::kHeaderBytes + floats * 4) {
    throw FormatError("stream file is " + std::to_string(bytes.size()) + " bytes, header implies " +
                      std::to_string(StreamData::kHeaderBytes + floats * 4));
  }
  data.payload.resize(floats);
  const std::uint8_t* p = bytes.data() + StreamData::kHeaderBytes;
  for (std::size_t i = 0; i < floats; ++i) data.payload[i] = std::bit_cast<float>(get_u32(p + 4 * i));
  data.validate();
  return data;
}

void write_stream_file(const std::string& path, const StreamData& data) {
  const auto bytes = encode_stream(data);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path + "' failed");
}

StreamData read_stream_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_stream(bytes);
}

}  // namespace kvb
