// Copyright 2026 The kvbalance Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvbalance/config.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace kvb {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

template <class T>
bool parse_integer(std::string_view text, T& out) {
  text = trim(text);
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end;
}

bool parse_real(std::string_view text, double& out) {
  text = trim(text);
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return ec == std::errc() && ptr == end && !text.empty();
}

}  // namespace

std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const auto piece = trim(text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (!piece.empty()) out.emplace_back(piece);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_fraction(std::string_view text) {
  text = trim(text);
  const auto slash = text.find('/');
  double value = 0.0;
  if (slash == std::string_view::npos) {
    if (!parse_real(text, value)) throw InvalidArgument("not a number: '" + std::string(text) + "'");
    return value;
  }
  double num = 0.0;
  double den = 0.0;
  if (!parse_real(text.substr(0, slash), num) || !parse_real(text.substr(slash + 1), den) || den == 0.0) {
    throw InvalidArgument("not a fraction: '" + std::string(text) + "'");
  }
  return num / den;
}

KeyValueConfig KeyValueConfig::parse(std::string_view text) {
  KeyValueConfig cfg;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const auto line = trim(text.substr(start, end - start));
    start = end + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no), "expected 'key = value'");
    }
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no), "empty key");
    cfg.values_[std::string(key)] = std::string(trim(line.substr(eq + 1)));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

void KeyValueConfig::require_known(const std::set<std::string>& known) const {
  for (const auto& [key, value] : values_) {
    if (!known.count(key)) throw ConfigError(key, "unknown key");
  }
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    return parse_fraction(it->second);
  } catch (const InvalidArgument&) {
    throw ConfigError(key, "expected a number, got '" + it->second + "'");
  }
}

std::size_t KeyValueConfig::get_size(const std::string& key, std::size_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::size_t out = 0;
  if (!parse_integer(it->second, out)) throw ConfigError(key, "expected a non-negative integer, got '" + it->second + "'");
  return out;
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::uint64_t out = 0;
  if (!parse_integer(it->second, out)) throw ConfigError(key, "expected an unsigned integer, got '" + it->second + "'");
  return out;
}

int KeyValueConfig::get_int(const std::string& key, int fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  int out = 0;
  if (!parse_integer(it->second, out)) throw ConfigError(key, "expected an integer, got '" + it->second + "'");
  return out;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  const auto& v = it->second;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError(key, "expected a boolean, got '" + v + "'");
}

std::vector<std::size_t> KeyValueConfig::get_size_list(const std::string& key) const {
  std::vector<std::size_t> out;
  auto it = values_.find(key);
  if (it == values_.end()) return out;
  for (const auto& piece : split_list(it->second)) {
    std::size_t v = 0;
    if (!parse_integer(piece, v)) throw ConfigError(key, "bad list entry '" + piece + "'");
    out.push_back(v);
  }
  return out;
}

std::vector<std::uint64_t> KeyValueConfig::get_u64_list(const std::string& key) const {
  std::vector<std::uint64_t> out;
  auto it = values_.find(key);
  if (it == values_.end()) return out;
  for (const auto& piece : split_list(it->second)) {
    // "a..b" expands to an inclusive range.
    const auto dots = piece.find("..");
    if (dots != std::string::npos) {
      std::uint64_t lo = 0;
      std::uint64_t hi = 0;
      if (!parse_integer(std::string_view(piece).substr(0, dots), lo) ||
          !parse_integer(std::string_view(piece).substr(dots + 2), hi) || hi < lo) {
        throw ConfigError(key, "bad range '" + piece + "'");
      }
      for (std::uint64_t v = lo; v <= hi; ++v) out.push_back(v);
      continue;
    }
    std::uint64_t v = 0;
    if (!parse_integer(piece, v)) throw ConfigError(key, "bad list entry '" + piece + "'");
    out.push_back(v);
  }
  return out;
}

std::vector<double> KeyValueConfig::get_fraction_list(const std::string& key) const {
  std::vector<double> out;
  auto it = values_.find(key);
  if (it == values_.end()) return out;
  for (const auto& piece : split_list(it->second)) {
    try {
      out.push_back(parse_fraction(piece));
    } catch (const InvalidArgument&) {
      throw ConfigError(key, "bad list entry '" + piece + "'");
    }
  }
  return out;
}

}  // namespace kvb
