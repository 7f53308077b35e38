// Copyright 2026 The kvbalance Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "kvbalance/errors.hpp"

namespace kvb {

/// Flat `key = value` configuration. Blank lines and lines starting with '#'
/// are ignored; later duplicates override earlier ones. Typed getters throw
/// ConfigError naming the key on malformed values.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text);
  static KeyValueConfig load(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  const std::map<std::string, std::string>& values() const noexcept { return values_; }

  /// Throws ConfigError for the first key not in `known`.
  void require_known(const std::set<std::string>& known) const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  int get_int(const std::string& key, int fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<std::size_t> get_size_list(const std::string& key) const;
  std::vector<std::uint64_t> get_u64_list(const std::string& key) const;
  /// Accepts decimals and fractions such as "1/4".
  std::vector<double> get_fraction_list(const std::string& key) const;

 private:
  std::map<std::string, std::string> values_;
};

/// Parses "1/4", "0.25" or "2e-3".
double parse_fraction(std::string_view text);
std::vector<std::string> split_list(std::string_view text);

}  // namespace kvb
