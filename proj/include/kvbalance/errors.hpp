// Copyright 2026 The kvbalance Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace kvb {

/// Stable error categories. The numeric values are mirrored by the C API
/// status codes in kvbalance.h and must not be reordered.
enum class ErrorCode : int {
  kInvalidArgument = 1,
  kContractViolation = 2,
  kBalanceFailure = 3,
  kCapacityExceeded = 4,
  kEstimationFailure = 5,
  kUndefinedMetric = 6,
  kIo = 7,
  kFormat = 8,
  kConfig = 9,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& what) : Error(ErrorCode::kInvalidArgument, what) {}
};

/// Dimension mismatches, non-finite input, norm-bound violations under Abort.
class ContractViolation : public Error {
 public:
  explicit ContractViolation(const std::string& what) : Error(ErrorCode::kContractViolation, what) {}
};

/// The walk's signed projection left the admissible band under FailPolicy::Abort.
class BalanceFailure : public Error {
 public:
  BalanceFailure(std::size_t step, double signed_sum, double threshold);
  std::size_t step() const noexcept { return step_; }
  double signed_sum() const noexcept { return signed_sum_; }
  double threshold() const noexcept { return threshold_; }

 private:
  std::size_t step_;
  double signed_sum_;
  double threshold_;
};

class CapacityExceeded : public Error {
 public:
  explicit CapacityExceeded(const std::string& what) : Error(ErrorCode::kCapacityExceeded, what) {}
};

class EstimationFailure : public Error {
 public:
  explicit EstimationFailure(const std::string& what) : Error(ErrorCode::kEstimationFailure, what) {}
};

class UndefinedMetric : public Error {
 public:
  explicit UndefinedMetric(const std::string& what) : Error(ErrorCode::kUndefinedMetric, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorCode::kIo, what) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(ErrorCode::kFormat, what) {}
};

/// Configuration parse/validation failure; `field()` names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(ErrorCode::kConfig, "config field '" + field + "': " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace kvb
