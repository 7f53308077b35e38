// Copyright 2026 The kvbalance Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "kvbalance/attention.hpp"
#include "kvbalance/balance.hpp"
#include "kvbalance/config.hpp"
#include "kvbalance/stream_file.hpp"
#include "kvbalance/synthetic.hpp"

namespace kvb {

enum class Method { kBalanceKV, kUniform, kSinkRecent, kExact };

Method parse_method(const std::string& name);
std::string to_string(Method method);
MiddleCompressor parse_middle_compressor(const std::string& name);
std::string to_string(MiddleCompressor inner);

struct StreamSource {
  /// Non-empty: read this StreamFile. Otherwise generate from `synthetic`,
  /// re-seeded per experiment seed.
  std::string path;
  SyntheticParams synthetic;
};

struct ExperimentSpec {
  StreamSource source;
  Method method = Method::kBalanceKV;
  /// Middle compressor for Method::kSinkRecent.
  MiddleCompressor inner = MiddleCompressor::kBalanceKV;
  std::vector<std::size_t> batch_sizes;
  /// Compression depths; the rate is 2^-T.
  std::vector<std::size_t> depths;
  /// Take (t, T) from theorem_batch_size instead of the grid.
  bool theorem_schedule = false;
  double kappa = 0.05;
  std::vector<std::uint64_t> seeds;
  /// Errors are evaluated at the last `window` stream positions.
  std::size_t window = 256;
  std::size_t sink = 0;
  std::size_t recent = 0;
  double epsilon = 0.5;
  double delta = 0.01;
  /// Key/query norm bound; 0 takes it from the source.
  double r = 0.0;
  SelectionMode mode = SelectionMode::kStrictHalf;
  FailPolicy fail_policy = FailPolicy::kClampContinue;
  double cap_scale = 30.0;
  bool pruning = true;
  /// Each cell is timed this many times; errors come from the first run.
  std::size_t repeats = 1;
  /// Worker threads; 0 reads KVB_THREADS, then hardware concurrency.
  std::size_t threads = 0;
  std::string output;
  std::string json_output;

  void validate() const;
  static ExperimentSpec from_config(const KeyValueConfig& cfg);
};

/// One (t, T) grid cell. t is 0 where the method has no batch size.
struct Cell {
  std::size_t t = 0;
  std::size_t T = 0;
};

std::vector<Cell> grid_cells(const ExperimentSpec& spec);

/// Everything measured for one cell and one seed.
struct SeedRun {
  Cell cell;
  std::uint64_t seed = 0;
  std::vector<std::size_t> steps;
  std::vector<double> objective_errors;
  /// NaN where the relative error is undefined (exact output is zero).
  std::vector<double> relative_errors;
  double compress_seconds = 0.0;
  double compress_seconds_min = 0.0;
  double estimate_seconds = 0.0;
  double estimate_seconds_min = 0.0;
  std::size_t peak_retained = 0;
  std::size_t memory_bound = 0;
  std::size_t fail_count = 0;
  std::size_t skipped_steps = 0;
  bool no_compression = false;

  double mean_relative_error() const;
  double mean_objective_error() const;
  /// Fraction of evaluated steps with objective error <= epsilon.
  double pass_rate(double epsilon) const;
};

struct ReportRow {
  std::string method;
  std::size_t t = 0;
  std::size_t T = 0;
  /// Decimal seed, or "all" for the aggregate over seeds.
  std::string seed;
  double mean_rel_error = 0.0;
  std::optional<double> std_rel_error;
  double mean_objective_error = 0.0;
  double compress_seconds = 0.0;
  double estimate_seconds = 0.0;
  std::size_t peak_retained = 0;
  std::size_t fail_count = 0;
  double compress_seconds_min = 0.0;
  double estimate_seconds_min = 0.0;
  std::size_t memory_bound = 0;
  double objective_pass_rate = 0.0;
  std::size_t evaluated_steps = 0;
  std::size_t skipped_steps = 0;
};

struct ExperimentResult {
  std::vector<SeedRun> runs;
  std::vector<ReportRow> rows;
};

/// Stream for one experiment seed.
StreamData load_stream(const StreamSource& source, std::uint64_t seed);
/// Largest key or query norm in the stream.
double max_key_query_norm(const std::vector<TokenTriple>& tokens);

/// Runs one cell on one prepared stream.
SeedRun run_cell(const ExperimentSpec& spec, const std::vector<TokenTriple>& tokens, Cell cell, std::uint64_t seed);

/// Runs every cell x seed in a worker pool and assembles rows in grid order.
ExperimentResult run_experiment(const ExperimentSpec& spec);

std::string method_label(const ExperimentSpec& spec);
const std::vector<std::string>& report_columns();
bool is_timing_column(const std::string& name);
void write_csv(std::ostream& out, const std::vector<ReportRow>& rows);
void write_json(std::ostream& out, const std::vector<ReportRow>& rows);
/// RFC 4180 field quoting.
std::string csv_escape(const std::string& field);
std::string format_double(double x);

std::size_t default_thread_count();

// --- calibration ------------------------------------------------------------

struct CalibrationPoint {
  double kappa = 0.0;
  std::size_t t = 0;
  std::size_t T = 0;
  bool no_compression = false;
  double pass_rate = 0.0;
};

struct CalibrationResult {
  std::vector<CalibrationPoint> points;
  /// Smallest kappa whose pass rate reached the target, if any.
  std::optional<CalibrationPoint> chosen;
};

/// Sweeps ascending kappas with the theorem schedule until the pass rate
/// (objective error <= epsilon over all seeds and window steps) reaches
/// `target`. Kappas yielding an already-measured (t, T) are not rerun.
CalibrationResult calibrate_kappa(const ExperimentSpec& base, const std::vector<double>& kappas, double target = 0.9);

}  // namespace kvb
