// Copyright 2026 The kvbalance Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvbalance/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <thread>

#include "json.hpp"
#include "kvbalance/balancekv.hpp"
#include "kvbalance/random.hpp"

namespace kvb {

namespace {

constexpr std::uint64_t kStreamSeedTag = 0x5354524dULL;
constexpr std::uint64_t kMiddleSampleTag = 0x4d494444ULL;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

const double kNaN = std::numeric_limits<double>::quiet_NaN();

double mean_finite(const std::vector<double>& xs) {
  double sum = 0.0;
  std::size_t count = 0;
  for (double x : xs) {
    if (std::isfinite(x)) {
      sum += x;
      ++count;
    }
  }
  return count ? sum / static_cast<double>(count) : kNaN;
}

struct StreamShape {
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t s = 0;
  double r = 0.0;
};

double resolve_r(const ExperimentSpec& spec, const std::vector<TokenTriple>& tokens) {
  if (spec.r > 0.0) return spec.r;
  if (spec.source.path.empty()) return spec.source.synthetic.r;
  const double r = max_key_query_norm(tokens);
  return r > 0.0 ? r : 1.0;
}

StreamShape probe_shape(const ExperimentSpec& spec) {
  if (spec.source.path.empty()) {
    const auto& p = spec.source.synthetic;
    return {p.n, p.d, p.s, spec.r > 0.0 ? spec.r : p.r};
  }
  const auto data = read_stream_file(spec.source.path);
  const auto tokens = data.tokens();
  return {data.n, data.d, data.s, resolve_r(spec, tokens)};
}

// Number of tokens the BalanceKV instance of a cell sees.
std::size_t compressor_tokens(const ExperimentSpec& spec, std::size_t n) {
  if (spec.method == Method::kSinkRecent) {
    const auto regions = retention_regions(n, spec.sink, spec.recent);
    return regions.passthrough ? 0 : regions.middle_size();
  }
  return n;
}

bool uses_batches(const ExperimentSpec& spec) {
  return spec.method == Method::kBalanceKV ||
         (spec.method == Method::kSinkRecent && spec.inner == MiddleCompressor::kBalanceKV);
}

bool uses_depths(const ExperimentSpec& spec) {
  return uses_batches(spec) || spec.method == Method::kUniform ||
         (spec.method == Method::kSinkRecent && spec.inner == MiddleCompressor::kUniform);
}

std::vector<Cell> cells_for_shape(const ExperimentSpec& spec, const StreamShape& shape, bool* no_compression) {
  if (no_compression) *no_compression = false;
  if (uses_batches(spec) && spec.theorem_schedule) {
    const std::size_t m = compressor_tokens(spec, shape.n);
    StreamParams params{std::max<std::size_t>(m, 1), shape.d, shape.s, shape.r, spec.epsilon, spec.delta};
    const auto schedule = theorem_batch_size(params, spec.kappa);
    if (no_compression) *no_compression = schedule.no_compression;
    return {Cell{schedule.t, schedule.T}};
  }
  std::vector<Cell> cells;
  if (uses_batches(spec)) {
    for (std::size_t t : spec.batch_sizes) {
      for (std::size_t T : spec.depths) cells.push_back({t, T});
    }
  } else if (uses_depths(spec)) {
    for (std::size_t T : spec.depths) cells.push_back({0, T});
  } else {
    cells.push_back({0, 0});
  }
  return cells;
}

void add_exact_sums(const std::vector<TokenTriple>& tokens, std::size_t first, std::size_t last, const RealVector& q,
                    std::vector<double>& numerator, double& denominator) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.dim()));
  for (std::size_t i = first; i <= last; ++i) {
    const auto& tok = tokens[i - 1];
    const double w = guarded_exp(dot(tok.key.view(), q.view()) * inv_sqrt_d);
    const auto v = tok.value.view();
    for (std::size_t c = 0; c < numerator.size(); ++c) numerator[c] += w * v[c];
    denominator += w;
  }
}

std::optional<RealVector> ratio(std::vector<double> numerator, double denominator) {
  if (!(denominator > 0.0) || !std::isfinite(denominator)) return std::nullopt;
  for (double& x : numerator) x /= denominator;
  return RealVector(std::move(numerator));
}

struct Simulation {
  std::vector<std::optional<RealVector>> estimates;
  double compress_seconds = 0.0;
  double estimate_seconds = 0.0;
  std::size_t peak_retained = 0;
  std::size_t memory_bound = 0;
  std::size_t fail_count = 0;
};

BalanceKVConfig bkv_config(const ExperimentSpec& spec, std::size_t m, std::size_t d, std::size_t s, double r, Cell cell,
                           std::uint64_t seed) {
  BalanceKVConfig cfg;
  cfg.params = StreamParams{m, d, s, r, spec.epsilon, spec.delta};
  cfg.t = cell.t;
  cfg.T = cell.T;
  cfg.mode = spec.mode;
  cfg.fail_policy = spec.fail_policy;
  cfg.cap_scale = spec.cap_scale;
  cfg.seed = seed;
  cfg.pruning = spec.pruning;
  return cfg;
}

Simulation simulate_balancekv(const ExperimentSpec& spec, const std::vector<TokenTriple>& tokens, double r, Cell cell,
                              std::uint64_t seed, std::size_t first_eval) {
  const std::size_t n = tokens.size();
  Simulation sim;
  BalanceKV bkv(bkv_config(spec, n, tokens[0].key.dim(), tokens[0].value.dim(), r, cell, seed));
  for (std::size_t j = 1; j <= n; ++j) {
    auto start = Clock::now();
    bkv.push(tokens[j - 1]);
    sim.compress_seconds += seconds_since(start);
    if (j < first_eval) continue;
    start = Clock::now();
    try {
      sim.estimates.emplace_back(bkv.estimate(tokens[j - 1].query).z);
    } catch (const EstimationFailure&) {
      sim.estimates.emplace_back(std::nullopt);
    }
    sim.estimate_seconds += seconds_since(start);
  }
  sim.peak_retained = bkv.peak_retained();
  sim.memory_bound = bkv.memory_bound();
  sim.fail_count = bkv.fail_count();
  return sim;
}

Simulation simulate_uniform(const std::vector<TokenTriple>& tokens, Cell cell, std::uint64_t seed,
                            std::size_t first_eval) {
  const std::size_t n = tokens.size();
  Simulation sim;
  RetentionPolicy policy;
  policy.kind = RetentionPolicy::Kind::kUniformSample;
  policy.rate = std::ldexp(1.0, -static_cast<int>(cell.T));
  policy.seed = seed;
  for (std::size_t j = first_eval; j <= n; ++j) {
    auto start = Clock::now();
    const auto retained = apply_retention(n, policy, j, RetainedSet{});
    sim.compress_seconds += seconds_since(start);
    sim.peak_retained = std::max(sim.peak_retained, retained.numerator.size());
    start = Clock::now();
    const auto sums = retained_kernel_sums(tokens, retained, tokens[j - 1].query);
    sim.estimates.push_back(ratio(sums.numerator, sums.denominator));
    sim.estimate_seconds += seconds_since(start);
  }
  sim.memory_bound = static_cast<std::size_t>(std::ceil(policy.rate * static_cast<double>(n)));
  return sim;
}

Simulation simulate_sink_recent(const ExperimentSpec& spec, const std::vector<TokenTriple>& tokens, double r,
                                Cell cell, std::uint64_t seed, std::size_t first_eval) {
  const std::size_t n = tokens.size();
  const std::size_t d = tokens[0].key.dim();
  const std::size_t s = tokens[0].value.dim();
  const auto regions = retention_regions(n, spec.sink, spec.recent);
  Simulation sim;

  if (regions.passthrough || spec.inner != MiddleCompressor::kBalanceKV) {
    RetentionPolicy policy;
    policy.kind = RetentionPolicy::Kind::kSinkRecent;
    policy.sink_count = spec.sink;
    policy.recent_count = spec.recent;
    policy.inner = spec.inner;
    policy.seed = seed;
    RetainedSet middle;
    auto start = Clock::now();
    if (!regions.passthrough) {
      const std::size_t m = regions.middle_size();
      if (spec.inner == MiddleCompressor::kUniform && m > 0) {
        policy.rate = std::ldexp(1.0, -static_cast<int>(cell.T));
        RandomSource rng(derive_seed(seed, kMiddleSampleTag, 0));
        const auto positions = uniform_sample_positions(m, policy.rate, rng);
        const double weight = static_cast<double>(m) / static_cast<double>(positions.size());
        for (std::size_t p : positions) middle.numerator.push_back({regions.middle_begin + p, weight});
      }
      middle.denominator = middle.numerator;
    }
    sim.compress_seconds += seconds_since(start);
    for (std::size_t j = first_eval; j <= n; ++j) {
      start = Clock::now();
      const auto retained = apply_retention(n, policy, j, middle);
      const auto sums = retained_kernel_sums(tokens, retained, tokens[j - 1].query);
      sim.estimates.push_back(ratio(sums.numerator, sums.denominator));
      sim.estimate_seconds += seconds_since(start);
      sim.peak_retained = std::max(sim.peak_retained, retained.numerator.size());
    }
    const std::size_t middle_kept =
        spec.inner == MiddleCompressor::kIdentity ? regions.middle_size() : middle.numerator.size();
    sim.memory_bound = regions.passthrough ? n : regions.sink_end + middle_kept + (n - regions.recent_begin + 1);
    return sim;
  }

  const std::size_t m = regions.middle_size();
  std::optional<BalanceKV> bkv;
  if (m > 0) bkv.emplace(bkv_config(spec, m, d, s, r, cell, seed));
  const std::size_t recent_size = n - regions.recent_begin + 1;
  for (std::size_t j = 1; j <= n; ++j) {
    if (bkv && j >= regions.middle_begin && j <= regions.middle_end) {
      const auto start = Clock::now();
      bkv->push(tokens[j - 1]);
      sim.compress_seconds += seconds_since(start);
    }
    if (j < first_eval) continue;
    const auto start = Clock::now();
    const auto& q = tokens[j - 1].query;
    std::vector<double> numerator(s, 0.0);
    double denominator = 0.0;
    add_exact_sums(tokens, 1, std::min(regions.sink_end, j), q, numerator, denominator);
    if (bkv && bkv->processed() > 0) {
      try {
        const auto out = bkv->estimate(q);
        for (std::size_t c = 0; c < s; ++c) numerator[c] += out.numerator[c];
        denominator += out.denominator;
      } catch (const EstimationFailure&) {
        denominator = kNaN;
      }
    }
    if (j >= regions.recent_begin) add_exact_sums(tokens, regions.recent_begin, j, q, numerator, denominator);
    sim.estimates.push_back(ratio(std::move(numerator), denominator));
    sim.estimate_seconds += seconds_since(start);
  }
  const std::size_t exact_part = regions.sink_end + recent_size;
  sim.peak_retained = exact_part + (bkv ? bkv->peak_retained() : 0);
  sim.memory_bound = exact_part + (bkv ? bkv->memory_bound() : 0);
  sim.fail_count = bkv ? bkv->fail_count() : 0;
  return sim;
}

Simulation simulate_exact(const std::vector<AttentionResult>& exact) {
  Simulation sim;
  for (const auto& e : exact) sim.estimates.emplace_back(e.output);
  return sim;
}

template <class T>
T require_choice(const std::map<std::string, T>& choices, const std::string& name, const char* what) {
  auto it = choices.find(name);
  if (it == choices.end()) throw InvalidArgument(std::string("unknown ") + what + " '" + name + "'");
  return it->second;
}

}  // namespace

Method parse_method(const std::string& name) {
  static const std::map<std::string, Method> kChoices{{"balancekv", Method::kBalanceKV},
                                                      {"uniform", Method::kUniform},
                                                      {"sink_recent", Method::kSinkRecent},
                                                      {"exact", Method::kExact}};
  return require_choice(kChoices, name, "method");
}

std::string to_string(Method method) {
  switch (method) {
    case Method::kBalanceKV: return "balancekv";
    case Method::kUniform: return "uniform";
    case Method::kSinkRecent: return "sink_recent";
    case Method::kExact: return "exact";
  }
  return "unknown";
}

MiddleCompressor parse_middle_compressor(const std::string& name) {
  static const std::map<std::string, MiddleCompressor> kChoices{{"identity", MiddleCompressor::kIdentity},
                                                                {"drop", MiddleCompressor::kDrop},
                                                                {"uniform", MiddleCompressor::kUniform},
                                                                {"balancekv", MiddleCompressor::kBalanceKV}};
  return require_choice(kChoices, name, "middle compressor");
}

std::string to_string(MiddleCompressor inner) {
  switch (inner) {
    case MiddleCompressor::kIdentity: return "identity";
    case MiddleCompressor::kDrop: return "drop";
    case MiddleCompressor::kUniform: return "uniform";
    case MiddleCompressor::kBalanceKV: return "balancekv";
  }
  return "unknown";
}

std::string method_label(const ExperimentSpec& spec) {
  if (spec.method == Method::kSinkRecent) return "sink_recent+" + to_string(spec.inner);
  return to_string(spec.method);
}

void ExperimentSpec::validate() const {
  if (seeds.empty()) throw ConfigError("seeds", "at least one seed is required");
  if (window == 0) throw ConfigError("window", "must be >= 1");
  if (repeats == 0) throw ConfigError("repeats", "must be >= 1");
  if (!(epsilon > 0.0 && epsilon <= 1.0)) throw ConfigError("epsilon", "must lie in (0, 1]");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta", "must lie in (0, 1)");
  if (r < 0.0) throw ConfigError("r", "must be >= 0");
  if (!(cap_scale > 0.0)) throw ConfigError("cap_scale", "must be > 0");
  if (!(kappa > 0.0)) throw ConfigError("kappa", "must be > 0");
  if (uses_batches(*this) && !theorem_schedule) {
    if (batch_sizes.empty()) throw ConfigError("batch_sizes", "grid needs at least one batch size");
    for (std::size_t t : batch_sizes) {
      if (t < 2) throw ConfigError("batch_sizes", "every batch size must be >= 2");
    }
  }
  if (uses_depths(*this) && !(uses_batches(*this) && theorem_schedule)) {
    if (depths.empty()) throw ConfigError("depths", "grid needs at least one depth (or rate)");
    for (std::size_t T : depths) {
      if (T > 30) throw ConfigError("depths", "depth must be <= 30");
    }
  }
  if (method == Method::kSinkRecent && window > recent) {
    throw ConfigError("window", "sink_recent evaluates inside the recent region only; need window <= recent");
  }
  if (source.path.empty()) {
    try {
      source.synthetic.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError("synthetic", e.what());
    }
    if (source.synthetic.n == 0) throw ConfigError("synthetic.n", "must be >= 1");
  }
}

ExperimentSpec ExperimentSpec::from_config(const KeyValueConfig& cfg) {
  static const std::set<std::string> kKnown{
      "stream", "synthetic.n", "synthetic.d", "synthetic.s", "synthetic.r", "synthetic.profile",
      "synthetic.value_norm", "synthetic.lo", "synthetic.hi", "synthetic.dyadic_min_exp", "synthetic.dyadic_max_exp",
      "synthetic.seed", "method", "inner", "batch_sizes", "depths", "rates", "kappa", "seeds", "window", "sink",
      "recent", "epsilon", "delta", "r", "mode", "fail_policy", "cap_scale", "pruning", "repeats", "threads",
      "output", "json_output"};
  cfg.require_known(kKnown);

  ExperimentSpec spec;
  spec.source.path = cfg.get_string("stream", "");
  auto& syn = spec.source.synthetic;
  syn.n = cfg.get_size("synthetic.n", syn.n);
  syn.d = cfg.get_size("synthetic.d", syn.d);
  syn.s = cfg.get_size("synthetic.s", syn.s);
  syn.r = cfg.get_double("synthetic.r", syn.r);
  if (cfg.has("synthetic.profile")) {
    try {
      syn.profile = parse_value_profile(cfg.get_string("synthetic.profile", ""));
    } catch (const InvalidArgument& e) {
      throw ConfigError("synthetic.profile", e.what());
    }
  }
  syn.value_norm = cfg.get_double("synthetic.value_norm", syn.value_norm);
  syn.lo = cfg.get_double("synthetic.lo", syn.lo);
  syn.hi = cfg.get_double("synthetic.hi", syn.hi);
  syn.dyadic_min_exp = cfg.get_int("synthetic.dyadic_min_exp", syn.dyadic_min_exp);
  syn.dyadic_max_exp = cfg.get_int("synthetic.dyadic_max_exp", syn.dyadic_max_exp);
  syn.seed = cfg.get_u64("synthetic.seed", syn.seed);

  try {
    spec.method = parse_method(cfg.get_string("method", "balancekv"));
  } catch (const InvalidArgument& e) {
    throw ConfigError("method", e.what());
  }
  try {
    spec.inner = parse_middle_compressor(cfg.get_string("inner", "balancekv"));
  } catch (const InvalidArgument& e) {
    throw ConfigError("inner", e.what());
  }

  if (cfg.get_string("batch_sizes", "") == "theorem") {
    spec.theorem_schedule = true;
  } else {
    spec.batch_sizes = cfg.get_size_list("batch_sizes");
  }
  spec.depths = cfg.get_size_list("depths");
  for (double rate : cfg.get_fraction_list("rates")) {
    if (!(rate > 0.0 && rate <= 1.0)) throw ConfigError("rates", "rates must lie in (0, 1]");
    const double T = -std::log2(rate);
    const double rounded = std::round(T);
    if (std::abs(T - rounded) > 1e-9) throw ConfigError("rates", "rates must be powers of two (2^-T)");
    spec.depths.push_back(static_cast<std::size_t>(rounded));
  }
  spec.kappa = cfg.get_double("kappa", spec.kappa);
  spec.seeds = cfg.get_u64_list("seeds");
  spec.window = cfg.get_size("window", spec.window);
  spec.sink = cfg.get_size("sink", spec.sink);
  spec.recent = cfg.get_size("recent", spec.recent);
  spec.epsilon = cfg.get_double("epsilon", spec.epsilon);
  spec.delta = cfg.get_double("delta", spec.delta);
  spec.r = cfg.get_double("r", spec.r);
  const auto mode = cfg.get_string("mode", "strict");
  if (mode == "strict") {
    spec.mode = SelectionMode::kStrictHalf;
  } else if (mode == "smaller") {
    spec.mode = SelectionMode::kSmallerHalf;
  } else {
    throw ConfigError("mode", "expected 'strict' or 'smaller', got '" + mode + "'");
  }
  const auto policy = cfg.get_string("fail_policy", "clamp");
  if (policy == "clamp") {
    spec.fail_policy = FailPolicy::kClampContinue;
  } else if (policy == "abort") {
    spec.fail_policy = FailPolicy::kAbort;
  } else {
    throw ConfigError("fail_policy", "expected 'clamp' or 'abort', got '" + policy + "'");
  }
  spec.cap_scale = cfg.get_double("cap_scale", spec.cap_scale);
  spec.pruning = cfg.get_bool("pruning", spec.pruning);
  spec.repeats = cfg.get_size("repeats", spec.repeats);
  spec.threads = cfg.get_size("threads", spec.threads);
  spec.output = cfg.get_string("output", "");
  spec.json_output = cfg.get_string("json_output", "");
  spec.validate();
  return spec;
}

std::vector<Cell> grid_cells(const ExperimentSpec& spec) {
  spec.validate();
  return cells_for_shape(spec, probe_shape(spec), nullptr);
}

double SeedRun::mean_relative_error() const { return mean_finite(relative_errors); }
double SeedRun::mean_objective_error() const { return mean_finite(objective_errors); }

double SeedRun::pass_rate(double epsilon) const {
  if (objective_errors.empty()) return kNaN;
  std::size_t pass = 0;
  for (double e : objective_errors) {
    if (std::isfinite(e) && e <= epsilon) ++pass;
  }
  return static_cast<double>(pass) / static_cast<double>(objective_errors.size());
}

StreamData load_stream(const StreamSource& source, std::uint64_t seed) {
  if (!source.path.empty()) return read_stream_file(source.path);
  auto params = source.synthetic;
  params.seed = derive_seed(source.synthetic.seed, kStreamSeedTag, seed);
  return generate_synthetic(params);
}

double max_key_query_norm(const std::vector<TokenTriple>& tokens) {
  double r = 0.0;
  for (const auto& tok : tokens) r = std::max({r, l2_norm(tok.key), l2_norm(tok.query)});
  return r;
}

SeedRun run_cell(const ExperimentSpec& spec, const std::vector<TokenTriple>& tokens, Cell cell, std::uint64_t seed) {
  if (tokens.empty()) throw InvalidArgument("experiment stream is empty");
  const std::size_t n = tokens.size();
  const double r = resolve_r(spec, tokens);
  const std::size_t first_eval = n > spec.window ? n - spec.window + 1 : 1;

  const auto pairs = prefix_pairs(tokens, n);
  std::vector<AttentionResult> exact;
  exact.reserve(n - first_eval + 1);
  for (std::size_t j = first_eval; j <= n; ++j) {
    exact.push_back(exact_attention(tokens[j - 1].query, std::span<const KVPair>(pairs).first(j)));
  }

  SeedRun run;
  run.cell = cell;
  run.seed = seed;
  double compress_sum = 0.0;
  double estimate_sum = 0.0;
  run.compress_seconds_min = std::numeric_limits<double>::infinity();
  run.estimate_seconds_min = std::numeric_limits<double>::infinity();
  for (std::size_t rep = 0; rep < spec.repeats; ++rep) {
    Simulation sim;
    switch (spec.method) {
      case Method::kBalanceKV: sim = simulate_balancekv(spec, tokens, r, cell, seed, first_eval); break;
      case Method::kUniform: sim = simulate_uniform(tokens, cell, seed, first_eval); break;
      case Method::kSinkRecent: sim = simulate_sink_recent(spec, tokens, r, cell, seed, first_eval); break;
      case Method::kExact: sim = simulate_exact(exact); break;
    }
    compress_sum += sim.compress_seconds;
    estimate_sum += sim.estimate_seconds;
    run.compress_seconds_min = std::min(run.compress_seconds_min, sim.compress_seconds);
    run.estimate_seconds_min = std::min(run.estimate_seconds_min, sim.estimate_seconds);
    if (rep > 0) continue;

    run.peak_retained = sim.peak_retained;
    run.memory_bound = sim.memory_bound;
    run.fail_count = sim.fail_count;
    for (std::size_t k = 0; k < exact.size(); ++k) {
      run.steps.push_back(first_eval + k);
      const auto& z = sim.estimates[k];
      if (!z) {
        run.objective_errors.push_back(kNaN);
        run.relative_errors.push_back(kNaN);
        ++run.skipped_steps;
        continue;
      }
      run.objective_errors.push_back(objective_error(*z, exact[k]));
      try {
        run.relative_errors.push_back(empirical_relative_error(*z, exact[k]));
      } catch (const UndefinedMetric&) {
        run.relative_errors.push_back(kNaN);
        ++run.skipped_steps;
      }
    }
  }
  run.compress_seconds = compress_sum / static_cast<double>(spec.repeats);
  run.estimate_seconds = estimate_sum / static_cast<double>(spec.repeats);
  return run;
}

std::size_t default_thread_count() {
  if (const char* env = std::getenv("KVB_THREADS")) {
    std::size_t value = 0;
    const std::string_view text(env);
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec == std::errc() && ptr == text.data() + text.size() && value > 0) return value;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? hw : 1;
}

namespace {

ReportRow seed_row(const ExperimentSpec& spec, const SeedRun& run) {
  ReportRow row;
  row.method = method_label(spec);
  row.t = run.cell.t;
  row.T = run.cell.T;
  row.seed = std::to_string(run.seed);
  row.mean_rel_error = run.mean_relative_error();
  row.mean_objective_error = run.mean_objective_error();
  row.compress_seconds = run.compress_seconds;
  row.estimate_seconds = run.estimate_seconds;
  row.peak_retained = run.peak_retained;
  row.fail_count = run.fail_count;
  row.compress_seconds_min = run.compress_seconds_min;
  row.estimate_seconds_min = run.estimate_seconds_min;
  row.memory_bound = run.memory_bound;
  row.objective_pass_rate = run.pass_rate(spec.epsilon);
  row.evaluated_steps = run.steps.size();
  row.skipped_steps = run.skipped_steps;
  return row;
}

ReportRow aggregate_row(const ExperimentSpec& spec, const std::vector<const SeedRun*>& runs) {
  ReportRow row;
  row.method = method_label(spec);
  row.t = runs.front()->cell.t;
  row.T = runs.front()->cell.T;
  row.seed = "all";
  std::vector<double> rel;
  std::vector<double> obj;
  std::size_t pass = 0;
  std::size_t total = 0;
  row.compress_seconds_min = std::numeric_limits<double>::infinity();
  row.estimate_seconds_min = std::numeric_limits<double>::infinity();
  for (const SeedRun* run : runs) {
    rel.push_back(run->mean_relative_error());
    obj.push_back(run->mean_objective_error());
    row.compress_seconds += run->compress_seconds;
    row.estimate_seconds += run->estimate_seconds;
    row.compress_seconds_min = std::min(row.compress_seconds_min, run->compress_seconds_min);
    row.estimate_seconds_min = std::min(row.estimate_seconds_min, run->estimate_seconds_min);
    row.peak_retained = std::max(row.peak_retained, run->peak_retained);
    row.memory_bound = std::max(row.memory_bound, run->memory_bound);
    row.fail_count += run->fail_count;
    row.evaluated_steps += run->steps.size();
    row.skipped_steps += run->skipped_steps;
    for (double e : run->objective_errors) {
      ++total;
      if (std::isfinite(e) && e <= spec.epsilon) ++pass;
    }
  }
  const double k = static_cast<double>(runs.size());
  row.compress_seconds /= k;
  row.estimate_seconds /= k;
  row.mean_rel_error = mean_finite(rel);
  row.mean_objective_error = mean_finite(obj);
  row.objective_pass_rate = total ? static_cast<double>(pass) / static_cast<double>(total) : kNaN;
  std::size_t finite = 0;
  double ss = 0.0;
  for (double x : rel) {
    if (std::isfinite(x)) {
      ++finite;
      ss += (x - row.mean_rel_error) * (x - row.mean_rel_error);
    }
  }
  if (finite >= 2) row.std_rel_error = std::sqrt(ss / static_cast<double>(finite - 1));
  return row;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  const auto shape = probe_shape(spec);
  const auto cells = cells_for_shape(spec, shape, nullptr);
  bool no_compression = false;
  cells_for_shape(spec, shape, &no_compression);

  const std::size_t tasks = cells.size() * spec.seeds.size();
  std::vector<SeedRun> runs(tasks);
  std::vector<std::exception_ptr> errors(tasks);
  std::atomic<std::size_t> next{0};

  // File sources are shared by every task; synthetic streams depend on the seed.
  std::optional<std::vector<TokenTriple>> shared_tokens;
  if (!spec.source.path.empty()) shared_tokens = read_stream_file(spec.source.path).tokens();

  auto worker = [&] {
    for (std::size_t task = next++; task < tasks; task = next++) {
      const std::size_t c = task / spec.seeds.size();
      const std::uint64_t seed = spec.seeds[task % spec.seeds.size()];
      try {
        if (shared_tokens) {
          runs[task] = run_cell(spec, *shared_tokens, cells[c], seed);
        } else {
          const auto tokens = load_stream(spec.source, seed).tokens();
          runs[task] = run_cell(spec, tokens, cells[c], seed);
        }
        runs[task].no_compression = no_compression;
      } catch (...) {
        errors[task] = std::current_exception();
      }
    }
  };

  const std::size_t threads = std::min(spec.threads ? spec.threads : default_thread_count(), tasks);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& err : errors) {
    if (err) std::rethrow_exception(err);
  }

  ExperimentResult result;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    std::vector<const SeedRun*> cell_runs;
    for (std::size_t k = 0; k < spec.seeds.size(); ++k) {
      const auto& run = runs[c * spec.seeds.size() + k];
      result.rows.push_back(seed_row(spec, run));
      cell_runs.push_back(&run);
    }
    if (cell_runs.size() >= 2) result.rows.push_back(aggregate_row(spec, cell_runs));
  }
  result.runs = std::move(runs);
  return result;
}

// --- reporting --------------------------------------------------------------

const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> kColumns{
      "method",          "t",
      "T",               "seed",
      "mean_rel_error",  "std_rel_error",
      "mean_objective_error", "compress_seconds",
      "estimate_seconds", "peak_retained",
      "fail_count",      "compress_seconds_min",
      "estimate_seconds_min", "memory_bound",
      "objective_pass_rate", "evaluated_steps",
      "skipped_steps"};
  return kColumns;
}

bool is_timing_column(const std::string& name) {
  return name == "compress_seconds" || name == "estimate_seconds" || name == "compress_seconds_min" ||
         name == "estimate_seconds_min";
}

std::string csv_escape(const std::string& field) {
  if (field.find_first_of(",\"\r\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string format_double(double x) {
  if (std::isnan(x)) return "";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, ptr);
}

namespace {

std::vector<std::string> row_fields(const ReportRow& row) {
  return {row.method,
          std::to_string(row.t),
          std::to_string(row.T),
          row.seed,
          format_double(row.mean_rel_error),
          row.std_rel_error ? format_double(*row.std_rel_error) : std::string(),
          format_double(row.mean_objective_error),
          format_double(row.compress_seconds),
          format_double(row.estimate_seconds),
          std::to_string(row.peak_retained),
          std::to_string(row.fail_count),
          format_double(row.compress_seconds_min),
          format_double(row.estimate_seconds_min),
          std::to_string(row.memory_bound),
          format_double(row.objective_pass_rate),
          std::to_string(row.evaluated_steps),
          std::to_string(row.skipped_steps)};
}

nlohmann::ordered_json number_or_null(double x) {
  if (!std::isfinite(x)) return nullptr;
  return x;
}

}  // namespace

void write_csv(std::ostream& out, const std::vector<ReportRow>& rows) {
  const auto& cols = report_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << "\r\n";
  for (const auto& row : rows) {
    const auto fields = row_fields(row);
    for (std::size_t i = 0; i < fields.size(); ++i) out << (i ? "," : "") << csv_escape(fields[i]);
    out << "\r\n";
  }
}

void write_json(std::ostream& out, const std::vector<ReportRow>& rows) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& row : rows) {
    nlohmann::ordered_json j;
    j["method"] = row.method;
    j["t"] = row.t;
    j["T"] = row.T;
    j["seed"] = row.seed;
    j["mean_rel_error"] = number_or_null(row.mean_rel_error);
    j["std_rel_error"] = row.std_rel_error ? number_or_null(*row.std_rel_error) : nlohmann::ordered_json(nullptr);
    j["mean_objective_error"] = number_or_null(row.mean_objective_error);
    j["compress_seconds"] = row.compress_seconds;
    j["estimate_seconds"] = row.estimate_seconds;
    j["peak_retained"] = row.peak_retained;
    j["fail_count"] = row.fail_count;
    j["compress_seconds_min"] = row.compress_seconds_min;
    j["estimate_seconds_min"] = row.estimate_seconds_min;
    j["memory_bound"] = row.memory_bound;
    j["objective_pass_rate"] = number_or_null(row.objective_pass_rate);
    j["evaluated_steps"] = row.evaluated_steps;
    j["skipped_steps"] = row.skipped_steps;
    arr.push_back(std::move(j));
  }
  out << arr.dump(2) << "\n";
}

// --- calibration ------------------------------------------------------------

CalibrationResult calibrate_kappa(const ExperimentSpec& base, const std::vector<double>& kappas, double target) {
  if (kappas.empty()) throw InvalidArgument("calibration needs at least one kappa");
  if (!uses_batches(base)) throw ConfigError("method", "calibration needs a BalanceKV method");
  std::vector<double> sorted = kappas;
  std::sort(sorted.begin(), sorted.end());

  CalibrationResult result;
  std::map<std::pair<std::size_t, std::size_t>, double> measured;
  for (double kappa : sorted) {
    ExperimentSpec spec = base;
    spec.theorem_schedule = true;
    spec.kappa = kappa;
    spec.validate();
    bool no_compression = false;
    const auto cells = cells_for_shape(spec, probe_shape(spec), &no_compression);
    CalibrationPoint point{kappa, cells.front().t, cells.front().T, no_compression, 0.0};
    const auto key = std::make_pair(point.t, point.T);
    if (auto it = measured.find(key); it != measured.end()) {
      point.pass_rate = it->second;
    } else {
      const auto run = run_experiment(spec);
      std::size_t pass = 0;
      std::size_t total = 0;
      for (const auto& seed_run : run.runs) {
        for (double e : seed_run.objective_errors) {
          ++total;
          if (std::isfinite(e) && e <= spec.epsilon) ++pass;
        }
      }
      point.pass_rate = total ? static_cast<double>(pass) / static_cast<double>(total) : 0.0;
      measured[key] = point.pass_rate;
    }
    result.points.push_back(point);
    if (point.pass_rate >= target) {
      result.chosen = point;
      break;
    }
  }
  return result;
}

}  // namespace kvb
