// Copyright 2026 The kvbalance Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance run: one PASS/FAIL line per criterion, informational lines
// prefixed with "info". Exit status is the number of failed criteria.
//
// Every verdict uses the default walk constant (cap_scale 30). Criteria that
// depend on it are then repeated as info lines at a cap_scale calibrated on
// seeds disjoint from every evaluation seed (smallest power of two whose
// Abort frequency at n=256, delta=0.05 stays <= delta); those lines never
// change the exit status.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "kvbalance/attention.hpp"
#include "kvbalance/balance.hpp"
#include "kvbalance/experiment.hpp"
#include "kvbalance/merge_reduce.hpp"
#include "kvbalance/stream_file.hpp"
#include "kvbalance/synthetic.hpp"
#include "oracles.hpp"

using namespace kvb;

namespace {

using Clock = std::chrono::steady_clock;

constexpr double kDefaultCapScale = 30.0;

int g_failures = 0;
bool g_supplementary = false;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void verdict(int id, bool pass, const std::string& detail) {
  if (g_supplementary) {
    std::printf("info      criterion %d, calibrated walk: %s  %s\n", id, pass ? "would pass" : "would fail",
                detail.c_str());
  } else {
    std::printf("criterion %d: %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
    if (!pass) ++g_failures;
  }
  std::fflush(stdout);
}

void info(const std::string& text) {
  std::printf("info      %s\n", text.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string fmt(const char* f, ...) {
  char buf[1024];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t m = xs.size() / 2;
  return xs.size() % 2 ? xs[m] : 0.5 * (xs[m - 1] + xs[m]);
}

RealVector clipped_gaussian(RandomSource& rng, std::size_t d, double bound) {
  auto g = oracle::gaussian(rng, d);
  const double nrm = l2_norm(g);
  if (nrm <= bound) return g;
  std::vector<double> x(g.entries());
  for (double& v : x) v *= bound / nrm;
  return RealVector(std::move(x));
}

// P(X >= wins) for X ~ Binomial(n, 1/2).
double sign_test_p(int wins, int n) {
  double p = 0.0;
  for (int k = wins; k <= n; ++k) p += std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0)) * std::pow(0.5, n);
  return p;
}

// ---- walk frequency of FAIL --------------------------------------------------

double abort_frequency(double cap_scale, std::uint64_t first_seed, std::size_t seeds) {
  std::size_t aborts = 0;
  for (std::uint64_t seed = first_seed; seed < first_seed + seeds; ++seed) {
    RandomSource data(derive_seed(seed, 0x46414c, 0));
    const auto pairs = oracle::unit_pairs(data, 256, 16, 16);
    BalanceConfig cfg;
    cfg.delta = 0.05;
    cfg.cap_scale = cap_scale;
    cfg.fail_policy = FailPolicy::kAbort;
    RandomSource rng(seed);
    try {
      softmax_balance_partition(pairs, cfg, rng);
    } catch (const BalanceFailure&) {
      ++aborts;
    }
  }
  return static_cast<double>(aborts) / static_cast<double>(seeds);
}

double calibrate_cap_scale() {
  double chosen = 0.0;
  for (double cs = 32.0; cs >= 1.0 / 64.0; cs /= 2.0) {
    const double freq = abort_frequency(cs, 1001, 1000);
    info(fmt("cap_scale calibration: cap_scale=%g abort frequency %.3f over seeds 1001..2000", cs, freq));
    if (freq > 0.05) break;
    chosen = cs;
  }
  return chosen;
}

// ---- criterion bodies ----------------------------------------------------------

void criterion_1() {
  const auto start = Clock::now();
  RandomSource rng(20261);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + rng.below(64), d = 1 + rng.below(8), s = 1 + rng.below(8);
    std::vector<KVPair> pairs;
    for (std::size_t i = 0; i < n; ++i) pairs.push_back({oracle::gaussian(rng, d, 2.0), oracle::gaussian(rng, s), i + 1});
    const auto q = oracle::gaussian(rng, d, 2.0);
    const auto got = exact_attention(q, pairs).output;
    const auto ref = oracle::naive_attention(q, pairs);
    double diff = 0.0;
    for (std::size_t c = 0; c < s; ++c) diff += (got[c] - ref[c]) * (got[c] - ref[c]);
    worst = std::max(worst, std::sqrt(diff) / oracle::norm(ref));
  }
  const double secs = seconds_since(start);
  verdict(1, worst <= 1e-10 && secs < 5.0,
          fmt("max relative deviation %.3e (<= 1e-10) over 200 instances, %.2f s (< 5 s)", worst, secs));
}

struct DiscrepancyStats {
  double within = 0.0;  // fraction of (seed, query) pairs under the bound
  std::map<std::size_t, double> medians;
};

DiscrepancyStats discrepancy_study(double cap_scale) {
  DiscrepancyStats out;
  std::size_t total = 0, within = 0;
  for (std::size_t n : {256u, 512u, 1024u}) {
    std::vector<double> all;
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
      RandomSource data(derive_seed(seed, 0x44495343, n));
      const auto pairs = oracle::unit_pairs(data, n, 16, 16);
      BalanceConfig cfg;
      cfg.delta = 0.01;
      cfg.cap_scale = cap_scale;
      RandomSource rng(seed);
      const auto outcome = softmax_balance_partition(pairs, cfg, rng);
      for (int k = 0; k < 100; ++k) {
        const auto q = clipped_gaussian(data, 16, 2.0);
        const double qn = l2_norm(q);
        const double bound = 30.0 * std::sqrt(16.0) * std::log(static_cast<double>(n) * 16.0 / 0.01) *
                             std::exp(qn * qn / (2.0 * 4.0)) * std::exp(1.0 / (2.0 * 4.0));
        const double disc = oracle::norm(oracle::signed_kernel_sum(q, pairs, outcome.final_signs));
        ++total;
        if (disc <= bound) ++within;
        all.push_back(disc);
      }
    }
    out.medians[n] = median(all);
  }
  out.within = static_cast<double>(within) / static_cast<double>(total);
  return out;
}

void criterion_2(double cap_scale) {
  const auto start = Clock::now();
  const auto s = discrepancy_study(cap_scale);
  const double secs = seconds_since(start);
  const double ratio = s.medians.at(1024) / s.medians.at(256);
  verdict(2, s.within >= 0.99 && ratio <= 2.0 && secs < 120.0,
          fmt("cap_scale=%g: %.2f%% under the bound (>= 99%%), median ratio n=1024/n=256 %.3f (<= 2.0), "
              "medians %.3f/%.3f/%.3f, %.1f s (< 120 s)",
              cap_scale, 100.0 * s.within, ratio, s.medians.at(256), s.medians.at(512), s.medians.at(1024), secs));
}

void criterion_3(double cap_scale) {
  const auto start = Clock::now();
  const double freq = abort_frequency(cap_scale, 1, 1000);
  const double secs = seconds_since(start);
  verdict(3, freq <= 0.05 && secs < 60.0,
          fmt("cap_scale=%g, n=256, delta=0.05: abort frequency %.3f (<= 0.05) over 1000 seeds, %.1f s (< 60 s)",
              cap_scale, freq, secs));
}

void criterion_4() {
  std::size_t violations = 0, peak_violations = 0, checks = 0;
  for (std::size_t t : {32u, 64u}) {
    const std::size_t T = t == 32 ? 5 : 4;
    for (std::uint64_t seed = 1; seed <= 50; ++seed) {
      RandomSource data(derive_seed(seed, 0x4d52, t));
      MRConfig cfg;
      cfg.t = t;
      cfg.T = T;
      cfg.key_dim = 8;
      cfg.value_dim = 8;
      cfg.seed = seed;
      cfg.balance.mode = SelectionMode::kStrictHalf;
      MergeReduce mr(cfg);
      for (std::size_t i = 0; i < 1024; ++i) {
        mr.push({oracle::random_direction(data, 8, data.uniform()), oracle::random_direction(data, 8, data.uniform()), i + 1});
        ++checks;
        if (mr.weighted_count() != mr.processed()) ++violations;
        if (mr.retained() > t * (T + 1)) ++peak_violations;
      }
      if (mr.peak_retained() > t * (T + 1)) ++peak_violations;
    }
  }
  verdict(4, violations == 0 && peak_violations == 0,
          fmt("%zu step checks over 100 streams (t=32,T=5 and t=64,T=4): %zu conservation mismatches, %zu peaks above "
              "t(T+1)",
              checks, violations, peak_violations));
}

void criterion_5() {
  std::size_t mismatches = 0, cases = 0;
  for (std::size_t T : {1u, 2u, 3u}) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const std::size_t t = 16;
      RandomSource data(derive_seed(seed, 0x4f46, T));
      const auto pairs = oracle::unit_pairs(data, t << T, 6, 6);
      MRConfig cfg;
      cfg.t = t;
      cfg.T = T;
      cfg.key_dim = 6;
      cfg.value_dim = 6;
      cfg.seed = seed;
      cfg.balance.mode = SelectionMode::kStrictHalf;
      MergeReduce mr(cfg);
      for (const auto& p : pairs) mr.push(p);
      const auto offline = oracle::offline_merge_reduce(pairs, t, T, cfg.balance, seed);
      ++cases;
      bool same = mr.level(T).size() == offline.size();
      for (std::size_t i = 0; same && i < offline.size(); ++i) {
        same = mr.level(T)[i].index == offline[i].index && mr.level(T)[i].key == offline[i].key &&
               mr.level(T)[i].value == offline[i].value;
      }
      for (std::size_t i = 0; i < T; ++i) same = same && mr.level(i).empty();
      if (!same) ++mismatches;
    }
  }
  verdict(5, mismatches == 0, fmt("%zu/%zu streaming runs equal the offline recursion (t=16, T=1,2,3)",
                                  cases - mismatches, cases));
}

ExperimentSpec paper_stream_spec() {
  ExperimentSpec spec;
  auto& syn = spec.source.synthetic;
  syn.n = 4096;
  syn.d = 32;
  syn.s = 32;
  syn.r = std::pow(32.0, 0.25);
  syn.profile = ValueNormProfile::kDyadicMixture;
  spec.epsilon = 0.5;
  spec.window = 256;
  return spec;
}

std::vector<std::uint64_t> seed_range(std::uint64_t a, std::uint64_t b) {
  std::vector<std::uint64_t> out;
  for (auto s = a; s <= b; ++s) out.push_back(s);
  return out;
}

void criterion_6(double cap_scale) {
  const auto start = Clock::now();
  auto base = paper_stream_spec();
  base.method = Method::kBalanceKV;
  base.theorem_schedule = true;
  base.cap_scale = cap_scale;
  base.seeds = seed_range(1001, 1010);
  std::vector<double> kappas;
  for (int k = -10; k <= 2; ++k) kappas.push_back(0.05 * std::ldexp(1.0, k));
  const auto cal = calibrate_kappa(base, kappas, 0.9);
  for (const auto& p : cal.points) {
    info(fmt("kappa calibration: kappa=%.6g t=%zu T=%zu pass rate %.4f", p.kappa, p.t, p.T, p.pass_rate));
  }
  if (!cal.chosen) {
    verdict(6, false, "no kappa reached a 90% pass rate on the calibration seeds");
    return;
  }
  auto eval = base;
  eval.kappa = cal.chosen->kappa;
  eval.seeds = seed_range(1, 20);
  const auto result = run_experiment(eval);
  std::size_t steps = 0;
  double passed = 0.0;
  for (const auto& run : result.runs) {
    steps += run.objective_errors.size();
    passed += run.pass_rate(0.5) * static_cast<double>(run.objective_errors.size());
  }
  const double rate = passed / static_cast<double>(steps);
  const double secs = seconds_since(start);
  const auto cell = result.runs.at(0).cell;
  verdict(6, rate >= 0.9 && secs < 600.0,
          fmt("kappa=%.6g (t=%zu, T=%zu, cap_scale=%g): objective error <= 0.5 at %.2f%% of %zu steps "
              "(>= 90%%) over seeds 1..20, %.1f s (< 600 s)",
              eval.kappa, cell.t, cell.T, cap_scale, 100.0 * rate, steps, secs));

  auto fixed = eval;
  fixed.kappa = 0.05;
  const auto ref = run_experiment(fixed);
  std::size_t ref_steps = 0;
  double ref_pass = 0.0, ref_err = 0.0;
  for (const auto& run : ref.runs) {
    ref_steps += run.objective_errors.size();
    ref_pass += run.pass_rate(0.5) * static_cast<double>(run.objective_errors.size());
    ref_err += run.mean_objective_error() / static_cast<double>(ref.runs.size());
  }
  info(fmt("kappa=0.05 (t=%zu, T=%zu): pass rate %.4f, mean objective error %.4f", ref.runs.at(0).cell.t,
           ref.runs.at(0).cell.T, ref_pass / static_cast<double>(ref_steps), ref_err));
}

struct Comparison {
  int wins = 0;
  double mean_balancekv = 0.0;
  double mean_uniform = 0.0;
  double peak_balancekv = 0.0;
  double peak_uniform = 0.0;
};

Comparison compare_with_uniform(double cap_scale) {
  auto spec = paper_stream_spec();
  spec.method = Method::kSinkRecent;
  spec.sink = 256;
  spec.recent = 256;
  spec.batch_sizes = {256};
  spec.depths = {2};
  spec.seeds = seed_range(1, 20);
  spec.cap_scale = cap_scale;
  spec.inner = MiddleCompressor::kBalanceKV;
  const auto bkv = run_experiment(spec);
  spec.inner = MiddleCompressor::kUniform;
  const auto uni = run_experiment(spec);
  Comparison c;
  for (std::size_t i = 0; i < bkv.runs.size(); ++i) {
    const double a = bkv.runs[i].mean_relative_error();
    const double b = uni.runs[i].mean_relative_error();
    if (a < b) ++c.wins;
    c.mean_balancekv += a / static_cast<double>(bkv.runs.size());
    c.mean_uniform += b / static_cast<double>(uni.runs.size());
    c.peak_balancekv += static_cast<double>(bkv.runs[i].peak_retained) / static_cast<double>(bkv.runs.size());
    c.peak_uniform += static_cast<double>(uni.runs[i].peak_retained) / static_cast<double>(uni.runs.size());
  }
  return c;
}

void criterion_7(double cap_scale) {
  const auto start = Clock::now();
  const auto c = compare_with_uniform(cap_scale);
  const double p = sign_test_p(c.wins, 20);
  const double secs = seconds_since(start);
  verdict(7, c.mean_balancekv < c.mean_uniform && p <= 0.05 && secs < 600.0,
          fmt("cap_scale=%g, rate 1/4, sink=recent=256: mean relative error %.4f vs uniform %.4f, BalanceKV lower on "
              "%d/20 seeds, one-sided sign test p=%.4f (<= 0.05), %.1f s (< 600 s)",
              cap_scale, c.mean_balancekv, c.mean_uniform, c.wins, p, secs));
  info(fmt("criterion 7 budgets: mean peak retained pairs %.0f (BalanceKV, all cascades) vs %.0f (uniform)",
           c.peak_balancekv, c.peak_uniform));
}

void criterion_8(double cap_scale) {
  // Reference ablation (layer 1, relative error) rows t = 256, 128, 64; columns rate 1/2, 1/4, 1/8.
  const double reference[3][3] = {{0.1036, 0.1764, 0.2655}, {0.1082, 0.1833, 0.2741}, {0.1137, 0.1921, 0.2858}};
  bool ref_ok = true;
  for (int col = 0; col < 3; ++col) {
    ref_ok = ref_ok && reference[0][col] <= reference[1][col] && reference[1][col] <= reference[2][col];
  }
  for (int row = 0; row < 3; ++row) {
    ref_ok = ref_ok && reference[row][0] <= reference[row][1] && reference[row][1] <= reference[row][2];
  }
  info(fmt("reference ablation table follows the same ordering: %s", ref_ok ? "yes" : "no"));

  const auto start = Clock::now();
  auto spec = paper_stream_spec();
  spec.method = Method::kSinkRecent;
  spec.inner = MiddleCompressor::kBalanceKV;
  spec.sink = 256;
  spec.recent = 256;
  spec.batch_sizes = {64, 128, 256};
  spec.depths = {1, 2, 3};
  spec.seeds = seed_range(1, 20);
  spec.cap_scale = cap_scale;
  const auto result = run_experiment(spec);
  std::map<std::pair<std::size_t, std::size_t>, double> mean;
  for (const auto& row : result.rows) {
    if (row.seed == "all") mean[{row.t, row.T}] = row.mean_rel_error;
  }
  bool ok = true;
  std::string table;
  for (std::size_t T : {1u, 2u, 3u}) {
    table += fmt(" T=%zu:", T);
    for (std::size_t t : {64u, 128u, 256u}) table += fmt(" %.6f", mean[{t, T}]);
    ok = ok && mean[{64, T}] >= mean[{128, T}] && mean[{128, T}] >= mean[{256, T}];
  }
  for (std::size_t t : {64u, 128u, 256u}) ok = ok && mean[{t, 1}] <= mean[{t, 2}] && mean[{t, 2}] <= mean[{t, 3}];
  verdict(8, ok,
          fmt("cap_scale=%g, mean relative error over 20 seeds (t=64,128,256 per rate):%s; non-increasing in t, "
              "non-decreasing in T, %.1f s",
              cap_scale, table.c_str(), seconds_since(start)));
}

void criterion_9() {
  ExperimentSpec spec;
  auto& syn = spec.source.synthetic;
  syn.n = 512;
  syn.d = 16;
  syn.s = 16;
  syn.r = 2.0;
  syn.profile = ValueNormProfile::kDyadicMixture;
  spec.method = Method::kBalanceKV;
  spec.batch_sizes = {32};
  spec.depths = {0};
  spec.seeds = seed_range(1, 20);
  spec.window = 512;
  double worst_obj = 0.0, worst_rel = 0.0;
  std::size_t steps = 0;
  for (const auto& run : run_experiment(spec).runs) {
    for (double e : run.objective_errors) worst_obj = std::max(worst_obj, e);
    for (double e : run.relative_errors) worst_rel = std::max(worst_rel, e);
    steps += run.objective_errors.size();
  }
  verdict(9, worst_obj <= 1e-10 && worst_rel <= 1e-10,
          fmt("T=0 over 20 streams, %zu steps: max objective error %.3e, max relative error %.3e (<= 1e-10)", steps,
              worst_obj, worst_rel));
}

void criterion_10() {
  SyntheticParams sp;
  sp.n = 2048;
  sp.d = 16;
  sp.s = 24;
  sp.r = 3.0;
  sp.profile = ValueNormProfile::kLogUniform;
  sp.seed = 99;
  const auto data = generate_synthetic(sp);
  const auto path = std::filesystem::temp_directory_path() / "kvbalance_acceptance.bkv";
  write_stream_file(path.string(), data);
  const auto back = read_stream_file(path.string());
  const bool round_trip = back.n == data.n && back.d == data.d && back.s == data.s &&
                          back.payload.size() == data.payload.size() &&
                          std::memcmp(back.payload.data(), data.payload.data(), data.payload.size() * 4) == 0 &&
                          std::filesystem::file_size(path) == 18 + data.payload.size() * 4;
  std::filesystem::remove(path);

  ExperimentSpec spec;
  spec.source.synthetic.n = 1024;
  spec.source.synthetic.d = 16;
  spec.source.synthetic.s = 16;
  spec.source.synthetic.profile = ValueNormProfile::kDyadicMixture;
  spec.method = Method::kBalanceKV;
  spec.batch_sizes = {32, 64};
  spec.depths = {1, 2};
  spec.seeds = {1, 2, 3};
  spec.window = 64;
  auto render = [&](const ExperimentSpec& s) {
    const auto rows = run_experiment(s).rows;
    std::ostringstream out;
    write_csv(out, rows);
    std::string filtered;
    const auto& cols = report_columns();
    std::istringstream in(out.str());
    for (std::string line; std::getline(in, line);) {
      std::size_t col = 0;
      std::string field;
      for (char c : line + ",") {
        if (c == ',') {
          if (col < cols.size() && !is_timing_column(cols[col])) filtered += field;
          filtered += '|';
          field.clear();
          ++col;
        } else {
          field += c;
        }
      }
      filtered += '\n';
    }
    return filtered;
  };
  const auto first = render(spec);
  const auto second = render(spec);
  verdict(10, round_trip && first == second,
          fmt("stream round trip bit-exact: %s; repeated run non-timing CSV columns identical: %s",
              round_trip ? "yes" : "no", first == second ? "yes" : "no"));
}

}  // namespace

int main() {
  const auto start = Clock::now();
  criterion_1();
  criterion_2(kDefaultCapScale);
  criterion_3(kDefaultCapScale);
  criterion_4();
  criterion_5();
  criterion_6(kDefaultCapScale);
  criterion_7(kDefaultCapScale);
  criterion_8(kDefaultCapScale);
  criterion_9();
  criterion_10();
  std::printf("summary: %d of 10 criteria failed\n", g_failures);

  const double cap_scale = calibrate_cap_scale();
  info(fmt("calibrated cap_scale = %g", cap_scale));
  if (cap_scale > 0.0) {
    g_supplementary = true;
    criterion_2(cap_scale);
    criterion_3(cap_scale);
    criterion_6(cap_scale);
    criterion_7(cap_scale);
    criterion_8(cap_scale);
  }
  info(fmt("%.1f s total", seconds_since(start)));
  return g_failures;
}
