// Copyright 2026 The kvbalance Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvbalance/kvbalance.h"

#include <algorithm>
#include <fstream>
#include <memory>
#include <new>
#include <sstream>
#include <string>
#include <vector>

#include "kvbalance/balancekv.hpp"
#include "kvbalance/config.hpp"
#include "kvbalance/experiment.hpp"
#include "kvbalance/stream_file.hpp"
#include "kvbalance/synthetic.hpp"
#include "kvbalance/verify.hpp"

struct kvb_engine {
  explicit kvb_engine(kvb::BalanceKVConfig cfg) : impl(std::move(cfg)) {}
  kvb::BalanceKV impl;
  std::uint64_t next_index = 1;
};

struct kvb_stream {
  kvb::StreamData data;
};

namespace {

thread_local std::string g_last_error;

kvb_status fail(kvb_status status, const char* what) {
  g_last_error = what ? what : "";
  return status;
}

template <class F>
kvb_status guarded(F&& body) {
  try {
    g_last_error.clear();
    body();
    return KVB_OK;
  } catch (const kvb::Error& e) {
    return fail(static_cast<kvb_status>(static_cast<int>(e.code())), e.what());
  } catch (const std::bad_alloc&) {
    return fail(KVB_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(KVB_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(KVB_ERR_INTERNAL, "unknown error");
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw kvb::InvalidArgument(what);
}

kvb::StreamParams stream_params(const kvb_engine_config& c) {
  return kvb::StreamParams{static_cast<std::size_t>(c.n), c.d, c.s, c.r, c.epsilon, c.delta};
}

kvb::CompressOptions compress_options(const kvb_compress_options* o) {
  kvb_compress_options defaults;
  kvb_compress_options_default(&defaults);
  if (!o) o = &defaults;
  kvb::CompressOptions out;
  out.t = static_cast<std::size_t>(o->t);
  out.T = static_cast<std::size_t>(o->T);
  out.mode = o->strict_half ? kvb::SelectionMode::kStrictHalf : kvb::SelectionMode::kSmallerHalf;
  out.fail_policy = o->abort_on_fail ? kvb::FailPolicy::kAbort : kvb::FailPolicy::kClampContinue;
  out.cap_scale = o->cap_scale;
  out.seed = o->seed;
  out.sink = static_cast<std::size_t>(o->sink);
  out.recent = static_cast<std::size_t>(o->recent);
  out.epsilon = o->epsilon;
  out.delta = o->delta;
  out.r = o->r;
  out.pruning = o->pruning != 0;
  return out;
}

void emit_lines(const std::string& text, kvb_line_fn line, void* user) {
  if (!line) return;
  std::istringstream in(text);
  std::string s;
  while (std::getline(in, s)) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
    line(s.c_str(), user);
  }
}

kvb::ExperimentSpec load_spec(const char* config_path, const char* const* overrides, size_t n_overrides) {
  require(config_path != nullptr, "config path is NULL");
  auto cfg = kvb::KeyValueConfig::load(config_path);
  for (size_t i = 0; i < n_overrides; ++i) {
    require(overrides && overrides[i], "override is NULL");
    const std::string entry(overrides[i]);
    const auto eq = entry.find('=');
    if (eq == std::string::npos || eq == 0) throw kvb::ConfigError(entry, "override must be key=value");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    cfg.set(trim(entry.substr(0, eq)), trim(entry.substr(eq + 1)));
  }
  return kvb::ExperimentSpec::from_config(cfg);
}

}  // namespace

extern "C" {

const char* kvb_version(void) { return "1.0.0"; }

const char* kvb_status_name(kvb_status status) {
  switch (status) {
    case KVB_OK: return "ok";
    case KVB_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case KVB_ERR_CONTRACT: return "contract_violation";
    case KVB_ERR_BALANCE_FAILURE: return "balance_failure";
    case KVB_ERR_CAPACITY: return "capacity_exceeded";
    case KVB_ERR_ESTIMATION: return "estimation_failure";
    case KVB_ERR_UNDEFINED_METRIC: return "undefined_metric";
    case KVB_ERR_IO: return "io_error";
    case KVB_ERR_FORMAT: return "format_error";
    case KVB_ERR_CONFIG: return "config_error";
    case KVB_ERR_INTERNAL: return "internal_error";
  }
  return "unknown";
}

const char* kvb_last_error(void) { return g_last_error.c_str(); }

void kvb_engine_config_default(kvb_engine_config* cfg) {
  if (!cfg) return;
  *cfg = kvb_engine_config{};
  cfg->n = 1024;
  cfg->d = 16;
  cfg->s = 16;
  cfg->r = 1.0;
  cfg->epsilon = 0.5;
  cfg->delta = 0.01;
  cfg->t = 64;
  cfg->T = 1;
  cfg->strict_half = 1;
  cfg->abort_on_fail = 0;
  cfg->cap_scale = 30.0;
  cfg->seed = 0;
  cfg->pruning = 1;
}

kvb_status kvb_engine_create(const kvb_engine_config* cfg, kvb_engine** out) {
  return guarded([&] {
    require(cfg && out, "NULL argument");
    *out = nullptr;
    kvb::BalanceKVConfig c;
    c.params = stream_params(*cfg);
    c.t = static_cast<std::size_t>(cfg->t);
    c.T = static_cast<std::size_t>(cfg->T);
    c.mode = cfg->strict_half ? kvb::SelectionMode::kStrictHalf : kvb::SelectionMode::kSmallerHalf;
    c.fail_policy = cfg->abort_on_fail ? kvb::FailPolicy::kAbort : kvb::FailPolicy::kClampContinue;
    c.cap_scale = cfg->cap_scale;
    c.seed = cfg->seed;
    c.pruning = cfg->pruning != 0;
    *out = new kvb_engine(std::move(c));
  });
}

void kvb_engine_destroy(kvb_engine* engine) { delete engine; }

kvb_status kvb_engine_push(kvb_engine* engine, const double* q, const double* k, const double* v) {
  return guarded([&] {
    require(engine && q && k && v, "NULL argument");
    const auto& p = engine->impl.config().params;
    kvb::TokenTriple tok{kvb::RealVector(std::vector<double>(q, q + p.d)),
                         kvb::RealVector(std::vector<double>(k, k + p.d)),
                         kvb::RealVector(std::vector<double>(v, v + p.s)), engine->next_index};
    engine->impl.push(tok);
    ++engine->next_index;
  });
}

kvb_status kvb_engine_estimate(const kvb_engine* engine, const double* q, double* z, double* denominator) {
  return guarded([&] {
    require(engine && q && z, "NULL argument");
    const auto& p = engine->impl.config().params;
    const auto out = engine->impl.estimate(kvb::RealVector(std::vector<double>(q, q + p.d)));
    for (std::size_t c = 0; c < p.s; ++c) z[c] = out.z[c];
    if (denominator) *denominator = out.denominator;
  });
}

kvb_status kvb_engine_get_stats(const kvb_engine* engine, kvb_engine_stats* stats) {
  return guarded([&] {
    require(engine && stats, "NULL argument");
    const auto& e = engine->impl;
    stats->processed = e.processed();
    stats->retained = e.retained();
    stats->peak_retained = e.peak_retained();
    stats->memory_bound = e.memory_bound();
    stats->fail_count = e.fail_count();
    stats->live_buckets = e.bucket_keys().size();
    stats->pruned_buckets = e.pruned().size();
    stats->norm_violations = e.norm_violations();
  });
}

kvb_status kvb_theorem_batch_size(uint64_t n, uint32_t d, double r, double epsilon, double kappa, uint64_t* t,
                                  uint64_t* T, int* no_compression) {
  return guarded([&] {
    require(t && T, "NULL argument");
    kvb::StreamParams params{static_cast<std::size_t>(n), d, 1, r, epsilon, 0.01};
    const auto schedule = kvb::theorem_batch_size(params, kappa);
    *t = schedule.t;
    *T = schedule.T;
    if (no_compression) *no_compression = schedule.no_compression ? 1 : 0;
  });
}

void kvb_synthetic_params_default(kvb_synthetic_params* params) {
  if (!params) return;
  const kvb::SyntheticParams def;
  params->n = def.n;
  params->d = static_cast<uint32_t>(def.d);
  params->s = static_cast<uint32_t>(def.s);
  params->r = def.r;
  params->profile = KVB_PROFILE_CONSTANT;
  params->value_norm = def.value_norm;
  params->lo = def.lo;
  params->hi = def.hi;
  params->dyadic_min_exp = def.dyadic_min_exp;
  params->dyadic_max_exp = def.dyadic_max_exp;
  params->seed = def.seed;
}

kvb_status kvb_parse_value_profile(const char* name, kvb_value_profile* out) {
  return guarded([&] {
    require(name && out, "NULL argument");
    *out = static_cast<kvb_value_profile>(static_cast<int>(kvb::parse_value_profile(name)));
  });
}

kvb_status kvb_generate_file(const kvb_synthetic_params* params, const char* path) {
  return guarded([&] {
    require(params && path, "NULL argument");
    require(params->profile >= KVB_PROFILE_CONSTANT && params->profile <= KVB_PROFILE_DYADIC_MIXTURE,
            "unknown value-norm profile");
    kvb::SyntheticParams p;
    p.n = static_cast<std::size_t>(params->n);
    p.d = params->d;
    p.s = params->s;
    p.r = params->r;
    p.profile = static_cast<kvb::ValueNormProfile>(static_cast<int>(params->profile));
    p.value_norm = params->value_norm;
    p.lo = params->lo;
    p.hi = params->hi;
    p.dyadic_min_exp = params->dyadic_min_exp;
    p.dyadic_max_exp = params->dyadic_max_exp;
    p.seed = params->seed;
    kvb::write_stream_file(path, kvb::generate_synthetic(p));
  });
}

kvb_status kvb_stream_open(const char* path, kvb_stream** out) {
  return guarded([&] {
    require(path && out, "NULL argument");
    *out = nullptr;
    auto stream = std::make_unique<kvb_stream>();
    stream->data = kvb::read_stream_file(path);
    *out = stream.release();
  });
}

void kvb_stream_close(kvb_stream* stream) { delete stream; }

kvb_status kvb_stream_info(const kvb_stream* stream, uint64_t* n, uint32_t* d, uint32_t* s) {
  return guarded([&] {
    require(stream != nullptr, "NULL stream");
    if (n) *n = stream->data.n;
    if (d) *d = stream->data.d;
    if (s) *s = stream->data.s;
  });
}

kvb_status kvb_stream_record(const kvb_stream* stream, uint64_t i, float* q, float* k, float* v) {
  return guarded([&] {
    require(stream != nullptr, "NULL stream");
    if (i >= stream->data.n) throw kvb::InvalidArgument("record index out of range");
    const auto idx = static_cast<std::size_t>(i);
    if (q) std::copy_n(stream->data.query(idx).data(), stream->data.d, q);
    if (k) std::copy_n(stream->data.key(idx).data(), stream->data.d, k);
    if (v) std::copy_n(stream->data.value(idx).data(), stream->data.s, v);
  });
}

kvb_status kvb_run_experiment(const char* config_path, const char* const* overrides, size_t n_overrides,
                              kvb_line_fn line, void* user) {
  return guarded([&] {
    const auto spec = load_spec(config_path, overrides, n_overrides);
    const auto result = kvb::run_experiment(spec);
    std::ostringstream csv;
    kvb::write_csv(csv, result.rows);
    if (!spec.output.empty()) {
      std::ofstream out(spec.output, std::ios::binary | std::ios::trunc);
      if (!out) throw kvb::IoError("cannot open '" + spec.output + "' for writing");
      out << csv.str();
      if (!out) throw kvb::IoError("write to '" + spec.output + "' failed");
    } else {
      emit_lines(csv.str(), line, user);
    }
    if (!spec.json_output.empty()) {
      std::ofstream out(spec.json_output, std::ios::trunc);
      if (!out) throw kvb::IoError("cannot open '" + spec.json_output + "' for writing");
      kvb::write_json(out, result.rows);
    }
  });
}

void kvb_compress_options_default(kvb_compress_options* options) {
  if (!options) return;
  const kvb::CompressOptions def;
  options->t = def.t;
  options->T = def.T;
  options->strict_half = 0;
  options->abort_on_fail = 0;
  options->cap_scale = def.cap_scale;
  options->seed = def.seed;
  options->sink = def.sink;
  options->recent = def.recent;
  options->epsilon = def.epsilon;
  options->delta = def.delta;
  options->r = def.r;
  options->pruning = def.pruning ? 1 : 0;
}

kvb_status kvb_compress_file(const char* stream_path, const kvb_compress_options* options, kvb_line_fn line,
                             void* user) {
  return guarded([&] {
    require(stream_path != nullptr, "NULL stream path");
    const auto data = kvb::read_stream_file(stream_path);
    const auto entries = kvb::compress_stream(data, compress_options(options));
    std::ostringstream csv;
    kvb::write_retained_csv(csv, entries);
    emit_lines(csv.str(), line, user);
  });
}

kvb_status kvb_verify_file(const char* stream_path, const kvb_compress_options* options, kvb_line_fn line,
                           void* user, size_t* failures) {
  return guarded([&] {
    require(stream_path != nullptr, "NULL stream path");
    const auto data = kvb::read_stream_file(stream_path);
    const auto checks = kvb::verify_stream(data, compress_options(options));
    size_t failed = 0;
    for (const auto& c : checks) {
      if (!c.passed) ++failed;
      const std::string text = std::string(c.passed ? "PASS " : "FAIL ") + c.name + ": " + c.detail;
      if (line) line(text.c_str(), user);
    }
    if (failures) *failures = failed;
  });
}

kvb_status kvb_calibrate(const char* config_path, const char* const* overrides, size_t n_overrides,
                         const double* kappas, size_t n_kappas, double target, kvb_line_fn line, void* user,
                         double* kappa) {
  bool found = false;
  const auto status = guarded([&] {
    require(kappas != nullptr && n_kappas > 0, "no kappa values");
    const auto spec = load_spec(config_path, overrides, n_overrides);
    const auto result = kvb::calibrate_kappa(spec, std::vector<double>(kappas, kappas + n_kappas), target);
    for (const auto& p : result.points) {
      std::ostringstream text;
      text << "kappa=" << kvb::format_double(p.kappa) << " t=" << p.t << " T=" << p.T
           << " pass_rate=" << kvb::format_double(p.pass_rate) << (p.no_compression ? " no_compression" : "");
      if (line) line(text.str().c_str(), user);
    }
    if (result.chosen) {
      found = true;
      if (kappa) *kappa = result.chosen->kappa;
    }
  });
  if (status != KVB_OK) return status;
  if (!found) return fail(KVB_ERR_ESTIMATION, "no kappa in the sweep reached the target pass rate");
  return KVB_OK;
}

}  // extern "C"
