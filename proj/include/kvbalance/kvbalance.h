/* Copyright 2026 The kvbalance Authors
 * SPDX-License-Identifier: Apache-2.0
 */

/* C interface to the kvbalance shared library. Every call returns a
 * kvb_status; on failure kvb_last_error() holds a message for the calling
 * thread until its next failing call. Handles are opaque and owned by the
 * caller, who releases them with the matching destroy/close function. */

#ifndef KVBALANCE_KVBALANCE_H_
#define KVBALANCE_KVBALANCE_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define KVB_API __declspec(dllimport)
#if defined(KVB_BUILDING_LIBRARY)
#undef KVB_API
#define KVB_API __declspec(dllexport)
#endif
#else
#define KVB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum kvb_status {
  KVB_OK = 0,
  KVB_ERR_INVALID_ARGUMENT = 1,
  KVB_ERR_CONTRACT = 2,
  KVB_ERR_BALANCE_FAILURE = 3,
  KVB_ERR_CAPACITY = 4,
  KVB_ERR_ESTIMATION = 5,
  KVB_ERR_UNDEFINED_METRIC = 6,
  KVB_ERR_IO = 7,
  KVB_ERR_FORMAT = 8,
  KVB_ERR_CONFIG = 9,
  KVB_ERR_INTERNAL = 10
} kvb_status;

KVB_API const char* kvb_version(void);
KVB_API const char* kvb_status_name(kvb_status status);
/* Message of the last failure on this thread; empty string if none. */
KVB_API const char* kvb_last_error(void);

/* Receives one output line (no trailing newline). */
typedef void (*kvb_line_fn)(const char* line, void* user);

/* ---- streaming estimator ------------------------------------------------ */

typedef struct kvb_engine kvb_engine;

typedef struct kvb_engine_config {
  uint64_t n; /* maximum stream length */
  uint32_t d; /* key/query dimension */
  uint32_t s; /* value dimension */
  double r;   /* key/query norm bound */
  double epsilon;
  double delta;
  uint64_t t; /* batch size */
  uint64_t T; /* depth, rate 2^-T */
  int strict_half;   /* nonzero: every compression keeps exactly floor(n/2) */
  int abort_on_fail; /* nonzero: a walk failure aborts the push */
  double cap_scale;
  uint64_t seed;
  int pruning;
} kvb_engine_config;

typedef struct kvb_engine_stats {
  uint64_t processed;
  uint64_t retained;
  uint64_t peak_retained;
  uint64_t memory_bound;
  uint64_t fail_count;
  uint64_t live_buckets;
  uint64_t pruned_buckets;
  uint64_t norm_violations;
} kvb_engine_stats;

KVB_API void kvb_engine_config_default(kvb_engine_config* cfg);
KVB_API kvb_status kvb_engine_create(const kvb_engine_config* cfg, kvb_engine** out);
KVB_API void kvb_engine_destroy(kvb_engine* engine);
/* q and k have d entries, v has s. Tokens are numbered 1, 2, ... */
KVB_API kvb_status kvb_engine_push(kvb_engine* engine, const double* q, const double* k, const double* v);
/* Writes s entries to z; denominator may be NULL. */
KVB_API kvb_status kvb_engine_estimate(const kvb_engine* engine, const double* q, double* z, double* denominator);
KVB_API kvb_status kvb_engine_get_stats(const kvb_engine* engine, kvb_engine_stats* stats);

KVB_API kvb_status kvb_theorem_batch_size(uint64_t n, uint32_t d, double r, double epsilon, double kappa,
                                          uint64_t* t, uint64_t* T, int* no_compression);

/* ---- stream files ------------------------------------------------------- */

typedef enum kvb_value_profile {
  KVB_PROFILE_CONSTANT = 0,
  KVB_PROFILE_LOG_UNIFORM = 1,
  KVB_PROFILE_DYADIC_MIXTURE = 2
} kvb_value_profile;

typedef struct kvb_synthetic_params {
  uint64_t n;
  uint32_t d;
  uint32_t s;
  double r;
  kvb_value_profile profile;
  double value_norm;
  double lo;
  double hi;
  int32_t dyadic_min_exp;
  int32_t dyadic_max_exp;
  uint64_t seed;
} kvb_synthetic_params;

KVB_API void kvb_synthetic_params_default(kvb_synthetic_params* params);
KVB_API kvb_status kvb_parse_value_profile(const char* name, kvb_value_profile* out);
KVB_API kvb_status kvb_generate_file(const kvb_synthetic_params* params, const char* path);

typedef struct kvb_stream kvb_stream;

KVB_API kvb_status kvb_stream_open(const char* path, kvb_stream** out);
KVB_API void kvb_stream_close(kvb_stream* stream);
KVB_API kvb_status kvb_stream_info(const kvb_stream* stream, uint64_t* n, uint32_t* d, uint32_t* s);
/* Copies record i (0-based); any output pointer may be NULL. */
KVB_API kvb_status kvb_stream_record(const kvb_stream* stream, uint64_t i, float* q, float* k, float* v);

/* ---- harness ------------------------------------------------------------ */

/* Runs the experiment described by a key=value config file. `overrides` are
 * extra "key=value" strings applied after the file. CSV lines go to `line`
 * unless the config names an output path. */
KVB_API kvb_status kvb_run_experiment(const char* config_path, const char* const* overrides, size_t n_overrides,
                                      kvb_line_fn line, void* user);

typedef struct kvb_compress_options {
  uint64_t t;
  uint64_t T;
  int strict_half;
  int abort_on_fail;
  double cap_scale;
  uint64_t seed;
  uint64_t sink;
  uint64_t recent;
  double epsilon;
  double delta;
  double r; /* 0: largest key/query norm of the stream */
  int pruning;
} kvb_compress_options;

KVB_API void kvb_compress_options_default(kvb_compress_options* options);
/* Emits the retained-pair CSV (header first). */
KVB_API kvb_status kvb_compress_file(const char* stream_path, const kvb_compress_options* options, kvb_line_fn line,
                                     void* user);
/* Emits one "PASS name: detail" / "FAIL name: detail" line per check;
 * *failures receives the number of failed checks. */
KVB_API kvb_status kvb_verify_file(const char* stream_path, const kvb_compress_options* options, kvb_line_fn line,
                                   void* user, size_t* failures);
/* Sweeps kappa over `kappas` (ascending) with the theorem schedule. Emits one
 * line per point; *kappa receives the chosen value. Returns
 * KVB_ERR_ESTIMATION when no kappa reaches the target pass rate. */
KVB_API kvb_status kvb_calibrate(const char* config_path, const char* const* overrides, size_t n_overrides,
                                 const double* kappas, size_t n_kappas, double target, kvb_line_fn line, void* user,
                                 double* kappa);

#ifdef __cplusplus
}
#endif

#endif /* KVBALANCE_KVBALANCE_H_ */
