// Copyright 2026 The kvbalance Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end. Talks to the library through the C API only.

#include <cmath>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "kvbalance/kvbalance.h"

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitFailure = 1;

void print_line(const char* line, void* user) {
  auto* out = static_cast<std::FILE*>(user);
  std::fputs(line, out);
  std::fputc('\n', out);
}

int report(kvb_status status) {
  if (status == KVB_OK) return 0;
  std::cerr << "error (" << kvb_status_name(status) << "): " << kvb_last_error() << "\n";
  return (status == KVB_ERR_CONFIG || status == KVB_ERR_INVALID_ARGUMENT) ? kExitUsage : kExitFailure;
}

std::vector<const char*> c_strings(const std::vector<std::string>& items) {
  std::vector<const char*> out;
  for (const auto& s : items) out.push_back(s.c_str());
  return out;
}

struct CompressFlags {
  kvb_compress_options options{};
  bool strict = false;
  bool abort_on_fail = false;
  bool no_pruning = false;

  void attach(CLI::App* cmd) {
    kvb_compress_options_default(&options);
    cmd->add_option("--t", options.t, "batch size")->capture_default_str();
    cmd->add_option("--T", options.T, "depth (rate 2^-T)")->capture_default_str();
    cmd->add_flag("--strict", strict, "keep exactly floor(n/2) per compression");
    cmd->add_flag("--abort-on-fail", abort_on_fail, "treat a walk failure as an error");
    cmd->add_flag("--no-pruning", no_pruning, "keep every value-norm bucket");
    cmd->add_option("--cap-scale", options.cap_scale, "walk threshold multiplier")->capture_default_str();
    cmd->add_option("--seed", options.seed, "master seed")->capture_default_str();
    cmd->add_option("--sink", options.sink, "leading tokens kept verbatim")->capture_default_str();
    cmd->add_option("--recent", options.recent, "trailing tokens kept verbatim")->capture_default_str();
    cmd->add_option("--epsilon", options.epsilon, "target precision")->capture_default_str();
    cmd->add_option("--delta", options.delta, "failure probability")->capture_default_str();
    cmd->add_option("--r", options.r, "key/query norm bound (0: from stream)")->capture_default_str();
  }

  const kvb_compress_options* finish() {
    options.strict_half = strict ? 1 : 0;
    options.abort_on_fail = abort_on_fail ? 1 : 0;
    options.pruning = no_pruning ? 0 : 1;
    return &options;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kvbalance: streaming attention compression by discrepancy balancing"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kvb_version()));

  // generate
  auto* gen = app.add_subcommand("generate", "write a synthetic stream file");
  kvb_synthetic_params syn;
  kvb_synthetic_params_default(&syn);
  std::string profile = "constant";
  std::string gen_out;
  gen->add_option("--n", syn.n, "tokens")->capture_default_str();
  gen->add_option("--d", syn.d, "key/query dimension")->capture_default_str();
  gen->add_option("--s", syn.s, "value dimension")->capture_default_str();
  gen->add_option("--r", syn.r, "key/query norm bound")->capture_default_str();
  gen->add_option("--profile", profile, "constant | log_uniform | dyadic_mixture")->capture_default_str();
  gen->add_option("--value-norm", syn.value_norm, "constant profile norm")->capture_default_str();
  gen->add_option("--lo", syn.lo, "log_uniform lower norm")->capture_default_str();
  gen->add_option("--hi", syn.hi, "log_uniform upper norm")->capture_default_str();
  gen->add_option("--dyadic-min", syn.dyadic_min_exp, "lowest dyadic band")->capture_default_str();
  gen->add_option("--dyadic-max", syn.dyadic_max_exp, "highest dyadic band")->capture_default_str();
  gen->add_option("--seed", syn.seed, "generator seed")->capture_default_str();
  gen->add_option("-o,--out", gen_out, "output stream file")->required();

  // run
  auto* run = app.add_subcommand("run", "run an experiment from a config file");
  std::string run_config;
  std::vector<std::string> run_sets;
  std::string run_output;
  std::string run_json;
  std::size_t run_threads = 0;
  run->add_option("config", run_config, "key=value config file")->required();
  run->add_option("--set", run_sets, "override a config key (key=value)");
  run->add_option("-o,--output", run_output, "CSV report path (default: stdout)");
  run->add_option("--json", run_json, "also write a JSON report");
  run->add_option("--threads", run_threads, "worker threads (default: KVB_THREADS or all cores)");

  // compress
  auto* comp = app.add_subcommand("compress", "list the pairs BalanceKV retains for a stream");
  std::string comp_stream;
  CompressFlags comp_flags;
  comp->add_option("stream", comp_stream, "stream file")->required();
  comp_flags.attach(comp);

  // verify
  auto* ver = app.add_subcommand("verify", "run the invariant suite on a stream");
  std::string ver_stream;
  CompressFlags ver_flags;
  ver->add_option("stream", ver_stream, "stream file")->required();
  ver_flags.attach(ver);

  // calibrate
  auto* cal = app.add_subcommand("calibrate", "sweep kappa for the theorem batch size");
  std::string cal_config;
  std::vector<std::string> cal_sets;
  std::vector<double> kappas;
  double target = 0.9;
  cal->add_option("config", cal_config, "key=value config file")->required();
  cal->add_option("--set", cal_sets, "override a config key (key=value)");
  cal->add_option("--kappa", kappas, "candidate kappas (default: 0.05 * 2^k, k = -8..2)");
  cal->add_option("--target", target, "required pass rate")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  if (*gen) {
    if (kvb_parse_value_profile(profile.c_str(), &syn.profile) != KVB_OK) return report(KVB_ERR_INVALID_ARGUMENT);
    return report(kvb_generate_file(&syn, gen_out.c_str()));
  }
  if (*run) {
    if (!run_output.empty()) run_sets.push_back("output=" + run_output);
    if (!run_json.empty()) run_sets.push_back("json_output=" + run_json);
    if (run_threads) run_sets.push_back("threads=" + std::to_string(run_threads));
    const auto sets = c_strings(run_sets);
    return report(kvb_run_experiment(run_config.c_str(), sets.data(), sets.size(), print_line, stdout));
  }
  if (*comp) {
    return report(kvb_compress_file(comp_stream.c_str(), comp_flags.finish(), print_line, stdout));
  }
  if (*ver) {
    std::size_t failures = 0;
    const int code = report(kvb_verify_file(ver_stream.c_str(), ver_flags.finish(), print_line, stdout, &failures));
    if (code != 0) return code;
    return failures == 0 ? 0 : kExitFailure;
  }
  if (*cal) {
    if (kappas.empty()) {
      for (int k = -8; k <= 2; ++k) kappas.push_back(0.05 * std::ldexp(1.0, k));
    }
    const auto sets = c_strings(cal_sets);
    double chosen = 0.0;
    const int code = report(kvb_calibrate(cal_config.c_str(), sets.data(), sets.size(), kappas.data(), kappas.size(),
                                          target, print_line, stdout, &chosen));
    if (code != 0) return code;
    std::printf("kappa=%.17g\n", chosen);
    return 0;
  }
  return kExitUsage;
}
