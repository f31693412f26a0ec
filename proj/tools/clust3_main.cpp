// Command-line front end. Talks to the library exclusively through the C API.
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "clust3.h"

namespace {

struct ConfigDeleter {
  void operator()(clust3_config* c) const { clust3_config_free(c); }
};
using ConfigPtr = std::unique_ptr<clust3_config, ConfigDeleter>;

int fail(int rc) {
  std::fprintf(stderr, "error: %s\n", clust3_last_error());
  return rc;
}

// Loads --config if given (else defaults) and applies --set overrides.
// On failure prints the error and returns NULL with *rc set.
ConfigPtr build_config(const std::string& config_path, const std::vector<std::string>& sets,
                       int* rc) {
  ConfigPtr cfg(config_path.empty() ? clust3_config_default()
                                    : clust3_config_load(config_path.c_str()));
  if (!cfg) {
    *rc = fail(config_path.empty() ? CLUST3_ERR_INTERNAL : CLUST3_ERR_CONFIG);
    return nullptr;
  }
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      std::fprintf(stderr, "error: --set expects key=value, got \"%s\"\n", kv.c_str());
      *rc = CLUST3_ERR_CONFIG;
      return nullptr;
    }
    const int r =
        clust3_config_set(cfg.get(), kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str());
    if (r != CLUST3_OK) {
      *rc = fail(r);
      return nullptr;
    }
  }
  *rc = CLUST3_OK;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Test-time training by clustering-projector mutual information"};
  app.require_subcommand(1);
  app.fallthrough();  // --config/--set may follow the subcommand

  std::string config_path;
  std::vector<std::string> sets;
  app.add_option("--config", config_path, "JSON configuration file")->capture_default_str();
  app.add_option("--set", sets, "Override a config value, key=value (repeatable)");

  auto* cmd_gen = app.add_subcommand("gen-data", "Generate the synthetic train/test datasets");
  auto* cmd_train = app.add_subcommand("train", "Joint source training, one model per seed");
  auto* cmd_adapt = app.add_subcommand("adapt", "Adaptation sweep over corruptions and methods");
  auto* cmd_eval = app.add_subcommand("eval", "Source test accuracy of a trained checkpoint");

  auto* cmd_fig1 = app.add_subcommand("fig1", "1-D equal-mass clustering entropy demo");
  std::string fig1_out = "fig1.csv";
  long fig1_k = -1, fig1_n = -1, fig1_seed = -1;
  double fig1_shift = -1.0;
  cmd_fig1->add_option("--out", fig1_out, "Output CSV path")->capture_default_str();
  cmd_fig1->add_option("--k", fig1_k, "Number of clusters");
  cmd_fig1->add_option("--n", fig1_n, "Sample count");
  cmd_fig1->add_option("--seed", fig1_seed, "RNG seed");
  cmd_fig1->add_option("--shift", fig1_shift, "Target shift in mixture standard deviations");

  auto* cmd_ablate = app.add_subcommand("ablate", "Sweep one model hyperparameter grid");
  std::string grid;
  cmd_ablate->add_option("--grid", grid, "Grid name: layers, clusters, or heads")->required();

  auto* cmd_report = app.add_subcommand("report", "Aggregate adaptation CSVs into markdown");
  std::vector<std::string> report_inputs;
  std::string report_out = "report.md";
  cmd_report->add_option("inputs", report_inputs, "results.csv files")->required();
  cmd_report->add_option("--out", report_out, "Output markdown path")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int r = app.exit(e);
    return r == 0 ? 0 : CLUST3_ERR_CONFIG;
  }

  if (cmd_report->parsed()) {
    std::vector<const char*> ptrs;
    for (const auto& p : report_inputs) ptrs.push_back(p.c_str());
    const int rc = clust3_report(ptrs.data(), ptrs.size(), report_out.c_str());
    if (rc != CLUST3_OK) return fail(rc);
    std::printf("wrote %s\n", report_out.c_str());
    return 0;
  }

  int rc = CLUST3_OK;
  ConfigPtr cfg = build_config(config_path, sets, &rc);
  if (!cfg) return rc;

  if (cmd_fig1->parsed()) {
    // flag overrides piggyback on the config override machinery
    auto override_num = [&](const char* key, double v, bool integral) {
      const std::string s = integral ? std::to_string(static_cast<long long>(v))
                                     : std::to_string(v);
      return clust3_config_set(cfg.get(), key, s.c_str());
    };
    if (fig1_k >= 0 && override_num("fig1.k", static_cast<double>(fig1_k), true)) return fail(CLUST3_ERR_CONFIG);
    if (fig1_n >= 0 && override_num("fig1.n", static_cast<double>(fig1_n), true)) return fail(CLUST3_ERR_CONFIG);
    if (fig1_seed >= 0 && override_num("fig1.seed", static_cast<double>(fig1_seed), true)) return fail(CLUST3_ERR_CONFIG);
    if (fig1_shift >= 0.0 && override_num("fig1.shift_stds", fig1_shift, false)) return fail(CLUST3_ERR_CONFIG);
    double source_bits = 0.0, target_bits = 0.0;
    const int r = clust3_fig1(cfg.get(), fig1_out.c_str(), &source_bits, &target_bits);
    if (r != CLUST3_OK) return fail(r);
    std::printf("source entropy %.4f bits, shifted target %.4f bits (drop %.4f)\n", source_bits,
                target_bits, source_bits - target_bits);
    return 0;
  }

  if (cmd_gen->parsed()) {
    const int r = clust3_gen_data(cfg.get());
    return r == CLUST3_OK ? 0 : fail(r);
  }
  if (cmd_train->parsed()) {
    const int r = clust3_train(cfg.get());
    return r == CLUST3_OK ? 0 : fail(r);
  }
  if (cmd_adapt->parsed()) {
    const int r = clust3_adapt(cfg.get());
    return r == CLUST3_OK ? 0 : fail(r);
  }
  if (cmd_eval->parsed()) {
    double acc = 0.0;
    const int r = clust3_eval(cfg.get(), &acc);
    if (r != CLUST3_OK) return fail(r);
    std::printf("test accuracy %.4f\n", acc);
    return 0;
  }
  if (cmd_ablate->parsed()) {
    const int r = clust3_ablate(cfg.get(), grid.c_str());
    return r == CLUST3_OK ? 0 : fail(r);
  }
  return CLUST3_ERR_INTERNAL;
}
