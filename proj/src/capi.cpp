#include "clust3.h"

#include <string>

#include "common.hpp"
#include "experiment.hpp"

using namespace clust3;

struct clust3_config {
  ExperimentConfig cfg;
};

namespace {

thread_local std::string g_last_error = "no error";

int translate(const Error& e) {
  g_last_error = e.what();
  if (dynamic_cast<const ConfigError*>(&e)) return CLUST3_ERR_CONFIG;
  if (dynamic_cast<const MissingInputError*>(&e)) return CLUST3_ERR_MISSING_INPUT;
  return CLUST3_ERR_INTERNAL;
}

template <class Fn>
int guarded(Fn&& fn) {
  try {
    fn();
    return CLUST3_OK;
  } catch (const Error& e) {
    return translate(e);
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return CLUST3_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return CLUST3_ERR_INTERNAL;
  }
}

}  // namespace

extern "C" {

const char* clust3_last_error(void) { return g_last_error.c_str(); }

clust3_config* clust3_config_default(void) {
  try {
    return new clust3_config{};
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return nullptr;
  }
}

clust3_config* clust3_config_load(const char* path) {
  if (!path) {
    g_last_error = "clust3_config_load: path is NULL";
    return nullptr;
  }
  clust3_config* out = nullptr;
  const int rc = guarded([&] { out = new clust3_config{ExperimentConfig::load_file(path)}; });
  return rc == CLUST3_OK ? out : nullptr;
}

int clust3_config_set(clust3_config* cfg, const char* key, const char* value) {
  if (!cfg || !key || !value) {
    g_last_error = "clust3_config_set: NULL argument";
    return CLUST3_ERR_CONFIG;
  }
  return guarded([&] { cfg->cfg.set(key, value); });
}

void clust3_config_free(clust3_config* cfg) { delete cfg; }

int clust3_gen_data(const clust3_config* cfg) {
  if (!cfg) {
    g_last_error = "clust3_gen_data: cfg is NULL";
    return CLUST3_ERR_CONFIG;
  }
  return guarded([&] { run_gen_data(cfg->cfg); });
}

int clust3_train(const clust3_config* cfg) {
  if (!cfg) {
    g_last_error = "clust3_train: cfg is NULL";
    return CLUST3_ERR_CONFIG;
  }
  return guarded([&] { run_train(cfg->cfg); });
}

int clust3_adapt(const clust3_config* cfg) {
  if (!cfg) {
    g_last_error = "clust3_adapt: cfg is NULL";
    return CLUST3_ERR_CONFIG;
  }
  return guarded([&] { run_adapt(cfg->cfg); });
}

int clust3_eval(const clust3_config* cfg, double* accuracy) {
  if (!cfg) {
    g_last_error = "clust3_eval: cfg is NULL";
    return CLUST3_ERR_CONFIG;
  }
  return guarded([&] {
    const double acc = run_eval(cfg->cfg);
    if (accuracy) *accuracy = acc;
  });
}

int clust3_fig1(const clust3_config* cfg, const char* out_csv, double* source_bits,
                double* target_bits) {
  if (!cfg) {
    g_last_error = "clust3_fig1: cfg is NULL";
    return CLUST3_ERR_CONFIG;
  }
  return guarded([&] {
    const Fig1Result res = run_fig1(cfg->cfg.fig1, out_csv ? out_csv : "");
    if (source_bits) *source_bits = res.source_bits;
    if (target_bits) *target_bits = res.target_bits;
  });
}

int clust3_ablate(const clust3_config* cfg, const char* grid) {
  if (!cfg || !grid) {
    g_last_error = "clust3_ablate: NULL argument";
    return CLUST3_ERR_CONFIG;
  }
  return guarded([&] { run_ablate(cfg->cfg, grid); });
}

int clust3_report(const char* const* csv_paths, size_t n_paths, const char* out_md) {
  if (!csv_paths || !out_md) {
    g_last_error = "clust3_report: NULL argument";
    return CLUST3_ERR_CONFIG;
  }
  return guarded([&] {
    std::vector<std::string> paths;
    paths.reserve(n_paths);
    for (size_t i = 0; i < n_paths; ++i) paths.emplace_back(csv_paths[i]);
    run_report(paths, out_md);
  });
}

}  // extern "C"
