/* C API for the clust3 library. All functions return a status code; details
 * of the last failure on the calling thread come from clust3_last_error(). */
#ifndef CLUST3_H
#define CLUST3_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

enum {
  CLUST3_OK = 0,
  CLUST3_ERR_INTERNAL = 1,
  CLUST3_ERR_CONFIG = 2,        /* malformed configuration */
  CLUST3_ERR_MISSING_INPUT = 3  /* required input artifact not found */
};

typedef struct clust3_config clust3_config;

/* Message of the most recent failure on this thread. Never NULL. */
const char* clust3_last_error(void);

/* Built-in default configuration. Free with clust3_config_free. */
clust3_config* clust3_config_default(void);

/* Loads a JSON configuration file. Returns NULL on failure. */
clust3_config* clust3_config_load(const char* path);

/* Dotted-path override, e.g. clust3_config_set(c, "adapt.J", "1"). */
int clust3_config_set(clust3_config* cfg, const char* key, const char* value);

void clust3_config_free(clust3_config* cfg);

/* Pipeline commands. Artifacts land under the config's output_dir. */
int clust3_gen_data(const clust3_config* cfg);
int clust3_train(const clust3_config* cfg);
int clust3_adapt(const clust3_config* cfg);

/* Source test accuracy of the first seed's checkpoint, written to *accuracy. */
int clust3_eval(const clust3_config* cfg, double* accuracy);

/* 1-D equal-mass clustering demo. Writes a CSV when out_csv is non-NULL and
 * reports the entropies (bits) through the optional out pointers. */
int clust3_fig1(const clust3_config* cfg, const char* out_csv, double* source_bits,
                double* target_bits);

/* grid: "layers", "clusters", or "heads". */
int clust3_ablate(const clust3_config* cfg, const char* grid);

/* Aggregates adaptation CSVs into a markdown report. */
int clust3_report(const char* const* csv_paths, size_t n_paths, const char* out_md);

#ifdef __cplusplus
}
#endif

#endif
