#ifndef CLUST3_EXPERIMENT_HPP
#define CLUST3_EXPERIMENT_HPP

#include <string>
#include <vector>

#include "config.hpp"

namespace clust3 {

// Command-level entry points behind the CLI and the C API. All artifact files
// are reproducible byte-for-byte from (config, seed, build).

// Writes the config copy + content hash into the run directory.
void write_run_config(const ExperimentConfig& cfg);

void run_gen_data(const ExperimentConfig& cfg);

// Trains one model per seed; writes checkpoint + JSON-lines training log.
void run_train(const ExperimentConfig& cfg);

// Adaptation sweep over (corruption, method, seed); writes results.csv and
// summary.json under <output_dir>/adapt/.
void run_adapt(const ExperimentConfig& cfg);

// Source test-set accuracy of the first seed's checkpoint.
double run_eval(const ExperimentConfig& cfg);

struct Fig1Result {
  int k = 0;
  double source_bits = 0.0;
  double target_bits = 0.0;
  double delta_bits = 0.0;  // source - target, = Delta-MI under H(Z|X)=0
};
Fig1Result run_fig1(const Fig1Config& cfg, const std::string& out_csv);

// Grid name: "layers", "clusters", or "heads". One CSV row per cell.
void run_ablate(const ExperimentConfig& cfg, const std::string& grid);

// Aggregates existing results CSVs into a markdown summary; never recomputes.
void run_report(const std::vector<std::string>& csv_paths, const std::string& out_md);

// Worker cap for the ablate fan-out; reads CLUST3_THREADS, default 1.
unsigned worker_count();

}  // namespace clust3

#endif
