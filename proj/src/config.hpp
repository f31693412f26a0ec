#ifndef CLUST3_CONFIG_HPP
#define CLUST3_CONFIG_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "adapt.hpp"
#include "data.hpp"
#include "model.hpp"
#include "train.hpp"

namespace clust3 {

struct Fig1Config {
  int k = 10;
  std::int64_t n = 100000;
  double shift_stds = 1.5;
  std::uint64_t seed = 1;
  GaussianMixture source = {{{0.6, -1.0, 1.0}, {0.4, 1.5, 0.8}}};
};

// Everything one run needs. JSON round-trippable; unknown keys are rejected.
struct ExperimentConfig {
  DatasetSpec dataset;
  ModelConfig model;
  TrainConfig train;
  AdaptConfig adapt;
  std::vector<std::string> adapt_methods = {"source", "ptbn", "tent", "clust3"};
  std::vector<CorruptionSpec> corruptions;  // defaults to all five at severity 5
  Fig1Config fig1;
  std::vector<std::uint64_t> seeds = {1};
  std::string output_dir = "runs/default";

  // Original file bytes when loaded without overrides; used for the verbatim
  // config copy in the run directory.
  std::string raw_text;
  bool modified = false;

  ExperimentConfig();

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load_file(const std::string& path);

  // Dotted-path override, e.g. set("adapt.J", "1"). The value is parsed as
  // JSON when possible, else taken as a string.
  void set(const std::string& dotted_key, const std::string& value);

  // Serialized form actually written into run directories.
  std::string render() const;
};

std::uint64_t fnv1a64(const std::string& bytes);
std::string hash_hex(const std::string& bytes);

}  // namespace clust3

#endif
