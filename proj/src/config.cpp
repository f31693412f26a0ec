#include "config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "common.hpp"

namespace clust3 {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw ConfigError("config: unknown key \"" + where + it.key() + "\"");
}

template <class T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

int line_of_offset(const std::string& text, std::size_t byte) {
  int line = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i)
    if (text[i] == '\n') ++line;
  return line;
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  for (const auto& name : all_corruption_names())
    corruptions.push_back({corruption_from_name(name), 5, 1});
  // 0.3 balances cluster usage against assignment confidence at this scale;
  // heavier IM weight drives the heads confident but imbalanced
  for (int layer : model.projector_layers) train.layer_lambda[layer] = 0.3f;
}

nlohmann::json ExperimentConfig::to_json() const {
  json j;
  j["dataset"] = {{"num_classes", dataset.num_classes}, {"height", dataset.height},
                  {"width", dataset.width},             {"channels", dataset.channels},
                  {"train_per_class", dataset.train_per_class},
                  {"test_per_class", dataset.test_per_class},
                  {"seed", dataset.seed}};
  j["model"] = {{"channels", std::vector<int>(model.channels.begin(), model.channels.end())},
                {"projector_layers", model.projector_layers},
                {"heads_per_layer", model.heads_per_layer},
                {"clusters", model.clusters},
                {"projector_kind", model.projector_kind == ProjectorKind::Large ? "large" : "normal"},
                {"with_projectors", model.with_projectors}};
  json lambda = json::object();
  for (const auto& [layer, v] : train.layer_lambda) lambda[std::to_string(layer)] = v;
  j["train"] = {{"epochs", train.epochs},
                {"batch_size", train.batch_size},
                {"lr", train.lr0},
                {"momentum", train.momentum},
                {"weight_decay", train.weight_decay},
                {"milestone_fracs", train.milestone_fracs},
                {"lr_decay", train.lr_decay},
                {"lambda", lambda}};
  j["adapt"] = {{"checkpoints", adapt.checkpoints},
                {"lr", adapt.lr},
                {"batch_size", adapt.batch_size},
                {"J", adapt.J},
                {"max_batches", adapt.max_batches},
                {"methods", adapt_methods},
                {"tent_checkpoints", adapt.tent_checkpoints},
                {"tent_lr", adapt.tent_lr}};
  json corr = json::array();
  for (const auto& c : corruptions)
    corr.push_back({{"kind", corruption_name(c.kind)}, {"severity", c.severity}});
  j["corruptions"] = corr;
  json source = json::array();
  for (const auto& c : fig1.source.components) source.push_back({c.weight, c.mean, c.std});
  j["fig1"] = {{"k", fig1.k}, {"n", fig1.n}, {"shift_stds", fig1.shift_stds},
               {"seed", fig1.seed}, {"source", source}};
  j["seeds"] = seeds;
  j["output_dir"] = output_dir;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig cfg;
  reject_unknown(j, {"dataset", "model", "train", "adapt", "corruptions", "fig1", "seeds",
                     "output_dir"},
                 "");
  if (j.contains("dataset")) {
    const json& d = j.at("dataset");
    reject_unknown(d, {"num_classes", "height", "width", "channels", "train_per_class",
                       "test_per_class", "seed"},
                   "dataset.");
    get_if(d, "num_classes", cfg.dataset.num_classes);
    get_if(d, "height", cfg.dataset.height);
    get_if(d, "width", cfg.dataset.width);
    get_if(d, "channels", cfg.dataset.channels);
    get_if(d, "train_per_class", cfg.dataset.train_per_class);
    get_if(d, "test_per_class", cfg.dataset.test_per_class);
    get_if(d, "seed", cfg.dataset.seed);
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    reject_unknown(m, {"channels", "projector_layers", "heads_per_layer", "clusters",
                       "projector_kind", "with_projectors"},
                   "model.");
    if (m.contains("channels")) {
      auto ch = m.at("channels").get<std::vector<int>>();
      if (ch.size() != 4) throw ConfigError("config: model.channels must have 4 entries");
      std::copy(ch.begin(), ch.end(), cfg.model.channels.begin());
    }
    get_if(m, "projector_layers", cfg.model.projector_layers);
    get_if(m, "heads_per_layer", cfg.model.heads_per_layer);
    get_if(m, "clusters", cfg.model.clusters);
    if (m.contains("projector_kind")) {
      const auto kind = m.at("projector_kind").get<std::string>();
      if (kind == "normal")
        cfg.model.projector_kind = ProjectorKind::Normal;
      else if (kind == "large")
        cfg.model.projector_kind = ProjectorKind::Large;
      else
        throw ConfigError("config: projector_kind must be \"normal\" or \"large\"");
    }
    get_if(m, "with_projectors", cfg.model.with_projectors);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    reject_unknown(t, {"epochs", "batch_size", "lr", "momentum", "weight_decay",
                       "milestone_fracs", "lr_decay", "lambda"},
                   "train.");
    get_if(t, "epochs", cfg.train.epochs);
    get_if(t, "batch_size", cfg.train.batch_size);
    get_if(t, "lr", cfg.train.lr0);
    get_if(t, "momentum", cfg.train.momentum);
    get_if(t, "weight_decay", cfg.train.weight_decay);
    get_if(t, "milestone_fracs", cfg.train.milestone_fracs);
    get_if(t, "lr_decay", cfg.train.lr_decay);
    if (t.contains("lambda"))
      for (auto it = t.at("lambda").begin(); it != t.at("lambda").end(); ++it)
        cfg.train.layer_lambda[std::stoi(it.key())] = it.value().get<float>();
    for (std::size_t i = 1; i < cfg.train.milestone_fracs.size(); ++i)
      if (cfg.train.milestone_fracs[i] <= cfg.train.milestone_fracs[i - 1])
        throw ConfigError("config: milestones must be strictly increasing");
    for (double f : cfg.train.milestone_fracs)
      if (f <= 0.0 || f >= 1.0) throw ConfigError("config: milestone fractions must be in (0,1)");
  }
  if (j.contains("adapt")) {
    const json& a = j.at("adapt");
    reject_unknown(a, {"checkpoints", "lr", "batch_size", "J", "max_batches", "methods",
                       "tent_checkpoints", "tent_lr"},
                   "adapt.");
    get_if(a, "checkpoints", cfg.adapt.checkpoints);
    get_if(a, "lr", cfg.adapt.lr);
    get_if(a, "batch_size", cfg.adapt.batch_size);
    get_if(a, "J", cfg.adapt.J);
    get_if(a, "max_batches", cfg.adapt.max_batches);
    get_if(a, "methods", cfg.adapt_methods);
    get_if(a, "tent_checkpoints", cfg.adapt.tent_checkpoints);
    get_if(a, "tent_lr", cfg.adapt.tent_lr);
    for (std::size_t i = 1; i < cfg.adapt.checkpoints.size(); ++i)
      if (cfg.adapt.checkpoints[i] <= cfg.adapt.checkpoints[i - 1])
        throw ConfigError("config: adapt.checkpoints must be strictly increasing");
    for (const auto& m : cfg.adapt_methods) adapt_method_from_name(m);  // validate
  }
  if (j.contains("corruptions")) {
    cfg.corruptions.clear();
    for (const auto& c : j.at("corruptions")) {
      reject_unknown(c, {"kind", "severity", "seed"}, "corruptions[].");
      CorruptionSpec spec;
      spec.kind = corruption_from_name(c.at("kind").get<std::string>());
      get_if(c, "severity", spec.severity);
      get_if(c, "seed", spec.seed);
      if (spec.severity < 1 || spec.severity > 5)
        throw ConfigError("config: corruption severity must be in 1..5");
      cfg.corruptions.push_back(spec);
    }
  }
  if (j.contains("fig1")) {
    const json& f = j.at("fig1");
    reject_unknown(f, {"k", "n", "shift_stds", "seed", "source"}, "fig1.");
    get_if(f, "k", cfg.fig1.k);
    get_if(f, "n", cfg.fig1.n);
    get_if(f, "shift_stds", cfg.fig1.shift_stds);
    get_if(f, "seed", cfg.fig1.seed);
    if (f.contains("source")) {
      cfg.fig1.source.components.clear();
      for (const auto& c : f.at("source")) {
        if (!c.is_array() || c.size() != 3)
          throw ConfigError("config: fig1.source entries must be [weight, mean, std]");
        cfg.fig1.source.components.push_back({c[0].get<double>(), c[1].get<double>(),
                                              c[2].get<double>()});
      }
    }
  }
  get_if(j, "seeds", cfg.seeds);
  get_if(j, "output_dir", cfg.output_dir);
  if (cfg.seeds.empty()) throw ConfigError("config: seeds must be non-empty");
  return cfg;
}

ExperimentConfig ExperimentConfig::load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("config file not found: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ":" + std::to_string(line_of_offset(text, e.byte)) + ": " + e.what());
  }
  ExperimentConfig cfg;
  try {
    cfg = from_json(j);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  cfg.raw_text = text;
  return cfg;
}

void ExperimentConfig::set(const std::string& dotted_key, const std::string& value) {
  json j = to_json();
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted_key.find('.', start);
    const std::string key = dotted_key.substr(start, dot - start);
    if (key.empty()) throw ConfigError("config: bad override key \"" + dotted_key + "\"");
    if (!node->contains(key))
      throw ConfigError("config: unknown override key \"" + dotted_key + "\"");
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  json parsed = json::parse(value, nullptr, false);
  *node = parsed.is_discarded() ? json(value) : parsed;
  ExperimentConfig updated;
  try {
    updated = from_json(j);
  } catch (const json::exception& e) {
    throw ConfigError("config: bad value for \"" + dotted_key + "\": " + e.what());
  }
  updated.modified = true;
  *this = std::move(updated);
}

std::string ExperimentConfig::render() const {
  if (!modified && !raw_text.empty()) return raw_text;
  return to_json().dump(2) + "\n";
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_hex(const std::string& bytes) {
  static const char* digits = "0123456789abcdef";
  std::uint64_t h = fnv1a64(bytes);
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

}  // namespace clust3
