#include "experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "losses.hpp"
#include "rng.hpp"

namespace fs = std::filesystem;

namespace clust3 {

namespace {

std::string fmt(double v, int prec = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
  return buf;
}

void write_file(const std::string& path, const std::string& content) {
  const fs::path dir = fs::path(path).parent_path();
  if (!dir.empty()) fs::create_directories(dir);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingInputError("cannot open for writing: " + path);
  out << content;
  if (!out) throw Error("write failed: " + path);
}

std::string data_path(const ExperimentConfig& cfg, const char* split) {
  return cfg.output_dir + "/data/" + split + ".bin";
}

std::string checkpoint_path(const ExperimentConfig& cfg, std::uint64_t seed) {
  return cfg.output_dir + "/train/seed" + std::to_string(seed) + "/checkpoint.bin";
}

Dataset load_required(const std::string& path) {
  if (!fs::exists(path)) throw MissingInputError("missing input: " + path + " (run gen-data first)");
  return load_dataset(path);
}

Model<float> load_model(const ExperimentConfig& cfg, std::uint64_t seed) {
  Model<float> model(cfg.model, seed);
  const std::string path = checkpoint_path(cfg, seed);
  if (!fs::exists(path)) throw MissingInputError("missing input: " + path + " (run train first)");
  model.load(path);
  return model;
}

// Seeded test-stream order, shared by every corruption and method of a run so
// comparisons are paired.
std::vector<std::vector<std::size_t>> stream_batches(const Dataset& test, const AdaptConfig& acfg,
                                                     std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x73747265616dULL));
  auto perm = rng.permutation(test.count());
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < perm.size(); start += static_cast<std::size_t>(acfg.batch_size)) {
    if (acfg.max_batches > 0 && batches.size() >= static_cast<std::size_t>(acfg.max_batches)) break;
    const std::size_t end = std::min(perm.size(), start + static_cast<std::size_t>(acfg.batch_size));
    if (end - start < 2) break;
    batches.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(start),
                         perm.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

struct AdaptCell {
  std::string corruption;
  int severity = 0;
  std::uint64_t seed = 0;
  std::string method;
  StreamResult result;
};

std::string train_log_to_json(const std::vector<EpochLog>& logs, double final_test_acc,
                              const ProjectorEntropy& pe) {
  std::string out;
  for (const auto& l : logs) {
    nlohmann::json j = {{"epoch", l.epoch},
                        {"lr", l.lr},
                        {"ce", l.ce},
                        {"im_mean", l.im_mean},
                        {"total", l.total},
                        {"train_accuracy", l.train_accuracy},
                        {"test_accuracy", l.test_accuracy}};
    out += j.dump() + "\n";
  }
  nlohmann::json fin = {{"final", true},
                        {"test_accuracy", final_test_acc},
                        {"mean_h_marg", pe.mean_h_marg},
                        {"mean_h_cond", pe.mean_h_cond}};
  out += fin.dump() + "\n";
  return out;
}

}  // namespace

unsigned worker_count() {
  const char* env = std::getenv("CLUST3_THREADS");
  if (!env) return 1;
  const long n = std::strtol(env, nullptr, 10);
  return n < 1 ? 1u : static_cast<unsigned>(n);
}

void write_run_config(const ExperimentConfig& cfg) {
  const std::string text = cfg.render();
  write_file(cfg.output_dir + "/config.json", text);
  write_file(cfg.output_dir + "/config.hash", hash_hex(text) + "\n");
}

void run_gen_data(const ExperimentConfig& cfg) {
  write_run_config(cfg);
  fs::create_directories(cfg.output_dir + "/data");
  save_dataset(data_path(cfg, "train"), generate_train(cfg.dataset));
  save_dataset(data_path(cfg, "test"), generate_test(cfg.dataset));
}

void run_train(const ExperimentConfig& cfg) {
  write_run_config(cfg);
  const Dataset train = load_required(data_path(cfg, "train"));
  const Dataset test = load_required(data_path(cfg, "test"));
  for (std::uint64_t seed : cfg.seeds) {
    Model<float> model(cfg.model, seed);
    TrainConfig tcfg = cfg.train;
    tcfg.seed = seed;
    SgdMomentum<float> opt;
    opt.lr = static_cast<float>(tcfg.lr0);
    auto logs = joint_train(model, train, test, tcfg, opt);
    const std::string dir = cfg.output_dir + "/train/seed" + std::to_string(seed);
    fs::create_directories(dir);
    save_train_checkpoint(dir + "/checkpoint.bin", model, opt, tcfg.epochs);
    const double final_acc = logs.empty() ? evaluate(model, test).accuracy : logs.back().test_accuracy;
    write_file(dir + "/log.json",
               train_log_to_json(logs, final_acc, projector_entropy(model, test)));
  }
}

void run_adapt(const ExperimentConfig& cfg) {
  write_run_config(cfg);
  const Dataset test = load_required(data_path(cfg, "test"));
  std::vector<AdaptCell> cells;

  for (std::uint64_t seed : cfg.seeds) {
    Model<float> model = load_model(cfg, seed);
    const auto batch_indices = stream_batches(test, cfg.adapt, seed);
    for (const auto& corr : cfg.corruptions) {
      std::vector<float> corrupted = test.images;
      apply_corruption(corrupted, test.image_size(), corr);
      std::vector<Tensor<float>> batches;
      std::vector<std::vector<int>> labels;
      for (const auto& idx : batch_indices) {
        batches.push_back(make_batch_from(corrupted, test.image_size(), test.channels, test.height,
                                          test.width, idx));
        std::vector<int> l(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) l[i] = test.labels[idx[i]];
        labels.push_back(std::move(l));
      }
      for (const auto& method_name : cfg.adapt_methods) {
        AdaptCell cell;
        cell.corruption = corruption_name(corr.kind);
        cell.severity = corr.severity;
        cell.seed = seed;
        cell.method = method_name;
        cell.result = run_stream(model, batches, labels, adapt_method_from_name(method_name),
                                 cfg.adapt);
        cells.push_back(std::move(cell));
      }
    }
  }

  std::string csv = "corruption,severity,checkpoint,method,seed,accuracy,im_loss_before,im_loss_after\n";
  for (const auto& c : cells) {
    const double im0 = c.result.mean_im_at.count(0) ? c.result.mean_im_at.at(0) : 0.0;
    for (int ck : c.result.checkpoints) {
      csv += c.corruption + "," + std::to_string(c.severity) + "," + std::to_string(ck) + "," +
             c.method + "," + std::to_string(c.seed) + "," + fmt(c.result.accuracy_at.at(ck)) +
             "," + fmt(im0) + "," + fmt(c.result.mean_im_at.at(ck)) + "\n";
    }
    csv += c.corruption + "," + std::to_string(c.severity) + ",max," + c.method + "," +
           std::to_string(c.seed) + "," + fmt(c.result.max_accuracy) + "," + fmt(im0) + "," +
           fmt(c.result.mean_im_at.at(c.result.best_checkpoint)) + "\n";
  }
  write_file(cfg.output_dir + "/adapt/results.csv", csv);

  // summary: per-method mean of max-checkpoint accuracy over corruptions/seeds
  nlohmann::json summary;
  std::map<std::string, std::pair<double, int>> method_acc;
  for (const auto& c : cells) {
    auto& [sum, n] = method_acc[c.method];
    sum += c.result.max_accuracy;
    ++n;
  }
  for (const auto& [method, acc] : method_acc)
    summary["mean_max_accuracy"][method] = acc.first / acc.second;
  for (const auto& c : cells)
    summary["max_accuracy"][c.corruption][c.method]["seed" + std::to_string(c.seed)] =
        c.result.max_accuracy;
  // per-episode IM trajectory at the recorded checkpoints, for diagnostics
  for (const auto& c : cells) {
    if (c.method != "clust3") continue;
    nlohmann::json eps = nlohmann::json::array();
    for (const auto& e : c.result.episodes) {
      nlohmann::json im = nlohmann::json::object();
      for (const auto& [ck, v] : e.im_at) im[std::to_string(ck)] = v;
      eps.push_back({{"im_at", im}, {"nan_fallback", e.nan_fallback}});
    }
    summary["episodes"][c.corruption][c.method]["seed" + std::to_string(c.seed)] = std::move(eps);
  }
  write_file(cfg.output_dir + "/adapt/summary.json", summary.dump(2) + "\n");
}

double run_eval(const ExperimentConfig& cfg) {
  const Dataset test = load_required(data_path(cfg, "test"));
  Model<float> model = load_model(cfg, cfg.seeds.front());
  const EvalResult res = evaluate(model, test);
  nlohmann::json j = {{"accuracy", res.accuracy}, {"per_class_accuracy", res.per_class_accuracy}};
  write_file(cfg.output_dir + "/eval.json", j.dump(2) + "\n");
  return res.accuracy;
}

Fig1Result run_fig1(const Fig1Config& cfg, const std::string& out_csv) {
  const auto source_samples = sample_mixture(cfg.source, static_cast<std::size_t>(cfg.n), cfg.seed);
  const auto boundaries = quantile_boundaries(source_samples, cfg.k);

  GaussianMixture target = cfg.source;
  const double shift = cfg.shift_stds * cfg.source.mixture_std();
  for (auto& comp : target.components) comp.mean += shift;
  const auto target_samples =
      sample_mixture(target, static_cast<std::size_t>(cfg.n), mix_seed(cfg.seed, 0x746172676574ULL));

  Fig1Result res;
  res.k = cfg.k;
  res.source_bits = clustering_entropy_bits(boundaries, source_samples);
  res.target_bits = clustering_entropy_bits(boundaries, target_samples);
  res.delta_bits = res.source_bits - res.target_bits;
  if (!out_csv.empty()) {
    std::string csv = "k,source_entropy_bits,target_entropy_bits,delta_bits\n";
    csv += std::to_string(res.k) + "," + fmt(res.source_bits) + "," + fmt(res.target_bits) + "," +
           fmt(res.delta_bits) + "\n";
    write_file(out_csv, csv);
  }
  return res;
}

namespace {

struct AblateRow {
  std::string cell;
  double source_test_accuracy = 0.0;
  double unadapted_accuracy = 0.0;
  double adapted_max_accuracy = 0.0;
};

AblateRow run_ablate_cell(const ExperimentConfig& cfg, const std::string& cell_label,
                          const Dataset& train, const Dataset& test) {
  const std::uint64_t seed = cfg.seeds.front();
  Model<float> model(cfg.model, seed);
  TrainConfig tcfg = cfg.train;
  tcfg.seed = seed;
  SgdMomentum<float> opt;
  joint_train(model, train, test, tcfg, opt);

  AblateRow row;
  row.cell = cell_label;
  row.source_test_accuracy = evaluate(model, test).accuracy;

  const auto batch_indices = stream_batches(test, cfg.adapt, seed);
  double adapted = 0.0, unadapted = 0.0;
  for (const auto& corr : cfg.corruptions) {
    std::vector<float> corrupted = test.images;
    apply_corruption(corrupted, test.image_size(), corr);
    std::vector<Tensor<float>> batches;
    std::vector<std::vector<int>> labels;
    for (const auto& idx : batch_indices) {
      batches.push_back(make_batch_from(corrupted, test.image_size(), test.channels, test.height,
                                        test.width, idx));
      std::vector<int> l(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) l[i] = test.labels[idx[i]];
      labels.push_back(std::move(l));
    }
    adapted += run_stream(model, batches, labels, AdaptMethod::Clust3, cfg.adapt).max_accuracy;
    unadapted += run_stream(model, batches, labels, AdaptMethod::Source, cfg.adapt).accuracy_at.at(0);
  }
  if (!cfg.corruptions.empty()) {
    adapted /= static_cast<double>(cfg.corruptions.size());
    unadapted /= static_cast<double>(cfg.corruptions.size());
  }
  row.adapted_max_accuracy = adapted;
  row.unadapted_accuracy = unadapted;
  return row;
}

}  // namespace

void run_ablate(const ExperimentConfig& cfg, const std::string& grid) {
  write_run_config(cfg);
  struct Cell {
    std::string label;
    ExperimentConfig cfg;
  };
  std::vector<Cell> cells;
  if (grid == "layers") {
    for (const auto& layers : std::vector<std::vector<int>>{{1}, {2}, {1, 2}, {1, 2, 3, 4}}) {
      Cell c{"", cfg};
      c.cfg.model.projector_layers = layers;
      for (std::size_t i = 0; i < layers.size(); ++i)
        c.label += (i ? "-" : "") + std::to_string(layers[i]);
      cells.push_back(std::move(c));
    }
  } else if (grid == "clusters") {
    for (int k : {2, 5, 10, 20}) {
      Cell c{std::to_string(k), cfg};
      c.cfg.model.clusters = k;
      cells.push_back(std::move(c));
    }
  } else if (grid == "heads") {
    for (int h : {1, 5, 10, 15}) {
      Cell c{std::to_string(h), cfg};
      c.cfg.model.heads_per_layer = h;
      cells.push_back(std::move(c));
    }
  } else {
    throw ConfigError("unknown ablate grid: " + grid + " (want layers, clusters, or heads)");
  }

  const Dataset train = generate_train(cfg.dataset);
  const Dataset test = generate_test(cfg.dataset);

  std::vector<AblateRow> rows(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= cells.size()) return;
      rows[i] = run_ablate_cell(cells[i].cfg, cells[i].label, train, test);
    }
  };
  const unsigned n_workers = std::min<unsigned>(worker_count(), static_cast<unsigned>(cells.size()));
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (unsigned t = 0; t < n_workers; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }

  // rows are written in cell order regardless of scheduling
  std::string csv = "grid,cell,source_test_accuracy,unadapted_accuracy,adapted_max_accuracy\n";
  for (const auto& r : rows)
    csv += grid + "," + r.cell + "," + fmt(r.source_test_accuracy) + "," +
           fmt(r.unadapted_accuracy) + "," + fmt(r.adapted_max_accuracy) + "\n";
  write_file(cfg.output_dir + "/ablate/" + grid + ".csv", csv);
}

void run_report(const std::vector<std::string>& csv_paths, const std::string& out_md) {
  // aggregate max-checkpoint rows of adapt results CSVs
  std::map<std::string, std::map<std::string, std::pair<double, int>>> table;  // corruption -> method
  std::set<std::string> methods;
  for (const auto& path : csv_paths) {
    std::ifstream in(path);
    if (!in) throw MissingInputError("missing input: " + path);
    std::string line;
    if (!std::getline(in, line)) throw Error("empty CSV: " + path);
    std::vector<std::string> header;
    {
      std::stringstream ss(line);
      std::string field;
      while (std::getline(ss, field, ',')) header.push_back(field);
    }
    auto col = [&](const std::string& name) {
      const auto it = std::find(header.begin(), header.end(), name);
      if (it == header.end()) throw Error(path + ": missing column " + name);
      return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t c_corr = col("corruption"), c_ck = col("checkpoint"),
                      c_method = col("method"), c_acc = col("accuracy");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<std::string> fields;
      std::stringstream ss(line);
      std::string field;
      while (std::getline(ss, field, ',')) fields.push_back(field);
      if (fields.size() != header.size()) throw Error(path + ": ragged CSV row");
      if (fields[c_ck] != "max") continue;
      auto& [sum, n] = table[fields[c_corr]][fields[c_method]];
      sum += std::stod(fields[c_acc]);
      ++n;
      methods.insert(fields[c_method]);
    }
  }
  if (table.empty()) throw Error("report: no max-checkpoint rows found in inputs");

  std::string md = "# Adaptation results (max-checkpoint accuracy, mean over seeds)\n\n";
  md += "| corruption |";
  for (const auto& m : methods) md += " " + m + " |";
  md += "\n|---|";
  for (std::size_t i = 0; i < methods.size(); ++i) md += "---|";
  md += "\n";
  std::map<std::string, std::pair<double, int>> totals;
  for (const auto& [corr, row] : table) {
    md += "| " + corr + " |";
    for (const auto& m : methods) {
      auto it = row.find(m);
      if (it == row.end()) {
        md += " - |";
      } else {
        const double mean = it->second.first / it->second.second;
        md += " " + fmt(mean, 4) + " |";
        auto& [sum, n] = totals[m];
        sum += mean;
        ++n;
      }
    }
    md += "\n";
  }
  md += "| **mean** |";
  for (const auto& m : methods) {
    auto it = totals.find(m);
    md += it == totals.end() ? " - |" : " " + fmt(it->second.first / it->second.second, 4) + " |";
  }
  md += "\n";
  write_file(out_md, md);
}

}  // namespace clust3
