#ifndef CLUST3_MODEL_HPP
#define CLUST3_MODEL_HPP

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "checkpoint.hpp"
#include "common.hpp"
#include "optim.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace clust3 {

enum class ProjectorKind { Normal, Large };

struct ModelConfig {
  int in_channels = 1;
  int height = 16;
  int width = 16;
  int num_classes = 8;
  std::array<int, 4> channels = {16, 32, 64, 64};
  std::vector<int> projector_layers = {1, 2};  // 1-based block indices
  int heads_per_layer = 15;
  int clusters = 10;
  ProjectorKind projector_kind = ProjectorKind::Normal;
  bool with_projectors = true;
  float bn_momentum = 0.1f;
  float bn_eps = 1e-5f;
};

template <class T>
struct ProjectorOutput {
  int layer = 0;  // 1-based
  int head = 0;
  Var<T> z;  // row-stochastic (B*H*W) x K
};

template <class T>
struct ForwardResult {
  std::vector<Var<T>> taps;  // one per block, after pooling
  Var<T> logits;             // null if not requested
  std::vector<ProjectorOutput<T>> projections;
};

struct ForwardOptions {
  BnMode bn_mode = BnMode::Eval;
  bool want_logits = true;
  bool want_projectors = true;
  int up_to_block = 4;          // run extractor blocks 1..up_to_block only
  bool update_running = true;   // refresh BN running stats in train mode
};

// Full parameter + BN-statistics copy; restore() makes the model bit-identical
// to its state at snapshot time.
template <class T>
struct ModelSnapshot {
  std::vector<Tensor<T>> param_values;
  std::vector<Tensor<T>> bn_means, bn_vars;
};

enum class TrainMode { Joint, Adapt };

// Feature extractor (4 blocks of conv3x3 -> BN -> ReLU -> avgpool2), global
// average pool classifier, and K-way softmax clustering projectors on the
// configured layer taps.
template <class T>
class Model {
 public:
  Model() = default;

  explicit Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg_.projector_layers.empty() && cfg_.with_projectors)
      throw ConfigError("model: no projector layers configured");
    for (int l : cfg_.projector_layers)
      if (l < 1 || l > 4) throw ConfigError("model: projector layer out of range");
    Rng rng(mix_seed(seed, 0x6d6f64656cULL));
    int cin = cfg_.in_channels;
    for (int b = 0; b < 4; ++b) {
      const int cout = cfg_.channels[static_cast<std::size_t>(b)];
      const std::string prefix = "extractor.block" + std::to_string(b + 1);
      add_param(prefix + ".conv.weight", kaiming_uniform(rng, {cout, cin, 3, 3}, cin * 9));
      add_param(prefix + ".bn.gamma", Tensor<T>::full({cout}, T(1)));
      add_param(prefix + ".bn.beta", Tensor<T>::zeros({cout}));
      bn_[static_cast<std::size_t>(b)].running_mean = Tensor<T>::zeros({cout});
      bn_[static_cast<std::size_t>(b)].running_var = Tensor<T>::full({cout}, T(1));
      cin = cout;
    }
    const int feat = cfg_.channels[3];
    add_param("classifier.linear.weight", kaiming_uniform(rng, {feat, cfg_.num_classes}, feat));
    add_param("classifier.linear.bias", Tensor<T>::zeros({cfg_.num_classes}));
    if (cfg_.with_projectors) {
      for (int l : cfg_.projector_layers) {
        const int c = cfg_.channels[static_cast<std::size_t>(l - 1)];
        for (int h = 0; h < cfg_.heads_per_layer; ++h) {
          const std::string p =
              "projector.l" + std::to_string(l) + ".h" + std::to_string(h);
          if (cfg_.projector_kind == ProjectorKind::Normal) {
            add_param(p + ".map0.weight", kaiming_uniform(rng, {c, cfg_.clusters}, c));
            add_param(p + ".map0.bias", Tensor<T>::zeros({cfg_.clusters}));
          } else {
            const int mid = std::max(1, c / 2);
            add_param(p + ".map0.weight", kaiming_uniform(rng, {c, mid}, c));
            add_param(p + ".map0.bias", Tensor<T>::zeros({mid}));
            add_param(p + ".map1.weight", kaiming_uniform(rng, {mid, cfg_.clusters}, mid));
            add_param(p + ".map1.bias", Tensor<T>::zeros({cfg_.clusters}));
          }
        }
      }
    }
  }

  const ModelConfig& config() const { return cfg_; }
  std::vector<Parameter<T>>& params() { return params_; }
  const std::vector<Parameter<T>>& params() const { return params_; }

  Parameter<T>& param(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("model: unknown parameter " + name);
    return params_[it->second];
  }

  BNState<T>& bn_state(int block) { return bn_[static_cast<std::size_t>(block - 1)]; }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  ForwardResult<T> forward(Tape<T>& tape, const Var<T>& x, const ForwardOptions& opt) {
    if (x->value.shape.size() != 4 || x->value.shape[1] != cfg_.in_channels ||
        x->value.shape[2] != cfg_.height || x->value.shape[3] != cfg_.width)
      throw DimensionError("model.forward: input shape mismatch, got " + shape_str(x->value));
    if (opt.bn_mode == BnMode::Train && x->value.shape[0] < 2)
      throw ContractError("model.forward: batch size must be >= 2 in train mode");

    ForwardResult<T> res;
    Var<T> h = x;
    const int last = std::clamp(opt.up_to_block, 1, 4);
    for (int b = 1; b <= last; ++b) {
      const std::string prefix = "extractor.block" + std::to_string(b);
      h = conv2d(tape, h, param(prefix + ".conv.weight").var, 1, 1);
      h = batchnorm2d(tape, h, param(prefix + ".bn.gamma").var, param(prefix + ".bn.beta").var,
                      bn_state(b), opt.bn_mode, static_cast<T>(cfg_.bn_momentum),
                      static_cast<T>(cfg_.bn_eps), opt.update_running);
      h = relu(tape, h);
      h = avgpool2(tape, h);
      res.taps.push_back(h);
      if (opt.want_projectors && cfg_.with_projectors &&
          std::find(cfg_.projector_layers.begin(), cfg_.projector_layers.end(), b) !=
              cfg_.projector_layers.end()) {
        Var<T> rows = to_rows(tape, h);
        for (int c = 0; c < cfg_.heads_per_layer; ++c) {
          const std::string p = "projector.l" + std::to_string(b) + ".h" + std::to_string(c);
          Var<T> u = matmul(tape, rows, param(p + ".map0.weight").var);
          u = add_rowvec(tape, u, param(p + ".map0.bias").var);
          if (cfg_.projector_kind == ProjectorKind::Large) {
            u = relu(tape, u);
            u = matmul(tape, u, param(p + ".map1.weight").var);
            u = add_rowvec(tape, u, param(p + ".map1.bias").var);
          }
          res.projections.push_back({b, c, softmax_rows(tape, u)});
        }
      }
    }
    if (opt.want_logits && last == 4) {
      Var<T> pooled = global_avg_pool(tape, res.taps.back());
      Var<T> logits = matmul(tape, pooled, param("classifier.linear.weight").var);
      res.logits = add_rowvec(tape, logits, param("classifier.linear.bias").var);
    }
    return res;
  }

  // Joint mode trains everything; adapt mode trains extractor blocks 1..J
  // only, with classifier and projectors frozen.
  std::set<std::string> trainable(TrainMode mode, int J = 4) const {
    if (J < 1 || J > 4) throw ContractError("trainable: J must be in 1..4");
    std::set<std::string> out;
    for (const auto& p : params_) {
      if (mode == TrainMode::Joint) {
        out.insert(p.name);
        continue;
      }
      for (int b = 1; b <= J; ++b)
        if (p.name.rfind("extractor.block" + std::to_string(b) + ".", 0) == 0) out.insert(p.name);
    }
    return out;
  }

  ModelSnapshot<T> snapshot() const {
    ModelSnapshot<T> s;
    for (const auto& p : params_) s.param_values.push_back(p.value());
    for (const auto& b : bn_) {
      s.bn_means.push_back(b.running_mean);
      s.bn_vars.push_back(b.running_var);
    }
    return s;
  }

  void restore(const ModelSnapshot<T>& s) {
    if (s.param_values.size() != params_.size() || s.bn_means.size() != 4)
      throw Error("restore: snapshot/model structure mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!params_[i].value().same_shape(s.param_values[i]))
        throw Error("restore: shape mismatch for " + params_[i].name);
      params_[i].value() = s.param_values[i];
    }
    for (std::size_t b = 0; b < 4; ++b) {
      bn_[b].running_mean = s.bn_means[b];
      bn_[b].running_var = s.bn_vars[b];
    }
  }

  // Checkpoint = parameters + BN running stats + caller-supplied extras
  // (optimizer state, epoch counter, ...).
  void save(const std::string& path, const std::vector<NamedTensor<T>>& extras = {}) const {
    std::vector<NamedTensor<T>> entries;
    for (const auto& p : params_) entries.push_back({p.name, p.value()});
    for (int b = 1; b <= 4; ++b) {
      const std::string prefix = "extractor.block" + std::to_string(b) + ".bn.";
      entries.push_back({prefix + "running_mean", bn_[static_cast<std::size_t>(b - 1)].running_mean});
      entries.push_back({prefix + "running_var", bn_[static_cast<std::size_t>(b - 1)].running_var});
    }
    for (const auto& e : extras) entries.push_back(e);
    save_container(path, entries);
  }

  // Loads parameters and BN stats by name; returns any extra entries.
  std::vector<NamedTensor<T>> load(const std::string& path) {
    auto entries = load_container<T>(path);
    std::vector<NamedTensor<T>> extras;
    for (auto& e : entries) {
      auto it = index_.find(e.name);
      if (it != index_.end()) {
        if (!params_[it->second].value().same_shape(e.tensor))
          throw Error("load: shape mismatch for " + e.name);
        params_[it->second].value() = std::move(e.tensor);
        continue;
      }
      bool is_bn = false;
      for (int b = 1; b <= 4; ++b) {
        const std::string prefix = "extractor.block" + std::to_string(b) + ".bn.";
        if (e.name == prefix + "running_mean") {
          bn_[static_cast<std::size_t>(b - 1)].running_mean = std::move(e.tensor);
          is_bn = true;
        } else if (e.name == prefix + "running_var") {
          bn_[static_cast<std::size_t>(b - 1)].running_var = std::move(e.tensor);
          is_bn = true;
        }
      }
      if (!is_bn) extras.push_back(std::move(e));
    }
    return extras;
  }

 private:
  void add_param(const std::string& name, Tensor<T> value) {
    index_[name] = params_.size();
    params_.emplace_back(name, std::move(value));
  }

  Tensor<T> kaiming_uniform(Rng& rng, std::vector<int> shape, int fan_in) {
    Tensor<T> t(std::move(shape));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
    return t;
  }

  ModelConfig cfg_;
  std::vector<Parameter<T>> params_;
  std::map<std::string, std::size_t> index_;
  std::array<BNState<T>, 4> bn_;
};

}  // namespace clust3

#endif
