#include "train.hpp"

#include <cmath>
#include <cstring>

#include "losses.hpp"
#include "rng.hpp"

namespace clust3 {

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  double lr = cfg.lr0;
  for (double f : cfg.milestone_fracs) {
    const int milestone = static_cast<int>(std::ceil(f * cfg.epochs));
    if (epoch >= milestone) lr *= cfg.lr_decay;
  }
  return lr;
}

Tensor<float> make_batch_from(const std::vector<float>& images, std::size_t image_size, int channels,
                              int height, int width, const std::vector<std::size_t>& indices) {
  Tensor<float> x({static_cast<int>(indices.size()), channels, height, width});
  for (std::size_t i = 0; i < indices.size(); ++i)
    std::memcpy(x.data.data() + i * image_size, images.data() + indices[i] * image_size,
                image_size * sizeof(float));
  return x;
}

Tensor<float> make_batch(const Dataset& ds, const std::vector<std::size_t>& indices) {
  return make_batch_from(ds.images, ds.image_size(), ds.channels, ds.height, ds.width, indices);
}

std::vector<int> argmax_rows(const Tensor<float>& logits) {
  const int n = logits.shape[0], k = logits.shape[1];
  std::vector<int> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    int best = 0;
    for (int j = 1; j < k; ++j)
      if (logits.at2(i, j) > logits.at2(i, best)) best = j;
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

EvalResult evaluate_buffer(Model<float>& model, const std::vector<float>& images,
                           const std::vector<std::uint16_t>& labels, int channels, int height,
                           int width, int num_classes, int batch_size, BnMode bn_mode) {
  const std::size_t image_size = static_cast<std::size_t>(channels) * height * width;
  EvalResult res;
  res.per_class_accuracy.assign(static_cast<std::size_t>(num_classes), 0.0);
  std::vector<std::size_t> class_total(static_cast<std::size_t>(num_classes), 0);
  std::size_t correct = 0;
  Tape<float> tape;
  for (std::size_t start = 0; start < labels.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(labels.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> idx(end - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    Var<float> x = make_var(make_batch_from(images, image_size, channels, height, width, idx));
    ForwardOptions opt;
    opt.bn_mode = bn_mode;
    opt.want_projectors = false;
    opt.update_running = false;
    auto fwd = model.forward(tape, x, opt);
    auto preds = argmax_rows(fwd.logits->value);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const int label = labels[idx[i]];
      ++class_total[static_cast<std::size_t>(label)];
      if (preds[i] == label) {
        ++correct;
        res.per_class_accuracy[static_cast<std::size_t>(label)] += 1.0;
      }
      res.predictions.push_back(preds[i]);
    }
    tape.clear();
  }
  res.accuracy = labels.empty() ? 0.0 : static_cast<double>(correct) / labels.size();
  for (int c = 0; c < num_classes; ++c)
    if (class_total[static_cast<std::size_t>(c)] > 0)
      res.per_class_accuracy[static_cast<std::size_t>(c)] /= class_total[static_cast<std::size_t>(c)];
  return res;
}

EvalResult evaluate(Model<float>& model, const Dataset& ds, int batch_size, BnMode bn_mode) {
  return evaluate_buffer(model, ds.images, ds.labels, ds.channels, ds.height, ds.width,
                         ds.num_classes, batch_size, bn_mode);
}

std::vector<EpochLog> joint_train(Model<float>& model, const Dataset& train, const Dataset& test,
                                  const TrainConfig& cfg, SgdMomentum<float>& opt, int start_epoch) {
  if (train.count() == 0) throw ContractError("joint_train: empty dataset");
  opt.momentum = static_cast<float>(cfg.momentum);
  opt.weight_decay = static_cast<float>(cfg.weight_decay);
  const auto trainable = model.trainable(TrainMode::Joint);

  std::vector<EpochLog> logs;
  for (int epoch = start_epoch + 1; epoch <= cfg.epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch;
    log.lr = lr_at_epoch(cfg, epoch);
    opt.lr = static_cast<float>(log.lr);

    Rng shuffle_rng(mix_seed(cfg.seed, 0x65706f6368ULL, static_cast<std::uint64_t>(epoch)));
    auto perm = shuffle_rng.permutation(train.count());

    double ce_sum = 0.0, im_sum = 0.0, total_sum = 0.0;
    std::size_t batches = 0, seen = 0, correct = 0;
    for (std::size_t start = 0; start < perm.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(perm.size(), start + static_cast<std::size_t>(cfg.batch_size));
      if (end - start < 2) break;  // BN needs at least 2 samples
      std::vector<std::size_t> idx(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                   perm.begin() + static_cast<std::ptrdiff_t>(end));
      Var<float> x = make_var(make_batch(train, idx));
      std::vector<int> labels(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = train.labels[idx[i]];

      Tape<float> tape;
      ForwardOptions fopt;
      fopt.bn_mode = BnMode::Train;
      auto fwd = model.forward(tape, x, fopt);
      Var<float> ce = cross_entropy(tape, fwd.logits, labels);
      std::map<int, float> lambda(cfg.layer_lambda.begin(), cfg.layer_lambda.end());
      auto report = total_loss(tape, ce, fwd.projections, lambda);
      const double total = static_cast<double>(report.total->value.data[0]);
      if (!std::isfinite(total))
        throw NumericError("joint_train: loss diverged (NaN/Inf) at epoch " + std::to_string(epoch));

      model.zero_grad();
      tape.backward(report.total);
      opt.step(model.params(), trainable);

      ce_sum += static_cast<double>(report.ce);
      if (!report.im_terms.empty())
        im_sum += static_cast<double>(report.im_sum) / report.im_terms.size();
      total_sum += total;
      ++batches;
      auto preds = argmax_rows(fwd.logits->value);
      for (std::size_t i = 0; i < idx.size(); ++i)
        if (preds[i] == labels[i]) ++correct;
      seen += idx.size();
    }

    log.ce = ce_sum / static_cast<double>(batches);
    log.im_mean = im_sum / static_cast<double>(batches);
    log.total = total_sum / static_cast<double>(batches);
    log.train_accuracy = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
    log.test_accuracy = evaluate(model, test).accuracy;
    logs.push_back(log);
  }
  return logs;
}

ProjectorEntropy projector_entropy(Model<float>& model, const Dataset& ds, int batch_size,
                                   int max_batches) {
  // H(Z) uses the marginal pooled over all batches; averaging per-batch
  // entropies instead would bias it low
  ProjectorEntropy out;
  std::vector<std::vector<double>> marg;  // per head, per cluster
  std::vector<std::size_t> rows_per_head;
  double h_cond_sum = 0.0;
  std::size_t cond_rows = 0;
  Tape<float> tape;
  int batches = 0;
  for (std::size_t start = 0; start < ds.count() && batches < max_batches;
       start += static_cast<std::size_t>(batch_size), ++batches) {
    const std::size_t end = std::min(ds.count(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> idx(end - start);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = start + i;
    Var<float> x = make_var(make_batch(ds, idx));
    ForwardOptions opt;
    opt.bn_mode = BnMode::Eval;
    opt.want_logits = false;
    auto fwd = model.forward(tape, x, opt);
    if (marg.empty()) {
      marg.assign(fwd.projections.size(), {});
      rows_per_head.assign(fwd.projections.size(), 0);
    }
    for (std::size_t h = 0; h < fwd.projections.size(); ++h) {
      const Tensor<float>& z = fwd.projections[h].z->value;
      const int n = z.shape[0], k = z.shape[1];
      if (marg[h].empty()) marg[h].assign(static_cast<std::size_t>(k), 0.0);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) {
          const double v = static_cast<double>(z.at2(i, j));
          marg[h][static_cast<std::size_t>(j)] += v;
          h_cond_sum -= v * std::log(std::max(v, 1e-12));
        }
      rows_per_head[h] += static_cast<std::size_t>(n);
      cond_rows += static_cast<std::size_t>(n);
    }
    tape.clear();
  }
  if (!marg.empty()) {
    for (std::size_t h = 0; h < marg.size(); ++h)
      for (double m : marg[h]) {
        const double p = m / static_cast<double>(rows_per_head[h]);
        out.mean_h_marg -= p * std::log(std::max(p, 1e-12));
      }
    out.mean_h_marg /= static_cast<double>(marg.size());
    out.mean_h_cond = h_cond_sum / static_cast<double>(cond_rows);
  }
  return out;
}

void save_train_checkpoint(const std::string& path, const Model<float>& model,
                           const SgdMomentum<float>& opt, int epoch) {
  std::vector<NamedTensor<float>> extras;
  for (const auto& [name, vel] : opt.velocity) extras.push_back({"opt.velocity." + name, vel});
  extras.push_back({"meta.epoch", Tensor<float>::scalar(static_cast<float>(epoch))});
  model.save(path, extras);
}

int load_train_checkpoint(const std::string& path, Model<float>& model, SgdMomentum<float>& opt) {
  auto extras = model.load(path);
  int epoch = 0;
  opt.velocity.clear();
  for (auto& e : extras) {
    if (e.name == "meta.epoch")
      epoch = static_cast<int>(e.tensor.data[0]);
    else if (e.name.rfind("opt.velocity.", 0) == 0)
      opt.velocity[e.name.substr(std::strlen("opt.velocity."))] = std::move(e.tensor);
  }
  return epoch;
}

}  // namespace clust3
