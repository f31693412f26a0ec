#include "adapt.hpp"

#include <algorithm>
#include <cmath>

#include "losses.hpp"
#include "optim.hpp"
#include "train.hpp"

namespace clust3 {

AdaptMethod adapt_method_from_name(const std::string& name) {
  if (name == "clust3") return AdaptMethod::Clust3;
  if (name == "ptbn") return AdaptMethod::Ptbn;
  if (name == "tent") return AdaptMethod::Tent;
  if (name == "source") return AdaptMethod::Source;
  throw ConfigError("unknown adaptation method: " + name);
}

std::string adapt_method_name(AdaptMethod m) {
  switch (m) {
    case AdaptMethod::Clust3: return "clust3";
    case AdaptMethod::Ptbn: return "ptbn";
    case AdaptMethod::Tent: return "tent";
    case AdaptMethod::Source: return "source";
  }
  throw ConfigError("unknown adaptation method");
}

namespace {

// Batch-statistics prediction forward; also reports the IM diagnostics of the
// current state. Running stats are left untouched.
void record_checkpoint(Model<float>& model, const Tensor<float>& x, int checkpoint,
                       EpisodeTrace& trace) {
  Tape<float> tape;
  ForwardOptions opt;
  opt.bn_mode = BnMode::Train;
  opt.update_running = false;
  auto fwd = model.forward(tape, make_var(x), opt);
  trace.predictions_at[checkpoint] = argmax_rows(fwd.logits->value);
  double im = 0.0, hc = 0.0, hm = 0.0;
  for (const auto& proj : fwd.projections) {
    const ImStats s = im_stats(proj.z->value);
    im += s.im_loss;
    hc += s.h_cond;
    hm += s.h_marg;
  }
  trace.im_at[checkpoint] = im;
  if (!fwd.projections.empty()) {
    trace.h_cond_at[checkpoint] = hc / static_cast<double>(fwd.projections.size());
    trace.h_marg_at[checkpoint] = hm / static_cast<double>(fwd.projections.size());
  }
}

void fill_fallback(EpisodeTrace& trace, const std::vector<int>& checkpoints) {
  const auto& base = trace.predictions_at.at(0);
  for (int c : checkpoints)
    if (!trace.predictions_at.count(c)) trace.predictions_at[c] = base;
  trace.nan_fallback = true;
}

}  // namespace

EpisodeTrace adapt_batch(Model<float>& model, const ModelSnapshot<float>& snapshot,
                         const Tensor<float>& x, const AdaptConfig& cfg) {
  if (!model.config().with_projectors)
    throw ContractError("adapt_batch: model has no projectors");
  for (std::size_t i = 1; i < cfg.checkpoints.size(); ++i)
    if (cfg.checkpoints[i] <= cfg.checkpoints[i - 1])
      throw ConfigError("adapt checkpoints must be strictly increasing");

  model.restore(snapshot);
  EpisodeTrace trace;
  record_checkpoint(model, x, 0, trace);
  trace.im_per_iter.push_back(trace.im_at[0]);

  // Fresh optimizer per episode: the full optimizer state resets with the
  // weights.
  Adam<float> adam;
  adam.lr = static_cast<float>(cfg.lr);
  const auto trainable = model.trainable(TrainMode::Adapt, cfg.J);
  const int max_iter = cfg.checkpoints.empty() ? 0 : cfg.checkpoints.back();
  int loss_depth = 1;
  for (int l : model.config().projector_layers) loss_depth = std::max(loss_depth, l);

  for (int t = 1; t <= max_iter; ++t) {
    Tape<float> tape;
    ForwardOptions opt;
    opt.bn_mode = BnMode::Train;
    opt.update_running = true;
    opt.want_logits = false;
    opt.up_to_block = loss_depth;
    auto fwd = model.forward(tape, make_var(x), opt);
    Var<float> loss;
    for (const auto& proj : fwd.projections) {
      Var<float> lim = im_loss(tape, proj.z);
      loss = loss ? add(tape, loss, lim) : lim;
    }
    const double lv = static_cast<double>(loss->value.data[0]);
    if (!std::isfinite(lv)) {
      fill_fallback(trace, cfg.checkpoints);
      break;
    }
    trace.im_per_iter.push_back(lv);
    model.zero_grad();
    tape.backward(loss);
    adam.step(model.params(), trainable);
    if (std::find(cfg.checkpoints.begin(), cfg.checkpoints.end(), t) != cfg.checkpoints.end())
      record_checkpoint(model, x, t, trace);
  }

  model.restore(snapshot);
  return trace;
}

std::vector<int> ptbn_predict(Model<float>& model, const Tensor<float>& x) {
  Tape<float> tape;
  ForwardOptions opt;
  opt.bn_mode = BnMode::Train;
  opt.update_running = false;
  opt.want_projectors = false;
  auto fwd = model.forward(tape, make_var(x), opt);
  return argmax_rows(fwd.logits->value);
}

EpisodeTrace tent_batch(Model<float>& model, const ModelSnapshot<float>& snapshot,
                        const Tensor<float>& x, const std::vector<int>& checkpoints, double lr) {
  model.restore(snapshot);
  EpisodeTrace trace;
  record_checkpoint(model, x, 0, trace);

  Adam<float> adam;
  adam.lr = static_cast<float>(lr);
  std::set<std::string> trainable;
  for (const auto& p : model.params())
    if (p.name.find(".bn.gamma") != std::string::npos ||
        p.name.find(".bn.beta") != std::string::npos)
      trainable.insert(p.name);

  const int max_iter = checkpoints.empty() ? 0 : checkpoints.back();
  for (int t = 1; t <= max_iter; ++t) {
    Tape<float> tape;
    ForwardOptions opt;
    opt.bn_mode = BnMode::Train;
    opt.update_running = true;
    opt.want_projectors = false;
    auto fwd = model.forward(tape, make_var(x), opt);
    Var<float> loss = mean_prediction_entropy(tape, fwd.logits);
    const double lv = static_cast<double>(loss->value.data[0]);
    if (!std::isfinite(lv)) {
      fill_fallback(trace, checkpoints);
      break;
    }
    trace.im_per_iter.push_back(lv);  // entropy objective for TENT
    model.zero_grad();
    tape.backward(loss);
    adam.step(model.params(), trainable);
    if (std::find(checkpoints.begin(), checkpoints.end(), t) != checkpoints.end())
      record_checkpoint(model, x, t, trace);
  }

  model.restore(snapshot);
  return trace;
}

StreamResult run_stream(Model<float>& model, const std::vector<Tensor<float>>& batches,
                        const std::vector<std::vector<int>>& labels, AdaptMethod method,
                        const AdaptConfig& cfg) {
  if (batches.size() != labels.size())
    throw ContractError("run_stream: batch/label count mismatch");
  const ModelSnapshot<float> snapshot = model.snapshot();

  StreamResult res;
  res.checkpoints.push_back(0);
  if (method == AdaptMethod::Clust3)
    res.checkpoints.insert(res.checkpoints.end(), cfg.checkpoints.begin(), cfg.checkpoints.end());
  else if (method == AdaptMethod::Tent)
    res.checkpoints.insert(res.checkpoints.end(), cfg.tent_checkpoints.begin(),
                           cfg.tent_checkpoints.end());

  for (std::size_t b = 0; b < batches.size(); ++b) {
    EpisodeTrace trace;
    switch (method) {
      case AdaptMethod::Clust3:
        trace = adapt_batch(model, snapshot, batches[b], cfg);
        break;
      case AdaptMethod::Tent:
        trace = tent_batch(model, snapshot, batches[b], cfg.tent_checkpoints, cfg.tent_lr);
        break;
      case AdaptMethod::Ptbn:
        trace.predictions_at[0] = ptbn_predict(model, batches[b]);
        trace.im_at[0] = 0.0;
        break;
      case AdaptMethod::Source: {
        Tape<float> tape;
        ForwardOptions opt;
        opt.bn_mode = BnMode::Eval;
        opt.want_projectors = false;
        opt.update_running = false;
        auto fwd = model.forward(tape, make_var(batches[b]), opt);
        trace.predictions_at[0] = argmax_rows(fwd.logits->value);
        trace.im_at[0] = 0.0;
        break;
      }
    }
    res.episodes.push_back(std::move(trace));
  }

  // metrics stage: the only consumer of labels
  std::size_t total = 0;
  for (const auto& l : labels) total += l.size();
  for (int c : res.checkpoints) {
    std::size_t correct = 0;
    double im = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& preds = res.episodes[b].predictions_at.at(c);
      for (std::size_t i = 0; i < labels[b].size(); ++i)
        if (preds[i] == labels[b][i]) ++correct;
      auto it = res.episodes[b].im_at.find(c);
      if (it != res.episodes[b].im_at.end()) im += it->second;
    }
    res.accuracy_at[c] = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
    res.mean_im_at[c] = batches.empty() ? 0.0 : im / static_cast<double>(batches.size());
  }
  // max over checkpoints, earliest checkpoint wins ties
  res.max_accuracy = 0.0;
  res.best_checkpoint = res.checkpoints.empty() ? 0 : res.checkpoints.front();
  for (int c : res.checkpoints)
    if (res.accuracy_at[c] > res.max_accuracy) {
      res.max_accuracy = res.accuracy_at[c];
      res.best_checkpoint = c;
    }
  return res;
}

}  // namespace clust3
