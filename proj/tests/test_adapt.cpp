#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "adapt.hpp"
#include "losses.hpp"
#include "optim.hpp"
#include "rng.hpp"
#include "train.hpp"

using namespace clust3;

namespace {

ModelConfig tiny_model() {
  ModelConfig cfg;
  cfg.channels = {4, 6, 8, 8};
  cfg.heads_per_layer = 2;
  cfg.clusters = 3;
  return cfg;
}

Tensor<float> random_batch(int b, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> x({b, 1, 16, 16});
  for (auto& v : x.data) v = static_cast<float>(rng.uniform());
  return x;
}

AdaptConfig short_adapt() {
  AdaptConfig cfg;
  cfg.checkpoints = {1, 3};
  cfg.tent_checkpoints = {1, 2};
  return cfg;
}

}  // namespace

TEST_CASE("method names round-trip") {
  for (auto m : {AdaptMethod::Clust3, AdaptMethod::Ptbn, AdaptMethod::Tent, AdaptMethod::Source})
    CHECK(adapt_method_from_name(adapt_method_name(m)) == m);
  CHECK_THROWS_AS(adapt_method_from_name("shot"), ConfigError);
}

TEST_CASE("checkpoint 0 equals the batch-statistics forward") {
  Model<float> model(tiny_model(), 1);
  const auto snap = model.snapshot();
  auto x = random_batch(8, 5);
  auto trace = adapt_batch(model, snap, x, short_adapt());
  CHECK(trace.predictions_at.at(0) == ptbn_predict(model, x));
  auto tent = tent_batch(model, snap, x, {1}, 1e-3);
  CHECK(tent.predictions_at.at(0) == trace.predictions_at.at(0));
}

TEST_CASE("episodes are deterministic") {
  Model<float> model(tiny_model(), 2);
  const auto snap = model.snapshot();
  auto x = random_batch(8, 6);
  auto a = adapt_batch(model, snap, x, short_adapt());
  auto b = adapt_batch(model, snap, x, short_adapt());
  CHECK(a.predictions_at == b.predictions_at);
  CHECK(a.im_per_iter == b.im_per_iter);
  CHECK(a.im_at == b.im_at);
}

TEST_CASE("episodes restore the snapshot exactly") {
  Model<float> model(tiny_model(), 3);
  const auto snap = model.snapshot();
  auto x = random_batch(8, 7);

  adapt_batch(model, snap, x, short_adapt());
  for (std::size_t i = 0; i < model.params().size(); ++i)
    CHECK(model.params()[i].value().data == snap.param_values[i].data);
  for (int b = 1; b <= 4; ++b) {
    CHECK(model.bn_state(b).running_mean.data == snap.bn_means[static_cast<std::size_t>(b - 1)].data);
    CHECK(model.bn_state(b).running_var.data == snap.bn_vars[static_cast<std::size_t>(b - 1)].data);
  }

  tent_batch(model, snap, x, {1, 2}, 1e-3);
  for (std::size_t i = 0; i < model.params().size(); ++i)
    CHECK(model.params()[i].value().data == snap.param_values[i].data);
}

TEST_CASE("adaptation steps leave the head and deep blocks frozen") {
  // same update rule as an episode, without the final restore, so the
  // intermediate state is observable
  Model<float> model(tiny_model(), 4);
  const auto snap = model.snapshot();
  auto x = random_batch(8, 8);
  Adam<float> adam;
  adam.lr = 1e-3f;
  const auto trainable = model.trainable(TrainMode::Adapt, 2);
  for (int t = 0; t < 3; ++t) {
    Tape<float> tape;
    ForwardOptions opt;
    opt.bn_mode = BnMode::Train;
    auto fwd = model.forward(tape, make_var(x), opt);
    Var<float> loss;
    for (const auto& proj : fwd.projections) {
      auto lim = im_loss(tape, proj.z);
      loss = loss ? add(tape, loss, lim) : lim;
    }
    model.zero_grad();
    tape.backward(loss);
    adam.step(model.params(), trainable);
  }
  bool something_moved = false;
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    const auto& p = model.params()[i];
    const bool frozen = !trainable.count(p.name);
    if (frozen)
      CHECK(p.value().data == snap.param_values[i].data);
    else if (p.value().data != snap.param_values[i].data)
      something_moved = true;
  }
  CHECK(something_moved);
}

TEST_CASE("labels never influence adaptation") {
  Model<float> model(tiny_model(), 5);
  std::vector<Tensor<float>> batches = {random_batch(8, 9), random_batch(8, 10)};
  std::vector<std::vector<int>> real = {{0, 1, 2, 3, 4, 5, 6, 7}, {7, 6, 5, 4, 3, 2, 1, 0}};
  std::vector<std::vector<int>> zeros = {std::vector<int>(8, 0), std::vector<int>(8, 0)};
  auto a = run_stream(model, batches, real, AdaptMethod::Clust3, short_adapt());
  auto b = run_stream(model, batches, zeros, AdaptMethod::Clust3, short_adapt());
  REQUIRE(a.episodes.size() == b.episodes.size());
  for (std::size_t i = 0; i < a.episodes.size(); ++i)
    CHECK(a.episodes[i].predictions_at == b.episodes[i].predictions_at);
}

TEST_CASE("per-batch results do not depend on stream order") {
  Model<float> model(tiny_model(), 6);
  std::vector<Tensor<float>> fwd_order = {random_batch(8, 11), random_batch(8, 12)};
  std::vector<Tensor<float>> rev_order = {fwd_order[1], fwd_order[0]};
  std::vector<std::vector<int>> labels = {std::vector<int>(8, 0), std::vector<int>(8, 0)};
  for (auto method : {AdaptMethod::Clust3, AdaptMethod::Tent, AdaptMethod::Ptbn}) {
    auto a = run_stream(model, fwd_order, labels, method, short_adapt());
    auto b = run_stream(model, rev_order, labels, method, short_adapt());
    CHECK(a.episodes[0].predictions_at == b.episodes[1].predictions_at);
    CHECK(a.episodes[1].predictions_at == b.episodes[0].predictions_at);
  }
}

TEST_CASE("stream metrics are consistent") {
  Model<float> model(tiny_model(), 7);
  std::vector<Tensor<float>> batches = {random_batch(8, 13)};
  std::vector<std::vector<int>> labels = {{0, 1, 2, 3, 4, 5, 6, 7}};
  auto cfg = short_adapt();
  auto res = run_stream(model, batches, labels, AdaptMethod::Clust3, cfg);
  CHECK(res.checkpoints == std::vector<int>{0, 1, 3});
  double best = -1.0;
  for (int c : res.checkpoints) {
    CHECK(res.accuracy_at.at(c) >= 0.0);
    CHECK(res.accuracy_at.at(c) <= 1.0);
    best = std::max(best, res.accuracy_at.at(c));
  }
  CHECK(res.max_accuracy == best);
  CHECK(res.accuracy_at.at(res.best_checkpoint) == best);
  // every episode recorded the optimizer trajectory up to the last checkpoint
  CHECK(res.episodes[0].im_per_iter.size() == 4);  // pre-step value + 3 iterations
}

TEST_CASE("tent without iterations reduces to prediction-time batch norm") {
  Model<float> model(tiny_model(), 8);
  const auto snap = model.snapshot();
  auto x = random_batch(8, 14);
  auto trace = tent_batch(model, snap, x, {}, 1e-3);
  CHECK(trace.predictions_at.size() == 1);
  CHECK(trace.predictions_at.at(0) == ptbn_predict(model, x));
}

TEST_CASE("invalid configurations are rejected") {
  Model<float> model(tiny_model(), 9);
  const auto snap = model.snapshot();
  auto x = random_batch(4, 15);
  AdaptConfig bad = short_adapt();
  bad.checkpoints = {3, 1};
  CHECK_THROWS_AS(adapt_batch(model, snap, x, bad), ConfigError);
  std::vector<Tensor<float>> batches = {x};
  CHECK_THROWS_AS(run_stream(model, batches, {}, AdaptMethod::Ptbn, short_adapt()), ContractError);
}
