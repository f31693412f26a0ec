#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "losses.hpp"
#include "model.hpp"
#include "oracles.hpp"

using namespace clust3;

namespace {

// small config so model tests stay fast
ModelConfig tiny_config() {
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

}  // namespace

TEST_CASE("forward shapes and tap sizes") {
  Model<float> model(tiny_config(), 1);
  Tape<float> tape;
  ForwardOptions opt;
  opt.bn_mode = BnMode::Train;
  auto res = model.forward(tape, make_var(random_batch(2, 5)), opt);

  REQUIRE(res.taps.size() == 4);
  int prev = 16;
  for (const auto& tap : res.taps) {
    CHECK(tap->value.shape[2] < prev);
    CHECK(tap->value.shape[2] == tap->value.shape[3]);
    prev = tap->value.shape[2];
  }
  REQUIRE(res.logits);
  CHECK(res.logits->value.shape == std::vector<int>{2, 8});

  // layer-1 tap is 8x8 after pooling: z is (2*8*8) x K
  REQUIRE(res.projections.size() == 4);  // 2 layers x 2 heads
  CHECK(res.projections[0].layer == 1);
  CHECK(res.projections[0].z->value.shape == std::vector<int>{128, 3});
}

TEST_CASE("default projector geometry matches the paper-scale config") {
  ModelConfig cfg;  // defaults: K=10, 15 heads on layers 1 and 2
  Model<float> model(cfg, 1);
  Tape<float> tape;
  ForwardOptions opt;
  opt.bn_mode = BnMode::Train;
  auto res = model.forward(tape, make_var(random_batch(2, 6)), opt);
  CHECK(res.projections.size() == 30);
  CHECK(res.projections[0].z->value.shape == std::vector<int>{2 * 8 * 8, 10});
}

TEST_CASE("zero projector weights give uniform assignments") {
  Model<float> model(tiny_config(), 1);
  for (auto& p : model.params())
    if (p.name.rfind("projector.", 0) == 0)
      std::fill(p.value().data.begin(), p.value().data.end(), 0.0f);
  Tape<float> tape;
  ForwardOptions opt;
  opt.bn_mode = BnMode::Train;
  auto res = model.forward(tape, make_var(random_batch(2, 7)), opt);
  for (const auto& proj : res.projections)
    for (float v : proj.z->value.data) CHECK(v == doctest::Approx(1.0f / 3.0f).epsilon(1e-6));
}

TEST_CASE("projector rows are stochastic") {
  Model<float> model(tiny_config(), 2);
  Tape<float> tape;
  ForwardOptions opt;
  opt.bn_mode = BnMode::Train;
  auto res = model.forward(tape, make_var(random_batch(3, 8)), opt);
  for (const auto& proj : res.projections) {
    const auto& z = proj.z->value;
    for (int i = 0; i < z.shape[0]; ++i) {
      double s = 0.0;
      for (int j = 0; j < z.shape[1]; ++j) {
        s += z.at2(i, j);
        CHECK(z.at2(i, j) >= 0.0f);
      }
      CHECK(std::abs(s - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("forward determinism") {
  Model<float> model(tiny_config(), 3);
  auto x = random_batch(2, 9);
  ForwardOptions opt;
  opt.bn_mode = BnMode::Eval;
  opt.update_running = false;
  Tape<float> t1, t2;
  auto r1 = model.forward(t1, make_var(x), opt);
  auto r2 = model.forward(t2, make_var(x), opt);
  CHECK(r1.logits->value.data == r2.logits->value.data);
  for (std::size_t i = 0; i < r1.projections.size(); ++i)
    CHECK(r1.projections[i].z->value.data == r2.projections[i].z->value.data);
}

TEST_CASE("forward input validation") {
  Model<float> model(tiny_config(), 1);
  Tape<float> tape;
  ForwardOptions opt;
  opt.bn_mode = BnMode::Train;
  CHECK_THROWS_AS(model.forward(tape, make_var(random_batch(1, 1)), opt), ContractError);
  CHECK_THROWS_AS(model.forward(tape, make_var(Tensor<float>::zeros({2, 1, 8, 8})), opt),
                  DimensionError);
}

TEST_CASE("snapshot and restore round-trip") {
  Model<float> model(tiny_config(), 4);
  const auto snap = model.snapshot();
  for (auto& p : model.params())
    for (auto& v : p.value().data) v += 0.5f;
  model.bn_state(1).running_mean.data[0] = 42.0f;

  model.restore(snap);
  for (std::size_t i = 0; i < model.params().size(); ++i)
    CHECK(model.params()[i].value().data == snap.param_values[i].data);
  CHECK(model.bn_state(1).running_mean.data == snap.bn_means[0].data);

  model.restore(snap);  // idempotent
  for (std::size_t i = 0; i < model.params().size(); ++i)
    CHECK(model.params()[i].value().data == snap.param_values[i].data);
}

TEST_CASE("trainable parameter selection") {
  Model<float> model(tiny_config(), 5);
  const auto adapt2 = model.trainable(TrainMode::Adapt, 2);
  CHECK(adapt2.count("extractor.block1.conv.weight"));
  CHECK(adapt2.count("extractor.block2.bn.gamma"));
  CHECK(!adapt2.count("extractor.block3.conv.weight"));
  CHECK(!adapt2.count("extractor.block4.bn.beta"));
  CHECK(!adapt2.count("classifier.linear.weight"));
  for (const auto& name : adapt2) CHECK(name.rfind("projector.", 0) != 0);

  const auto joint = model.trainable(TrainMode::Joint);
  CHECK(joint.size() == model.params().size());
  for (int j = 1; j <= 4; ++j)
    for (const auto& name : model.trainable(TrainMode::Adapt, j)) CHECK(joint.count(name));

  const auto adapt4 = model.trainable(TrainMode::Adapt, 4);
  for (const auto& name : adapt4) CHECK(name.rfind("extractor.", 0) == 0);
  CHECK_THROWS_AS(model.trainable(TrainMode::Adapt, 5), ContractError);
}

TEST_CASE("IM gradients do not touch the classifier or deeper blocks") {
  Model<float> model(tiny_config(), 6);
  Tape<float> tape;
  ForwardOptions opt;
  opt.bn_mode = BnMode::Train;
  opt.update_running = false;
  auto res = model.forward(tape, make_var(random_batch(4, 10)), opt);

  Var<float> loss;
  for (const auto& proj : res.projections) {
    auto lim = im_loss(tape, proj.z);
    loss = loss ? add(tape, loss, lim) : lim;
  }
  model.zero_grad();
  tape.backward(loss);

  // projector layers are {1,2}; blocks 3,4 and the classifier sit downstream
  // of the classification path only
  for (auto& p : model.params()) {
    const bool frozen_by_structure = p.name.rfind("classifier.", 0) == 0 ||
                                     p.name.rfind("extractor.block3.", 0) == 0 ||
                                     p.name.rfind("extractor.block4.", 0) == 0;
    if (!frozen_by_structure) continue;
    for (float g : p.grad().data) CHECK(g == 0.0f);
  }
}

TEST_CASE("checkpoint save and load round-trip") {
  Model<float> model(tiny_config(), 7);
  // nudge BN stats away from init so the round-trip is non-trivial
  Tape<float> tape;
  ForwardOptions opt;
  opt.bn_mode = BnMode::Train;
  model.forward(tape, make_var(random_batch(4, 11)), opt);

  const std::string path = "test_model_roundtrip.bin";
  model.save(path, {{"meta.epoch", Tensor<float>::scalar(3.0f)}});

  Model<float> other(tiny_config(), 99);
  auto extras = other.load(path);
  REQUIRE(extras.size() == 1);
  CHECK(extras[0].name == "meta.epoch");
  CHECK(extras[0].tensor.data[0] == 3.0f);
  for (std::size_t i = 0; i < model.params().size(); ++i)
    CHECK(other.params()[i].value().data == model.params()[i].value().data);
  for (int b = 1; b <= 4; ++b) {
    CHECK(other.bn_state(b).running_mean.data == model.bn_state(b).running_mean.data);
    CHECK(other.bn_state(b).running_var.data == model.bn_state(b).running_var.data);
  }
  std::remove(path.c_str());
}
