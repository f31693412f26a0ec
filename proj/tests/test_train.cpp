#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

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

DatasetSpec tiny_data(int train_per_class = 8, int test_per_class = 4) {
  DatasetSpec spec;
  spec.train_per_class = train_per_class;
  spec.test_per_class = test_per_class;
  return spec;
}

}  // namespace

TEST_CASE("lr schedule decays at milestone epochs") {
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.lr0 = 0.1;
  // milestones at ceil(0.4*30)=12 and ceil(0.7*30)=21
  CHECK(lr_at_epoch(cfg, 1) == doctest::Approx(0.1));
  CHECK(lr_at_epoch(cfg, 11) == doctest::Approx(0.1));
  CHECK(lr_at_epoch(cfg, 12) == doctest::Approx(0.01));
  CHECK(lr_at_epoch(cfg, 20) == doctest::Approx(0.01));
  CHECK(lr_at_epoch(cfg, 21) == doctest::Approx(0.001));
  CHECK(lr_at_epoch(cfg, 30) == doctest::Approx(0.001));
}

TEST_CASE("make_batch lays out rows contiguously") {
  Dataset ds = generate_train(tiny_data(2, 1));
  auto x = make_batch(ds, {3, 0});
  REQUIRE(x.shape == std::vector<int>{2, 1, 16, 16});
  for (std::size_t p = 0; p < ds.image_size(); ++p) {
    CHECK(x.data[p] == ds.image(3)[p]);
    CHECK(x.data[ds.image_size() + p] == ds.image(0)[p]);
  }
}

TEST_CASE("zero epochs leave the model untouched") {
  Dataset train = generate_train(tiny_data());
  Dataset test = generate_test(tiny_data());
  Model<float> model(tiny_model(), 1);
  const auto before = model.snapshot();
  TrainConfig cfg;
  cfg.epochs = 0;
  SgdMomentum<float> opt;
  auto log = joint_train(model, train, test, cfg, opt);
  CHECK(log.empty());
  for (std::size_t i = 0; i < model.params().size(); ++i)
    CHECK(model.params()[i].value().data == before.param_values[i].data);
}

TEST_CASE("untrained model predicts near chance") {
  Dataset test = generate_test(tiny_data(8, 16));
  double acc = 0.0;
  for (std::uint64_t seed : {11u, 22u, 33u}) {
    Model<float> model(tiny_model(), seed);
    acc += evaluate(model, test, 64, BnMode::Train).accuracy;
  }
  acc /= 3.0;
  CHECK(acc > 1.0 / 8.0 - 0.05);
  CHECK(acc < 1.0 / 8.0 + 0.05);
}

TEST_CASE("evaluation is deterministic") {
  Dataset test = generate_test(tiny_data(4, 4));
  Model<float> model(tiny_model(), 2);
  auto r1 = evaluate(model, test);
  auto r2 = evaluate(model, test);
  CHECK(r1.accuracy == r2.accuracy);
  CHECK(r1.predictions == r2.predictions);
  CHECK(r1.per_class_accuracy.size() == 8);
}

TEST_CASE("short training reduces the loss and is reproducible") {
  Dataset train = generate_train(tiny_data(16, 4));
  Dataset test = generate_test(tiny_data(16, 4));
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 32;
  cfg.lr0 = 0.05;

  Model<float> a(tiny_model(), 1);
  SgdMomentum<float> oa;
  auto la = joint_train(a, train, test, cfg, oa);
  REQUIRE(la.size() == 3);
  CHECK(la.back().total < la.front().total);
  for (const auto& e : la) CHECK(std::isfinite(e.total));

  Model<float> b(tiny_model(), 1);
  SgdMomentum<float> ob;
  auto lb = joint_train(b, train, test, cfg, ob);
  for (std::size_t i = 0; i < a.params().size(); ++i)
    CHECK(a.params()[i].value().data == b.params()[i].value().data);
  CHECK(la.back().total == lb.back().total);
}

TEST_CASE("checkpoint resume is bit-identical to straight training") {
  Dataset train = generate_train(tiny_data(8, 2));
  Dataset test = generate_test(tiny_data(8, 2));
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 32;
  cfg.lr0 = 0.05;
  // constant lr so a 1-epoch run matches epoch 1 of the 2-epoch run
  cfg.milestone_fracs.clear();

  Model<float> straight(tiny_model(), 1);
  SgdMomentum<float> so;
  joint_train(straight, train, test, cfg, so);

  // one epoch, save, reload into a fresh model, resume
  TrainConfig one = cfg;
  one.epochs = 1;
  Model<float> half(tiny_model(), 1);
  SgdMomentum<float> ho;
  joint_train(half, train, test, one, ho);
  const std::string path = "test_train_resume.bin";
  save_train_checkpoint(path, half, ho, 1);

  Model<float> resumed(tiny_model(), 99);
  SgdMomentum<float> ro;
  const int start = load_train_checkpoint(path, resumed, ro);
  CHECK(start == 1);
  joint_train(resumed, train, test, cfg, ro, start);

  for (std::size_t i = 0; i < straight.params().size(); ++i)
    CHECK(resumed.params()[i].value().data == straight.params()[i].value().data);
  for (int b = 1; b <= 4; ++b) {
    CHECK(resumed.bn_state(b).running_mean.data == straight.bn_state(b).running_mean.data);
    CHECK(resumed.bn_state(b).running_var.data == straight.bn_state(b).running_var.data);
  }
  std::remove(path.c_str());
}

TEST_CASE("projector entropy stays within the IM bounds") {
  Dataset test = generate_test(tiny_data(4, 8));
  Model<float> model(tiny_model(), 3);
  auto pe = projector_entropy(model, test, 32, 2);
  const double lnk = std::log(3.0);
  CHECK(pe.mean_h_marg >= 0.0);
  CHECK(pe.mean_h_marg <= lnk + 1e-6);
  CHECK(pe.mean_h_cond >= 0.0);
  CHECK(pe.mean_h_cond <= lnk + 1e-6);
}
