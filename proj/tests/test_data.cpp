#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "data.hpp"
#include "rng.hpp"

using namespace clust3;

TEST_CASE("dataset generation is deterministic and correctly sized") {
  DatasetSpec spec;
  Dataset a = generate_train(spec);
  Dataset b = generate_train(spec);
  CHECK(a.images == b.images);
  CHECK(a.labels == b.labels);
  CHECK(a.count() == 4000);
  CHECK(a.image_size() == 256);

  spec.seed = 2;
  Dataset c = generate_train(spec);
  CHECK(a.images != c.images);

  // pixel range contract
  for (float v : a.images) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("class means are pairwise distinct") {
  DatasetSpec spec;
  spec.train_per_class = 50;
  Dataset ds = generate_train(spec);
  std::vector<std::vector<double>> means(8, std::vector<double>(ds.image_size(), 0.0));
  std::vector<int> counts(8, 0);
  for (std::size_t i = 0; i < ds.count(); ++i) {
    const float* img = ds.image(i);
    auto& m = means[ds.labels[i]];
    for (std::size_t p = 0; p < ds.image_size(); ++p) m[p] += img[p];
    ++counts[ds.labels[i]];
  }
  for (int k = 0; k < 8; ++k)
    for (auto& v : means[static_cast<std::size_t>(k)]) v /= counts[static_cast<std::size_t>(k)];
  for (int a = 0; a < 8; ++a)
    for (int b = a + 1; b < 8; ++b) {
      double d2 = 0.0;
      for (std::size_t p = 0; p < ds.image_size(); ++p) {
        const double d = means[static_cast<std::size_t>(a)][p] - means[static_cast<std::size_t>(b)][p];
        d2 += d * d;
      }
      CHECK(d2 > 0.1);  // clearly separated class templates
    }
}

TEST_CASE("dataset dump round-trips") {
  DatasetSpec spec;
  spec.train_per_class = 10;
  Dataset ds = generate_train(spec);
  const std::string path = "test_dataset_roundtrip.bin";
  save_dataset(path, ds);
  Dataset back = load_dataset(path);
  CHECK(back.num_classes == ds.num_classes);
  CHECK(back.channels == ds.channels);
  CHECK(back.height == ds.height);
  CHECK(back.width == ds.width);
  CHECK(back.images == ds.images);
  CHECK(back.labels == ds.labels);
  std::remove(path.c_str());
}

TEST_CASE("corruption names round-trip and bad names are rejected") {
  for (const auto& name : all_corruption_names())
    CHECK(corruption_name(corruption_from_name(name)) == name);
  CHECK(all_corruption_names().size() == 5);
  CHECK_THROWS_AS(corruption_from_name("fog"), ConfigError);
}

TEST_CASE("corruption is deterministic and independent of batching") {
  DatasetSpec dspec;
  dspec.test_per_class = 20;
  Dataset ds = generate_test(dspec);
  CorruptionSpec spec{CorruptionKind::GaussianNoise, 3, 1};

  std::vector<float> whole = ds.images;
  apply_corruption(whole, ds.image_size(), spec);
  std::vector<float> again = ds.images;
  apply_corruption(again, ds.image_size(), spec);
  CHECK(whole == again);

  // corrupting one image at a time with its dataset index matches the bulk run
  std::vector<float> pieces = ds.images;
  for (std::size_t i = 0; i < ds.count(); ++i) {
    std::vector<float> one(pieces.begin() + static_cast<std::ptrdiff_t>(i * ds.image_size()),
                           pieces.begin() + static_cast<std::ptrdiff_t>((i + 1) * ds.image_size()));
    apply_corruption(one, ds.image_size(), spec, i);
    std::copy(one.begin(), one.end(), pieces.begin() + static_cast<std::ptrdiff_t>(i * ds.image_size()));
  }
  CHECK(pieces == whole);
}

TEST_CASE("impulse severity 5 flips 15 to 19 percent of pixels") {
  DatasetSpec dspec;
  dspec.test_per_class = 50;
  Dataset ds = generate_test(dspec);
  std::vector<float> corrupted = ds.images;
  apply_corruption(corrupted, ds.image_size(), {CorruptionKind::ImpulseNoise, 5, 1});

  std::size_t flipped = 0;
  for (std::size_t i = 0; i < ds.images.size(); ++i)
    if (corrupted[i] != ds.images[i] && (corrupted[i] == 0.0f || corrupted[i] == 1.0f)) ++flipped;
  const double frac = static_cast<double>(flipped) / static_cast<double>(ds.images.size());
  CHECK(frac >= 0.15);
  CHECK(frac <= 0.19);
}

TEST_CASE("gaussian noise severity schedule is monotone in distortion") {
  DatasetSpec dspec;
  dspec.test_per_class = 20;
  Dataset ds = generate_test(dspec);
  double prev = -1.0;
  for (int sev = 1; sev <= 5; ++sev) {
    std::vector<float> corrupted = ds.images;
    apply_corruption(corrupted, ds.image_size(), {CorruptionKind::GaussianNoise, sev, 1});
    double mse = 0.0;
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
      const double d = static_cast<double>(corrupted[i]) - ds.images[i];
      mse += d * d;
    }
    mse /= static_cast<double>(ds.images.size());
    CHECK(mse > prev);
    prev = mse;
  }
}

TEST_CASE("all corruptions keep pixels in range") {
  DatasetSpec dspec;
  dspec.test_per_class = 5;
  Dataset ds = generate_test(dspec);
  for (const auto& name : all_corruption_names())
    for (int sev : {1, 5}) {
      std::vector<float> corrupted = ds.images;
      apply_corruption(corrupted, ds.image_size(), {corruption_from_name(name), sev, 1});
      for (float v : corrupted) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
      }
    }
}

TEST_CASE("equal-mass clustering fills every interval evenly") {
  GaussianMixture gm{{{0.6, -1.0, 1.0}, {0.4, 1.5, 0.8}}};
  const auto samples = sample_mixture(gm, 10000, 3);
  const int k = 10;
  const auto bounds = quantile_boundaries(samples, k);
  REQUIRE(bounds.size() == 9);

  std::vector<int> counts(static_cast<std::size_t>(k), 0);
  for (double s : samples) {
    const auto it = std::lower_bound(bounds.begin(), bounds.end(), s);
    ++counts[static_cast<std::size_t>(it - bounds.begin())];
  }
  for (int c : counts) CHECK(std::abs(c - 1000) <= 1);
}

TEST_CASE("median split carries one bit") {
  GaussianMixture gm{{{1.0, 0.0, 1.0}}};
  const auto samples = sample_mixture(gm, 100000, 4);
  const auto bounds = quantile_boundaries(samples, 2);
  CHECK(std::abs(clustering_entropy_bits(bounds, samples) - 1.0) < 0.02);
}

TEST_CASE("frozen boundaries lose entropy under shift") {
  GaussianMixture source{{{1.0, 0.0, 1.0}}};
  const auto src = sample_mixture(source, 100000, 5);
  const auto bounds = quantile_boundaries(src, 10);
  const double src_bits = clustering_entropy_bits(bounds, src);
  CHECK(std::abs(src_bits - std::log2(10.0)) < 0.02);

  GaussianMixture target = source;
  target.components[0].mean += 0.5 * source.mixture_std();
  const auto tgt = sample_mixture(target, 100000, 6);
  CHECK(clustering_entropy_bits(bounds, tgt) < src_bits - 1e-3);
}
