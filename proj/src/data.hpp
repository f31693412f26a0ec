#ifndef CLUST3_DATA_HPP
#define CLUST3_DATA_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "common.hpp"

namespace clust3 {

struct DatasetSpec {
  int num_classes = 8;
  int height = 16;
  int width = 16;
  int channels = 1;
  int train_per_class = 500;
  int test_per_class = 200;
  std::uint64_t seed = 1;
};

// Images are stored contiguously, one (C,H,W) block per sample, values in [0,1].
struct Dataset {
  int num_classes = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> images;
  std::vector<std::uint16_t> labels;

  std::size_t count() const { return labels.size(); }
  std::size_t image_size() const {
    return static_cast<std::size_t>(channels) * height * width;
  }
  const float* image(std::size_t i) const { return images.data() + i * image_size(); }
};

// Deterministic parametric classes: oriented sinusoidal grating with
// class-specific frequency/orientation plus a class-specific blob, with
// per-sample jitter. Same spec + seed -> byte-identical dataset.
Dataset generate_split(const DatasetSpec& spec, int per_class, std::uint64_t salt);

inline Dataset generate_train(const DatasetSpec& spec) {
  return generate_split(spec, spec.train_per_class, 0x747261696eULL);
}
inline Dataset generate_test(const DatasetSpec& spec) {
  return generate_split(spec, spec.test_per_class, 0x74657374ULL);
}

void save_dataset(const std::string& path, const Dataset& ds);
Dataset load_dataset(const std::string& path);

enum class CorruptionKind { GaussianNoise, ImpulseNoise, Blur, Brightness, Contrast };

CorruptionKind corruption_from_name(const std::string& name);
std::string corruption_name(CorruptionKind kind);
const std::vector<std::string>& all_corruption_names();

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::GaussianNoise;
  int severity = 5;  // 1..5
  std::uint64_t seed = 1;
};

// Applies the corruption in place to a [0,1]-valued image buffer. Randomness
// is keyed per image index so results are independent of batching order.
void apply_corruption(std::vector<float>& images, std::size_t image_size,
                      const CorruptionSpec& spec, std::size_t first_image_index = 0);

// ---- 1-D equal-mass clustering demo ----

struct GaussianMixture {
  struct Component {
    double weight;
    double mean;
    double std;
  };
  std::vector<Component> components;

  double mixture_std() const;
};

std::vector<double> sample_mixture(const GaussianMixture& gm, std::size_t n, std::uint64_t seed);

// K-1 empirical quantile boundaries of the given samples (equal-mass regions).
std::vector<double> quantile_boundaries(const std::vector<double>& samples, int k);

// H(Z) in bits of the hard assignment of samples to the K intervals defined by
// the boundaries; values exactly on a boundary go to the left interval.
double clustering_entropy_bits(const std::vector<double>& boundaries,
                               const std::vector<double>& samples);

}  // namespace clust3

#endif
