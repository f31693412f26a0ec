#include "data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "rng.hpp"

namespace clust3 {

namespace {

constexpr double kPi = 3.14159265358979323846;

void render_sample(float* out, int h, int w, int cls, int num_classes, Rng& rng) {
  // class-specific grating with per-sample jitter; the jitter keeps local
  // patches varied enough that unsupervised clustering has material to work on
  const double theta = kPi * static_cast<double>(cls) / static_cast<double>(num_classes) +
                       rng.normal() * 0.06;
  const double freq = (1.5 + 0.45 * static_cast<double>(cls)) * std::exp(rng.normal() * 0.10);
  const double amp = 0.22 * rng.uniform(0.8, 1.0);
  const double ct = std::cos(theta), st = std::sin(theta);
  const double phase = rng.uniform(0.0, 2.0 * kPi);

  // secondary texture: orientation and frequency drawn fresh per sample, so it
  // carries no class information
  const double theta2 = rng.uniform(0.0, kPi);
  const double freq2 = rng.uniform(1.0, 5.0);
  const double ct2 = std::cos(theta2), st2 = std::sin(theta2);
  const double phase2 = rng.uniform(0.0, 2.0 * kPi);

  // class-specific blob position on a ring, with per-sample jitter
  const double ring = 2.0 * kPi * static_cast<double>(cls) / static_cast<double>(num_classes);
  const double bx = 0.5 * w + 0.3 * w * std::cos(ring) + rng.normal() * 0.5;
  const double by = 0.5 * h + 0.3 * h * std::sin(ring) + rng.normal() * 0.5;
  const double blob_r2 = 2.0 * 2.0;

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double u = (static_cast<double>(x) * ct + static_cast<double>(y) * st) /
                       static_cast<double>(w);
      double v = 0.5 + amp * std::sin(2.0 * kPi * freq * u + phase);
      const double u2 = (static_cast<double>(x) * ct2 + static_cast<double>(y) * st2) /
                        static_cast<double>(w);
      v += 0.14 * std::sin(2.0 * kPi * freq2 * u2 + phase2);
      const double dx = x - bx, dy = y - by;
      v += 0.30 * std::exp(-(dx * dx + dy * dy) / (2.0 * blob_r2));
      v += rng.normal() * 0.08;
      out[y * w + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
}

}  // namespace

Dataset generate_split(const DatasetSpec& spec, int per_class, std::uint64_t salt) {
  Dataset ds;
  ds.num_classes = spec.num_classes;
  ds.channels = spec.channels;
  ds.height = spec.height;
  ds.width = spec.width;
  const std::size_t n = static_cast<std::size_t>(spec.num_classes) * per_class;
  ds.images.assign(n * ds.image_size(), 0.0f);
  ds.labels.resize(n);
  for (int cls = 0; cls < spec.num_classes; ++cls)
    for (int i = 0; i < per_class; ++i) {
      const std::size_t idx = static_cast<std::size_t>(cls) * per_class + i;
      ds.labels[idx] = static_cast<std::uint16_t>(cls);
      Rng rng(mix_seed(spec.seed, salt, idx));
      // channel 0 carries the pattern; extra channels (if configured) repeat it
      float* img = ds.images.data() + idx * ds.image_size();
      render_sample(img, spec.height, spec.width, cls, spec.num_classes, rng);
      for (int c = 1; c < spec.channels; ++c)
        std::memcpy(img + static_cast<std::size_t>(c) * spec.height * spec.width, img,
                    sizeof(float) * spec.height * spec.width);
    }
  return ds;
}

void save_dataset(const std::string& path, const Dataset& ds) {
  nlohmann::json header = {{"num_classes", ds.num_classes},
                           {"image_size", {ds.channels, ds.height, ds.width}},
                           {"count", ds.count()}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingInputError("cannot open for writing: " + path);
  out << header.dump() << "\n";
  out.write(reinterpret_cast<const char*>(ds.images.data()),
            static_cast<std::streamsize>(ds.images.size() * sizeof(float)));
  out.write(reinterpret_cast<const char*>(ds.labels.data()),
            static_cast<std::streamsize>(ds.labels.size() * sizeof(std::uint16_t)));
  if (!out) throw Error("write failed: " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingInputError("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line)) throw Error("truncated dataset file: " + path);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad dataset header in " + path + ": " + e.what());
  }
  Dataset ds;
  ds.num_classes = header.at("num_classes").get<int>();
  const auto size = header.at("image_size").get<std::vector<int>>();
  if (size.size() != 3) throw Error("bad image_size in " + path);
  ds.channels = size[0];
  ds.height = size[1];
  ds.width = size[2];
  const std::size_t n = header.at("count").get<std::size_t>();
  ds.images.resize(n * ds.image_size());
  ds.labels.resize(n);
  in.read(reinterpret_cast<char*>(ds.images.data()),
          static_cast<std::streamsize>(ds.images.size() * sizeof(float)));
  in.read(reinterpret_cast<char*>(ds.labels.data()),
          static_cast<std::streamsize>(ds.labels.size() * sizeof(std::uint16_t)));
  if (!in) throw Error("truncated dataset payload: " + path);
  return ds;
}

CorruptionKind corruption_from_name(const std::string& name) {
  if (name == "gaussian_noise") return CorruptionKind::GaussianNoise;
  if (name == "impulse_noise") return CorruptionKind::ImpulseNoise;
  if (name == "blur") return CorruptionKind::Blur;
  if (name == "brightness") return CorruptionKind::Brightness;
  if (name == "contrast") return CorruptionKind::Contrast;
  throw ConfigError("unknown corruption kind: " + name);
}

std::string corruption_name(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::GaussianNoise: return "gaussian_noise";
    case CorruptionKind::ImpulseNoise: return "impulse_noise";
    case CorruptionKind::Blur: return "blur";
    case CorruptionKind::Brightness: return "brightness";
    case CorruptionKind::Contrast: return "contrast";
  }
  throw ConfigError("unknown corruption kind");
}

const std::vector<std::string>& all_corruption_names() {
  static const std::vector<std::string> names = {"gaussian_noise", "impulse_noise", "blur",
                                                 "brightness", "contrast"};
  return names;
}

namespace {

// Monotone severity schedules, levels 1..5.
constexpr double kNoiseSigma[5] = {0.04, 0.08, 0.12, 0.18, 0.26};
constexpr double kImpulseFrac[5] = {0.01, 0.03, 0.06, 0.10, 0.17};
constexpr int kBlurWidth[5] = {2, 3, 3, 5, 5};
constexpr int kBlurPasses[5] = {1, 1, 2, 2, 3};
constexpr double kBrightness[5] = {0.05, 0.10, 0.15, 0.20, 0.30};
constexpr double kContrast[5] = {0.75, 0.60, 0.50, 0.40, 0.30};

// w x w box filter with edge clamping, assumes square single-plane image.
void box_blur_plane(float* img, int h, int w, int box) {
  std::vector<float> tmp(static_cast<std::size_t>(h) * w);
  const int lo = -(box - 1) / 2;      // even widths lean left
  const int hi = lo + box - 1;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int dy = lo; dy <= hi; ++dy)
        for (int dx = lo; dx <= hi; ++dx) {
          const int yy = std::clamp(y + dy, 0, h - 1);
          const int xx = std::clamp(x + dx, 0, w - 1);
          s += img[yy * w + xx];
        }
      tmp[static_cast<std::size_t>(y) * w + x] = static_cast<float>(s / (box * box));
    }
  std::copy(tmp.begin(), tmp.end(), img);
}

}  // namespace

void apply_corruption(std::vector<float>& images, std::size_t image_size,
                      const CorruptionSpec& spec, std::size_t first_image_index) {
  if (spec.severity < 1 || spec.severity > 5)
    throw ConfigError("corruption severity must be in 1..5");
  if (image_size == 0 || images.size() % image_size != 0)
    throw DimensionError("apply_corruption: buffer is not a whole number of images");
  const int s = spec.severity - 1;
  const std::size_t n = images.size() / image_size;
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(image_size))));

  for (std::size_t i = 0; i < n; ++i) {
    float* img = images.data() + i * image_size;
    Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(spec.kind) * 8 + spec.severity,
                     first_image_index + i));
    switch (spec.kind) {
      case CorruptionKind::GaussianNoise:
        for (std::size_t p = 0; p < image_size; ++p)
          img[p] = static_cast<float>(
              std::clamp(static_cast<double>(img[p]) + rng.normal() * kNoiseSigma[s], 0.0, 1.0));
        break;
      case CorruptionKind::ImpulseNoise:
        for (std::size_t p = 0; p < image_size; ++p)
          if (rng.uniform() < kImpulseFrac[s]) img[p] = rng.uniform() < 0.5 ? 0.0f : 1.0f;
        break;
      case CorruptionKind::Blur:
        if (static_cast<std::size_t>(side) * side != image_size)
          throw DimensionError("blur: non-square single-channel image");
        for (int pass = 0; pass < kBlurPasses[s]; ++pass)
          box_blur_plane(img, side, side, kBlurWidth[s]);
        break;
      case CorruptionKind::Brightness:
        for (std::size_t p = 0; p < image_size; ++p)
          img[p] = static_cast<float>(std::clamp(static_cast<double>(img[p]) + kBrightness[s], 0.0, 1.0));
        break;
      case CorruptionKind::Contrast:
        for (std::size_t p = 0; p < image_size; ++p)
          img[p] = static_cast<float>(
              std::clamp(0.5 + kContrast[s] * (static_cast<double>(img[p]) - 0.5), 0.0, 1.0));
        break;
    }
  }
}

double GaussianMixture::mixture_std() const {
  double mean = 0.0, wsum = 0.0;
  for (const auto& c : components) {
    mean += c.weight * c.mean;
    wsum += c.weight;
  }
  mean /= wsum;
  double var = 0.0;
  for (const auto& c : components)
    var += c.weight / wsum * (c.std * c.std + (c.mean - mean) * (c.mean - mean));
  return std::sqrt(var);
}

std::vector<double> sample_mixture(const GaussianMixture& gm, std::size_t n, std::uint64_t seed) {
  if (gm.components.empty()) throw ConfigError("sample_mixture: empty mixture");
  double wsum = 0.0;
  for (const auto& c : gm.components) {
    if (c.std <= 0.0) throw ConfigError("sample_mixture: non-positive std");
    wsum += c.weight;
  }
  std::vector<double> out(n);
  Rng rng(mix_seed(seed, 0x316421ULL));
  for (std::size_t i = 0; i < n; ++i) {
    double u = rng.uniform() * wsum;
    std::size_t c = 0;
    while (c + 1 < gm.components.size() && u >= gm.components[c].weight) {
      u -= gm.components[c].weight;
      ++c;
    }
    out[i] = gm.components[c].mean + gm.components[c].std * rng.normal();
  }
  return out;
}

std::vector<double> quantile_boundaries(const std::vector<double>& samples, int k) {
  if (k < 2) throw ContractError("quantile_boundaries: K must be >= 2");
  if (samples.size() < static_cast<std::size_t>(k))
    throw ContractError("quantile_boundaries: need n >= K");
  std::vector<double> sorted = samples;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> boundaries(static_cast<std::size_t>(k - 1));
  for (int j = 1; j < k; ++j) {
    const std::size_t pos = static_cast<std::size_t>(j) * sorted.size() / k;
    boundaries[static_cast<std::size_t>(j - 1)] = sorted[pos - 1];
  }
  return boundaries;
}

double clustering_entropy_bits(const std::vector<double>& boundaries,
                               const std::vector<double>& samples) {
  const std::size_t k = boundaries.size() + 1;
  std::vector<std::size_t> counts(k, 0);
  for (double x : samples) {
    // first interval whose right boundary is >= x; exact boundary goes left
    const std::size_t bin = static_cast<std::size_t>(
        std::lower_bound(boundaries.begin(), boundaries.end(), x) - boundaries.begin());
    ++counts[bin];
  }
  double h = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    if (counts[j] == 0) continue;
    const double p = static_cast<double>(counts[j]) / static_cast<double>(samples.size());
    h -= p * std::log2(p);
  }
  return h;
}

}  // namespace clust3
