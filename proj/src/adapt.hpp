#ifndef CLUST3_ADAPT_HPP
#define CLUST3_ADAPT_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "model.hpp"

namespace clust3 {

enum class AdaptMethod { Clust3, Ptbn, Tent, Source };

AdaptMethod adapt_method_from_name(const std::string& name);
std::string adapt_method_name(AdaptMethod m);

struct AdaptConfig {
  std::vector<int> checkpoints = {1, 3, 5, 10, 20, 50, 100};
  double lr = 1e-5;  // Adam, IM objective
  int batch_size = 128;
  int J = 2;  // highest adapted extractor block
  std::vector<int> tent_checkpoints = {1, 3, 5, 10};
  double tent_lr = 1e-3;  // Adam, prediction-entropy objective
  int max_batches = 3;    // stream length per corruption
  std::uint64_t seed = 1;
};

// One adaptation episode. Checkpoint 0 is always present and corresponds to
// the unadapted batch-statistics forward (PTBN-style). Labels never enter
// here; accuracy is the caller's concern.
struct EpisodeTrace {
  std::map<int, std::vector<int>> predictions_at;  // checkpoint -> argmax predictions
  std::map<int, double> im_at;                     // checkpoint -> total L_IM over heads
  std::map<int, double> h_cond_at, h_marg_at;      // mean per-head entropies
  std::vector<double> im_per_iter;                 // L_IM seen by the optimizer, index 0 = pre-step
  bool nan_fallback = false;
};

// Episodic ClusT3 adaptation: restore snapshot, run IM-gradient steps on
// extractor blocks 1..J with batch-statistics BN forwards, record predictions
// at each checkpoint, restore snapshot again.
EpisodeTrace adapt_batch(Model<float>& model, const ModelSnapshot<float>& snapshot,
                         const Tensor<float>& x, const AdaptConfig& cfg);

// Prediction-time batch normalization: batch-statistics forward, no gradient
// steps, no persisted state.
std::vector<int> ptbn_predict(Model<float>& model, const Tensor<float>& x);

// TENT baseline: episodic Adam steps on BN affine parameters only, minimizing
// mean prediction entropy.
EpisodeTrace tent_batch(Model<float>& model, const ModelSnapshot<float>& snapshot,
                        const Tensor<float>& x, const std::vector<int>& checkpoints, double lr);

struct StreamResult {
  std::vector<int> checkpoints;        // recorded checkpoints, 0 first
  std::map<int, double> accuracy_at;   // mean accuracy over the stream
  std::map<int, double> mean_im_at;
  double max_accuracy = 0.0;           // max over recorded checkpoints
  int best_checkpoint = 0;
  std::vector<EpisodeTrace> episodes;  // one per batch
};

// Runs one method over a fixed sequence of batches. `model` must carry the
// source state; a snapshot is taken once and every episode resets to it.
StreamResult run_stream(Model<float>& model, const std::vector<Tensor<float>>& batches,
                        const std::vector<std::vector<int>>& labels, AdaptMethod method,
                        const AdaptConfig& cfg);

}  // namespace clust3

#endif
