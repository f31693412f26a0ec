#ifndef CLUST3_TRAIN_HPP
#define CLUST3_TRAIN_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "data.hpp"
#include "model.hpp"
#include "optim.hpp"

namespace clust3 {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 128;
  double lr0 = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<double> milestone_fracs = {0.4, 0.7};
  double lr_decay = 0.1;
  std::uint64_t seed = 1;
  std::map<int, float> layer_lambda;  // per-layer IM weight, default 1
};

struct EpochLog {
  int epoch = 0;  // 1-based
  double lr = 0.0;
  double ce = 0.0;
  double im_mean = 0.0;  // mean per-head L_IM over the epoch
  double total = 0.0;
  double train_accuracy = 0.0;  // running accuracy over training batches
  double test_accuracy = 0.0;
};

// Learning rate for 1-based epoch e: lr0 decayed once per passed milestone,
// milestones at ceil(frac * epochs).
double lr_at_epoch(const TrainConfig& cfg, int epoch);

// Builds a (B,C,H,W) float tensor from dataset rows `indices`.
Tensor<float> make_batch(const Dataset& ds, const std::vector<std::size_t>& indices);
Tensor<float> make_batch_from(const std::vector<float>& images, std::size_t image_size, int channels,
                              int height, int width, const std::vector<std::size_t>& indices);

struct EvalResult {
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;
  std::vector<int> predictions;
};

// Argmax predictions, ties broken toward the lowest class index.
std::vector<int> argmax_rows(const Tensor<float>& logits);

EvalResult evaluate(Model<float>& model, const Dataset& ds, int batch_size = 256,
                    BnMode bn_mode = BnMode::Eval);
EvalResult evaluate_buffer(Model<float>& model, const std::vector<float>& images,
                           const std::vector<std::uint16_t>& labels, int channels, int height,
                           int width, int num_classes, int batch_size = 256,
                           BnMode bn_mode = BnMode::Eval);

// Joint source training per the combined CE + IM objective. Epochs
// [start_epoch+1 .. cfg.epochs] are run; pass a warm optimizer + start_epoch
// to resume from a checkpoint.
std::vector<EpochLog> joint_train(Model<float>& model, const Dataset& train, const Dataset& test,
                                  const TrainConfig& cfg, SgdMomentum<float>& opt,
                                  int start_epoch = 0);

// Mean per-head marginal/conditional entropy of the projector assignments.
// The marginal is pooled over all processed batches before taking the entropy.
struct ProjectorEntropy {
  double mean_h_marg = 0.0;
  double mean_h_cond = 0.0;
};
ProjectorEntropy projector_entropy(Model<float>& model, const Dataset& ds, int batch_size = 128,
                                   int max_batches = 1 << 20);

// Training checkpoint = model + SGD velocity + epoch counter.
void save_train_checkpoint(const std::string& path, const Model<float>& model,
                           const SgdMomentum<float>& opt, int epoch);
int load_train_checkpoint(const std::string& path, Model<float>& model, SgdMomentum<float>& opt);

}  // namespace clust3

#endif
