#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "micronet/augment.hpp"
#include "micronet/errors.hpp"
#include "micronet/image.hpp"
#include "micronet/network.hpp"
#include "micronet/preprocess.hpp"

namespace micronet::train {

/// Per-pixel loss multiplier, row-major H x W.
struct WeightMap {
  int height = 0;
  int width = 0;
  std::vector<double> w;

  double at(int y, int x) const { return w[static_cast<std::size_t>(y) * width + x]; }
};

/// Radius beyond which an object no longer contributes to the separation term of
/// `weight_map`; there the term is below 1e-12 * w0.
double separation_cutoff(double sigma);

/// w = wc + w0 exp(-(d1 + d2)^2 / (2 sigma^2)); d1/d2 are Euclidean distances to the
/// nearest and second-nearest objects (0 inside an object). wc = max(1, N_major/N_class)
/// per class over this mask. Fewer than two objects: separation term 0.
WeightMap weight_map(const InstanceMask& truth, double w0 = 10.0, double sigma = 5.0);

/// -Σ w log p[truth] / Σ w with p clamped to >= 1e-12. `probabilities` is 2 x H x W.
double weighted_ce(const Image& probabilities, const BinaryMask& truth, const WeightMap& w);

/// Batch form over an N x 2 x H x W tensor (one mask and map per image). When
/// `grad` is given, scale * dL/dp is accumulated into it (resized if empty).
double weighted_ce(const nn::Tensor& probabilities, const std::vector<BinaryMask>& truth,
                   const std::vector<WeightMap>& w, nn::Tensor* grad = nullptr, double scale = 1.0);

/// l_o + (l_a1 + l_a2 + l_a3) / epoch, epoch >= 1.
double total_loss(double l_o, double l_a1, double l_a2, double l_a3, int epoch);

/// base / 10^floor(epoch / 5).
double lr_at(int epoch, double base = 0.001);

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamParams params = {}) : params_(params) {}
  /// One bias-corrected update. lr = 0 leaves values untouched.
  void step(std::vector<nn::Parameter>& parameters, double lr);
  long steps() const { return t_; }

 private:
  AdamParams params_;
  long t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

struct TrainConfig {
  int epochs = 25;
  double base_lr = 0.001;
  int batch_size = 5;
  int patches_per_image = 8;  // random patches drawn per training image per epoch
  long max_steps = 0;         // 0 = no cap
  std::uint64_t seed = 0;
  double w0 = 10.0;
  double sigma = 5.0;
  double init_stddev = 0.1;
  AdamParams adam;
  preprocess::PatchSpec patch;
  augment::Recipe augment;
  bool augment_enabled = true;

  void validate() const;
};

struct EpochLog {
  int epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  long steps = 0;  // optimizer steps completed so far
};

struct TrainResult {
  std::vector<EpochLog> history;
  int best_epoch = 0;  // 1-based
  std::filesystem::path best_checkpoint;
  std::vector<double> step_losses;  // total loss of every optimizer step
};

/// Index of the smallest finite loss (first on ties).
std::size_t select_checkpoint(const std::vector<double>& validation_losses);

class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

/// Per-epoch CSV with a fixed column order and 6-decimal fields.
std::string curves_csv(const std::vector<EpochLog>& history);

/// Trains `net` (initialised here from cfg.seed). Validation loss is the main-output
/// weighted loss over tiled validation patches in eval mode; with no validation data
/// the training loss stands in. Each epoch writes `<run_dir>/checkpoints/epoch_NNN.ckpt`
/// and rewrites `curves.csv`; `best_checkpoint` names the argmin. The network ends
/// holding the selected weights. Non-finite loss restores the last finite checkpoint
/// and throws TrainingDiverged.
TrainResult train(nn::Network& net, const std::vector<ImageSample>& train_set,
                  const std::vector<ImageSample>& validation_set, const TrainConfig& cfg,
                  const std::filesystem::path& run_dir,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

/// Pixel agreement between argmax(p_o) and the truth, over a batch.
double pixel_agreement(const nn::Tensor& probabilities, const std::vector<BinaryMask>& truth);

}  // namespace micronet::train
