#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "data.hpp"
#include "loss.hpp"
#include "network.hpp"

namespace dygl {

struct TrainConfig {
  double lr0 = 1e-3;
  double weight_decay = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  int warmup_epochs = 10;
  int total_epochs = 130;
  double poly_power = 0.9;
  int batch_size = 16;
  double clip_norm = 1.0;
  std::uint64_t seed = 42;
  double lambda = 0.5;
  /// Stops after this many optimizer steps; 0 runs all epochs.
  std::int64_t max_steps = 0;
  bool augment = true;

  void validate() const;
  bool apply(const std::string& key, const std::string& value);
  std::string to_text() const;
};

/// A config file holds ModelConfig and TrainConfig keys side by side.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;

  static RunConfig from_text(const std::string& text);
  std::string to_text() const;
};

/// Epoch-boundary schedule: linear warmup to lr0, then polynomial decay to 0.
double lr_at(double epoch, const TrainConfig& cfg);
/// Learning rate used while running 0-based epoch `e`.
double epoch_lr(int e, const TrainConfig& cfg);

/// Scales every gradient by max_norm / ||g|| when the global L2 norm exceeds
/// max_norm; returns the applied scale.
double clip_grad_norm(const std::vector<Parameter*>& params, double max_norm);

struct AdamWState {
  std::int64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

/// theta <- theta * (1 - lr*wd), then the bias-corrected Adam update.
/// Checks every gradient before touching any parameter.
void adamw_step(const std::vector<Parameter*>& params, AdamWState& state, double lr, const TrainConfig& cfg);

std::vector<NamedTensor> export_optimizer(const std::vector<Parameter*>& params, const AdamWState& state);

struct TrainData {
  std::vector<SegmentationSample> train;
  std::vector<SegmentationSample> valid;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0;
  double loss = 0;
  double val_dice = 0;
  double val_iou = 0;

  std::string to_log_line() const;
};

struct TrainResult {
  std::unique_ptr<Model> model;
  std::vector<double> step_losses;
  std::vector<EpochRecord> epochs;
  double best_val_dice = -1;
  int best_epoch = -1;
  std::int64_t steps = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains from scratch. With a non-empty out_dir, writes train.log,
/// last.ckpt after every epoch, best.ckpt on validation improvement and
/// final.ckpt at the end.
TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg, const TrainData& data,
                  const std::string& out_dir, const EpochCallback& on_epoch = {});

/// Eval-mode metrics over a sample list, processed in batches.
MetricsReport evaluate_samples(const Model& model, const std::vector<SegmentationSample>& samples,
                               std::size_t batch_size = 16);

}  // namespace dygl
