#pragma once

#include <cstdint>
#include <string>

#include "autodiff.hpp"

namespace dygl {

struct LossConfig {
  double lambda = 0.5;    // weight of the BCE term
  double epsilon = 1e-6;  // Dice smoothing term

  void validate() const;
};

/// 1 - (2 sum(p g) + eps) / (sum(p) + sum(g) + eps), reduced over every pixel of the batch.
Var dice_loss(Var probs, const Tensor& target, double eps);
/// Mean binary cross-entropy on logits in the fused log-sigmoid form.
Var bce_loss(Var logits, const Tensor& target);
/// lambda * BCE(logits) + (1 - lambda) * Dice(sigmoid(logits)).
Var hybrid_loss(Var logits, const Tensor& target, const LossConfig& cfg);

struct HybridLossValue {
  double bce = 0;
  double dice = 0;
  double total = 0;
};
/// Evaluates the three loss values without recording gradients.
HybridLossValue hybrid_loss_value(const Tensor& logits, const Tensor& target, const LossConfig& cfg);
double dice_loss_value(const Tensor& probs, const Tensor& target, double eps);
double bce_loss_value(const Tensor& logits, const Tensor& target);

struct MetricsReport {
  double dice = 0, iou = 0, precision = 0, recall = 0, specificity = 0, accuracy = 0;
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  /// Human-readable, one metric per line.
  std::string to_text() const;
  /// `key=value` lines with six decimal places.
  std::string to_record() const;
};

struct Confusion {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

/// Per-image metrics averaged over the batch; counts are batch totals.
/// A pixel is predicted positive when sigmoid(logit) > threshold. A ratio with
/// a zero denominator is 1.0 if that image has no FP and no FN, else 0.0.
MetricsReport evaluate(const Tensor& pred_logits, const Tensor& target, double threshold = 0.5);
MetricsReport metrics_from_confusion(const Confusion& c);

}  // namespace dygl
