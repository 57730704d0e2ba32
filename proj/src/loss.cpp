#include "loss.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace dygl {

void LossConfig::validate() const {
  if (!(lambda >= 0 && lambda <= 1)) fail(ErrorCode::configuration, "loss lambda must be in [0,1]");
  if (!(epsilon > 0)) fail(ErrorCode::configuration, "dice epsilon must be > 0");
}

namespace {

void check_target(const Tensor& pred, const Tensor& target, const char* what) {
  if (pred.shape() != target.shape())
    fail(ErrorCode::dimension, std::string(what) + ": prediction " + shape_str(pred.shape()) + " and target " +
                                   shape_str(target.shape()) + " differ");
  for (std::size_t i = 0; i < target.numel(); ++i) {
    const double g = target.item(i);
    if (g != 0.0 && g != 1.0) fail(ErrorCode::contract, std::string(what) + ": target must be binary");
  }
}

}  // namespace

Var dice_loss(Var probs, const Tensor& target, double eps) {
  const Tensor& p = probs.value();
  check_target(p, target, "dice_loss");
  if (!(eps > 0)) fail(ErrorCode::configuration, "dice_loss: eps must be > 0");
  CompensatedSum s_pg, s_p, s_g;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const double pv = p.item(i), gv = target.item(i);
    if (pv < -1e-6 || pv > 1.0 + 1e-6) fail(ErrorCode::contract, "dice_loss: probabilities outside [0,1]");
    s_pg.add(pv * gv);
    s_p.add(pv);
    s_g.add(gv);
  }
  const double num = 2.0 * s_pg.value() + eps, den = s_p.value() + s_g.value() + eps;
  Tensor out({1}, p.dtype());
  out.set(0, 1.0 - num / den);
  const std::size_t pi = probs.id();
  return probs.tape().record(std::move(out), {probs}, [pi, target, num, den](Tape& tp, const Tensor& g, const Tensor&) {
    const Tensor& pv = tp.value(pi);
    Tensor grad(pv.shape(), pv.dtype());
    const double up = g.item(0);
    // d/dp_i [1 - num/den] = -(2 g_i den - num) / den^2
    for (std::size_t i = 0; i < pv.numel(); ++i)
      grad.set(i, -up * (2.0 * target.item(i) * den - num) / (den * den));
    tp.accumulate(pi, grad);
  });
}

Var bce_loss(Var logits, const Tensor& target) {
  const Tensor& x = logits.value();
  check_target(x, target, "bce_loss");
  const double n = static_cast<double>(x.numel());
  CompensatedSum acc;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double v = x.item(i), g = target.item(i);
    acc.add(std::max(v, 0.0) - v * g + std::log1p(std::exp(-std::abs(v))));
  }
  Tensor out({1}, x.dtype());
  out.set(0, acc.value() / n);
  const std::size_t xi = logits.id();
  return logits.tape().record(std::move(out), {logits}, [xi, target, n](Tape& tp, const Tensor& g, const Tensor&) {
    const Tensor& xv = tp.value(xi);
    Tensor grad(xv.shape(), xv.dtype());
    const double up = g.item(0) / n;
    for (std::size_t i = 0; i < xv.numel(); ++i) {
      const double v = xv.item(i);
      const double s = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      grad.set(i, up * (s - target.item(i)));
    }
    tp.accumulate(xi, grad);
  });
}

Var hybrid_loss(Var logits, const Tensor& target, const LossConfig& cfg) {
  cfg.validate();
  Var bce = bce_loss(logits, target);
  Var dice = dice_loss(sigmoid(logits), target, cfg.epsilon);
  return add(scale(bce, cfg.lambda), scale(dice, 1.0 - cfg.lambda));
}

HybridLossValue hybrid_loss_value(const Tensor& logits, const Tensor& target, const LossConfig& cfg) {
  Tape tape;
  Var x = tape.constant(logits);
  Var bce = bce_loss(x, target);
  Var dice = dice_loss(sigmoid(x), target, cfg.epsilon);
  Var total = add(scale(bce, cfg.lambda), scale(dice, 1.0 - cfg.lambda));
  return {bce.value().item(), dice.value().item(), total.value().item()};
}

double dice_loss_value(const Tensor& probs, const Tensor& target, double eps) {
  Tape tape;
  return dice_loss(tape.constant(probs), target, eps).value().item();
}

double bce_loss_value(const Tensor& logits, const Tensor& target) {
  Tape tape;
  return bce_loss(tape.constant(logits), target).value().item();
}

// ---------------------------------------------------------------- metrics

namespace {

double ratio(std::uint64_t num, std::uint64_t den, bool error_free) {
  if (den == 0) return error_free ? 1.0 : 0.0;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

MetricsReport metrics_from_confusion(const Confusion& c) {
  const bool clean = c.fp == 0 && c.fn == 0;
  MetricsReport m;
  m.tp = c.tp;
  m.fp = c.fp;
  m.fn = c.fn;
  m.tn = c.tn;
  m.dice = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, clean);
  m.iou = ratio(c.tp, c.tp + c.fp + c.fn, clean);
  m.precision = ratio(c.tp, c.tp + c.fp, clean);
  m.recall = ratio(c.tp, c.tp + c.fn, clean);
  m.specificity = ratio(c.tn, c.tn + c.fp, clean);
  m.accuracy = ratio(c.tp + c.tn, c.tp + c.tn + c.fp + c.fn, clean);
  return m;
}

MetricsReport evaluate(const Tensor& pred_logits, const Tensor& target, double threshold) {
  if (pred_logits.shape() != target.shape())
    fail(ErrorCode::dimension, "evaluate: prediction " + shape_str(pred_logits.shape()) + " and target " +
                                   shape_str(target.shape()) + " differ");
  const std::size_t images = static_cast<std::size_t>(pred_logits.dim(0));
  const std::size_t per = pred_logits.numel() / images;
  MetricsReport avg;
  for (std::size_t b = 0; b < images; ++b) {
    Confusion c;
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
      const double v = pred_logits.item(i);
      const double prob = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
      const bool pred = prob > threshold;
      const bool truth = target.item(i) > 0.5;
      if (pred && truth) ++c.tp;
      else if (pred) ++c.fp;
      else if (truth) ++c.fn;
      else ++c.tn;
    }
    const MetricsReport m = metrics_from_confusion(c);
    avg.dice += m.dice;
    avg.iou += m.iou;
    avg.precision += m.precision;
    avg.recall += m.recall;
    avg.specificity += m.specificity;
    avg.accuracy += m.accuracy;
    avg.tp += c.tp;
    avg.fp += c.fp;
    avg.fn += c.fn;
    avg.tn += c.tn;
  }
  const double n = static_cast<double>(images);
  avg.dice /= n;
  avg.iou /= n;
  avg.precision /= n;
  avg.recall /= n;
  avg.specificity /= n;
  avg.accuracy /= n;
  return avg;
}

std::string MetricsReport::to_text() const {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "Dice         %.6f\nIoU          %.6f\nPrecision    %.6f\nRecall       %.6f\n"
                "Specificity  %.6f\nAccuracy     %.6f\nTP=%llu FP=%llu FN=%llu TN=%llu\n",
                dice, iou, precision, recall, specificity, accuracy, static_cast<unsigned long long>(tp),
                static_cast<unsigned long long>(fp), static_cast<unsigned long long>(fn),
                static_cast<unsigned long long>(tn));
  return buf;
}

std::string MetricsReport::to_record() const {
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "dice=%.6f\niou=%.6f\nprecision=%.6f\nrecall=%.6f\nspecificity=%.6f\naccuracy=%.6f\n"
                "tp=%llu\nfp=%llu\nfn=%llu\ntn=%llu\n",
                dice, iou, precision, recall, specificity, accuracy, static_cast<unsigned long long>(tp),
                static_cast<unsigned long long>(fp), static_cast<unsigned long long>(fn),
                static_cast<unsigned long long>(tn));
  return buf;
}

}  // namespace dygl
