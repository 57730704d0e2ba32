#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "loss.hpp"
#include "support.hpp"

using namespace dygl;

namespace {

double value_of(const std::function<Var(Tape&)>& f) {
  Tape tape;
  return f(tape).value().item();
}

double dice(std::vector<double> p, std::vector<double> g, double eps = 1e-6) {
  const Shape s{static_cast<std::int64_t>(p.size())};
  return value_of([&](Tape& t) { return dice_loss(t.constant(Tensor::from(s, p)), Tensor::from(s, g), eps); });
}

double bce(std::vector<double> x, std::vector<double> g) {
  const Shape s{static_cast<std::int64_t>(x.size())};
  return value_of([&](Tape& t) { return bce_loss(t.constant(Tensor::from(s, x)), Tensor::from(s, g)); });
}

}  // namespace

TEST_SUITE("loss") {

TEST_CASE("dice examples") {
  CHECK(std::abs(dice({1, 0, 1}, {1, 0, 1})) < 1e-6);
  CHECK(dice({1, 0}, {0, 1}) == doctest::Approx(1 - 1e-6 / (2 + 1e-6)).epsilon(1e-15));
  const double eps = 1e-6;
  // sum p + sum g = 2, so the smoothed ratio is (1 + eps) / (2 + eps).
  CHECK(std::abs(dice({0.5, 0.5}, {1, 0}) - (1 - (1 + eps) / (2 + eps))) < 1e-15);
  CHECK(std::abs(dice({0.5, 0.5}, {1, 0}) - 0.5) < 1e-6);
  CHECK_THROWS_AS(dice({1.5, 0}, {1, 0}), Error);
  CHECK_THROWS_AS(dice({0.5, 0}, {0.5, 0}), Error);
  CHECK_THROWS_AS(dice({0.5, 0}, {1, 0, 0}), Error);
}

TEST_CASE("dice is invariant under pixel permutations") {
  std::mt19937_64 rng(2);
  std::vector<double> p(64), g(64);
  for (std::size_t i = 0; i < 64; ++i) {
    p[i] = std::uniform_real_distribution<double>(0, 1)(rng);
    g[i] = static_cast<double>(rng() & 1);
  }
  const double base = dice(p, g);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::size_t> idx(64);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<double> pp(64), gg(64);
    for (std::size_t i = 0; i < 64; ++i) {
      pp[i] = p[idx[i]];
      gg[i] = g[idx[i]];
    }
    CHECK(std::abs(dice(pp, gg) - base) < 1e-15);
  }
}

TEST_CASE("bce examples") {
  CHECK(std::abs(bce({0}, {1}) - 0.693147) < 1e-5);
  const double sat = bce({50}, {1});
  CHECK(std::isfinite(sat));
  CHECK(sat < 1e-20);
  CHECK(std::isfinite(bce({-1000}, {1})));
  CHECK(std::abs(bce({-1000}, {1}) - 1000) < 1e-9);
  CHECK(std::abs(bce({0, 2}, {1, 0}) - 1.410038) < 1e-4);
  CHECK(std::abs(bce({0, 2}, {1, 0}) - 0.5 * (std::log(2.0) + std::log1p(std::exp(2.0)))) < 1e-15);

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x(8), g(8);
    for (std::size_t i = 0; i < 8; ++i) {
      x[i] = std::uniform_real_distribution<double>(-20, 20)(rng);
      g[i] = static_cast<double>(rng() & 1);
    }
    CHECK(bce(x, g) >= 0);
  }
}

TEST_CASE("hybrid loss is the exact linear combination") {
  std::mt19937_64 rng(4);
  const Tensor x = oracle::random({2, 1, 5, 5}, rng, -4, 4), g = oracle::random_mask({2, 1, 5, 5}, rng);
  const double b = value_of([&](Tape& t) { return bce_loss(t.constant(x), g); });
  const double d = value_of([&](Tape& t) { return dice_loss(sigmoid(t.constant(x)), g, 1e-6); });
  auto hybrid = [&](double lambda) {
    return value_of([&](Tape& t) { return hybrid_loss(t.constant(x), g, LossConfig{lambda, 1e-6}); });
  };
  CHECK(hybrid(0.5) == 0.5 * b + 0.5 * d);
  CHECK(hybrid(1.0) == b);
  CHECK(hybrid(0.0) == d);
  for (double l : {0.1, 0.25, 0.7, 0.9}) CHECK(hybrid(l) == l * b + (1 - l) * d);

  const HybridLossValue v = hybrid_loss_value(x, g, LossConfig{});
  CHECK(v.bce == b);
  CHECK(v.dice == d);
  CHECK(v.total == hybrid(0.5));
  CHECK(0.5 * 0.6 + 0.5 * 0.4 == 0.5);

  CHECK_THROWS_AS(LossConfig({1.5, 1e-6}).validate(), Error);
  CHECK_THROWS_AS(LossConfig({0.5, 0}).validate(), Error);
}

TEST_CASE("hybrid gradient matches finite differences") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    Parameter x("x", oracle::random({2, 1, 4, 4}, rng, -3, 3));
    const Tensor g = oracle::random_mask({2, 1, 4, 4}, rng);
    const GradCheckReport r =
        grad_check([&](Tape& t) { return hybrid_loss(t.param(x), g, LossConfig{}); }, {&x});
    CHECK(r.max_rel_err < 1e-5);
  }
}

TEST_CASE("metrics examples") {
  const Tensor t = Tensor::from({1, 1, 2, 2}, {1, 0, 1, 0});
  const MetricsReport same = evaluate(Tensor::from({1, 1, 2, 2}, {5, -5, 5, -5}), t);
  for (double v : {same.dice, same.iou, same.precision, same.recall, same.specificity, same.accuracy}) CHECK(v == 1.0);

  // TP = FP = FN = TN = 1.
  const MetricsReport m = evaluate(Tensor::from({1, 1, 2, 2}, {5, 5, -5, -5}), Tensor::from({1, 1, 2, 2}, {1, 0, 1, 0}));
  CHECK(m.tp == 1);
  CHECK(m.fp == 1);
  CHECK(m.fn == 1);
  CHECK(m.tn == 1);
  CHECK(m.dice == 0.5);
  CHECK(m.iou == 1.0 / 3);
  CHECK(m.precision == 0.5);
  CHECK(m.recall == 0.5);
  CHECK(m.specificity == 0.5);
  CHECK(m.accuracy == 0.5);

  const MetricsReport empty = evaluate(Tensor::full({1, 1, 2, 2}, -3.0, DType::f64), Tensor::zeros({1, 1, 2, 2}, DType::f64));
  CHECK(empty.recall == 1.0);
  CHECK(empty.specificity == 1.0);
  CHECK(empty.dice == 1.0);
  CHECK(empty.precision == 1.0);

  // Empty target with a false positive: the undefined ratios are 0.
  const MetricsReport fp = evaluate(Tensor::from({1, 1, 1, 2}, {3, -3}), Tensor::zeros({1, 1, 1, 2}, DType::f64));
  CHECK(fp.recall == 0.0);
  CHECK(fp.dice == 0.0);
  CHECK(fp.specificity == 0.5);

  // Logit exactly 0 gives probability 0.5, which is not above the threshold.
  CHECK(evaluate(Tensor::zeros({1, 1, 1, 1}, DType::f64), Tensor::zeros({1, 1, 1, 1}, DType::f64)).tn == 1);
  CHECK_THROWS_AS(evaluate(Tensor::zeros({1, 1, 1, 2}, DType::f64), Tensor::zeros({1, 1, 2, 1}, DType::f64)), Error);
}

TEST_CASE("evaluate matches the confusion oracle on 1000 random masks") {
  std::mt19937_64 rng(1000);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::int64_t n = 1 + static_cast<std::int64_t>(rng() % 3), h = 1 + static_cast<std::int64_t>(rng() % 6),
                       w = 1 + static_cast<std::int64_t>(rng() % 6);
    const double density = std::uniform_real_distribution<double>(0, 1)(rng);
    const Tensor truth = oracle::random_mask({n, 1, h, w}, rng, density);
    const Tensor pred = oracle::random_mask({n, 1, h, w}, rng, density);
    Tensor logits({n, 1, h, w}, DType::f64);
    for (std::size_t i = 0; i < logits.numel(); ++i)
      logits.set(i, (pred.item(i) > 0 ? 1 : -1) * std::uniform_real_distribution<double>(0.01, 8)(rng));
    const MetricsReport got = evaluate(logits, truth);

    double dice = 0, iou = 0, prec = 0, rec = 0, spec = 0, acc = 0;
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
    const auto per = static_cast<std::size_t>(h * w);
    for (std::int64_t b = 0; b < n; ++b) {
      std::vector<int> p(per), t(per);
      for (std::size_t i = 0; i < per; ++i) {
        p[i] = pred.item(static_cast<std::size_t>(b) * per + i) > 0;
        t[i] = truth.item(static_cast<std::size_t>(b) * per + i) > 0;
      }
      const oracle::Counts c = oracle::confusion(p, t);
      const bool clean = c.fp == 0 && c.fn == 0;
      auto r = [&](double num, double den) { return den == 0 ? (clean ? 1.0 : 0.0) : num / den; };
      const double TP = static_cast<double>(c.tp), FP = static_cast<double>(c.fp), FN = static_cast<double>(c.fn),
                   TN = static_cast<double>(c.tn);
      dice += r(2 * TP, 2 * TP + FP + FN);
      iou += r(TP, TP + FP + FN);
      prec += r(TP, TP + FP);
      rec += r(TP, TP + FN);
      spec += r(TN, TN + FP);
      acc += r(TP + TN, TP + TN + FP + FN);
      tp += c.tp;
      fp += c.fp;
      fn += c.fn;
      tn += c.tn;
    }
    const double nn = static_cast<double>(n);
    REQUIRE(got.tp == tp);
    REQUIRE(got.fp == fp);
    REQUIRE(got.fn == fn);
    REQUIRE(got.tn == tn);
    REQUIRE(got.total() == static_cast<std::uint64_t>(n * h * w));
    REQUIRE(got.dice == dice / nn);
    REQUIRE(got.iou == iou / nn);
    REQUIRE(got.precision == prec / nn);
    REQUIRE(got.recall == rec / nn);
    REQUIRE(got.specificity == spec / nn);
    REQUIRE(got.accuracy == acc / nn);
  }
}

TEST_CASE("metrics report formats") {
  Confusion c{3, 1, 1, 5};
  const MetricsReport m = metrics_from_confusion(c);
  CHECK(m.to_record().find("dice=0.750000\n") == 0);
  CHECK(m.to_record().find("tn=5\n") != std::string::npos);
  CHECK(m.to_text().find("Dice         0.750000") == 0);
}

}  // TEST_SUITE
