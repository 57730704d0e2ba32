#include <cmath>
#include <random>

#include "doctest.h"
#include "ops.hpp"
#include "support.hpp"

using namespace dygl;

TEST_SUITE("tensor") {

TEST_CASE("factories validate shape, count and finiteness") {
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), Error);
  CHECK_THROWS_AS(Tensor({0, 3}, DType::f32), Error);
  CHECK_THROWS_AS(Tensor({1, 1, 1, 1, 1}, DType::f32), Error);
  try {
    Tensor::from({2}, {1.0, std::nan("")});
    FAIL("expected a numeric error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::numeric);
  }
  const Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.reshape({3, 2}).item(5) == 6);
  CHECK_THROWS_AS(t.reshape({4, 2}), Error);
  CHECK(t.astype(DType::f32).astype(DType::f64).bit_equal(t));
}

TEST_CASE("conv2d examples") {
  const Tensor x = Tensor::full({1, 1, 3, 3}, 1.0, DType::f64);
  const Tensor w = Tensor::full({1, 1, 3, 3}, 1.0, DType::f64);
  const Tensor y = conv2d(x, w, nullptr, ConvSpec{1, 1, 1, 1});
  CHECK(y.item(4) == 9.0);
  CHECK(y.item(0) == 4.0);
  CHECK(y.item(8) == 4.0);

  std::mt19937_64 rng(3);
  const Tensor x2 = oracle::random({1, 2, 4, 4}, rng);
  const Tensor id = Tensor::full({2, 1, 1, 1}, 1.0, DType::f64);
  CHECK(conv2d(x2, id, nullptr, ConvSpec{1, 0, 1, 2}).bit_equal(x2));

  const Tensor x3 = oracle::random({1, 4, 8, 8}, rng);
  const Tensor w3 = oracle::random({4, 1, 3, 3}, rng);
  const Tensor got = conv2d(x3, w3, nullptr, ConvSpec{1, 2, 2, 4});
  CHECK(oracle::max_abs_diff(got, oracle::conv2d(x3, w3, nullptr, 1, 2, 2, 4)) < 1e-6);
}

TEST_CASE("conv2d matches the nested-loop oracle on 200 random shapes") {
  std::mt19937_64 rng(200);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  for (int trial = 0; trial < 200; ++trial) {
    const int k = pick(0, 1) ? 3 : 1, dil = pick(1, 3), stride = pick(1, 2);
    const int cin = pick(1, 4), depthwise = pick(0, 1);
    const int groups = depthwise ? cin : 1;
    const int cout = depthwise ? cin * pick(1, 2) : pick(1, 4);
    const int pad = pick(0, dil);
    const int h = pick(dil * (k - 1) + 1, 9), w = pick(dil * (k - 1) + 1, 9);
    const Tensor x = oracle::random({pick(1, 2), cin, h, w}, rng);
    const Tensor wt = oracle::random({cout, cin / groups, k, k}, rng);
    const Tensor b = oracle::random({cout}, rng);
    const ConvSpec spec{stride, pad, dil, groups};
    const Tensor got = conv2d(x, wt, &b, spec);
    const Tensor want = oracle::conv2d(x, wt, &b, stride, pad, dil, groups);
    REQUIRE(got.shape() == want.shape());
    CHECK(oracle::max_abs_diff(got, want) < 1e-6);
  }
}

TEST_CASE("conv2d rejects inconsistent channels") {
  const Tensor x({1, 3, 4, 4}, DType::f64);
  const Tensor w({2, 2, 3, 3}, DType::f64);
  CHECK_THROWS_AS(conv2d(x, w, nullptr, ConvSpec{}), Error);
}

TEST_CASE("matmul examples and oracle") {
  const Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  const Tensor b = Tensor::from({2, 2}, {5, 6, 7, 8});
  CHECK(matmul(eye, b).bit_equal(b));
  CHECK(matmul(Tensor::from({1, 2}, {1, 2}), Tensor::from({2, 1}, {3, 4})).item(0) == 11.0);
  CHECK_THROWS_AS(matmul(Tensor({2, 3}, DType::f64), Tensor({2, 3}, DType::f64)), Error);

  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const int m = 1 + static_cast<int>(rng() % 6), k = 1 + static_cast<int>(rng() % 6), p = 1 + static_cast<int>(rng() % 6);
    const Tensor a = oracle::random({m, k}, rng), c = oracle::random({k, p}, rng);
    CHECK(oracle::max_abs_diff(matmul(a, c), oracle::matmul(a, c)) < 1e-6);
  }
  // Batched operands agree with per-slice products.
  const Tensor a3 = oracle::random({3, 3, 5}, rng), b3 = oracle::random({3, 5, 2}, rng);
  const Tensor y3 = matmul(a3, b3);
  const auto as = split(a3.reshape({1, 3, 3, 5}), 1, {1, 1, 1});
  const auto bs = split(b3.reshape({1, 3, 5, 2}), 1, {1, 1, 1});
  const auto ys = split(y3.reshape({1, 3, 3, 2}), 1, {1, 1, 1});
  for (int i = 0; i < 3; ++i)
    CHECK(oracle::max_abs_diff(ys[static_cast<std::size_t>(i)].reshape({3, 2}),
                               oracle::matmul(as[static_cast<std::size_t>(i)].reshape({3, 5}),
                                              bs[static_cast<std::size_t>(i)].reshape({5, 2}))) < 1e-12);
}

TEST_CASE("softmax examples and normalization") {
  const Tensor a = softmax(Tensor::from({1, 2}, {0, 0}), 1);
  CHECK(a.item(0) == 0.5);
  CHECK(a.item(1) == 0.5);
  const Tensor big = softmax(Tensor::from({1, 2}, {1000, 0}), 1);
  CHECK(big.all_finite());
  CHECK(big.item(0) == doctest::Approx(1.0));
  CHECK(big.item(1) < 1e-300);
  const Tensor c = softmax(Tensor::from({1, 3}, {1, 2, 3}), 1);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(c.item(static_cast<std::size_t>(i)) - std::exp(i + 1.0) / z) < 1e-12);
  CHECK(std::abs(c.item(0) - 0.09003) < 1e-5);
  CHECK(std::abs(c.item(2) - 0.66524) < 1e-5);

  std::mt19937_64 rng(11);
  for (int axis = 0; axis < 3; ++axis) {
    const Tensor x = oracle::random({4, 5, 6}, rng, -1e3, 1e3);
    const Tensor y = softmax(x, axis);
    const auto& s = x.shape();
    for (std::int64_t i = 0; i < s[0]; ++i)
      for (std::int64_t j = 0; j < s[1]; ++j)
        for (std::int64_t k = 0; k < s[2]; ++k) {
          if ((axis == 0 && i) || (axis == 1 && j) || (axis == 2 && k)) continue;
          double total = 0;
          for (std::int64_t r = 0; r < s[static_cast<std::size_t>(axis)]; ++r) {
            const std::int64_t ii = axis == 0 ? r : i, jj = axis == 1 ? r : j, kk = axis == 2 ? r : k;
            total += y.item(static_cast<std::size_t>((ii * s[1] + jj) * s[2] + kk));
          }
          CHECK(std::abs(total - 1.0) < 1e-6);
        }
  }
}

TEST_CASE("batchnorm2d examples") {
  Tensor rm = Tensor::zeros({1}, DType::f64), rv = Tensor::full({1}, 1.0, DType::f64);
  const Tensor g1 = Tensor::full({1}, 1.0, DType::f64), b0 = Tensor::zeros({1}, DType::f64);
  const Tensor x = Tensor::from({1, 1, 2, 2}, {-1, 1, -1, 1});
  const auto tr = batchnorm2d(x, g1, b0, rm, rv, true, 0.1, 1e-5);
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(tr.output.item(i) - x.item(i)) < 1e-3);

  Tensor rm2 = Tensor::zeros({1}, DType::f64), rv2 = Tensor::full({1}, 1.0, DType::f64);
  const auto ev = batchnorm2d(Tensor::full({1, 1, 1, 1}, 1.0, DType::f64), Tensor::full({1}, 2.0, DType::f64),
                              Tensor::full({1}, 3.0, DType::f64), rm2, rv2, false, 0.1, 1e-5);
  CHECK(std::abs(ev.output.item(0) - 5.0) < 1e-5);

  std::mt19937_64 rng(5);
  const Tensor xr = oracle::random({2, 3, 4, 4}, rng, -3, 5);
  Tensor rm3 = Tensor::zeros({3}, DType::f64), rv3 = Tensor::full({3}, 1.0, DType::f64);
  const auto r3 = batchnorm2d(xr, Tensor::full({3}, 1.0, DType::f64), Tensor::zeros({3}, DType::f64), rm3, rv3, true,
                              0.1, 1e-5);
  for (std::int64_t c = 0; c < 3; ++c) {
    double s = 0, s2 = 0, m = 0;
    for (std::int64_t b = 0; b < 2; ++b)
      for (std::int64_t p = 0; p < 16; ++p) {
        const double v = oracle::at4(r3.normalized, b, c, p / 4, p % 4);
        s += v;
        s2 += v * v;
        m += oracle::at4(xr, b, c, p / 4, p % 4);
      }
    CHECK(std::abs(s / 32) < 1e-4);
    CHECK(std::abs(s2 / 32 - 1) < 1e-4);
    // Running mean moves 10% of the way to the batch mean.
    CHECK(std::abs(rm3.item(static_cast<std::size_t>(c)) - 0.1 * m / 32) < 1e-12);
  }
}

TEST_CASE("bilinear_sample examples") {
  const Tensor x = Tensor::from({1, 1, 2, 2}, {0, 1, 2, 3});
  CHECK(bilinear_sample(x, Tensor::from({1, 1, 1, 2}, {0, 0})).item(0) == 1.5);
  CHECK(bilinear_sample(x, Tensor::from({1, 1, 1, 2}, {-1, -1})).item(0) == 0.0);
  CHECK(bilinear_sample(x, Tensor::from({1, 1, 1, 2}, {1, 1})).item(0) == 3.0);
}

TEST_CASE("bilinear_sample matches the clamp-and-lerp oracle") {
  std::mt19937_64 rng(31);
  {
    const Tensor x = oracle::random({1, 2, 5, 5}, rng);
    const Tensor grid = oracle::random({1, 1, 50, 2}, rng, -1.2, 1.2);
    CHECK(oracle::max_abs_diff(bilinear_sample(x, grid), oracle::bilinear_sample(x, grid)) < 1e-6);
  }
  for (int trial = 0; trial < 200; ++trial) {
    const std::int64_t n = 1 + static_cast<std::int64_t>(rng() % 2), c = 1 + static_cast<std::int64_t>(rng() % 3);
    const std::int64_t h = 1 + static_cast<std::int64_t>(rng() % 6), w = 1 + static_cast<std::int64_t>(rng() % 6);
    const Tensor x = oracle::random({n, c, h, w}, rng);
    const Tensor grid = oracle::random({n, 3, 4, 2}, rng, -1.3, 1.3);
    CHECK(oracle::max_abs_diff(bilinear_sample(x, grid), oracle::bilinear_sample(x, grid)) < 1e-6);
  }
}

TEST_CASE("bilinear_sample on the pixel-centre grid is the identity") {
  std::mt19937_64 rng(8);
  const std::int64_t h = 5, w = 7;
  const Tensor x = oracle::random({2, 3, h, w}, rng);
  Tensor grid({2, h, w, 2}, DType::f64);
  for (std::int64_t b = 0; b < 2; ++b)
    for (std::int64_t i = 0; i < h; ++i)
      for (std::int64_t j = 0; j < w; ++j) {
        const auto base = static_cast<std::size_t>(((b * h + i) * w + j) * 2);
        grid.set(base, (2.0 * static_cast<double>(j) + 1) / w - 1);
        grid.set(base + 1, (2.0 * static_cast<double>(i) + 1) / h - 1);
      }
  CHECK(oracle::max_abs_diff(bilinear_sample(x, grid), x) < 1e-6);
}

TEST_CASE("resize_bilinear") {
  const Tensor c = resize_bilinear(Tensor::full({1, 1, 2, 2}, 7.0, DType::f64), 224, 224);
  for (std::size_t i = 0; i < c.numel(); ++i) REQUIRE(c.item(i) == doctest::Approx(7.0).epsilon(1e-12));
  const Tensor x = Tensor::from({1, 1, 2, 2}, {0, 1, 2, 3});
  const Tensor y = resize_bilinear(x, 4, 4);
  CHECK(y.item(0) == 0.0);
  CHECK(y.item(3) == 1.0);
  CHECK(y.item(12) == 2.0);
  CHECK(y.item(15) == 3.0);
  // Interior entries follow the half-pixel source mapping.
  for (std::int64_t i = 0; i < 4; ++i)
    for (std::int64_t j = 0; j < 4; ++j)
      CHECK(std::abs(y.item(static_cast<std::size_t>(i * 4 + j)) -
                     oracle::lerp_at(x, 0, 0, (j + 0.5) / 2 - 0.5, (i + 0.5) / 2 - 0.5)) < 1e-12);
  std::mt19937_64 rng(2);
  const Tensor r = oracle::random({1, 2, 3, 5}, rng);
  CHECK(resize_bilinear(r, 3, 5).bit_equal(r));
}

TEST_CASE("elementwise ops") {
  CHECK(unary(Tensor::from({1}, {0}), UnaryOp::sigmoid).item(0) == 0.5);
  CHECK(unary(Tensor::from({1}, {0}), UnaryOp::tanh).item(0) == 0.0);
  CHECK(std::abs(unary(Tensor::from({1}, {50}), UnaryOp::tanh).item(0) - 1.0) < 1e-9);
  CHECK(unary(Tensor::from({2}, {-1, 2}), UnaryOp::relu).to_vector() == std::vector<double>{0, 2});
  CHECK(binary(Tensor::from({2}, {1, 2}), Tensor::from({2}, {3, 4}), BinaryOp::add).to_vector() ==
        std::vector<double>{4, 6});
  CHECK(scale(Tensor::from({2}, {1, -2}), 3).to_vector() == std::vector<double>{3, -6});
  // Per-channel [C] operand over [N,C,H,W].
  const Tensor x = Tensor::full({2, 3, 2, 2}, 1.0, DType::f64);
  const Tensor y = binary(x, Tensor::from({3}, {1, 2, 3}), BinaryOp::mul);
  CHECK(oracle::at4(y, 1, 2, 1, 1) == 3.0);
  CHECK(oracle::at4(y, 0, 1, 0, 1) == 2.0);
  CHECK_THROWS_AS(binary(x, Tensor::from({2}, {1, 2}), BinaryOp::add), Error);
}

TEST_CASE("concat and split are inverse") {
  std::mt19937_64 rng(4);
  const Tensor a = oracle::random({1, 2, 2, 2}, rng), b = oracle::random({1, 3, 2, 2}, rng);
  const Tensor c = concat({a, b}, 1);
  CHECK(c.shape() == Shape{1, 5, 2, 2});
  const auto parts = split(c, 1, {2, 3});
  CHECK(parts[0].bit_equal(a));
  CHECK(parts[1].bit_equal(b));
  const Tensor x = oracle::random({1, 64, 3, 3}, rng);
  const auto halves = split(x, 1, {32, 32});
  CHECK(halves[0].shape() == Shape{1, 32, 3, 3});
  CHECK(concat(halves, 1).bit_equal(x));
  for (int axis = 0; axis < 4; ++axis) {
    const Tensor z = oracle::random({4, 4, 4, 4}, rng);
    CHECK(concat(split(z, axis, {1, 3}), axis).bit_equal(z));
  }
  CHECK_THROWS_AS(split(x, 1, {30, 30}), Error);
  CHECK_THROWS_AS(concat({a, oracle::random({1, 3, 3, 2}, rng)}, 1), Error);
}

TEST_CASE("depth_to_space layout") {
  Tensor x({1, 4, 1, 1}, DType::f64);
  for (std::size_t i = 0; i < 4; ++i) x.set(i, static_cast<double>(i));
  const Tensor y = depth_to_space(x, 2);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  CHECK(y.to_vector() == std::vector<double>{0, 1, 2, 3});
  std::mt19937_64 rng(1);
  const Tensor r = oracle::random({2, 8, 3, 3}, rng);
  CHECK(space_to_depth(depth_to_space(r, 2), 2).bit_equal(r));
}

TEST_CASE("ops are deterministic") {
  std::mt19937_64 rng(9);
  const Tensor x = oracle::random({2, 3, 6, 6}, rng), w = oracle::random({4, 3, 3, 3}, rng);
  CHECK(conv2d(x, w, nullptr, ConvSpec{1, 1, 1, 1}).bit_equal(conv2d(x, w, nullptr, ConvSpec{1, 1, 1, 1})));
  const Tensor g = oracle::random({2, 4, 4, 2}, rng, -1, 1);
  CHECK(bilinear_sample(x, g).bit_equal(bilinear_sample(x, g)));
  CHECK(softmax(x, 3).bit_equal(softmax(x, 3)));
}

}  // TEST_SUITE
