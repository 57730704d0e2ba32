#pragma once

// Naive reference implementations used as oracles. These deliberately avoid
// the library's kernels: every value is computed from scalar loops.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "blocks.hpp"
#include "loss.hpp"
#include "network.hpp"
#include "tensor.hpp"

namespace oracle {

using dygl::DType;
using dygl::Shape;
using dygl::Tensor;

inline Tensor random(Shape shape, std::mt19937_64& rng, double lo = -1, double hi = 1, DType dt = DType::f64) {
  Tensor t(std::move(shape), dt);
  std::uniform_real_distribution<double> u(lo, hi);
  for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, u(rng));
  return t;
}

inline Tensor random_mask(Shape shape, std::mt19937_64& rng, double p = 0.5) {
  Tensor t(std::move(shape), DType::f64);
  std::bernoulli_distribution b(p);
  for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, b(rng) ? 1.0 : 0.0);
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.item(i) - b.item(i)));
  return m;
}

inline double at4(const Tensor& t, std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d) {
  const auto& s = t.shape();
  return t.item(static_cast<std::size_t>(((a * s[1] + b) * s[2] + c) * s[3] + d));
}

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int pad, int dil, int groups) {
  const auto n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const auto cout = w.dim(0), cpg = w.dim(1), k = w.dim(2);
  const auto oh = (h + 2 * pad - dil * (k - 1) - 1) / stride + 1;
  const auto ow = (wd + 2 * pad - dil * (k - 1) - 1) / stride + 1;
  const auto opg = cout / groups;
  (void)cin;
  Tensor y({n, cout, oh, ow}, DType::f64);
  std::size_t idx = 0;
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t o = 0; o < cout; ++o)
      for (std::int64_t i = 0; i < oh; ++i)
        for (std::int64_t j = 0; j < ow; ++j) {
          double acc = bias ? bias->item(static_cast<std::size_t>(o)) : 0.0;
          const std::int64_t g = o / opg;
          for (std::int64_t c = 0; c < cpg; ++c)
            for (std::int64_t ki = 0; ki < k; ++ki)
              for (std::int64_t kj = 0; kj < k; ++kj) {
                const std::int64_t yy = i * stride - pad + ki * dil, xx = j * stride - pad + kj * dil;
                if (yy < 0 || yy >= h || xx < 0 || xx >= wd) continue;
                acc += at4(w, o, c, ki, kj) * at4(x, b, g * cpg + c, yy, xx);
              }
          y.set(idx++, acc);
        }
  return y;
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto m = a.dim(0), k = a.dim(1), p = b.dim(1);
  Tensor y({m, p}, DType::f64);
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < p; ++j) {
      double acc = 0;
      for (std::int64_t t = 0; t < k; ++t)
        acc += a.item(static_cast<std::size_t>(i * k + t)) * b.item(static_cast<std::size_t>(t * p + j));
      y.set(static_cast<std::size_t>(i * p + j), acc);
    }
  return y;
}

/// Samples channel plane (b, c) at pixel-centre coordinates (u, v) with
/// border clamping: u in [0, W-1] addresses column centres.
inline double lerp_at(const Tensor& x, std::int64_t b, std::int64_t c, double u, double v) {
  const auto h = x.dim(2), w = x.dim(3);
  u = std::clamp(u, 0.0, static_cast<double>(w - 1));
  v = std::clamp(v, 0.0, static_cast<double>(h - 1));
  const auto x0 = static_cast<std::int64_t>(std::floor(u)), y0 = static_cast<std::int64_t>(std::floor(v));
  const auto x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double fx = u - static_cast<double>(x0), fy = v - static_cast<double>(y0);
  return (1 - fy) * ((1 - fx) * at4(x, b, c, y0, x0) + fx * at4(x, b, c, y0, x1)) +
         fy * ((1 - fx) * at4(x, b, c, y1, x0) + fx * at4(x, b, c, y1, x1));
}

inline Tensor bilinear_sample(const Tensor& x, const Tensor& grid) {
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), gh = grid.dim(1), gw = grid.dim(2);
  Tensor y({n, c, gh, gw}, DType::f64);
  std::size_t idx = 0;
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t i = 0; i < gh; ++i)
        for (std::int64_t j = 0; j < gw; ++j) {
          const double gx = at4(grid, b, i, j, 0), gy = at4(grid, b, i, j, 1);
          const double u = ((gx + 1) * static_cast<double>(w) - 1) / 2;
          const double v = ((gy + 1) * static_cast<double>(h) - 1) / 2;
          y.set(idx++, lerp_at(x, b, ch, u, v));
        }
  return y;
}

/// Fixed 2x upsampling where output pixel j reads input position j/2 - 1/4
/// (the quarter-pixel lattice in pixel-centre units).
inline Tensor quarter_pixel_upsample(const Tensor& x) {
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor y({n, c, 2 * h, 2 * w}, DType::f64);
  std::size_t idx = 0;
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t i = 0; i < 2 * h; ++i)
        for (std::int64_t j = 0; j < 2 * w; ++j)
          y.set(idx++, lerp_at(x, b, ch, static_cast<double>(j) / 2 - 0.25, static_cast<double>(i) / 2 - 0.25));
  return y;
}

/// Token-loop attention: DyT, shared 1x1 qkv, scores q_t . k_s / sqrt(d),
/// softmax over s, then the optional projection.
inline Tensor attention(const dygl::SingleHeadAttention& a, const Tensor& x) {
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), t = h * w, d = a.dim;
  const Tensor& wq = a.qkv.weight->value;
  const Tensor& qb = a.qv_bias->value;
  const double alpha = a.dyt->alpha->value.item(0);
  Tensor out({n, c, h, w}, DType::f64);
  for (std::int64_t b = 0; b < n; ++b) {
    std::vector<double> xn(static_cast<std::size_t>(c * t));
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t p = 0; p < t; ++p)
        xn[static_cast<std::size_t>(ch * t + p)] =
            a.dyt->gamma->value.item(static_cast<std::size_t>(ch)) * std::tanh(alpha * at4(x, b, ch, p / w, p % w)) +
            a.dyt->beta->value.item(static_cast<std::size_t>(ch));
    auto proj = [&](std::int64_t row, std::int64_t p) {
      double acc = 0;
      for (std::int64_t ch = 0; ch < c; ++ch)
        acc += wq.item(static_cast<std::size_t>(row * c + ch)) * xn[static_cast<std::size_t>(ch * t + p)];
      return acc;
    };
    std::vector<double> q(static_cast<std::size_t>(d * t)), k(q.size()), v(q.size());
    for (std::int64_t j = 0; j < d; ++j)
      for (std::int64_t p = 0; p < t; ++p) {
        const auto i = static_cast<std::size_t>(j * t + p);
        q[i] = proj(j, p) + qb.item(static_cast<std::size_t>(j));
        k[i] = proj(d + j, p);
        v[i] = proj(2 * d + j, p) + qb.item(static_cast<std::size_t>(d + j));
      }
    std::vector<double> o(static_cast<std::size_t>(d * t));
    for (std::int64_t tq = 0; tq < t; ++tq) {
      std::vector<double> s(static_cast<std::size_t>(t));
      double mx = -1e300;
      for (std::int64_t tk = 0; tk < t; ++tk) {
        double acc = 0;
        for (std::int64_t j = 0; j < d; ++j)
          acc += q[static_cast<std::size_t>(j * t + tq)] * k[static_cast<std::size_t>(j * t + tk)];
        s[static_cast<std::size_t>(tk)] = acc / std::sqrt(static_cast<double>(d));
        mx = std::max(mx, s[static_cast<std::size_t>(tk)]);
      }
      double z = 0;
      for (auto& e : s) z += (e = std::exp(e - mx));
      for (std::int64_t j = 0; j < d; ++j) {
        double acc = 0;
        for (std::int64_t tk = 0; tk < t; ++tk)
          acc += s[static_cast<std::size_t>(tk)] / z * v[static_cast<std::size_t>(j * t + tk)];
        o[static_cast<std::size_t>(j * t + tq)] = acc;
      }
    }
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (std::int64_t p = 0; p < t; ++p) {
        double val;
        if (a.proj) {
          val = a.proj->bias->value.item(static_cast<std::size_t>(ch));
          for (std::int64_t j = 0; j < d; ++j)
            val += a.proj->weight->value.item(static_cast<std::size_t>(ch * d + j)) * o[static_cast<std::size_t>(j * t + p)];
        } else {
          val = o[static_cast<std::size_t>(ch * t + p)];
        }
        out.set(static_cast<std::size_t>(((b * c + ch) * t) + p), val);
      }
  }
  return out;
}

struct Counts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

/// Per-pixel confusion counting for one image given predicted/true labels.
inline Counts confusion(const std::vector<int>& pred, const std::vector<int>& truth) {
  Counts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] && truth[i]) ++c.tp;
    else if (pred[i]) ++c.fp;
    else if (truth[i]) ++c.fn;
    else ++c.tn;
  }
  return c;
}

// ---------------------------------------------------------------- parameter counting

inline std::int64_t conv(std::int64_t cin, std::int64_t cout, std::int64_t k, std::int64_t groups = 1,
                         bool bias = true) {
  return cout * (cin / groups) * k * k + (bias ? cout : 0);
}
inline std::int64_t bn(std::int64_t c) { return 2 * c; }
inline std::int64_t dyt(std::int64_t c) { return 1 + 2 * c; }
inline std::int64_t attention(std::int64_t c, std::int64_t d) {
  return dyt(c) + conv(c, 3 * d, 1, 1, false) + 2 * d + (d != c ? conv(d, c, 1) : 0);
}
inline std::int64_t msdc(std::int64_t c, std::int64_t branches) { return branches * conv(c, c, 3, c, false) + bn(c); }
inline std::int64_t ffn(std::int64_t c, double ratio) {
  const std::int64_t h = std::max<std::int64_t>(1, std::llround(ratio * static_cast<double>(c)));
  return conv(c, h, 1) + conv(h, c, 1);
}
inline std::int64_t shdc(std::int64_t c, bool fusion, double rho, std::int64_t branches, double ffn_ratio) {
  std::int64_t n = conv(c, c, 3, c) + ffn(c, ffn_ratio);
  if (fusion) {
    const std::int64_t cg = std::llround(rho * static_cast<double>(c));
    n += attention(cg, cg) + msdc(c - cg, branches) + conv(c, c, 1);
  }
  return n;
}
inline std::int64_t dyfusionup(std::int64_t in, std::int64_t skip, std::int64_t out, std::int64_t groups,
                               std::int64_t branches) {
  return conv(in, 2 * groups * 4, 1) + conv(in, skip, 1) + msdc(2 * skip, branches) + conv(2 * skip, out, 3);
}

inline std::int64_t model_params(const dygl::ModelConfig& m) {
  const auto& c = m.stage_channels;
  const auto r = static_cast<std::int64_t>(m.dilation_rates.size());
  std::int64_t n = conv(m.input_channels, c[0], 3) + m.blocks_per_stage[0] * conv(c[0], c[0], 3);
  for (std::size_t s = 1; s < 4; ++s)
    n += conv(c[s - 1], c[s], 3) + m.blocks_per_stage[s] * shdc(c[s], s > 1, m.split_ratio, r, m.ffn_ratio);
  n += dyfusionup(c[3], c[2], c[2], m.sampler_groups, r) + dyfusionup(c[2], c[1], c[1], m.sampler_groups, r) +
       dyfusionup(c[1], c[0], c[0], m.sampler_groups, r) +
       dyfusionup(c[0], m.input_channels, c[0], m.sampler_groups, r);
  return n + conv(c[0], m.output_channels, 1);
}

// ---------------------------------------------------------------- files

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() / ("dygl_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace oracle
