#include "ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace dygl {

KinkProbe& kink_probe() {
  thread_local KinkProbe probe;
  return probe;
}

namespace {

using i64 = std::int64_t;

i64 floor_div(i64 a, i64 b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }
i64 ceil_div(i64 a, i64 b) { return -floor_div(-a, b); }

void require_rank(const Tensor& t, int rank, const char* what) {
  if (t.rank() != rank)
    fail(ErrorCode::dimension,
         std::string(what) + " expects rank " + std::to_string(rank) + ", got " + shape_str(t.shape()));
}

void require_same_dtype(const Tensor& a, const Tensor& b, const char* what) {
  if (a.dtype() != b.dtype()) fail(ErrorCode::contract, std::string(what) + ": dtype mismatch");
}

struct ConvGeometry {
  i64 n, cin, h, w, cout, kh, kw, oh, ow, cin_g, cout_g;
  int stride, pad, dil, groups;

  // Output column range [lo, hi) for which the tap at kernel column kx lands inside the input.
  std::pair<i64, i64> col_range(i64 kx) const {
    i64 off = kx * dil - pad;
    i64 lo = std::max<i64>(0, ceil_div(-off, stride));
    i64 hi = std::min<i64>(ow, floor_div(w - 1 - off, stride) + 1);
    return {lo, std::max(lo, hi)};
  }
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& weight, const ConvSpec& spec) {
  require_rank(input, 4, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  require_same_dtype(input, weight, "conv2d");
  if (spec.stride < 1 || spec.dilation < 1 || spec.padding < 0 || spec.groups < 1)
    fail(ErrorCode::configuration, "conv2d: invalid stride/padding/dilation/groups");
  ConvGeometry g{};
  g.n = input.dim(0);
  g.cin = input.dim(1);
  g.h = input.dim(2);
  g.w = input.dim(3);
  g.cout = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = spec.stride;
  g.pad = spec.padding;
  g.dil = spec.dilation;
  g.groups = spec.groups;
  if (g.cin % spec.groups != 0 || g.cout % spec.groups != 0)
    fail(ErrorCode::configuration, "conv2d: groups " + std::to_string(spec.groups) + " does not divide channels " +
                                       std::to_string(g.cin) + "->" + std::to_string(g.cout));
  g.cin_g = g.cin / spec.groups;
  g.cout_g = g.cout / spec.groups;
  if (weight.dim(1) != g.cin_g)
    fail(ErrorCode::dimension, "conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " +
                                   shape_str(input.shape()) + " and groups " + std::to_string(spec.groups));
  i64 eff_h = g.h + 2 * g.pad - g.dil * (g.kh - 1) - 1;
  i64 eff_w = g.w + 2 * g.pad - g.dil * (g.kw - 1) - 1;
  if (eff_h < 0 || eff_w < 0) fail(ErrorCode::dimension, "conv2d: kernel does not fit padded input");
  g.oh = eff_h / g.stride + 1;
  g.ow = eff_w / g.stride + 1;
  return g;
}

template <class T>
void conv2d_fwd(const ConvGeometry& g, const T* x, const T* wt, const T* b, T* y) {
  const i64 in_plane = g.h * g.w, out_plane = g.oh * g.ow;
  for (i64 n = 0; n < g.n; ++n) {
    for (i64 oc = 0; oc < g.cout; ++oc) {
      T* yp = y + (n * g.cout + oc) * out_plane;
      if (b) std::fill(yp, yp + out_plane, b[oc]);
      const i64 grp = oc / g.cout_g;
      for (i64 icg = 0; icg < g.cin_g; ++icg) {
        const T* xp = x + (n * g.cin + grp * g.cin_g + icg) * in_plane;
        const T* wp = wt + (oc * g.cin_g + icg) * g.kh * g.kw;
        for (i64 ky = 0; ky < g.kh; ++ky) {
          for (i64 kx = 0; kx < g.kw; ++kx) {
            const T wv = wp[ky * g.kw + kx];
            auto [lo, hi] = g.col_range(kx);
            const i64 xoff = kx * g.dil - g.pad;
            for (i64 oy = 0; oy < g.oh; ++oy) {
              const i64 iy = oy * g.stride - g.pad + ky * g.dil;
              if (iy < 0 || iy >= g.h) continue;
              const T* xr = xp + iy * g.w + xoff;
              T* yr = yp + oy * g.ow;
              if (g.stride == 1) {
                for (i64 ox = lo; ox < hi; ++ox) yr[ox] += wv * xr[ox];
              } else {
                for (i64 ox = lo; ox < hi; ++ox) yr[ox] += wv * xr[ox * g.stride];
              }
            }
          }
        }
      }
    }
  }
}

template <class T>
void conv2d_bwd(const ConvGeometry& g, const T* x, const T* wt, const T* gy, T* gx, T* gw, T* gb) {
  const i64 in_plane = g.h * g.w, out_plane = g.oh * g.ow;
  for (i64 n = 0; n < g.n; ++n) {
    for (i64 oc = 0; oc < g.cout; ++oc) {
      const T* gyp = gy + (n * g.cout + oc) * out_plane;
      if (gb) {
        T acc = 0;
        for (i64 i = 0; i < out_plane; ++i) acc += gyp[i];
        gb[oc] += acc;
      }
      const i64 grp = oc / g.cout_g;
      for (i64 icg = 0; icg < g.cin_g; ++icg) {
        const i64 ic = grp * g.cin_g + icg;
        const T* xp = x + (n * g.cin + ic) * in_plane;
        T* gxp = gx ? gx + (n * g.cin + ic) * in_plane : nullptr;
        const T* wp = wt + (oc * g.cin_g + icg) * g.kh * g.kw;
        T* gwp = gw ? gw + (oc * g.cin_g + icg) * g.kh * g.kw : nullptr;
        for (i64 ky = 0; ky < g.kh; ++ky) {
          for (i64 kx = 0; kx < g.kw; ++kx) {
            const T wv = wp[ky * g.kw + kx];
            auto [lo, hi] = g.col_range(kx);
            const i64 xoff = kx * g.dil - g.pad;
            T wacc = 0;
            for (i64 oy = 0; oy < g.oh; ++oy) {
              const i64 iy = oy * g.stride - g.pad + ky * g.dil;
              if (iy < 0 || iy >= g.h) continue;
              const T* gyr = gyp + oy * g.ow;
              const i64 row = iy * g.w + xoff;
              if (gxp) {
                T* gxr = gxp + row;
                for (i64 ox = lo; ox < hi; ++ox) gxr[ox * g.stride] += wv * gyr[ox];
              }
              if (gwp) {
                const T* xr = xp + row;
                for (i64 ox = lo; ox < hi; ++ox) wacc += gyr[ox] * xr[ox * g.stride];
              }
            }
            if (gwp) gwp[ky * g.kw + kx] += wacc;
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor* bias, const ConvSpec& spec) {
  const ConvGeometry g = conv_geometry(input, weight, spec);
  if (bias) {
    require_same_dtype(input, *bias, "conv2d bias");
    if (bias->rank() != 1 || bias->dim(0) != g.cout)
      fail(ErrorCode::dimension, "conv2d: bias shape " + shape_str(bias->shape()) + " does not match Cout");
  }
  Tensor out({g.n, g.cout, g.oh, g.ow}, input.dtype());
  dispatch(input.dtype(), [&](auto tag) {
    using T = decltype(tag);
    conv2d_fwd<T>(g, input.data<T>(), weight.data<T>(), bias ? bias->data<T>() : nullptr, out.data<T>());
  });
  return out;
}

Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weight, const Tensor& grad_out, const ConvSpec& spec,
                            bool need_input, bool need_weight, bool need_bias) {
  const ConvGeometry g = conv_geometry(input, weight, spec);
  if (grad_out.shape() != Shape{g.n, g.cout, g.oh, g.ow})
    fail(ErrorCode::dimension, "conv2d_backward: grad_out shape mismatch");
  Conv2dGrads grads;
  if (need_input) grads.input = Tensor(input.shape(), input.dtype());
  if (need_weight) grads.weight = Tensor(weight.shape(), weight.dtype());
  if (need_bias) grads.bias = Tensor({g.cout}, weight.dtype());
  dispatch(input.dtype(), [&](auto tag) {
    using T = decltype(tag);
    conv2d_bwd<T>(g, input.data<T>(), weight.data<T>(), grad_out.data<T>(),
                  need_input ? grads.input.data<T>() : nullptr, need_weight ? grads.weight.data<T>() : nullptr,
                  need_bias ? grads.bias.data<T>() : nullptr);
  });
  return grads;
}

// ---------------------------------------------------------------- matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_same_dtype(a, b, "matmul");
  if (a.rank() < 2 || b.rank() < 2) fail(ErrorCode::dimension, "matmul operands need rank >= 2");
  const i64 m = a.dim(-2), k = a.dim(-1), k2 = b.dim(-2), p = b.dim(-1);
  if (k != k2)
    fail(ErrorCode::dimension, "matmul inner extents differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Shape lead_a(a.shape().begin(), a.shape().end() - 2);
  Shape lead_b(b.shape().begin(), b.shape().end() - 2);
  Shape lead;
  if (lead_a.empty()) lead = lead_b;
  else if (lead_b.empty() || lead_a == lead_b) lead = lead_a;
  else fail(ErrorCode::dimension, "matmul batch extents differ: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const i64 batch = static_cast<i64>(shape_numel(lead));
  Shape out_shape = lead;
  out_shape.push_back(m);
  out_shape.push_back(p);
  Tensor out(out_shape, a.dtype());
  const i64 sa = lead_a.empty() ? 0 : m * k, sb = lead_b.empty() ? 0 : k * p;
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pa = a.data<T>();
    const T* pb = b.data<T>();
    T* po = out.data<T>();
    for (i64 bi = 0; bi < batch; ++bi) {
      const T* A = pa + bi * sa;
      const T* B = pb + bi * sb;
      T* O = po + bi * m * p;
      for (i64 i = 0; i < m; ++i) {
        T* orow = O + i * p;
        for (i64 kk = 0; kk < k; ++kk) {
          const T av = A[i * k + kk];
          const T* brow = B + kk * p;
          for (i64 j = 0; j < p; ++j) orow[j] += av * brow[j];
        }
      }
    }
  });
  return out;
}

Tensor transpose_last2(const Tensor& x) {
  if (x.rank() < 2) fail(ErrorCode::dimension, "transpose needs rank >= 2");
  const i64 r = x.dim(-2), c = x.dim(-1);
  Shape s = x.shape();
  std::swap(s[s.size() - 1], s[s.size() - 2]);
  Tensor out(s, x.dtype());
  const i64 batch = static_cast<i64>(x.numel()) / (r * c);
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.data<T>();
    T* po = out.data<T>();
    for (i64 b = 0; b < batch; ++b)
      for (i64 i = 0; i < r; ++i)
        for (i64 j = 0; j < c; ++j) po[b * r * c + j * r + i] = px[b * r * c + i * c + j];
  });
  return out;
}

// ---------------------------------------------------------------- softmax

namespace {

struct AxisLayout {
  i64 outer, len, inner;
};

AxisLayout axis_layout(const Tensor& x, int axis) {
  if (axis < 0) axis += x.rank();
  if (axis < 0 || axis >= x.rank())
    fail(ErrorCode::dimension, "axis out of range for shape " + shape_str(x.shape()));
  AxisLayout l{1, x.shape()[static_cast<std::size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) l.outer *= x.shape()[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < x.rank(); ++i) l.inner *= x.shape()[static_cast<std::size_t>(i)];
  return l;
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  const AxisLayout l = axis_layout(x, axis);
  Tensor out(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.data<T>();
    T* po = out.data<T>();
    for (i64 o = 0; o < l.outer; ++o) {
      for (i64 in = 0; in < l.inner; ++in) {
        const i64 base = o * l.len * l.inner + in;
        T mx = px[base];
        for (i64 i = 1; i < l.len; ++i) mx = std::max(mx, px[base + i * l.inner]);
        T sum = 0;
        for (i64 i = 0; i < l.len; ++i) {
          const T e = std::exp(px[base + i * l.inner] - mx);
          po[base + i * l.inner] = e;
          sum += e;
        }
        const T inv = T(1) / sum;
        for (i64 i = 0; i < l.len; ++i) po[base + i * l.inner] *= inv;
      }
    }
  });
  return out;
}

Tensor softmax_backward(const Tensor& y, const Tensor& grad_y, int axis) {
  const AxisLayout l = axis_layout(y, axis);
  Tensor out(y.shape(), y.dtype());
  dispatch(y.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* py = y.data<T>();
    const T* pg = grad_y.data<T>();
    T* po = out.data<T>();
    for (i64 o = 0; o < l.outer; ++o) {
      for (i64 in = 0; in < l.inner; ++in) {
        const i64 base = o * l.len * l.inner + in;
        T dot = 0;
        for (i64 i = 0; i < l.len; ++i) dot += py[base + i * l.inner] * pg[base + i * l.inner];
        for (i64 i = 0; i < l.len; ++i) {
          const i64 idx = base + i * l.inner;
          po[idx] = py[idx] * (pg[idx] - dot);
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------- batchnorm

BatchNormResult batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                            Tensor& running_var, bool training, double momentum, double eps) {
  require_rank(x, 4, "batchnorm2d input");
  const i64 n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  for (const Tensor* t : std::initializer_list<const Tensor*>{&gamma, &beta, &running_mean, &running_var}) {
    if (t->rank() != 1 || t->dim(0) != c)
      fail(ErrorCode::dimension, "batchnorm2d: per-channel tensor " + shape_str(t->shape()) +
                                     " does not match C=" + std::to_string(c));
    require_same_dtype(x, *t, "batchnorm2d");
  }
  if (!(eps > 0)) fail(ErrorCode::configuration, "batchnorm2d: eps must be > 0");
  const i64 count = n * plane;
  if (training && count <= 1)
    fail(ErrorCode::numeric, "batchnorm2d: degenerate batch statistics (N*H*W == 1) in training mode");

  BatchNormResult r{Tensor(x.shape(), x.dtype()), Tensor(x.shape(), x.dtype()), Tensor({c}, x.dtype())};
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.data<T>();
    T* po = r.output.data<T>();
    T* pn = r.normalized.data<T>();
    T* rm = running_mean.data<T>();
    T* rv = running_var.data<T>();
    const T* pg = gamma.data<T>();
    const T* pb = beta.data<T>();
    for (i64 ch = 0; ch < c; ++ch) {
      double mean, var;
      if (training) {
        double s = 0;
        for (i64 b = 0; b < n; ++b) {
          const T* p = px + (b * c + ch) * plane;
          for (i64 i = 0; i < plane; ++i) s += p[i];
        }
        mean = s / static_cast<double>(count);
        double ss = 0;
        for (i64 b = 0; b < n; ++b) {
          const T* p = px + (b * c + ch) * plane;
          for (i64 i = 0; i < plane; ++i) {
            const double d = p[i] - mean;
            ss += d * d;
          }
        }
        var = ss / static_cast<double>(count);
        const double unbiased = ss / static_cast<double>(count - 1);
        rm[ch] = static_cast<T>((1.0 - momentum) * rm[ch] + momentum * mean);
        rv[ch] = static_cast<T>((1.0 - momentum) * rv[ch] + momentum * unbiased);
      } else {
        mean = rm[ch];
        var = rv[ch];
      }
      const T inv = static_cast<T>(1.0 / std::sqrt(var + eps));
      const T m = static_cast<T>(mean);
      r.inv_std.data<T>()[ch] = inv;
      for (i64 b = 0; b < n; ++b) {
        const i64 off = (b * c + ch) * plane;
        for (i64 i = 0; i < plane; ++i) {
          const T xn = (px[off + i] - m) * inv;
          pn[off + i] = xn;
          po[off + i] = pg[ch] * xn + pb[ch];
        }
      }
    }
  });
  return r;
}

BatchNormGrads batchnorm2d_backward(const BatchNormResult& fwd, const Tensor& gamma, const Tensor& grad_out,
                                    bool training) {
  const Tensor& xn = fwd.normalized;
  const i64 n = xn.dim(0), c = xn.dim(1), plane = xn.dim(2) * xn.dim(3);
  const double count = static_cast<double>(n * plane);
  BatchNormGrads g{Tensor(xn.shape(), xn.dtype()), Tensor({c}, xn.dtype()), Tensor({c}, xn.dtype())};
  dispatch(xn.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pn = xn.data<T>();
    const T* pgo = grad_out.data<T>();
    const T* pgamma = gamma.data<T>();
    const T* pinv = fwd.inv_std.data<T>();
    T* pdx = g.input.data<T>();
    for (i64 ch = 0; ch < c; ++ch) {
      double sum_dy = 0, sum_dy_xn = 0;
      for (i64 b = 0; b < n; ++b) {
        const i64 off = (b * c + ch) * plane;
        for (i64 i = 0; i < plane; ++i) {
          sum_dy += pgo[off + i];
          sum_dy_xn += static_cast<double>(pgo[off + i]) * pn[off + i];
        }
      }
      g.beta.data<T>()[ch] = static_cast<T>(sum_dy);
      g.gamma.data<T>()[ch] = static_cast<T>(sum_dy_xn);
      const T gi = pgamma[ch] * pinv[ch];
      if (training) {
        const T mean_dy = static_cast<T>(sum_dy / count);
        const T mean_dy_xn = static_cast<T>(sum_dy_xn / count);
        for (i64 b = 0; b < n; ++b) {
          const i64 off = (b * c + ch) * plane;
          for (i64 i = 0; i < plane; ++i) pdx[off + i] = gi * (pgo[off + i] - mean_dy - pn[off + i] * mean_dy_xn);
        }
      } else {
        for (i64 b = 0; b < n; ++b) {
          const i64 off = (b * c + ch) * plane;
          for (i64 i = 0; i < plane; ++i) pdx[off + i] = gi * pgo[off + i];
        }
      }
    }
  });
  return g;
}

// ---------------------------------------------------------------- sampling

namespace {

template <class T>
struct Tap {
  i64 x0, x1, y0, y1;
  T wx, wy;
  bool clamped_x, clamped_y;
};

// Normalized coordinate -> clamped pixel-unit tap. Pixel i has center (2i+1)/S - 1.
template <class T>
void axis_tap(T g, i64 size, i64& i0, i64& i1, T& w, bool& clamped) {
  T u = ((g + T(1)) * static_cast<T>(size) - T(1)) / T(2);
  const T hi = static_cast<T>(size - 1);
  clamped = false;
  if (u < T(0)) {
    u = T(0);
    clamped = true;
  } else if (u > hi) {
    u = hi;
    clamped = true;
  }
  i0 = std::min<i64>(static_cast<i64>(std::floor(u)), size - 1);
  i1 = std::min<i64>(i0 + 1, size - 1);
  w = u - static_cast<T>(i0);
}

template <class T>
Tap<T> make_tap(T gx, T gy, i64 h, i64 w) {
  Tap<T> t{};
  axis_tap(gx, w, t.x0, t.x1, t.wx, t.clamped_x);
  axis_tap(gy, h, t.y0, t.y1, t.wy, t.clamped_y);
  return t;
}

void check_sample_args(const Tensor& x, const Tensor& grid) {
  require_rank(x, 4, "bilinear_sample input");
  require_rank(grid, 4, "bilinear_sample grid");
  require_same_dtype(x, grid, "bilinear_sample");
  if (grid.dim(3) != 2) fail(ErrorCode::dimension, "bilinear_sample: grid last extent must be 2");
  if (grid.dim(0) != x.dim(0)) fail(ErrorCode::dimension, "bilinear_sample: batch extents differ");
}

}  // namespace

Tensor bilinear_sample(const Tensor& x, const Tensor& grid) {
  check_sample_args(x, grid);
  const i64 n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const i64 oh = grid.dim(1), ow = grid.dim(2);
  Tensor out({n, c, oh, ow}, x.dtype());
  KinkProbe& probe = kink_probe();
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.data<T>();
    const T* pg = grid.data<T>();
    T* po = out.data<T>();
    for (i64 b = 0; b < n; ++b) {
      for (i64 p = 0; p < oh * ow; ++p) {
        const T* gp = pg + (b * oh * ow + p) * 2;
        const Tap<T> t = make_tap<T>(gp[0], gp[1], h, w);
        if (probe.enabled)
          probe.mix(static_cast<std::uint64_t>(t.x0 * 4099 + t.y0 * 8191 + t.clamped_x * 3 + t.clamped_y * 5));
        for (i64 ch = 0; ch < c; ++ch) {
          const T* plane = px + (b * c + ch) * h * w;
          const T v00 = plane[t.y0 * w + t.x0], v01 = plane[t.y0 * w + t.x1];
          const T v10 = plane[t.y1 * w + t.x0], v11 = plane[t.y1 * w + t.x1];
          const T top = v00 + t.wx * (v01 - v00);
          const T bot = v10 + t.wx * (v11 - v10);
          po[(b * c + ch) * oh * ow + p] = top + t.wy * (bot - top);
        }
      }
    }
  });
  return out;
}

SampleGrads bilinear_sample_backward(const Tensor& x, const Tensor& grid, const Tensor& grad_out, bool need_input,
                                     bool need_grid) {
  check_sample_args(x, grid);
  const i64 n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const i64 oh = grid.dim(1), ow = grid.dim(2);
  SampleGrads g;
  if (need_input) g.input = Tensor(x.shape(), x.dtype());
  if (need_grid) g.grid = Tensor(grid.shape(), grid.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.data<T>();
    const T* pg = grid.data<T>();
    const T* pgo = grad_out.data<T>();
    T* pgx = need_input ? g.input.data<T>() : nullptr;
    T* pgg = need_grid ? g.grid.data<T>() : nullptr;
    const T half_w = static_cast<T>(w) / T(2), half_h = static_cast<T>(h) / T(2);
    for (i64 b = 0; b < n; ++b) {
      for (i64 p = 0; p < oh * ow; ++p) {
        const T* gp = pg + (b * oh * ow + p) * 2;
        const Tap<T> t = make_tap<T>(gp[0], gp[1], h, w);
        T du = 0, dv = 0;
        for (i64 ch = 0; ch < c; ++ch) {
          const T go = pgo[(b * c + ch) * oh * ow + p];
          const i64 off = (b * c + ch) * h * w;
          if (pgx) {
            pgx[off + t.y0 * w + t.x0] += go * (T(1) - t.wx) * (T(1) - t.wy);
            pgx[off + t.y0 * w + t.x1] += go * t.wx * (T(1) - t.wy);
            pgx[off + t.y1 * w + t.x0] += go * (T(1) - t.wx) * t.wy;
            pgx[off + t.y1 * w + t.x1] += go * t.wx * t.wy;
          }
          if (pgg) {
            const T* plane = px + off;
            const T v00 = plane[t.y0 * w + t.x0], v01 = plane[t.y0 * w + t.x1];
            const T v10 = plane[t.y1 * w + t.x0], v11 = plane[t.y1 * w + t.x1];
            du += go * ((v01 - v00) * (T(1) - t.wy) + (v11 - v10) * t.wy);
            dv += go * ((v10 - v00) * (T(1) - t.wx) + (v11 - v01) * t.wx);
          }
        }
        if (pgg) {
          T* gg = pgg + (b * oh * ow + p) * 2;
          gg[0] = t.clamped_x ? T(0) : du * half_w;
          gg[1] = t.clamped_y ? T(0) : dv * half_h;
        }
      }
    }
  });
  return g;
}

namespace {

struct ResizeTap {
  i64 i0, i1;
  double w;
};

std::vector<ResizeTap> resize_taps(i64 in, i64 out) {
  std::vector<ResizeTap> taps(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (i64 o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const i64 i0 = std::min<i64>(static_cast<i64>(std::floor(src)), in - 1);
    taps[static_cast<std::size_t>(o)] = {i0, std::min<i64>(i0 + 1, in - 1), src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, i64 out_h, i64 out_w) {
  require_rank(x, 4, "resize_bilinear input");
  if (out_h < 1 || out_w < 1) fail(ErrorCode::dimension, "resize_bilinear: output extents must be >= 1");
  const i64 planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h == out_h && w == out_w) return x;
  const auto ty = resize_taps(h, out_h), tx = resize_taps(w, out_w);
  Tensor out({x.dim(0), x.dim(1), out_h, out_w}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.data<T>();
    T* po = out.data<T>();
    for (i64 p = 0; p < planes; ++p) {
      const T* src = px + p * h * w;
      T* dst = po + p * out_h * out_w;
      for (i64 oy = 0; oy < out_h; ++oy) {
        const ResizeTap& a = ty[static_cast<std::size_t>(oy)];
        const T wy = static_cast<T>(a.w);
        for (i64 ox = 0; ox < out_w; ++ox) {
          const ResizeTap& b = tx[static_cast<std::size_t>(ox)];
          const T wx = static_cast<T>(b.w);
          const T v00 = src[a.i0 * w + b.i0], v01 = src[a.i0 * w + b.i1];
          const T v10 = src[a.i1 * w + b.i0], v11 = src[a.i1 * w + b.i1];
          const T top = v00 + wx * (v01 - v00);
          const T bot = v10 + wx * (v11 - v10);
          dst[oy * out_w + ox] = top + wy * (bot - top);
        }
      }
    }
  });
  return out;
}

Tensor resize_bilinear_backward(const Tensor& grad_out, i64 in_h, i64 in_w) {
  require_rank(grad_out, 4, "resize_bilinear_backward grad");
  const i64 planes = grad_out.dim(0) * grad_out.dim(1), out_h = grad_out.dim(2), out_w = grad_out.dim(3);
  if (in_h == out_h && in_w == out_w) return grad_out;
  const auto ty = resize_taps(in_h, out_h), tx = resize_taps(in_w, out_w);
  Tensor gin({grad_out.dim(0), grad_out.dim(1), in_h, in_w}, grad_out.dtype());
  dispatch(grad_out.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pg = grad_out.data<T>();
    T* pi = gin.data<T>();
    for (i64 p = 0; p < planes; ++p) {
      const T* src = pg + p * out_h * out_w;
      T* dst = pi + p * in_h * in_w;
      for (i64 oy = 0; oy < out_h; ++oy) {
        const ResizeTap& a = ty[static_cast<std::size_t>(oy)];
        const T wy = static_cast<T>(a.w);
        for (i64 ox = 0; ox < out_w; ++ox) {
          const ResizeTap& b = tx[static_cast<std::size_t>(ox)];
          const T wx = static_cast<T>(b.w);
          const T go = src[oy * out_w + ox];
          dst[a.i0 * in_w + b.i0] += go * (T(1) - wx) * (T(1) - wy);
          dst[a.i0 * in_w + b.i1] += go * wx * (T(1) - wy);
          dst[a.i1 * in_w + b.i0] += go * (T(1) - wx) * wy;
          dst[a.i1 * in_w + b.i1] += go * wx * wy;
        }
      }
    }
  });
  return gin;
}

// ---------------------------------------------------------------- elementwise

Tensor unary(const Tensor& x, UnaryOp op) {
  Tensor out(x.shape(), x.dtype());
  KinkProbe& probe = kink_probe();
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.data<T>();
    T* po = out.data<T>();
    const std::size_t n = x.numel();
    switch (op) {
      case UnaryOp::tanh:
        for (std::size_t i = 0; i < n; ++i) po[i] = std::tanh(px[i]);
        break;
      case UnaryOp::sigmoid:
        for (std::size_t i = 0; i < n; ++i) {
          const T v = px[i];
          if (v >= T(0)) {
            po[i] = T(1) / (T(1) + std::exp(-v));
          } else {
            const T e = std::exp(v);
            po[i] = e / (T(1) + e);
          }
        }
        break;
      case UnaryOp::relu:
        for (std::size_t i = 0; i < n; ++i) po[i] = px[i] > T(0) ? px[i] : T(0);
        if (probe.enabled) {
          std::uint64_t bits = 0;
          for (std::size_t i = 0; i < n; ++i) {
            bits = (bits << 1) | (px[i] > T(0) ? 1u : 0u);
            if ((i & 63) == 63) probe.mix(bits), bits = 0;
          }
          probe.mix(bits);
        }
        break;
    }
  });
  return out;
}

namespace {

enum class Bcast { same, scalar, channel };

Bcast broadcast_kind(const Tensor& full, const Tensor& other) {
  if (other.shape() == full.shape()) return Bcast::same;
  if (other.numel() == 1) return Bcast::scalar;
  if (other.rank() == 1 && full.rank() == 4 && other.dim(0) == full.dim(1)) return Bcast::channel;
  fail(ErrorCode::dimension, "incompatible broadcast " + shape_str(full.shape()) + " vs " + shape_str(other.shape()));
}

}  // namespace

Tensor binary(const Tensor& a, const Tensor& b, BinaryOp op) {
  require_same_dtype(a, b, "elementwise");
  const bool a_full = a.numel() >= b.numel();
  const Tensor& full = a_full ? a : b;
  const Tensor& other = a_full ? b : a;
  const Bcast kind = broadcast_kind(full, other);
  Tensor out(full.shape(), full.dtype());
  const std::size_t n = full.numel();
  const std::size_t plane = full.rank() == 4 ? static_cast<std::size_t>(full.dim(2) * full.dim(3)) : 1;
  const std::size_t channels = full.rank() == 4 ? static_cast<std::size_t>(full.dim(1)) : 1;
  dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pf = full.data<T>();
    const T* pq = other.data<T>();
    T* po = out.data<T>();
    auto apply = [&](auto idx_other) {
      for (std::size_t i = 0; i < n; ++i) {
        const T fv = pf[i];
        const T ov = pq[idx_other(i)];
        const T lhs = a_full ? fv : ov;
        const T rhs = a_full ? ov : fv;
        switch (op) {
          case BinaryOp::add: po[i] = lhs + rhs; break;
          case BinaryOp::sub: po[i] = lhs - rhs; break;
          case BinaryOp::mul: po[i] = lhs * rhs; break;
        }
      }
    };
    switch (kind) {
      case Bcast::same: apply([](std::size_t i) { return i; }); break;
      case Bcast::scalar: apply([](std::size_t) { return std::size_t{0}; }); break;
      case Bcast::channel: apply([&](std::size_t i) { return (i / plane) % channels; }); break;
    }
  });
  return out;
}

Tensor scale(const Tensor& x, double s) {
  Tensor out(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.data<T>();
    T* po = out.data<T>();
    const T sv = static_cast<T>(s);
    for (std::size_t i = 0; i < x.numel(); ++i) po[i] = px[i] * sv;
  });
  return out;
}

Tensor add_scalar(const Tensor& x, double s) {
  Tensor out(x.shape(), x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.data<T>();
    T* po = out.data<T>();
    const T sv = static_cast<T>(s);
    for (std::size_t i = 0; i < x.numel(); ++i) po[i] = px[i] + sv;
  });
  return out;
}

Tensor reduce_to_shape(const Tensor& grad, const Shape& target) {
  if (grad.shape() == target) return grad;
  Tensor out(target, grad.dtype());
  const std::size_t n = grad.numel();
  dispatch(grad.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pg = grad.data<T>();
    T* po = out.data<T>();
    if (out.numel() == 1) {
      T acc = 0;
      for (std::size_t i = 0; i < n; ++i) acc += pg[i];
      po[0] = acc;
    } else if (target.size() == 1 && grad.rank() == 4 && grad.dim(1) == target[0]) {
      const std::size_t plane = static_cast<std::size_t>(grad.dim(2) * grad.dim(3));
      const std::size_t channels = static_cast<std::size_t>(grad.dim(1));
      for (std::size_t i = 0; i < n; ++i) po[(i / plane) % channels] += pg[i];
    } else {
      fail(ErrorCode::dimension, "cannot reduce " + shape_str(grad.shape()) + " to " + shape_str(target));
    }
  });
  return out;
}

// ---------------------------------------------------------------- concat / split

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) fail(ErrorCode::dimension, "concat of zero tensors");
  const Tensor& first = parts.front();
  if (axis < 0) axis += first.rank();
  if (axis < 0 || axis >= first.rank()) fail(ErrorCode::dimension, "concat axis out of range");
  const auto ax = static_cast<std::size_t>(axis);
  Shape out_shape = first.shape();
  out_shape[ax] = 0;
  for (const Tensor& p : parts) {
    require_same_dtype(first, p, "concat");
    if (p.rank() != first.rank()) fail(ErrorCode::dimension, "concat rank mismatch");
    for (std::size_t d = 0; d < p.shape().size(); ++d)
      if (d != ax && p.shape()[d] != first.shape()[d])
        fail(ErrorCode::dimension,
             "concat extent mismatch: " + shape_str(first.shape()) + " vs " + shape_str(p.shape()));
    out_shape[ax] += p.shape()[ax];
  }
  Tensor out(out_shape, first.dtype());
  i64 outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= out_shape[d];
  for (std::size_t d = ax + 1; d < out_shape.size(); ++d) inner *= out_shape[d];
  const std::size_t esize = first.dtype() == DType::f32 ? 4 : 8;
  auto* dst = static_cast<unsigned char*>(out.raw_bytes());
  const i64 out_row = out_shape[ax] * inner;
  i64 offset = 0;
  for (const Tensor& p : parts) {
    const i64 row = p.shape()[ax] * inner;
    const auto* src = static_cast<const unsigned char*>(p.raw_bytes());
    for (i64 o = 0; o < outer; ++o)
      std::memcpy(dst + static_cast<std::size_t>(o * out_row + offset) * esize,
                  src + static_cast<std::size_t>(o * row) * esize, static_cast<std::size_t>(row) * esize);
    offset += row;
  }
  return out;
}

std::vector<Tensor> split(const Tensor& x, int axis, const std::vector<i64>& sizes) {
  if (axis < 0) axis += x.rank();
  if (axis < 0 || axis >= x.rank()) fail(ErrorCode::dimension, "split axis out of range");
  const auto ax = static_cast<std::size_t>(axis);
  i64 total = 0;
  for (i64 s : sizes) {
    if (s < 1) fail(ErrorCode::dimension, "split sizes must be >= 1");
    total += s;
  }
  if (total != x.shape()[ax])
    fail(ErrorCode::dimension, "split sizes sum to " + std::to_string(total) + " but axis extent is " +
                                   std::to_string(x.shape()[ax]));
  i64 outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= x.shape()[d];
  for (std::size_t d = ax + 1; d < x.shape().size(); ++d) inner *= x.shape()[d];
  const std::size_t esize = x.dtype() == DType::f32 ? 4 : 8;
  const auto* src = static_cast<const unsigned char*>(x.raw_bytes());
  const i64 in_row = x.shape()[ax] * inner;
  std::vector<Tensor> out;
  i64 offset = 0;
  for (i64 s : sizes) {
    Shape shp = x.shape();
    shp[ax] = s;
    Tensor part(shp, x.dtype());
    auto* dst = static_cast<unsigned char*>(part.raw_bytes());
    const i64 row = s * inner;
    for (i64 o = 0; o < outer; ++o)
      std::memcpy(dst + static_cast<std::size_t>(o * row) * esize,
                  src + static_cast<std::size_t>(o * in_row + offset) * esize, static_cast<std::size_t>(row) * esize);
    offset += row;
    out.push_back(std::move(part));
  }
  return out;
}

// ---------------------------------------------------------------- depth/space

Tensor depth_to_space(const Tensor& x, int s) {
  require_rank(x, 4, "depth_to_space input");
  if (s < 1 || x.dim(1) % (s * s) != 0) fail(ErrorCode::dimension, "depth_to_space: channels not divisible by s^2");
  const i64 n = x.dim(0), c = x.dim(1) / (s * s), h = x.dim(2), w = x.dim(3);
  Tensor out({n, c, h * s, w * s}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.data<T>();
    T* po = out.data<T>();
    for (i64 b = 0; b < n; ++b)
      for (i64 ch = 0; ch < c; ++ch)
        for (i64 sy = 0; sy < s; ++sy)
          for (i64 sx = 0; sx < s; ++sx) {
            const T* src = px + ((b * c + ch) * s * s + sy * s + sx) * h * w;
            T* dst = po + (b * c + ch) * h * s * w * s;
            for (i64 y = 0; y < h; ++y)
              for (i64 xx = 0; xx < w; ++xx) dst[(y * s + sy) * w * s + xx * s + sx] = src[y * w + xx];
          }
  });
  return out;
}

Tensor space_to_depth(const Tensor& x, int s) {
  require_rank(x, 4, "space_to_depth input");
  if (s < 1 || x.dim(2) % s != 0 || x.dim(3) % s != 0)
    fail(ErrorCode::dimension, "space_to_depth: spatial extents not divisible by s");
  const i64 n = x.dim(0), c = x.dim(1), h = x.dim(2) / s, w = x.dim(3) / s;
  Tensor out({n, c * s * s, h, w}, x.dtype());
  dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* px = x.data<T>();
    T* po = out.data<T>();
    for (i64 b = 0; b < n; ++b)
      for (i64 ch = 0; ch < c; ++ch)
        for (i64 sy = 0; sy < s; ++sy)
          for (i64 sx = 0; sx < s; ++sx) {
            T* dst = po + ((b * c + ch) * s * s + sy * s + sx) * h * w;
            const T* src = px + (b * c + ch) * h * s * w * s;
            for (i64 y = 0; y < h; ++y)
              for (i64 xx = 0; xx < w; ++xx) dst[y * w + xx] = src[(y * s + sy) * w * s + xx * s + sx];
          }
  });
  return out;
}

double sum_all(const Tensor& x) {
  CompensatedSum acc;
  for (std::size_t i = 0; i < x.numel(); ++i) acc.add(x.item(i));
  return acc.value();
}

}  // namespace dygl
