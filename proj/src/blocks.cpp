#include "blocks.hpp"

#include <cmath>

namespace dygl {

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(ParamStore& store, const std::string& name, std::int64_t in_channels, std::int64_t out_channels,
               int kernel, ConvSpec spec_, bool with_bias, Init init)
    : spec(spec_) {
  if (in_channels % spec.groups != 0 || out_channels % spec.groups != 0)
    fail(ErrorCode::configuration, name + ": groups must divide channels");
  const Shape wshape{out_channels, in_channels / spec.groups, kernel, kernel};
  const double fan_in = static_cast<double>(in_channels / spec.groups) * kernel * kernel;
  const double bound = 1.0 / std::sqrt(fan_in);
  if (init == Init::zero) {
    weight = &store.zeros(name + ".weight", wshape);
    if (with_bias) bias = &store.zeros(name + ".bias", {out_channels});
  } else {
    weight = &store.uniform(name + ".weight", wshape, bound);
    if (with_bias) bias = &store.uniform(name + ".bias", {out_channels}, bound);
  }
}

Var Conv2d::operator()(const Context& ctx, Var x) const {
  Var w = ctx.tape.param(*weight);
  std::optional<Var> b;
  if (bias) b = ctx.tape.param(*bias);
  return conv2d(x, w, b, spec);
}

// ---------------------------------------------------------------- BatchNorm2d

BatchNorm2d::BatchNorm2d(ParamStore& store, const std::string& name, std::int64_t channels) {
  gamma = &store.full(name + ".gamma", {channels}, 1.0);
  beta = &store.zeros(name + ".beta", {channels});
  running_mean = &store.zeros(name + ".running_mean", {channels}, false);
  running_var = &store.full(name + ".running_var", {channels}, 1.0, false);
}

Var BatchNorm2d::operator()(const Context& ctx, Var x) const {
  return batchnorm2d(x, ctx.tape.param(*gamma), ctx.tape.param(*beta), running_mean->value, running_var->value,
                     ctx.training, kMomentum, kEps);
}

// ---------------------------------------------------------------- DyT

DyT::DyT(ParamStore& store, const std::string& name, std::int64_t channels) {
  alpha = &store.full(name + ".alpha", {1}, kAlphaInit);
  gamma = &store.full(name + ".gamma", {channels}, 1.0);
  beta = &store.zeros(name + ".beta", {channels});
}

Var DyT::operator()(const Context& ctx, Var x) const {
  if (x.value().rank() != 4 || x.value().dim(1) != gamma->value.dim(0))
    fail(ErrorCode::dimension, "dyt: channel extent of " + shape_str(x.shape()) + " does not match parameters");
  Var t = tanh(mul(x, ctx.tape.param(*alpha)));
  return add(mul(t, ctx.tape.param(*gamma)), ctx.tape.param(*beta));
}

// ---------------------------------------------------------------- attention

SingleHeadAttention::SingleHeadAttention(ParamStore& store, const std::string& name, std::int64_t channels_,
                                         std::int64_t dim_, bool use_dyt)
    : channels(channels_), dim(dim_) {
  if (dim < 1) fail(ErrorCode::configuration, name + ": attention dim must be >= 1");
  if (use_dyt) dyt = DyT(store, name + ".dyt", channels);
  else norm = BatchNorm2d(store, name + ".norm", channels);
  // The key bias is omitted: it shifts every score of a query row by the same
  // amount, which the softmax cancels.
  qkv = Conv2d(store, name + ".qkv", channels, 3 * dim, 1, {}, false);
  qv_bias = &store.uniform(name + ".qkv.bias", {2 * dim}, 1.0 / std::sqrt(static_cast<double>(channels)));
  if (dim != channels) proj = Conv2d(store, name + ".proj", dim, channels, 1, {});
}

Var SingleHeadAttention::operator()(const Context& ctx, Var x, Tensor* weights_out) const {
  const Tensor& xv = x.value();
  if (xv.rank() != 4 || xv.dim(1) != channels)
    fail(ErrorCode::dimension, "attention: input " + shape_str(xv.shape()) + " does not have " +
                                   std::to_string(channels) + " channels");
  const std::int64_t n = xv.dim(0), h = xv.dim(2), w = xv.dim(3), tokens = h * w;
  Var xn = dyt ? (*dyt)(ctx, x) : (*norm)(ctx, x);
  std::vector<Var> qkv_parts = split(qkv(ctx, xn), 1, {dim, dim, dim});
  std::vector<Var> bias = split(ctx.tape.param(*qv_bias), 0, {dim, dim});
  Var q = reshape(add(qkv_parts[0], bias[0]), {n, dim, tokens});
  Var k = reshape(qkv_parts[1], {n, dim, tokens});
  Var v = reshape(add(qkv_parts[2], bias[1]), {n, dim, tokens});
  // scores[t, s] = <q_t, k_s> / sqrt(d); softmax over keys s.
  Var scores = scale(matmul(transpose_last2(q), k), 1.0 / std::sqrt(static_cast<double>(dim)));
  Var weights = softmax(scores, 2);
  if (weights_out) *weights_out = weights.value();
  Var out = reshape(matmul(v, transpose_last2(weights)), {n, dim, h, w});
  return proj ? (*proj)(ctx, out) : out;
}

// ---------------------------------------------------------------- msdc

MultiScaleDWConv::MultiScaleDWConv(ParamStore& store, const std::string& name, std::int64_t channels,
                                   const std::vector<int>& dilations) {
  if (dilations.empty()) fail(ErrorCode::configuration, name + ": dilation set is empty");
  for (int r : dilations) {
    if (r < 1) fail(ErrorCode::configuration, name + ": dilation rates must be positive");
    ConvSpec spec{1, r, r, static_cast<int>(channels)};
    branches.emplace_back(store, name + ".dw_r" + std::to_string(r), channels, channels, 3, spec, false);
  }
  bn = BatchNorm2d(store, name + ".bn", channels);
}

Var MultiScaleDWConv::pre_norm(const Context& ctx, Var x) const {
  Var acc = x;
  for (const Conv2d& branch : branches) acc = add(acc, branch(ctx, x));
  return acc;
}

Var MultiScaleDWConv::operator()(const Context& ctx, Var x) const { return bn(ctx, pre_norm(ctx, x)); }

// ---------------------------------------------------------------- ffn

FeedForward::FeedForward(ParamStore& store, const std::string& name, std::int64_t channels, double ratio) {
  if (!(ratio > 0)) fail(ErrorCode::configuration, name + ": ffn ratio must be positive");
  const auto hidden = std::max<std::int64_t>(1, std::llround(ratio * static_cast<double>(channels)));
  expand = Conv2d(store, name + ".expand", channels, hidden, 1, {});
  project = Conv2d(store, name + ".project", hidden, channels, 1, {});
}

Var FeedForward::operator()(const Context& ctx, Var x) const {
  return add(x, project(ctx, relu(expand(ctx, x))));
}

// ---------------------------------------------------------------- SHDC block

std::int64_t ShdcConfig::global_channels() const {
  return std::llround(split_ratio * static_cast<double>(channels));
}

void ShdcConfig::validate() const {
  if (channels < 1) fail(ErrorCode::configuration, "shdc: channels must be >= 1");
  if (dilation_rates.empty()) fail(ErrorCode::configuration, "shdc: dilation_rates must be non-empty");
  for (int r : dilation_rates)
    if (r < 1) fail(ErrorCode::configuration, "shdc: dilation rates must be positive");
  if (!(ffn_ratio > 0)) fail(ErrorCode::configuration, "shdc: ffn_ratio must be positive");
  if (use_fusion) {
    if (!(split_ratio > 0 && split_ratio < 1)) fail(ErrorCode::configuration, "shdc: split_ratio must be in (0,1)");
    const std::int64_t cg = global_channels();
    if (cg <= 0 || cg >= channels)
      fail(ErrorCode::configuration, "shdc: split of " + std::to_string(channels) + " channels at ratio " +
                                         std::to_string(split_ratio) + " leaves an empty path");
    if (attn_dim < 0) fail(ErrorCode::configuration, "shdc: attn_dim must be >= 0");
  }
}

ShdcBlock::ShdcBlock(ParamStore& store, const std::string& name, const ShdcConfig& cfg_) : cfg(cfg_) {
  cfg.validate();
  const std::int64_t c = cfg.channels;
  dw = Conv2d(store, name + ".dw", c, c, 3, ConvSpec{1, 1, 1, static_cast<int>(c)});
  if (cfg.use_fusion) {
    const std::int64_t cg = cfg.global_channels();
    attn = SingleHeadAttention(store, name + ".attn", cg, cfg.attn_dim > 0 ? cfg.attn_dim : cg, cfg.use_dyt);
    local = MultiScaleDWConv(store, name + ".local", c - cg, cfg.dilation_rates);
    fuse = Conv2d(store, name + ".fuse", c, c, 1, {});
  }
  ffn = FeedForward(store, name + ".ffn", c, cfg.ffn_ratio);
}

Var ShdcBlock::operator()(const Context& ctx, Var x) const {
  if (x.value().rank() != 4 || x.value().dim(1) != cfg.channels)
    fail(ErrorCode::dimension, "shdc: input " + shape_str(x.shape()) + " does not match channels " +
                                   std::to_string(cfg.channels));
  Var y = add(x, dw(ctx, x));
  if (cfg.use_fusion) {
    const std::int64_t cg = cfg.global_channels();
    std::vector<Var> parts = split(y, 1, {cg, cfg.channels - cg});
    Var global = (*attn)(ctx, parts[0]);
    Var loc = (*local)(ctx, parts[1]);
    y = add(y, (*fuse)(ctx, concat({global, loc}, 1)));
  }
  return ffn(ctx, y);
}

// ---------------------------------------------------------------- DyFusionUp

void DyFusionUpConfig::validate() const {
  if (in_channels < 1 || skip_channels < 1) fail(ErrorCode::configuration, "dyfusionup: channels must be >= 1");
  if (scale != 2) fail(ErrorCode::unsupported, "dyfusionup: only scale 2 is supported");
  if (groups < 1 || in_channels % groups != 0)
    fail(ErrorCode::configuration, "dyfusionup: in_channels " + std::to_string(in_channels) +
                                       " not divisible by groups " + std::to_string(groups));
  if (fuse_dilations.empty()) fail(ErrorCode::configuration, "dyfusionup: fuse_dilations must be non-empty");
}

Tensor init_offsets(int groups, int scale, DType dtype) {
  if (scale != 2) fail(ErrorCode::unsupported, "init_offsets: only scale 2 is supported");
  if (groups < 1) fail(ErrorCode::configuration, "init_offsets: groups must be >= 1");
  static constexpr double kLattice[4][2] = {{-0.25, -0.25}, {-0.25, 0.25}, {0.25, -0.25}, {0.25, 0.25}};
  Tensor t({groups, 4, 2}, dtype);
  for (int g = 0; g < groups; ++g)
    for (int k = 0; k < 4; ++k)
      for (int a = 0; a < 2; ++a) t.set(static_cast<std::size_t>((g * 4 + k) * 2 + a), kLattice[k][a]);
  return t;
}

Var sampling_grid(Var field, int groups, std::int64_t in_h, std::int64_t in_w, double offset_range) {
  const Tensor& fv = field.value();
  if (fv.rank() != 4 || fv.dim(1) != 2 * groups || fv.dim(2) != 2 * in_h || fv.dim(3) != 2 * in_w)
    fail(ErrorCode::dimension, "sampling_grid: offset field " + shape_str(fv.shape()) + " does not match groups/extents");
  const std::int64_t n = fv.dim(0), oh = 2 * in_h, ow = 2 * in_w;
  const Tensor lattice = init_offsets(groups, 2);
  Tensor grid({n * groups, oh, ow, 2}, fv.dtype());
  // G(p) = 2 p / [W, H] - 1 with p = pixel centre + lattice + offset_range * dp,
  // pixel centres sitting at integer + 0.5 in corner-origin units.
  const double sx_coef = 2.0 / static_cast<double>(in_w), sy_coef = 2.0 / static_cast<double>(in_h);
  dispatch(fv.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* pf = fv.data<T>();
    T* pg = grid.data<T>();
    for (std::int64_t b = 0; b < n; ++b)
      for (int g = 0; g < groups; ++g) {
        const T* dx = pf + ((b * 2 * groups) + 2 * g) * oh * ow;
        const T* dy = dx + oh * ow;
        T* out = pg + (b * groups + g) * oh * ow * 2;
        for (std::int64_t i = 0; i < oh; ++i)
          for (std::int64_t j = 0; j < ow; ++j) {
            const std::int64_t sy = i % 2, sx = j % 2, k = sx * 2 + sy;
            const double base_x = static_cast<double>(j / 2) + 0.5 + lattice.item(static_cast<std::size_t>((g * 4 + k) * 2));
            const double base_y =
                static_cast<double>(i / 2) + 0.5 + lattice.item(static_cast<std::size_t>((g * 4 + k) * 2 + 1));
            const std::int64_t p = i * ow + j;
            out[p * 2] = static_cast<T>(sx_coef * (base_x + offset_range * static_cast<double>(dx[p])) - 1.0);
            out[p * 2 + 1] = static_cast<T>(sy_coef * (base_y + offset_range * static_cast<double>(dy[p])) - 1.0);
          }
      }
  });
  const std::size_t fi = field.id();
  return field.tape().record(
      std::move(grid), {field}, [fi, groups, n, oh, ow, sx_coef, sy_coef, offset_range](Tape& tp, const Tensor& g, const Tensor&) {
        const Tensor& fv2 = tp.value(fi);
        Tensor gf(fv2.shape(), fv2.dtype());
        dispatch(g.dtype(), [&](auto tag) {
          using T = decltype(tag);
          const T* pg = g.data<T>();
          T* po = gf.data<T>();
          const T cx = static_cast<T>(sx_coef * offset_range), cy = static_cast<T>(sy_coef * offset_range);
          for (std::int64_t b = 0; b < n; ++b)
            for (int gr = 0; gr < groups; ++gr) {
              T* dx = po + ((b * 2 * groups) + 2 * gr) * oh * ow;
              T* dy = dx + oh * ow;
              const T* src = pg + (b * groups + gr) * oh * ow * 2;
              for (std::int64_t p = 0; p < oh * ow; ++p) {
                dx[p] = cx * src[p * 2];
                dy[p] = cy * src[p * 2 + 1];
              }
            }
        });
        tp.accumulate(fi, gf);
      });
}

DyFusionUp::DyFusionUp(ParamStore& store, const std::string& name, const DyFusionUpConfig& cfg_) : cfg(cfg_) {
  cfg.validate();
  if (cfg.mode == UpsampleMode::dynamic) {
    const std::int64_t offset_channels = 2 * cfg.groups * cfg.scale * cfg.scale;
    offset = Conv2d(store, name + ".offset", cfg.in_channels, offset_channels, 1, {}, true, Conv2d::Init::zero);
  }
  align = Conv2d(store, name + ".align", cfg.in_channels, cfg.skip_channels, 1, {});
  fuse_local = MultiScaleDWConv(store, name + ".fuse_local", 2 * cfg.skip_channels, cfg.fuse_dilations);
  fuse_conv = Conv2d(store, name + ".fuse_conv", 2 * cfg.skip_channels, cfg.resolved_out(), 3, ConvSpec{1, 1, 1, 1});
}

Var DyFusionUp::upsample(const Context& ctx, Var x_low) const {
  const Tensor& xv = x_low.value();
  if (xv.rank() != 4 || xv.dim(1) != cfg.in_channels)
    fail(ErrorCode::dimension, "dyfusionup: input " + shape_str(xv.shape()) + " does not have " +
                                   std::to_string(cfg.in_channels) + " channels");
  const std::int64_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (cfg.mode == UpsampleMode::bilinear) return resize_bilinear(x_low, 2 * h, 2 * w);
  Var field = depth_to_space((*offset)(ctx, x_low), cfg.scale);
  Var grid = sampling_grid(field, cfg.groups, h, w, cfg.offset_range);
  Var grouped = reshape(x_low, {n * cfg.groups, c / cfg.groups, h, w});
  return reshape(bilinear_sample(grouped, grid), {n, c, 2 * h, 2 * w});
}

Var DyFusionUp::operator()(const Context& ctx, Var x_low, Var x_skip) const {
  const Tensor& lv = x_low.value();
  const Tensor& sv = x_skip.value();
  if (lv.rank() != 4 || sv.rank() != 4 || sv.dim(0) != lv.dim(0) || sv.dim(2) != 2 * lv.dim(2) ||
      sv.dim(3) != 2 * lv.dim(3))
    fail(ErrorCode::dimension, "dyfusionup: skip " + shape_str(sv.shape()) + " is not 2x the spatial extent of " +
                                   shape_str(lv.shape()));
  if (sv.dim(1) != cfg.skip_channels)
    fail(ErrorCode::dimension, "dyfusionup: skip has " + std::to_string(sv.dim(1)) + " channels, expected " +
                                   std::to_string(cfg.skip_channels));
  Var up = align(ctx, upsample(ctx, x_low));
  Var fused = fuse_local(ctx, concat({x_skip, up}, 1));
  return relu(fuse_conv(ctx, fused));
}

}  // namespace dygl
