#pragma once

#include <optional>
#include <string>
#include <vector>

#include "params.hpp"

namespace dygl {

class Conv2d {
 public:
  enum class Init { uniform, zero };

  Conv2d() = default;
  Conv2d(ParamStore& store, const std::string& name, std::int64_t in_channels, std::int64_t out_channels, int kernel,
         ConvSpec spec, bool bias = true, Init init = Init::uniform);

  Var operator()(const Context& ctx, Var x) const;

  Parameter* weight = nullptr;
  Parameter* bias = nullptr;
  ConvSpec spec;
};

class BatchNorm2d {
 public:
  static constexpr double kMomentum = 0.1;
  static constexpr double kEps = 1e-5;

  BatchNorm2d() = default;
  BatchNorm2d(ParamStore& store, const std::string& name, std::int64_t channels);

  Var operator()(const Context& ctx, Var x) const;

  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;
  Parameter* running_mean = nullptr;
  Parameter* running_var = nullptr;
};

/// y = gamma_c * tanh(alpha * x) + beta_c with a scalar alpha.
class DyT {
 public:
  static constexpr double kAlphaInit = 0.5;

  DyT() = default;
  DyT(ParamStore& store, const std::string& name, std::int64_t channels);

  Var operator()(const Context& ctx, Var x) const;

  Parameter* alpha = nullptr;
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;
};

/// Token-to-token attention over the H*W positions of a feature map, with
/// Q, K and V taken from one shared 1x1 convolution of the normalized input.
/// Only Q and V carry a bias.
class SingleHeadAttention {
 public:
  SingleHeadAttention() = default;
  SingleHeadAttention(ParamStore& store, const std::string& name, std::int64_t channels, std::int64_t dim,
                      bool use_dyt);

  /// If `weights_out` is non-null it receives the [N, T, T] attention matrix.
  Var operator()(const Context& ctx, Var x, Tensor* weights_out = nullptr) const;

  std::int64_t channels = 0;
  std::int64_t dim = 0;
  std::optional<DyT> dyt;
  std::optional<BatchNorm2d> norm;
  Conv2d qkv;
  Parameter* qv_bias = nullptr;  // [2*dim]: query bias then value bias
  std::optional<Conv2d> proj;
};

/// BN(x + sum_r DWConv3x3_r(x)) with one shared BN.
class MultiScaleDWConv {
 public:
  MultiScaleDWConv() = default;
  MultiScaleDWConv(ParamStore& store, const std::string& name, std::int64_t channels, const std::vector<int>& dilations);

  Var operator()(const Context& ctx, Var x) const;
  /// The residual sum before normalization.
  Var pre_norm(const Context& ctx, Var x) const;

  std::vector<Conv2d> branches;
  BatchNorm2d bn;
};

/// x + Conv1x1(relu(Conv1x1(x))) with hidden width round(ratio * C).
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParamStore& store, const std::string& name, std::int64_t channels, double ratio);

  Var operator()(const Context& ctx, Var x) const;

  Conv2d expand;
  Conv2d project;
};

struct ShdcConfig {
  std::int64_t channels = 0;
  double split_ratio = 0.5;
  std::vector<int> dilation_rates{1, 2, 3};
  std::int64_t attn_dim = 0;  // 0 selects the global-path width
  double ffn_ratio = 4.0;
  bool use_fusion = true;
  bool use_dyt = true;

  std::int64_t global_channels() const;
  void validate() const;
};

class ShdcBlock {
 public:
  ShdcBlock() = default;
  ShdcBlock(ParamStore& store, const std::string& name, const ShdcConfig& cfg);

  Var operator()(const Context& ctx, Var x) const;

  ShdcConfig cfg;
  Conv2d dw;
  std::optional<SingleHeadAttention> attn;
  std::optional<MultiScaleDWConv> local;
  std::optional<Conv2d> fuse;
  FeedForward ffn;
};

enum class UpsampleMode { dynamic, bilinear };

struct DyFusionUpConfig {
  std::int64_t in_channels = 0;
  std::int64_t skip_channels = 0;
  std::int64_t out_channels = 0;  // 0 selects skip_channels
  int groups = 4;
  int scale = 2;
  double offset_range = 0.25;
  std::vector<int> fuse_dilations{1, 2, 3};
  UpsampleMode mode = UpsampleMode::dynamic;

  std::int64_t resolved_out() const { return out_channels > 0 ? out_channels : skip_channels; }
  void validate() const;
};

/// The quarter-pixel lattice as a [groups, 4, 2] tensor of (x, y) offsets in
/// input-pixel units: (-.25,-.25), (-.25,.25), (.25,-.25), (.25,.25) per group.
/// Entry k covers sub-pixel column sx = k / 2 and row sy = k % 2.
Tensor init_offsets(int groups, int scale, DType dtype = DType::f64);

/// Turns a per-output-pixel offset field [N, 2g, 2h, 2w] (channel 2k is dx,
/// 2k+1 is dy for group k) into a normalized sampling grid [N*g, 2h, 2w, 2].
Var sampling_grid(Var field, int groups, std::int64_t in_h, std::int64_t in_w, double offset_range);

class DyFusionUp {
 public:
  DyFusionUp() = default;
  DyFusionUp(ParamStore& store, const std::string& name, const DyFusionUpConfig& cfg);

  Var operator()(const Context& ctx, Var x_low, Var x_skip) const;
  /// 2x upsampling of x_low alone (dynamic sampling or fixed bilinear).
  Var upsample(const Context& ctx, Var x_low) const;

  DyFusionUpConfig cfg;
  std::optional<Conv2d> offset;
  Conv2d align;
  MultiScaleDWConv fuse_local;
  Conv2d fuse_conv;
};

}  // namespace dygl
