#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "blocks.hpp"
#include "config.hpp"

namespace dygl {

struct ModelConfig {
  std::array<std::int64_t, 4> stage_channels{32, 64, 128, 256};
  // Entry 0 counts stride-1 conv layers in the stem; entries 1..3 count SHDC blocks.
  std::array<std::int64_t, 4> blocks_per_stage{1, 1, 1, 1};
  double split_ratio = 0.5;
  std::vector<int> dilation_rates{1, 2, 3};
  double ffn_ratio = 4.0;
  int sampler_groups = 4;
  std::int64_t input_channels = 3;
  std::int64_t output_channels = 1;
  std::int64_t input_size = 224;
  bool use_dyt = true;
  UpsampleMode upsample_mode = UpsampleMode::dynamic;

  static ModelConfig defaults() { return {}; }
  static ModelConfig tiny();

  void validate() const;
  /// Applies one `key = value` setting; returns false for keys it does not own.
  bool apply(const std::string& key, const std::string& value);
  std::string to_text() const;
  static ModelConfig from_text(const std::string& text);
};

/// Encoder-decoder segmentation network: conv stem, three SHDC stages, four
/// DyFusionUp decoder stages and a 1x1 head producing raw logits.
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed, DType dtype = DType::f32);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  /// Input [N, input_channels, H, W] with H, W divisible by 16; returns
  /// logits [N, output_channels, H, W]. `trace`, if given, receives the
  /// encoder outputs followed by the decoder outputs.
  Var forward(const Context& ctx, Var x, std::vector<Shape>* trace = nullptr) const;
  /// Eval-mode logits without gradient bookkeeping.
  Tensor predict(const Tensor& x) const;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  std::size_t param_count() const { return store_.trainable_count(); }
  DType dtype() const { return store_.dtype(); }

  /// Declared decoder skip widths, outermost stage last.
  std::vector<std::int64_t> decoder_skip_channels() const;

 private:
  ModelConfig cfg_;
  ParamStore store_;
  std::vector<Conv2d> stem_;
  std::array<Conv2d, 3> down_;
  std::array<std::vector<ShdcBlock>, 3> stages_;
  std::array<DyFusionUp, 4> up_;
  Conv2d head_;
};

std::unique_ptr<Model> build_model(const ModelConfig& cfg, std::uint64_t seed, DType dtype = DType::f32);

// ---------------------------------------------------------------- checkpoint

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct CheckpointData {
  std::vector<NamedTensor> tensors;
  std::string config_text;
};

/// Byte layout (all integers little-endian): "DYGL", u32 version, u32 count;
/// per tensor u16 name length, UTF-8 name, u8 rank, rank x u32 dims,
/// u8 dtype (0 = f32, 1 = f64), raw IEEE-754 payload; then u32 length and the
/// UTF-8 config snapshot.
std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data);
CheckpointData decode_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Every parameter and buffer of the model plus its config snapshot;
/// `extra` tensors (e.g. optimizer state) are appended after them.
void save_model(const Model& model, const std::string& path, const std::vector<NamedTensor>& extra = {});
/// Rebuilds the model from the snapshot and fills every tensor. Extra
/// tensors the model does not own are returned through `extra` if given.
std::unique_ptr<Model> load_model(const std::string& path, std::vector<NamedTensor>* extra = nullptr);

}  // namespace dygl
