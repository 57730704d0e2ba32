#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace dygl {

// ---------------------------------------------------------------- netpbm

/// 8-bit raster, channels interleaved row-major (1 = P5 graymap, 3 = P6 pixmap).
struct Raster {
  std::int64_t width = 0;
  std::int64_t height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
};

Raster decode_netpbm(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_netpbm(const Raster& r);
Raster read_netpbm(const std::string& path);
void write_netpbm(const std::string& path, const Raster& r);

inline constexpr std::array<double, 3> kImageMean{0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kImageStd{0.229, 0.224, 0.225};

/// [C,H,W] f32 in [0,1].
Tensor raster_to_tensor(const Raster& r);
/// [C,H,W] in [0,1] to 8-bit, rounding to nearest.
Raster tensor_to_raster(const Tensor& t);
Tensor normalize_image(const Tensor& unit);
Tensor denormalize_image(const Tensor& normalized);

// ---------------------------------------------------------------- samples

struct SegmentationSample {
  std::string id;
  Tensor image;  // [3,H,W] normalized
  Tensor mask;   // [1,H,W] in {0,1}
};

/// P6 image + P5 mask, resized bilinearly to size x size; the mask is
/// thresholded at 0.5 after resizing.
SegmentationSample load_sample(const std::string& image_path, const std::string& mask_path, std::int64_t size = 224);

struct AugmentConfig {
  double crop_scale_min = 0.5;
  double crop_scale_max = 1.0;
  double p_crop = 1.0;
  double p_hflip = 0.5;
  double p_vflip = 0.5;
  double p_rot = 0.6;
  double max_angle_deg = 15.0;
  double p_elastic = 0.3;
  int elastic_grid = 4;
  double elastic_amplitude = 8.0;
  double p_photometric = 0.2;
  double brightness = 0.2;
  double contrast = 0.2;

  static AugmentConfig none();
  void validate() const;
};

SegmentationSample augment(const SegmentationSample& s, const AugmentConfig& cfg, std::mt19937_64& rng);

// Individual geometric transforms, shared by augment() and tests.
SegmentationSample hflip(const SegmentationSample& s);
SegmentationSample vflip(const SegmentationSample& s);
/// Rotation by `degrees` about the image center; exposed pixels take the
/// channel mean (normalized 0) in the image and 0 in the mask.
SegmentationSample rotate(const SegmentationSample& s, double degrees);

/// Noisy background with 1-3 anti-aliased bright ellipses; mask = union of
/// their interiors. Sample i depends only on (seed, i, size).
std::vector<SegmentationSample> synth_dataset(std::size_t n, std::uint64_t seed, std::int64_t size);
SegmentationSample synth_sample(std::uint64_t seed, std::size_t index, std::int64_t size);

/// Stacks samples [first, first+count) of `order` into [B,3,H,W] / [B,1,H,W].
std::pair<Tensor, Tensor> make_batch(const std::vector<SegmentationSample>& samples,
                                     const std::vector<std::size_t>& order, std::size_t first, std::size_t count,
                                     DType dtype = DType::f32);

// ---------------------------------------------------------------- manifests

struct ManifestEntry {
  std::string image;
  std::string mask;
  std::string split;  // train | valid | test
};
using DatasetManifest = std::vector<ManifestEntry>;

/// Seeded shuffle, then largest-remainder sizes for the given ratios.
DatasetManifest split_manifest(const std::vector<std::pair<std::string, std::string>>& entries,
                               std::array<int, 3> ratios = {8, 1, 1}, std::uint64_t seed = 42);
/// Paths are resolved relative to the manifest's directory.
DatasetManifest read_manifest(const std::string& path);
void write_manifest(const std::string& path, const DatasetManifest& m);
std::vector<SegmentationSample> load_split(const DatasetManifest& m, const std::string& split, std::int64_t size);

/// Writes `n` synthetic samples as P6/P5 files plus manifest.tsv into `dir`;
/// returns the manifest path.
std::string write_synthetic_dataset(const std::string& dir, std::size_t n, std::uint64_t seed, std::int64_t size);

}  // namespace dygl
