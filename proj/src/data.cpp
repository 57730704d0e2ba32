#include "data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "ops.hpp"

namespace dygl {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- netpbm

namespace {

bool is_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

class HeaderReader {
 public:
  explicit HeaderReader(const std::vector<std::uint8_t>& b) : b_(b) {}

  void skip_space_and_comments() {
    while (pos < b_.size()) {
      if (is_space(b_[pos])) {
        ++pos;
      } else if (b_[pos] == '#') {
        while (pos < b_.size() && b_[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  }

  std::int64_t number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos;
    std::int64_t v = 0;
    while (pos < b_.size() && b_[pos] >= '0' && b_[pos] <= '9') {
      v = v * 10 + (b_[pos] - '0');
      if (v > (1 << 24)) fail(ErrorCode::format, std::string("netpbm ") + what + " too large at byte offset " + std::to_string(start));
      ++pos;
    }
    if (pos == start)
      fail(ErrorCode::format, std::string("netpbm: expected ") + what + " at byte offset " + std::to_string(start));
    return v;
  }

  std::size_t pos = 0;

 private:
  const std::vector<std::uint8_t>& b_;
};

}  // namespace

Raster decode_netpbm(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
    fail(ErrorCode::format, "netpbm: expected magic 'P5' or 'P6' at byte offset 0");
  Raster r;
  r.channels = bytes[1] == '6' ? 3 : 1;
  HeaderReader h(bytes);
  h.pos = 2;
  if (h.pos >= bytes.size() || !is_space(bytes[h.pos]))
    fail(ErrorCode::format, "netpbm: expected whitespace at byte offset 2");
  r.width = h.number("width");
  r.height = h.number("height");
  const std::size_t maxval_at = h.pos;
  const std::int64_t maxval = h.number("maxval");
  if (r.width < 1 || r.height < 1)
    fail(ErrorCode::format, "netpbm: zero extent in header before byte offset " + std::to_string(maxval_at));
  if (maxval != 255) fail(ErrorCode::unsupported, "netpbm: maxval " + std::to_string(maxval) + " is not supported (only 255)");
  if (h.pos >= bytes.size() || !is_space(bytes[h.pos]))
    fail(ErrorCode::format, "netpbm: expected single whitespace after maxval at byte offset " + std::to_string(h.pos));
  ++h.pos;
  const std::size_t need = static_cast<std::size_t>(r.width * r.height * r.channels);
  if (bytes.size() - h.pos < need)
    fail(ErrorCode::format, "netpbm: payload truncated at byte offset " + std::to_string(bytes.size()) + " (expected " +
                                std::to_string(h.pos + need) + " bytes)");
  r.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(h.pos),
                  bytes.begin() + static_cast<std::ptrdiff_t>(h.pos + need));
  return r;
}

std::vector<std::uint8_t> encode_netpbm(const Raster& r) {
  if (r.channels != 1 && r.channels != 3) fail(ErrorCode::contract, "netpbm: channels must be 1 or 3");
  if (r.pixels.size() != static_cast<std::size_t>(r.width * r.height * r.channels))
    fail(ErrorCode::dimension, "netpbm: pixel buffer size does not match extents");
  const std::string header = std::string(r.channels == 3 ? "P6" : "P5") + "\n" + std::to_string(r.width) + " " +
                             std::to_string(r.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), r.pixels.begin(), r.pixels.end());
  return out;
}

Raster read_netpbm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_netpbm(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.what());
  }
}

void write_netpbm(const std::string& path, const Raster& r) {
  const auto bytes = encode_netpbm(r);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::io, "write failed for " + path);
}

Tensor raster_to_tensor(const Raster& r) {
  Tensor t({r.channels, r.height, r.width}, DType::f32);
  const std::size_t plane = static_cast<std::size_t>(r.height * r.width);
  for (std::size_t p = 0; p < plane; ++p)
    for (int c = 0; c < r.channels; ++c)
      t.set(static_cast<std::size_t>(c) * plane + p, r.pixels[p * static_cast<std::size_t>(r.channels) + c] / 255.0);
  return t;
}

Raster tensor_to_raster(const Tensor& t) {
  if (t.rank() != 3 || (t.dim(0) != 1 && t.dim(0) != 3))
    fail(ErrorCode::dimension, "tensor_to_raster: expected [1|3,H,W], got " + shape_str(t.shape()));
  Raster r;
  r.channels = static_cast<int>(t.dim(0));
  r.height = t.dim(1);
  r.width = t.dim(2);
  const std::size_t plane = static_cast<std::size_t>(r.height * r.width);
  r.pixels.resize(plane * static_cast<std::size_t>(r.channels));
  for (std::size_t p = 0; p < plane; ++p)
    for (int c = 0; c < r.channels; ++c) {
      const double v = std::clamp(t.item(static_cast<std::size_t>(c) * plane + p), 0.0, 1.0);
      r.pixels[p * static_cast<std::size_t>(r.channels) + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  return r;
}

namespace {

Tensor channel_affine(const Tensor& x, bool forward) {
  if (x.rank() != 3 || x.dim(0) != 3) fail(ErrorCode::dimension, "image must be [3,H,W], got " + shape_str(x.shape()));
  Tensor out(x.shape(), x.dtype());
  const std::size_t plane = static_cast<std::size_t>(x.dim(1) * x.dim(2));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < plane; ++p) {
      const double v = x.item(c * plane + p);
      out.set(c * plane + p, forward ? (v - kImageMean[c]) / kImageStd[c] : v * kImageStd[c] + kImageMean[c]);
    }
  return out;
}

Tensor resize_chw(const Tensor& x, std::int64_t h, std::int64_t w) {
  return resize_bilinear(x.reshape({1, x.dim(0), x.dim(1), x.dim(2)}), h, w).reshape({x.dim(0), h, w});
}

Tensor binarize(const Tensor& m) {
  Tensor out(m.shape(), m.dtype());
  for (std::size_t i = 0; i < m.numel(); ++i) out.set(i, m.item(i) >= 0.5 ? 1.0 : 0.0);
  return out;
}

}  // namespace

Tensor normalize_image(const Tensor& unit) { return channel_affine(unit, true); }
Tensor denormalize_image(const Tensor& normalized) { return channel_affine(normalized, false); }

// ---------------------------------------------------------------- samples

SegmentationSample load_sample(const std::string& image_path, const std::string& mask_path, std::int64_t size) {
  if (size < 1) fail(ErrorCode::configuration, "load_sample: size must be positive");
  const Raster img = read_netpbm(image_path);
  const Raster msk = read_netpbm(mask_path);
  if (img.channels != 3) fail(ErrorCode::format, image_path + ": expected a P6 (RGB) image");
  if (msk.channels != 1) fail(ErrorCode::format, mask_path + ": expected a P5 (graymap) mask");
  SegmentationSample s;
  s.id = fs::path(image_path).stem().string();
  Tensor unit = raster_to_tensor(img);
  if (unit.dim(1) != size || unit.dim(2) != size) unit = resize_chw(unit, size, size);
  s.image = normalize_image(unit);
  Tensor m = raster_to_tensor(msk);
  if (m.dim(1) != size || m.dim(2) != size) m = resize_chw(m, size, size);
  s.mask = binarize(m);
  return s;
}

AugmentConfig AugmentConfig::none() {
  AugmentConfig c;
  c.p_crop = c.p_hflip = c.p_vflip = c.p_rot = c.p_elastic = c.p_photometric = 0.0;
  return c;
}

void AugmentConfig::validate() const {
  for (double p : {p_crop, p_hflip, p_vflip, p_rot, p_elastic, p_photometric})
    if (!(p >= 0 && p <= 1)) fail(ErrorCode::configuration, "augment probabilities must be in [0,1]");
  if (!(crop_scale_min > 0 && crop_scale_min <= crop_scale_max && crop_scale_max <= 1))
    fail(ErrorCode::configuration, "crop_scale must satisfy 0 < min <= max <= 1");
  if (elastic_grid < 2) fail(ErrorCode::configuration, "elastic_grid must be >= 2");
  if (!(max_angle_deg >= 0 && elastic_amplitude >= 0 && brightness >= 0 && contrast >= 0 && contrast < 1))
    fail(ErrorCode::configuration, "augment magnitudes out of range");
}

namespace {

// Resamples image (bilinear) and mask (nearest) through an output->source
// pixel-coordinate map. Sources outside the frame take fill values.
template <class Map>
SegmentationSample warp(const SegmentationSample& s, Map&& map) {
  const std::int64_t H = s.image.dim(1), W = s.image.dim(2);
  const std::size_t plane = static_cast<std::size_t>(H * W);
  SegmentationSample out{s.id, Tensor(s.image.shape(), s.image.dtype()), Tensor(s.mask.shape(), s.mask.dtype())};
  for (std::int64_t i = 0; i < H; ++i)
    for (std::int64_t j = 0; j < W; ++j) {
      const auto [sx, sy] = map(static_cast<double>(j), static_cast<double>(i));
      const std::size_t o = static_cast<std::size_t>(i * W + j);
      if (!(sx >= -0.5 && sx <= W - 0.5 && sy >= -0.5 && sy <= H - 0.5)) continue;  // fill: 0 in both
      const double cx = std::clamp(sx, 0.0, static_cast<double>(W - 1));
      const double cy = std::clamp(sy, 0.0, static_cast<double>(H - 1));
      const std::int64_t x0 = static_cast<std::int64_t>(std::floor(cx)), y0 = static_cast<std::int64_t>(std::floor(cy));
      const std::int64_t x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
      const double wx = cx - x0, wy = cy - y0;
      for (std::size_t c = 0; c < 3; ++c) {
        auto at = [&](std::int64_t y, std::int64_t x) { return s.image.item(c * plane + static_cast<std::size_t>(y * W + x)); };
        const double top = at(y0, x0) + wx * (at(y0, x1) - at(y0, x0));
        const double bot = at(y1, x0) + wx * (at(y1, x1) - at(y1, x0));
        out.image.set(c * plane + o, top + wy * (bot - top));
      }
      const std::int64_t nx = std::clamp<std::int64_t>(std::llround(sx), 0, W - 1);
      const std::int64_t ny = std::clamp<std::int64_t>(std::llround(sy), 0, H - 1);
      out.mask.set(o, s.mask.item(static_cast<std::size_t>(ny * W + nx)));
    }
  return out;
}

SegmentationSample crop_resize(const SegmentationSample& s, double x0, double y0, double side) {
  const double W = static_cast<double>(s.image.dim(2)), H = static_cast<double>(s.image.dim(1));
  return warp(s, [&](double j, double i) {
    return std::pair{x0 + (j + 0.5) * side / W - 0.5, y0 + (i + 0.5) * side / H - 0.5};
  });
}

double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

}  // namespace

SegmentationSample hflip(const SegmentationSample& s) {
  const double W = static_cast<double>(s.image.dim(2));
  return warp(s, [&](double j, double i) { return std::pair{W - 1 - j, i}; });
}

SegmentationSample vflip(const SegmentationSample& s) {
  const double H = static_cast<double>(s.image.dim(1));
  return warp(s, [&](double j, double i) { return std::pair{j, H - 1 - i}; });
}

SegmentationSample rotate(const SegmentationSample& s, double degrees) {
  const double cx = (s.image.dim(2) - 1) / 2.0, cy = (s.image.dim(1) - 1) / 2.0;
  const double a = degrees * std::numbers::pi / 180.0, ca = std::cos(a), sa = std::sin(a);
  return warp(s, [&](double j, double i) {
    const double dx = j - cx, dy = i - cy;
    return std::pair{cx + ca * dx + sa * dy, cy - sa * dx + ca * dy};
  });
}

SegmentationSample augment(const SegmentationSample& s, const AugmentConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  if (s.image.rank() != 3 || s.image.dim(0) != 3 || s.mask.rank() != 3 || s.mask.dim(0) != 1 ||
      s.image.dim(1) != s.mask.dim(1) || s.image.dim(2) != s.mask.dim(2))
    fail(ErrorCode::dimension, "augment: image " + shape_str(s.image.shape()) + " and mask " +
                                   shape_str(s.mask.shape()) + " are inconsistent");
  auto coin = [&](double p) { return uniform(rng, 0.0, 1.0) < p; };
  const std::int64_t H = s.image.dim(1), W = s.image.dim(2);
  SegmentationSample out = s;

  if (coin(cfg.p_crop)) {
    const double full = static_cast<double>(std::min(H, W));
    for (int attempt = 0; attempt < 10; ++attempt) {
      const double side = std::round(std::sqrt(uniform(rng, cfg.crop_scale_min, cfg.crop_scale_max)) * full);
      if (side < 1) continue;
      const double x0 = std::floor(uniform(rng, 0.0, W - side + 1));
      const double y0 = std::floor(uniform(rng, 0.0, H - side + 1));
      out = crop_resize(out, x0, y0, side);
      break;
    }
  }
  if (coin(cfg.p_hflip)) out = hflip(out);
  if (coin(cfg.p_vflip)) out = vflip(out);
  if (coin(cfg.p_rot)) out = rotate(out, uniform(rng, -cfg.max_angle_deg, cfg.max_angle_deg));
  if (coin(cfg.p_elastic)) {
    const int g = cfg.elastic_grid;
    Tensor coarse({1, 2, g, g}, DType::f64);
    for (std::size_t k = 0; k < coarse.numel(); ++k) coarse.set(k, uniform(rng, -cfg.elastic_amplitude, cfg.elastic_amplitude));
    const Tensor field = resize_bilinear(coarse, H, W);
    const std::size_t plane = static_cast<std::size_t>(H * W);
    out = warp(out, [&](double j, double i) {
      const std::size_t o = static_cast<std::size_t>(static_cast<std::int64_t>(i) * W + static_cast<std::int64_t>(j));
      return std::pair{j + field.item(o), i + field.item(plane + o)};
    });
  }
  if (coin(cfg.p_photometric)) {
    const double b = uniform(rng, -cfg.brightness, cfg.brightness);
    const double c = uniform(rng, 1.0 - cfg.contrast, 1.0 + cfg.contrast);
    Tensor unit = denormalize_image(out.image);
    for (std::size_t i = 0; i < unit.numel(); ++i) unit.set(i, std::clamp(c * unit.item(i) + b, 0.0, 1.0));
    out.image = normalize_image(unit);
  }
  return out;
}

// ---------------------------------------------------------------- synthetic

SegmentationSample synth_sample(std::uint64_t seed, std::size_t index, std::int64_t size) {
  if (size < 8) fail(ErrorCode::configuration, "synthetic size must be >= 8");
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x5EEDu};
  std::mt19937_64 rng(seq);
  const double S = static_cast<double>(size);
  const std::size_t plane = static_cast<std::size_t>(size * size);

  struct Ellipse {
    double cx, cy, a, b, cos_t, sin_t;
    std::array<double, 3> color;
    bool inside(double x, double y) const {
      const double dx = x - cx, dy = y - cy;
      const double u = (cos_t * dx + sin_t * dy) / a, v = (-sin_t * dx + cos_t * dy) / b;
      return u * u + v * v <= 1.0;
    }
  };

  for (;;) {
    std::array<double, 3> bg;
    for (double& c : bg) c = uniform(rng, 0.1, 0.35);
    std::vector<Ellipse> shapes(static_cast<std::size_t>(std::uniform_int_distribution<int>(1, 3)(rng)));
    for (Ellipse& e : shapes) {
      e.cx = uniform(rng, 0.15, 0.85) * S;
      e.cy = uniform(rng, 0.15, 0.85) * S;
      e.a = uniform(rng, 0.08, 0.25) * S;
      e.b = uniform(rng, 0.08, 0.25) * S;
      const double t = uniform(rng, 0.0, std::numbers::pi);
      e.cos_t = std::cos(t);
      e.sin_t = std::sin(t);
      for (double& c : e.color) c = uniform(rng, 0.6, 0.95);
    }
    Tensor unit({3, size, size}, DType::f32), mask({1, size, size}, DType::f32);
    std::size_t fg = 0;
    for (std::int64_t i = 0; i < size; ++i)
      for (std::int64_t j = 0; j < size; ++j) {
        const std::size_t o = static_cast<std::size_t>(i * size + j);
        std::array<double, 3> px = bg;
        for (const Ellipse& e : shapes) {
          int hits = 0;  // 4x4 supersampled coverage for anti-aliased edges
          for (int sy = 0; sy < 4; ++sy)
            for (int sx = 0; sx < 4; ++sx) hits += e.inside(j + (sx + 0.5) / 4.0, i + (sy + 0.5) / 4.0);
          const double cov = hits / 16.0;
          for (std::size_t c = 0; c < 3; ++c) px[c] = px[c] * (1 - cov) + e.color[c] * cov;
        }
        bool in = false;
        for (const Ellipse& e : shapes) in = in || e.inside(j + 0.5, i + 0.5);
        mask.set(o, in ? 1.0 : 0.0);
        fg += in;
        for (std::size_t c = 0; c < 3; ++c) unit.set(c * plane + o, std::clamp(px[c] + uniform(rng, -0.08, 0.08), 0.0, 1.0));
      }
    const double frac = static_cast<double>(fg) / static_cast<double>(plane);
    if (frac < 0.02 || frac > 0.6) continue;
    char id[32];
    std::snprintf(id, sizeof id, "synth_%04zu", index);
    return {id, normalize_image(unit), mask};
  }
}

std::vector<SegmentationSample> synth_dataset(std::size_t n, std::uint64_t seed, std::int64_t size) {
  if (n < 1) fail(ErrorCode::contract, "synth_dataset: n must be >= 1");
  std::vector<SegmentationSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(synth_sample(seed, i, size));
  return out;
}

std::pair<Tensor, Tensor> make_batch(const std::vector<SegmentationSample>& samples,
                                     const std::vector<std::size_t>& order, std::size_t first, std::size_t count,
                                     DType dtype) {
  if (count == 0 || first + count > order.size()) fail(ErrorCode::contract, "make_batch: range out of bounds");
  const SegmentationSample& s0 = samples.at(order[first]);
  const std::int64_t H = s0.image.dim(1), W = s0.image.dim(2);
  const std::int64_t B = static_cast<std::int64_t>(count);
  Tensor x({B, 3, H, W}, dtype), y({B, 1, H, W}, dtype);
  const std::size_t img = static_cast<std::size_t>(3 * H * W), msk = static_cast<std::size_t>(H * W);
  for (std::size_t b = 0; b < count; ++b) {
    const SegmentationSample& s = samples.at(order[first + b]);
    if (s.image.dim(1) != H || s.image.dim(2) != W)
      fail(ErrorCode::dimension, "make_batch: sample " + s.id + " has a different spatial size");
    for (std::size_t k = 0; k < img; ++k) x.set(b * img + k, s.image.item(k));
    for (std::size_t k = 0; k < msk; ++k) y.set(b * msk + k, s.mask.item(k));
  }
  return {std::move(x), std::move(y)};
}

// ---------------------------------------------------------------- manifests

DatasetManifest split_manifest(const std::vector<std::pair<std::string, std::string>>& entries, std::array<int, 3> ratios,
                               std::uint64_t seed) {
  if (entries.empty()) fail(ErrorCode::contract, "split_manifest: entry list is empty");
  const int total_ratio = ratios[0] + ratios[1] + ratios[2];
  if (ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0 || total_ratio <= 0)
    fail(ErrorCode::configuration, "split_manifest: ratios must be non-negative with a positive sum");
  const std::size_t n = entries.size();
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double exact = static_cast<double>(n) * ratios[k] / total_ratio;
    sizes[k] = static_cast<std::size_t>(std::floor(exact));
    frac[k] = exact - static_cast<double>(sizes[k]);
    assigned += sizes[k];
  }
  while (assigned < n) {  // largest remainder, ties to the earlier split
    std::size_t best = 0;
    for (std::size_t k = 1; k < 3; ++k)
      if (frac[k] > frac[best]) best = k;
    ++sizes[best];
    frac[best] = -1;
    ++assigned;
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i)
    std::swap(order[i - 1], order[std::uniform_int_distribution<std::size_t>(0, i - 1)(rng)]);
  static const char* const names[3] = {"train", "valid", "test"};
  DatasetManifest m;
  std::size_t k = 0, used = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (used == sizes[k]) {
      ++k;
      used = 0;
    }
    const auto& e = entries[order[i]];
    m.push_back({e.first, e.second, names[k]});
    ++used;
  }
  return m;
}

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open manifest " + path);
  const fs::path base = fs::path(path).parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? p : (base / p).string(); };
  DatasetManifest m;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() != 3)
      fail(ErrorCode::format, path + ":" + std::to_string(line_no) + ": expected image<TAB>mask<TAB>split");
    if (fields[2] != "train" && fields[2] != "valid" && fields[2] != "test")
      fail(ErrorCode::format, path + ":" + std::to_string(line_no) + ": unknown split '" + fields[2] + "'");
    m.push_back({resolve(fields[0]), resolve(fields[1]), fields[2]});
  }
  return m;
}

void write_manifest(const std::string& path, const DatasetManifest& m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::io, "cannot write manifest " + path);
  for (const auto& e : m) out << e.image << '\t' << e.mask << '\t' << e.split << '\n';
  if (!out) fail(ErrorCode::io, "write failed for " + path);
}

std::vector<SegmentationSample> load_split(const DatasetManifest& m, const std::string& split, std::int64_t size) {
  std::vector<SegmentationSample> out;
  for (const auto& e : m)
    if (e.split == split) out.push_back(load_sample(e.image, e.mask, size));
  return out;
}

std::string write_synthetic_dataset(const std::string& dir, std::size_t n, std::uint64_t seed, std::int64_t size) {
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "images", ec);
  fs::create_directories(fs::path(dir) / "masks", ec);
  if (ec) fail(ErrorCode::io, "cannot create " + dir + ": " + ec.message());
  std::vector<std::pair<std::string, std::string>> entries;
  for (std::size_t i = 0; i < n; ++i) {
    const SegmentationSample s = synth_sample(seed, i, size);
    const std::string img = "images/" + s.id + ".ppm", msk = "masks/" + s.id + ".pgm";
    write_netpbm((fs::path(dir) / img).string(), tensor_to_raster(denormalize_image(s.image)));
    write_netpbm((fs::path(dir) / msk).string(), tensor_to_raster(s.mask));
    entries.emplace_back(img, msk);
  }
  const std::string manifest = (fs::path(dir) / "manifest.tsv").string();
  write_manifest(manifest, split_manifest(entries, {8, 1, 1}, seed));
  return manifest;
}

}  // namespace dygl
