#include "network.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace dygl {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume a little-endian host");

// ---------------------------------------------------------------- ModelConfig

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.stage_channels = {8, 16, 32, 64};
  return c;
}

void ModelConfig::validate() const {
  for (std::size_t i = 0; i < 4; ++i) {
    if (stage_channels[i] < 1) fail(ErrorCode::configuration, "stage_channels must be positive");
    if (i > 0 && stage_channels[i] <= stage_channels[i - 1])
      fail(ErrorCode::configuration, "stage_channels must be strictly increasing");
    if (blocks_per_stage[i] < 0) fail(ErrorCode::configuration, "blocks_per_stage must be >= 0");
    if (sampler_groups < 1 || stage_channels[i] % sampler_groups != 0)
      fail(ErrorCode::configuration, "sampler_groups " + std::to_string(sampler_groups) +
                                         " must divide every stage width");
  }
  if (!(split_ratio > 0 && split_ratio < 1)) fail(ErrorCode::configuration, "split_ratio must be in (0,1)");
  if (dilation_rates.empty()) fail(ErrorCode::configuration, "dilation_rates must be non-empty");
  for (int r : dilation_rates)
    if (r < 1) fail(ErrorCode::configuration, "dilation_rates must be positive");
  if (!(ffn_ratio > 0)) fail(ErrorCode::configuration, "ffn_ratio must be positive");
  if (input_channels < 1 || output_channels < 1)
    fail(ErrorCode::configuration, "input_channels and output_channels must be positive");
  if (input_size < 16 || input_size % 16 != 0)
    fail(ErrorCode::configuration, "input_size must be a positive multiple of 16");
  for (std::size_t i = 2; i < 4; ++i) {
    ShdcConfig s;
    s.channels = stage_channels[i];
    s.split_ratio = split_ratio;
    s.dilation_rates = dilation_rates;
    s.ffn_ratio = ffn_ratio;
    s.validate();
  }
}

bool ModelConfig::apply(const std::string& key, const std::string& value) {
  auto four = [&](std::array<std::int64_t, 4>& dst) {
    auto v = parse_int_list(key, value);
    if (v.size() != 4) fail(ErrorCode::configuration, key + ": expected 4 entries");
    std::copy(v.begin(), v.end(), dst.begin());
  };
  if (key == "stage_channels") four(stage_channels);
  else if (key == "blocks_per_stage") four(blocks_per_stage);
  else if (key == "split_ratio") split_ratio = parse_double(key, value);
  else if (key == "dilation_rates") {
    dilation_rates.clear();
    for (auto r : parse_int_list(key, value)) dilation_rates.push_back(static_cast<int>(r));
  } else if (key == "ffn_ratio") ffn_ratio = parse_double(key, value);
  else if (key == "sampler_groups") sampler_groups = static_cast<int>(parse_int(key, value));
  else if (key == "input_channels") input_channels = parse_int(key, value);
  else if (key == "output_channels") output_channels = parse_int(key, value);
  else if (key == "input_size") input_size = parse_int(key, value);
  else if (key == "use_dyt") use_dyt = parse_bool(key, value);
  else if (key == "upsample_mode") {
    if (value == "dynamic") upsample_mode = UpsampleMode::dynamic;
    else if (value == "bilinear") upsample_mode = UpsampleMode::bilinear;
    else fail(ErrorCode::configuration, "upsample_mode must be 'dynamic' or 'bilinear'");
  } else {
    return false;
  }
  return true;
}

std::string ModelConfig::to_text() const {
  auto list = [](const auto& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
    return s;
  };
  std::ostringstream os;
  os << "stage_channels = " << list(stage_channels) << "\n"
     << "blocks_per_stage = " << list(blocks_per_stage) << "\n"
     << "split_ratio = " << format_double(split_ratio) << "\n"
     << "dilation_rates = " << list(dilation_rates) << "\n"
     << "ffn_ratio = " << format_double(ffn_ratio) << "\n"
     << "sampler_groups = " << sampler_groups << "\n"
     << "input_channels = " << input_channels << "\n"
     << "output_channels = " << output_channels << "\n"
     << "input_size = " << input_size << "\n"
     << "use_dyt = " << (use_dyt ? "true" : "false") << "\n"
     << "upsample_mode = " << (upsample_mode == UpsampleMode::dynamic ? "dynamic" : "bilinear") << "\n";
  return os.str();
}

ModelConfig ModelConfig::from_text(const std::string& text) {
  ModelConfig cfg;
  for (const auto& [k, v] : parse_key_values(text))
    if (!cfg.apply(k, v)) fail(ErrorCode::configuration, "unknown model config key '" + k + "'");
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------- Model

Model::Model(const ModelConfig& cfg, std::uint64_t seed, DType dtype) : cfg_(cfg), store_(dtype, seed) {
  cfg_.validate();
  const auto& c = cfg_.stage_channels;
  const ConvSpec s2{2, 1, 1, 1}, s1{1, 1, 1, 1};

  stem_.emplace_back(store_, "stem.conv0", cfg_.input_channels, c[0], 3, s2);
  for (std::int64_t i = 0; i < cfg_.blocks_per_stage[0]; ++i)
    stem_.emplace_back(store_, "stem.conv" + std::to_string(i + 1), c[0], c[0], 3, s1);

  for (std::size_t st = 0; st < 3; ++st) {
    const std::string prefix = "enc.stage" + std::to_string(st + 2);
    down_[st] = Conv2d(store_, prefix + ".down", c[st], c[st + 1], 3, s2);
    ShdcConfig sc;
    sc.channels = c[st + 1];
    sc.split_ratio = cfg_.split_ratio;
    sc.dilation_rates = cfg_.dilation_rates;
    sc.ffn_ratio = cfg_.ffn_ratio;
    sc.use_fusion = st > 0;  // the first SHDC stage keeps only depthwise conv + FFN
    sc.use_dyt = cfg_.use_dyt;
    for (std::int64_t b = 0; b < cfg_.blocks_per_stage[st + 1]; ++b)
      stages_[st].emplace_back(store_, prefix + ".shdc" + std::to_string(b), sc);
  }

  // Decoder: up1 consumes e4 with skip e3, ..., up4 returns to full resolution
  // using the network input as its skip.
  const std::array<std::int64_t, 4> in{c[3], c[2], c[1], c[0]};
  const std::array<std::int64_t, 4> skip{c[2], c[1], c[0], cfg_.input_channels};
  const std::array<std::int64_t, 4> out{c[2], c[1], c[0], c[0]};
  for (std::size_t i = 0; i < 4; ++i) {
    DyFusionUpConfig dc;
    dc.in_channels = in[i];
    dc.skip_channels = skip[i];
    dc.out_channels = out[i];
    dc.groups = cfg_.sampler_groups;
    dc.fuse_dilations = cfg_.dilation_rates;
    dc.mode = cfg_.upsample_mode;
    up_[i] = DyFusionUp(store_, "dec.up" + std::to_string(i + 1), dc);
  }
  head_ = Conv2d(store_, "head", c[0], cfg_.output_channels, 1, {});
}

std::vector<std::int64_t> Model::decoder_skip_channels() const {
  std::vector<std::int64_t> out;
  for (const auto& u : up_) out.push_back(u.cfg.skip_channels);
  return out;
}

Var Model::forward(const Context& ctx, Var x, std::vector<Shape>* trace) const {
  const Tensor& xv = x.value();
  if (xv.rank() != 4 || xv.dim(1) != cfg_.input_channels)
    fail(ErrorCode::dimension, "model input " + shape_str(xv.shape()) + " must be [N," +
                                   std::to_string(cfg_.input_channels) + ",H,W]");
  if (xv.dim(2) % 16 != 0 || xv.dim(3) % 16 != 0)
    fail(ErrorCode::dimension, "model input extents " + shape_str(xv.shape()) + " must be divisible by 16");
  if (xv.dtype() != dtype()) fail(ErrorCode::contract, "model input dtype differs from parameter dtype");

  Var h = x;
  for (const Conv2d& conv : stem_) h = relu(conv(ctx, h));
  std::array<Var, 4> enc;
  enc[0] = h;
  for (std::size_t st = 0; st < 3; ++st) {
    h = down_[st](ctx, h);
    for (const ShdcBlock& block : stages_[st]) h = block(ctx, h);
    enc[st + 1] = h;
  }
  if (trace)
    for (const Var& e : enc) trace->push_back(e.shape());

  const std::array<Var, 4> skips{enc[2], enc[1], enc[0], x};
  Var d = enc[3];
  for (std::size_t i = 0; i < 4; ++i) {
    d = up_[i](ctx, d, skips[i]);
    if (trace) trace->push_back(d.shape());
  }
  return head_(ctx, d);
}

Tensor Model::predict(const Tensor& x) const {
  Tape tape;
  Context ctx{tape, false};
  return forward(ctx, tape.constant(x)).value();
}

std::unique_ptr<Model> build_model(const ModelConfig& cfg, std::uint64_t seed, DType dtype) {
  return std::make_unique<Model>(cfg, seed, dtype);
}

// ---------------------------------------------------------------- checkpoint

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { bytes.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  std::uint8_t u8() {
    need(1, "u8");
    return bytes_[pos_++];
  }
  std::uint16_t u16() {
    need(2, "u16");
    std::uint16_t v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }
  void raw(void* dst, std::size_t n, const char* what) {
    need(n, what);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n)
      fail(ErrorCode::format, "checkpoint truncated at byte offset " + std::to_string(pos_) + " while reading " + what);
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data) {
  Writer w;
  w.raw("DYGL", 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(data.tensors.size()));
  for (const NamedTensor& nt : data.tensors) {
    if (nt.name.size() > 0xFFFF) fail(ErrorCode::format, "tensor name too long: " + nt.name);
    w.u16(static_cast<std::uint16_t>(nt.name.size()));
    w.raw(nt.name.data(), nt.name.size());
    w.u8(static_cast<std::uint8_t>(nt.value.rank()));
    for (auto d : nt.value.shape()) w.u32(static_cast<std::uint32_t>(d));
    w.u8(static_cast<std::uint8_t>(nt.value.dtype()));
    w.raw(nt.value.raw_bytes(), nt.value.byte_size());
  }
  w.u32(static_cast<std::uint32_t>(data.config_text.size()));
  w.raw(data.config_text.data(), data.config_text.size());
  return std::move(w.bytes);
}

CheckpointData decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  char magic[4];
  r.raw(magic, 4, "magic");
  if (std::memcmp(magic, "DYGL", 4) != 0) fail(ErrorCode::format, "bad checkpoint magic at byte offset 0");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    fail(ErrorCode::version, "checkpoint version " + std::to_string(version) + " is not supported (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
  const std::uint32_t count = r.u32();
  CheckpointData data;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t start = r.pos();
    NamedTensor nt;
    nt.name.resize(r.u16());
    r.raw(nt.name.data(), nt.name.size(), "tensor name");
    const std::uint8_t rank = r.u8();
    if (rank < 1 || rank > 4)
      fail(ErrorCode::format, "invalid tensor rank " + std::to_string(rank) + " at byte offset " + std::to_string(start));
    Shape shape;
    for (std::uint8_t d = 0; d < rank; ++d) {
      const std::uint32_t e = r.u32();
      if (e == 0) fail(ErrorCode::format, "zero extent in tensor " + nt.name + " at byte offset " + std::to_string(r.pos() - 4));
      shape.push_back(e);
    }
    const std::uint8_t code = r.u8();
    if (code > 1) fail(ErrorCode::format, "unknown dtype code " + std::to_string(code) + " at byte offset " + std::to_string(r.pos() - 1));
    nt.value = Tensor(shape, static_cast<DType>(code));
    r.raw(nt.value.raw_bytes(), nt.value.byte_size(), "tensor payload");
    data.tensors.push_back(std::move(nt));
  }
  data.config_text.resize(r.u32());
  r.raw(data.config_text.data(), data.config_text.size(), "config snapshot");
  if (!r.done()) fail(ErrorCode::format, "trailing bytes after config snapshot at byte offset " + std::to_string(r.pos()));
  return data;
}

void save_model(const Model& model, const std::string& path, const std::vector<NamedTensor>& extra) {
  CheckpointData data;
  for (const auto& p : model.params().all()) data.tensors.push_back({p->name, p->value});
  for (const auto& e : extra) data.tensors.push_back(e);
  data.config_text = model.config().to_text();
  const auto bytes = encode_checkpoint(data);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot write " + tmp);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::io, "write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) fail(ErrorCode::io, "cannot move checkpoint into " + path);
}

std::unique_ptr<Model> load_model(const std::string& path, std::vector<NamedTensor>* extra) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::io, "cannot open checkpoint " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  CheckpointData data = decode_checkpoint(bytes);
  if (data.tensors.empty()) fail(ErrorCode::format, "checkpoint holds no tensors");

  const ModelConfig cfg = ModelConfig::from_text(data.config_text);
  auto model = build_model(cfg, 0, data.tensors.front().value.dtype());
  std::map<std::string, const Tensor*> by_name;
  for (const auto& nt : data.tensors) {
    if (!by_name.emplace(nt.name, &nt.value).second) fail(ErrorCode::format, "duplicate tensor " + nt.name);
  }
  for (const auto& p : model->params().all()) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) fail(ErrorCode::format, "checkpoint is missing tensor " + p->name);
    const Tensor& t = *it->second;
    if (t.shape() != p->value.shape() || t.dtype() != p->value.dtype())
      fail(ErrorCode::format, "tensor " + p->name + " has shape " + shape_str(t.shape()) + ", expected " +
                                  shape_str(p->value.shape()));
    t.validate("checkpoint tensor " + p->name);
    by_name.erase(it);
  }
  for (const auto& [name, t] : by_name)
    if (!extra && name.rfind("optim.", 0) != 0) fail(ErrorCode::format, "checkpoint has unknown tensor " + name);
  for (const auto& p : model->params().all()) {
    for (const auto& nt : data.tensors)
      if (nt.name == p->name) {
        p->value = nt.value;
        break;
      }
  }
  if (extra)
    for (const auto& nt : data.tensors)
      if (by_name.count(nt.name)) extra->push_back(nt);
  return model;
}

}  // namespace dygl
