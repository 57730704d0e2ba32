#include <cstring>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "network.hpp"
#include "support.hpp"

using namespace dygl;

namespace {

std::vector<std::uint8_t> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void dump(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no error thrown");
  return ErrorCode::io;
}

}  // namespace

TEST_SUITE("network") {

TEST_CASE("lone 1x1 conv parameter count") {
  ParamStore store(DType::f32, 1);
  Conv2d c(store, "c", 8, 4, 1, {});
  CHECK(store.trainable_count() == 36);
}

TEST_CASE("parameter count equals shape arithmetic") {
  const ModelConfig tiny = ModelConfig::tiny();
  CHECK(build_model(tiny, 42)->param_count() == static_cast<std::size_t>(oracle::model_params(tiny)));
  const ModelConfig dflt = ModelConfig::defaults();
  CHECK(build_model(dflt, 42)->param_count() == static_cast<std::size_t>(oracle::model_params(dflt)));

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 8; ++trial) {
    ModelConfig c;
    const std::int64_t base = 4 * (1 + static_cast<std::int64_t>(rng() % 3));
    c.stage_channels = {base, 2 * base, 3 * base, 4 * base};
    c.blocks_per_stage = {static_cast<std::int64_t>(rng() % 3), static_cast<std::int64_t>(rng() % 3),
                          static_cast<std::int64_t>(rng() % 3), 1 + static_cast<std::int64_t>(rng() % 2)};
    c.ffn_ratio = 1 + static_cast<double>(rng() % 4);
    c.dilation_rates = rng() % 2 ? std::vector<int>{1, 2, 3} : std::vector<int>{1, 2};
    c.sampler_groups = rng() % 2 ? 4 : 2;
    CHECK(build_model(c, 1)->param_count() == static_cast<std::size_t>(oracle::model_params(c)));
  }
}

TEST_CASE("parameter names are unique and dotted") {
  auto m = build_model(ModelConfig::tiny(), 1);
  std::set<std::string> names;
  for (const auto& p : m->params().all()) {
    CHECK(names.insert(p->name).second);
    CHECK(p->grad.shape() == p->value.shape());
  }
  CHECK(names.count("enc.stage3.shdc0.attn.qkv.weight") == 1);
  CHECK(names.count("dec.up1.offset.weight") == 1);
  CHECK(names.count("head.weight") == 1);
}

TEST_CASE("forward shapes") {
  auto m = build_model(ModelConfig::tiny(), 42);
  {
    Tape tape;
    Var y = m->forward(Context{tape, false}, tape.constant(Tensor::zeros({2, 3, 32, 32}, DType::f32)));
    CHECK(y.shape() == Shape{2, 1, 32, 32});
  }
  CHECK(m->predict(Tensor::zeros({1, 3, 224, 224}, DType::f32)).shape() == Shape{1, 1, 224, 224});

  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 6; ++trial) {
    const std::int64_t h = 16 * (1 + static_cast<std::int64_t>(rng() % 4)), w = 16 * (1 + static_cast<std::int64_t>(rng() % 4));
    Tape tape;
    std::vector<Shape> trace;
    Var y = m->forward(Context{tape, false}, tape.constant(Tensor::zeros({1, 3, h, w}, DType::f32)), &trace);
    REQUIRE(trace.size() == 8);
    const auto& c = m->config().stage_channels;
    for (std::size_t i = 0; i < 4; ++i) {
      const std::int64_t f = std::int64_t{2} << i;
      CHECK(trace[i] == Shape{1, c[i], h / f, w / f});
    }
    for (std::size_t i = 4; i < 8; ++i) {
      CHECK(trace[i][2] == 2 * trace[i - 1][2]);
      CHECK(trace[i][3] == 2 * trace[i - 1][3]);
    }
    CHECK(y.shape() == Shape{1, 1, h, w});
  }
}

TEST_CASE("skip channels match the encoder") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    ModelConfig c = ModelConfig::tiny();
    const std::int64_t base = 4 * (1 + static_cast<std::int64_t>(rng() % 3));
    c.stage_channels = {base, 2 * base, 4 * base, 8 * base};
    auto m = build_model(c, 1);
    Tape tape;
    std::vector<Shape> trace;
    m->forward(Context{tape, false}, tape.constant(Tensor::zeros({1, 3, 32, 32}, DType::f32)), &trace);
    const auto skips = m->decoder_skip_channels();
    CHECK(skips[0] == trace[2][1]);
    CHECK(skips[1] == trace[1][1]);
    CHECK(skips[2] == trace[0][1]);
    CHECK(skips[3] == c.input_channels);
  }
}

TEST_CASE("forward input contracts") {
  auto m = build_model(ModelConfig::tiny(), 1);
  CHECK(code_of([&] { m->predict(Tensor::zeros({1, 3, 24, 32}, DType::f32)); }) == ErrorCode::dimension);
  CHECK(code_of([&] { m->predict(Tensor::zeros({1, 2, 32, 32}, DType::f32)); }) == ErrorCode::dimension);
  CHECK(code_of([&] { m->predict(Tensor::zeros({1, 3, 32, 32}, DType::f64)); }) == ErrorCode::contract);
}

TEST_CASE("build and eval forward are deterministic") {
  auto a = build_model(ModelConfig::tiny(), 42), b = build_model(ModelConfig::tiny(), 42);
  for (std::size_t i = 0; i < a->params().all().size(); ++i)
    CHECK(a->params().all()[i]->value.bit_equal(b->params().all()[i]->value));
  auto c = build_model(ModelConfig::tiny(), 43);
  CHECK_FALSE(a->params().find("stem.conv0.weight")->value.bit_equal(c->params().find("stem.conv0.weight")->value));
  std::mt19937_64 rng(1);
  const Tensor x = oracle::random({2, 3, 32, 32}, rng, -1, 1, DType::f32);
  const Tensor y1 = a->predict(x);
  CHECK(y1.bit_equal(a->predict(x)));
  CHECK(y1.bit_equal(b->predict(x)));
}

TEST_CASE("config validation and text round trip") {
  ModelConfig c = ModelConfig::tiny();
  c.stage_channels = {8, 8, 16, 32};
  CHECK(code_of([&] { c.validate(); }) == ErrorCode::configuration);
  c = ModelConfig::tiny();
  c.input_size = 100;
  CHECK(code_of([&] { c.validate(); }) == ErrorCode::configuration);
  c = ModelConfig::tiny();
  c.sampler_groups = 3;
  CHECK(code_of([&] { c.validate(); }) == ErrorCode::configuration);

  ModelConfig d = ModelConfig::tiny();
  d.dilation_rates = {1, 3};
  d.ffn_ratio = 2.5;
  d.use_dyt = false;
  d.upsample_mode = UpsampleMode::bilinear;
  const ModelConfig e = ModelConfig::from_text(d.to_text());
  CHECK(e.to_text() == d.to_text());
  CHECK(e.dilation_rates == d.dilation_rates);
  CHECK(code_of([&] { ModelConfig::from_text("stage_channels = 1,2\n"); }) == ErrorCode::configuration);
  CHECK(code_of([&] { ModelConfig::from_text("nonsense = 3\n"); }) == ErrorCode::configuration);
}

TEST_CASE("checkpoint round trip") {
  oracle::TempDir dir("ckpt");
  auto m = build_model(ModelConfig::tiny(), 7);
  std::mt19937_64 rng(2);
  // Move BN statistics off their defaults so buffers are exercised too.
  {
    Tape tape;
    m->forward(Context{tape, true}, tape.constant(oracle::random({2, 3, 32, 32}, rng, -1, 1, DType::f32)));
  }
  const std::string path = dir.file("m.ckpt");
  save_model(*m, path);
  auto back = load_model(path);
  REQUIRE(back->params().all().size() == m->params().all().size());
  for (std::size_t i = 0; i < m->params().all().size(); ++i) {
    const auto& p = m->params().all()[i];
    Parameter* q = back->params().find(p->name);
    REQUIRE(q != nullptr);
    CHECK(q->value.bit_equal(p->value));
    CHECK(q->trainable == p->trainable);
  }
  CHECK(back->config().to_text() == m->config().to_text());
  const Tensor x = oracle::random({1, 3, 32, 32}, rng, -1, 1, DType::f32);
  CHECK(back->predict(x).bit_equal(m->predict(x)));
  // Saving the loaded model reproduces the file byte for byte.
  save_model(*back, dir.file("again.ckpt"));
  CHECK(slurp(path) == slurp(dir.file("again.ckpt")));
}

TEST_CASE("checkpoint byte layout") {
  CheckpointData d;
  d.tensors.push_back({"ab", Tensor::from({2}, {1.0, -2.0}, DType::f32)});
  d.config_text = "x";
  const auto b = encode_checkpoint(d);
  const std::vector<std::uint8_t> head{'D', 'Y', 'G', 'L', 1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 'a', 'b', 1, 2, 0, 0, 0, 0};
  REQUIRE(b.size() == head.size() + 8 + 4 + 1);
  CHECK(std::equal(head.begin(), head.end(), b.begin()));
  float f[2];
  std::memcpy(f, b.data() + head.size(), 8);
  CHECK(f[0] == 1.0f);
  CHECK(f[1] == -2.0f);
  CHECK(b[head.size() + 8] == 1);
  CHECK(b.back() == 'x');
  const CheckpointData r = decode_checkpoint(b);
  CHECK(r.tensors[0].name == "ab");
  CHECK(r.tensors[0].value.bit_equal(d.tensors[0].value));
}

TEST_CASE("corrupt checkpoints are rejected") {
  oracle::TempDir dir("bad");
  auto m = build_model(ModelConfig::tiny(), 7);
  const std::string path = dir.file("m.ckpt");
  save_model(*m, path);
  const auto bytes = slurp(path);

  for (std::size_t cut : {std::size_t{0}, std::size_t{3}, std::size_t{11}, bytes.size() / 2, bytes.size() - 1}) {
    dump(dir.file("t.ckpt"), std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut)));
    std::unique_ptr<Model> out;
    CHECK(code_of([&] { out = load_model(dir.file("t.ckpt")); }) == ErrorCode::format);
    CHECK(out == nullptr);
  }
  auto bad_version = bytes;
  bad_version[4] = 9;
  dump(dir.file("v.ckpt"), bad_version);
  CHECK(code_of([&] { load_model(dir.file("v.ckpt")); }) == ErrorCode::version);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  dump(dir.file("g.ckpt"), bad_magic);
  CHECK(code_of([&] { load_model(dir.file("g.ckpt")); }) == ErrorCode::format);
  auto trailing = bytes;
  trailing.push_back(0);
  dump(dir.file("x.ckpt"), trailing);
  CHECK(code_of([&] { load_model(dir.file("x.ckpt")); }) == ErrorCode::format);
  CHECK(code_of([&] { load_model(dir.file("missing.ckpt")); }) == ErrorCode::io);

  // A failed save leaves no file behind.
  CHECK_THROWS(save_model(*m, dir.file("no/such/dir/m.ckpt")));
}

TEST_CASE("truncation error names the byte offset") {
  CheckpointData d;
  d.tensors.push_back({"w", Tensor::zeros({4}, DType::f64)});
  auto b = encode_checkpoint(d);
  b.resize(20);
  try {
    decode_checkpoint(b);
    FAIL("accepted");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("offset") != std::string::npos);
  }
}

}  // TEST_SUITE
