#include "gradcheck.hpp"

#include <chrono>
#include <random>

#include "blocks.hpp"
#include "loss.hpp"
#include "network.hpp"

namespace dygl {

const std::vector<std::string>& gradcheck_blocks() {
  static const std::vector<std::string> names{"dyt", "attention", "msdc",  "ffn",    "shdc_block",
                                              "dyfusionup", "dice", "bce", "hybrid", "network"};
  return names;
}

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo, double hi) {
  Tensor t(std::move(shape), DType::f64);
  std::uniform_real_distribution<double> u(lo, hi);
  for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, u(rng));
  return t;
}

Tensor random_mask(Shape shape, std::mt19937_64& rng) {
  Tensor t(std::move(shape), DType::f64);
  for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, static_cast<double>(rng() & 1u));
  return t;
}

// Randomizes affine/normalization parameters away from their identity
// initialization so that every gradient path carries signal.
void perturb_all(ParamStore& store, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (const auto& p : store.all()) {
    if (!p->trainable) continue;
    for (std::size_t i = 0; i < p->value.numel(); ++i) p->value.set(i, p->value.item(i) + 0.2 * u(rng));
  }
}

Var weighted_sum(Tape& tape, Var y, const Tensor& r) { return sum(mul(y, tape.constant(r))); }

}  // namespace

GradCheckCase gradcheck_block(const std::string& block, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(seed * 7919 + 17);
  ParamStore store(DType::f64, seed);
  GradCheckOptions opts;
  opts.seed = seed;
  std::function<Var(Tape&)> f;

  // Holders kept alive for the lifetime of f.
  std::optional<DyT> dyt;
  std::optional<SingleHeadAttention> attn;
  std::optional<MultiScaleDWConv> msdc;
  std::optional<FeedForward> ffn;
  std::optional<ShdcBlock> shdc;
  std::optional<DyFusionUp> up;
  std::unique_ptr<Model> model;
  Tensor r, target, input_tensor;

  if (block == "dyt") {
    dyt.emplace(store, "dyt", 4);
    perturb_all(store, rng);
    Parameter& x = store.add("input", random_tensor({2, 4, 3, 3}, rng, -2, 2));
    r = random_tensor({2, 4, 3, 3}, rng, -1, 1);
    f = [&, px = &x](Tape& tape) { return weighted_sum(tape, (*dyt)(Context{tape, true}, tape.param(*px)), r); };
  } else if (block == "attention") {
    attn.emplace(store, "attn", 4, 6, true);
    perturb_all(store, rng);
    Parameter& x = store.add("input", random_tensor({2, 4, 3, 3}, rng, -1, 1));
    r = random_tensor({2, 4, 3, 3}, rng, -1, 1);
    f = [&, px = &x](Tape& tape) { return weighted_sum(tape, (*attn)(Context{tape, true}, tape.param(*px)), r); };
  } else if (block == "msdc") {
    msdc.emplace(store, "msdc", 4, std::vector<int>{1, 2, 3});
    perturb_all(store, rng);
    Parameter& x = store.add("input", random_tensor({2, 4, 5, 5}, rng, -1, 1));
    r = random_tensor({2, 4, 5, 5}, rng, -1, 1);
    f = [&, px = &x](Tape& tape) { return weighted_sum(tape, (*msdc)(Context{tape, true}, tape.param(*px)), r); };
  } else if (block == "ffn") {
    ffn.emplace(store, "ffn", 4, 2.0);
    Parameter& x = store.add("input", random_tensor({2, 4, 3, 3}, rng, -1, 1));
    r = random_tensor({2, 4, 3, 3}, rng, -1, 1);
    f = [&, px = &x](Tape& tape) { return weighted_sum(tape, (*ffn)(Context{tape, true}, tape.param(*px)), r); };
  } else if (block == "shdc_block") {
    ShdcConfig cfg;
    cfg.channels = 8;
    cfg.ffn_ratio = 2.0;
    shdc.emplace(store, "shdc", cfg);
    perturb_all(store, rng);
    Parameter& x = store.add("input", random_tensor({2, 8, 4, 4}, rng, -1, 1));
    r = random_tensor({2, 8, 4, 4}, rng, -1, 1);
    f = [&, px = &x](Tape& tape) { return weighted_sum(tape, (*shdc)(Context{tape, true}, tape.param(*px)), r); };
  } else if (block == "dyfusionup") {
    DyFusionUpConfig cfg;
    cfg.in_channels = 8;
    cfg.skip_channels = 4;
    up.emplace(store, "up", cfg);
    perturb_all(store, rng);
    // Non-zero offsets so the coordinate path of the sampler is exercised.
    Tensor& w = up->offset->weight->value;
    w = random_tensor(w.shape(), rng, -0.4, 0.4);
    Parameter& xl = store.add("input.low", random_tensor({1, 8, 3, 3}, rng, -1, 1));
    Parameter& xs = store.add("input.skip", random_tensor({1, 4, 6, 6}, rng, -1, 1));
    r = random_tensor({1, 4, 6, 6}, rng, -1, 1);
    f = [&, pl = &xl, ps = &xs](Tape& tape) {
      return weighted_sum(tape, (*up)(Context{tape, true}, tape.param(*pl), tape.param(*ps)), r);
    };
  } else if (block == "dice" || block == "bce" || block == "hybrid") {
    Parameter& x = store.add("logits", random_tensor({2, 1, 4, 4}, rng, -3, 3));
    target = random_mask({2, 1, 4, 4}, rng);
    const double lambda = std::uniform_real_distribution<double>(0.1, 0.9)(rng);
    f = [&, px = &x, lambda, block](Tape& tape) {
      Var logits = tape.param(*px);
      if (block == "dice") return dice_loss(sigmoid(logits), target, LossConfig{}.epsilon);
      if (block == "bce") return bce_loss(logits, target);
      return hybrid_loss(logits, target, LossConfig{lambda, LossConfig{}.epsilon});
    };
  } else if (block == "network") {
    model = build_model(ModelConfig::tiny(), seed, DType::f64);
    perturb_all(model->params(), rng);
    input_tensor = random_tensor({1, 3, 32, 32}, rng, -2, 2);
    target = random_mask({1, 1, 32, 32}, rng);
    opts.max_entries_per_param = 3;
    f = [&](Tape& tape) {
      Context ctx{tape, true};
      return hybrid_loss(model->forward(ctx, tape.constant(input_tensor)), target, LossConfig{});
    };
    GradCheckCase c{block, seed, grad_check(f, model->params().trainable(), opts), 0};
    c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return c;
  } else {
    fail(ErrorCode::configuration, "unknown gradcheck block '" + block + "'");
  }

  GradCheckCase c{block, seed, grad_check(f, store.trainable(), opts), 0};
  c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return c;
}

std::vector<GradCheckCase> gradcheck_suite(const std::string& block, int seeds,
                                           const std::function<void(const GradCheckCase&)>& on_case) {
  std::vector<std::string> blocks;
  if (block.empty()) blocks = gradcheck_blocks();
  else blocks.push_back(block);
  std::vector<GradCheckCase> out;
  for (const auto& b : blocks)
    for (int s = 1; s <= seeds; ++s) {
      out.push_back(gradcheck_block(b, static_cast<std::uint64_t>(s)));
      if (on_case) on_case(out.back());
    }
  return out;
}

}  // namespace dygl
