#include "train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace dygl {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- config

void TrainConfig::validate() const {
  if (!(lr0 > 0)) fail(ErrorCode::configuration, "lr0 must be positive");
  if (!(weight_decay >= 0)) fail(ErrorCode::configuration, "weight_decay must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) fail(ErrorCode::configuration, "betas must be in [0,1)");
  if (!(adam_eps > 0)) fail(ErrorCode::configuration, "adam_eps must be positive");
  if (warmup_epochs < 0 || total_epochs < 1 || warmup_epochs >= total_epochs)
    fail(ErrorCode::configuration, "need 0 <= warmup_epochs < total_epochs");
  if (!(poly_power > 0)) fail(ErrorCode::configuration, "poly_power must be positive");
  if (batch_size < 1) fail(ErrorCode::configuration, "batch_size must be positive");
  if (!(clip_norm > 0)) fail(ErrorCode::configuration, "clip_norm must be positive");
  if (!(lambda >= 0 && lambda <= 1)) fail(ErrorCode::configuration, "lambda must be in [0,1]");
  if (max_steps < 0) fail(ErrorCode::configuration, "max_steps must be >= 0");
}

bool TrainConfig::apply(const std::string& key, const std::string& value) {
  if (key == "lr0") lr0 = parse_double(key, value);
  else if (key == "weight_decay") weight_decay = parse_double(key, value);
  else if (key == "betas") {
    const auto b = parse_double_list(key, value);
    if (b.size() != 2) fail(ErrorCode::configuration, "betas: expected 2 entries");
    beta1 = b[0];
    beta2 = b[1];
  } else if (key == "adam_eps") adam_eps = parse_double(key, value);
  else if (key == "warmup_epochs") warmup_epochs = static_cast<int>(parse_int(key, value));
  else if (key == "total_epochs") total_epochs = static_cast<int>(parse_int(key, value));
  else if (key == "poly_power") poly_power = parse_double(key, value);
  else if (key == "batch_size") batch_size = static_cast<int>(parse_int(key, value));
  else if (key == "clip_norm") clip_norm = parse_double(key, value);
  else if (key == "seed") seed = static_cast<std::uint64_t>(parse_int(key, value));
  else if (key == "lambda") lambda = parse_double(key, value);
  else if (key == "max_steps") max_steps = parse_int(key, value);
  else if (key == "augment") augment = parse_bool(key, value);
  else return false;
  return true;
}

std::string TrainConfig::to_text() const {
  std::ostringstream os;
  os << "lr0 = " << format_double(lr0) << "\n"
     << "weight_decay = " << format_double(weight_decay) << "\n"
     << "betas = " << format_double(beta1) << ", " << format_double(beta2) << "\n"
     << "adam_eps = " << format_double(adam_eps) << "\n"
     << "warmup_epochs = " << warmup_epochs << "\n"
     << "total_epochs = " << total_epochs << "\n"
     << "poly_power = " << format_double(poly_power) << "\n"
     << "batch_size = " << batch_size << "\n"
     << "clip_norm = " << format_double(clip_norm) << "\n"
     << "seed = " << seed << "\n"
     << "lambda = " << format_double(lambda) << "\n"
     << "max_steps = " << max_steps << "\n"
     << "augment = " << (augment ? "true" : "false") << "\n";
  return os.str();
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig rc;
  for (const auto& [k, v] : parse_key_values(text))
    if (!rc.model.apply(k, v) && !rc.train.apply(k, v)) fail(ErrorCode::configuration, "unknown config key '" + k + "'");
  rc.model.validate();
  rc.train.validate();
  return rc;
}

std::string RunConfig::to_text() const { return model.to_text() + train.to_text(); }

// ---------------------------------------------------------------- optimizer

double lr_at(double epoch, const TrainConfig& cfg) {
  const double w = cfg.warmup_epochs, T = cfg.total_epochs;
  if (epoch < w) return cfg.lr0 * (epoch / w);
  if (epoch >= T) return 0.0;
  return cfg.lr0 * std::pow(1.0 - (epoch - w) / (T - w), cfg.poly_power);
}

double epoch_lr(int e, const TrainConfig& cfg) {
  // Warmup epochs run at their end-of-epoch value so that epoch 0 is not a no-op.
  return e < cfg.warmup_epochs ? lr_at(e + 1, cfg) : lr_at(e, cfg);
}

double clip_grad_norm(const std::vector<Parameter*>& params, double max_norm) {
  if (!(max_norm > 0)) fail(ErrorCode::configuration, "clip_grad_norm: max_norm must be positive");
  double sq = 0;
  for (const Parameter* p : params)
    for (std::size_t i = 0; i < p->grad.numel(); ++i) sq += p->grad.item(i) * p->grad.item(i);
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) {
    for (const Parameter* p : params)
      if (!p->grad.all_finite()) fail(ErrorCode::numeric, "clip_grad_norm: non-finite gradient in " + p->name);
    fail(ErrorCode::numeric, "clip_grad_norm: gradient norm overflowed");
  }
  if (norm <= max_norm) return 1.0;
  const double s = max_norm / norm;
  for (Parameter* p : params)
    for (std::size_t i = 0; i < p->grad.numel(); ++i) p->grad.set(i, p->grad.item(i) * s);
  return s;
}

void adamw_step(const std::vector<Parameter*>& params, AdamWState& state, double lr, const TrainConfig& cfg) {
  for (const Parameter* p : params)
    if (!p->grad.all_finite()) fail(ErrorCode::numeric, "adamw_step: non-finite gradient in " + p->name);
  if (state.m.empty()) {
    for (const Parameter* p : params) {
      state.m.emplace_back(p->value.shape(), DType::f64);
      state.v.emplace_back(p->value.shape(), DType::f64);
    }
  }
  if (state.m.size() != params.size()) fail(ErrorCode::state, "adamw_step: optimizer state does not match parameters");
  const std::int64_t t = ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  const double decay = 1.0 - lr * cfg.weight_decay;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    auto m = state.m[k].span<double>();
    auto v = state.v[k].span<double>();
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      const double g = p.grad.item(i);
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg.adam_eps);
      p.value.set(i, p.value.item(i) * decay - lr * update);
    }
  }
}

std::vector<NamedTensor> export_optimizer(const std::vector<Parameter*>& params, const AdamWState& state) {
  std::vector<NamedTensor> out;
  out.push_back({"optim.step", Tensor::full({1}, static_cast<double>(state.step), DType::f64)});
  for (std::size_t k = 0; k < state.m.size() && k < params.size(); ++k) {
    out.push_back({"optim.m." + params[k]->name, state.m[k]});
    out.push_back({"optim.v." + params[k]->name, state.v[k]});
  }
  return out;
}

// ---------------------------------------------------------------- loop

std::string EpochRecord::to_log_line() const {
  char buf[256];
  std::snprintf(buf, sizeof buf, "epoch=%d lr=%g loss=%g val_dice=%g val_iou=%g", epoch, lr, loss, val_dice, val_iou);
  return buf;
}

MetricsReport evaluate_samples(const Model& model, const std::vector<SegmentationSample>& samples,
                               std::size_t batch_size) {
  if (samples.empty()) fail(ErrorCode::contract, "evaluate: no samples");
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  MetricsReport total;
  for (std::size_t first = 0; first < order.size(); first += batch_size) {
    const std::size_t count = std::min(batch_size, order.size() - first);
    auto [x, y] = make_batch(samples, order, first, count, model.dtype());
    const MetricsReport m = evaluate(model.predict(x), y);
    const double w = static_cast<double>(count);
    total.dice += m.dice * w;
    total.iou += m.iou * w;
    total.precision += m.precision * w;
    total.recall += m.recall * w;
    total.specificity += m.specificity * w;
    total.accuracy += m.accuracy * w;
    total.tp += m.tp;
    total.fp += m.fp;
    total.fn += m.fn;
    total.tn += m.tn;
  }
  const double n = static_cast<double>(samples.size());
  total.dice /= n;
  total.iou /= n;
  total.precision /= n;
  total.recall /= n;
  total.specificity /= n;
  total.accuracy /= n;
  return total;
}

namespace {

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), static_cast<std::uint32_t>(a),
                    static_cast<std::uint32_t>(b), 0xA06u};
  return std::mt19937_64(seq);
}

}  // namespace

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg, const TrainData& data,
                  const std::string& out_dir, const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.train.empty()) fail(ErrorCode::contract, "train: training set is empty");
  if (data.valid.empty()) fail(ErrorCode::contract, "train: validation set is empty");

  std::ofstream log;
  auto path = [&](const char* file) { return (fs::path(out_dir) / file).string(); };
  if (!out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) fail(ErrorCode::io, "cannot create " + out_dir + ": " + ec.message());
    log.open(path("train.log"), std::ios::app);
    if (!log) fail(ErrorCode::io, "cannot open " + path("train.log"));
  }

  TrainResult res;
  res.model = build_model(model_cfg, cfg.seed);
  Model& model = *res.model;
  const std::vector<Parameter*> params = model.params().trainable();
  AdamWState opt;
  const LossConfig loss_cfg{cfg.lambda, LossConfig{}.epsilon};
  const AugmentConfig aug = cfg.augment ? AugmentConfig{} : AugmentConfig::none();
  const std::size_t n = data.train.size(), bs = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.total_epochs; ++epoch) {
    if (cfg.max_steps > 0 && res.steps >= cfg.max_steps) break;
    const double lr = epoch_lr(epoch, cfg);

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    auto shuffle_rng = derived_rng(cfg.seed, static_cast<std::uint64_t>(epoch), ~0ull);
    for (std::size_t i = n; i > 1; --i)
      std::swap(order[i - 1], order[std::uniform_int_distribution<std::size_t>(0, i - 1)(shuffle_rng)]);

    std::vector<SegmentationSample> epoch_samples;
    epoch_samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto rng = derived_rng(cfg.seed, static_cast<std::uint64_t>(epoch), order[i]);
      epoch_samples.push_back(augment(data.train[order[i]], aug, rng));
    }
    std::vector<std::size_t> seq(n);
    for (std::size_t i = 0; i < n; ++i) seq[i] = i;

    double loss_sum = 0;
    std::size_t loss_count = 0;
    for (std::size_t first = 0; first < n; first += bs) {
      if (cfg.max_steps > 0 && res.steps >= cfg.max_steps) break;
      const std::size_t count = std::min(bs, n - first);
      auto [x, y] = make_batch(epoch_samples, seq, first, count, model.dtype());
      model.params().zero_grad();
      Tape tape;
      Context ctx{tape, true};
      Var loss = hybrid_loss(model.forward(ctx, tape.constant(x)), y, loss_cfg);
      const double value = loss.value().item();
      if (!std::isfinite(value))
        fail(ErrorCode::numeric, "train: non-finite loss at step " + std::to_string(res.steps + 1) +
                                     "; the last good checkpoint is kept");
      tape.backward(loss);
      clip_grad_norm(params, cfg.clip_norm);
      adamw_step(params, opt, lr, cfg);
      res.step_losses.push_back(value);
      ++res.steps;
      loss_sum += value;
      ++loss_count;
    }

    const MetricsReport val = evaluate_samples(model, data.valid, bs);
    EpochRecord rec{epoch, lr, loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0, val.dice, val.iou};
    res.epochs.push_back(rec);
    const bool improved = val.dice > res.best_val_dice;
    if (improved) {
      res.best_val_dice = val.dice;
      res.best_epoch = epoch;
    }
    if (!out_dir.empty()) {
      const auto extra = export_optimizer(params, opt);
      save_model(model, path("last.ckpt"), extra);
      if (improved) save_model(model, path("best.ckpt"), extra);
      log << rec.to_log_line() << '\n' << std::flush;
    }
    if (on_epoch) on_epoch(rec);
  }
  if (!out_dir.empty()) save_model(model, path("final.ckpt"), export_optimizer(params, opt));
  return res;
}

}  // namespace dygl
