#include "dyglnet/dyglnet.h"

#include <cstring>
#include <filesystem>
#include <new>
#include <string>

#include "gradcheck.hpp"
#include "ops.hpp"
#include "train.hpp"

struct dygl_model {
  std::unique_ptr<dygl::Model> model;
};

namespace {

thread_local std::string g_last_error;

template <class F>
int guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return DYGL_OK;
  } catch (const dygl::Error& e) {
    g_last_error = e.what();
    return static_cast<int>(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return DYGL_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return DYGL_ERR_INTERNAL;
  }
}

int invalid(const char* what) {
  g_last_error = std::string(what) + " must not be NULL";
  return DYGL_ERR_INVALID_ARGUMENT;
}

int copy_text(const std::string& text, char* buf, std::size_t cap, std::size_t* needed) {
  if (needed) *needed = text.size() + 1;
  if (buf && cap >= text.size() + 1) std::memcpy(buf, text.c_str(), text.size() + 1);
  else if (buf && cap > 0) buf[0] = '\0';
  return DYGL_OK;
}

std::string manifest_path(const std::string& data) {
  namespace fs = std::filesystem;
  if (fs::is_directory(data)) return (fs::path(data) / "manifest.tsv").string();
  return data;
}

}  // namespace

extern "C" {

const char* dygl_last_error(void) { return g_last_error.c_str(); }

const char* dygl_status_name(int status) {
  switch (status) {
    case DYGL_OK: return "ok";
    case DYGL_ERR_INVALID_ARGUMENT: return "invalid argument";
    case DYGL_ERR_INTERNAL: return "internal";
    default:
      if (status >= 1 && status <= 9) return dygl::error_code_name(static_cast<dygl::ErrorCode>(status));
      return "unknown";
  }
}

uint32_t dygl_checkpoint_version(void) { return dygl::kCheckpointVersion; }

int dygl_default_config(char* buf, size_t cap, size_t* needed) {
  return copy_text(dygl::ModelConfig::defaults().to_text(), buf, cap, needed);
}

int dygl_model_build(const char* config_text, uint64_t seed, dygl_model** out) {
  if (!out) return invalid("out");
  *out = nullptr;
  return guarded([&] {
    const dygl::ModelConfig cfg =
        config_text ? dygl::ModelConfig::from_text(config_text) : dygl::ModelConfig::defaults();
    auto handle = std::make_unique<dygl_model>();
    handle->model = dygl::build_model(cfg, seed);
    *out = handle.release();
  });
}

int dygl_model_load(const char* path, dygl_model** out) {
  if (!out) return invalid("out");
  if (!path) return invalid("path");
  *out = nullptr;
  return guarded([&] {
    auto handle = std::make_unique<dygl_model>();
    handle->model = dygl::load_model(path);
    *out = handle.release();
  });
}

int dygl_model_save(const dygl_model* model, const char* path) {
  if (!model) return invalid("model");
  if (!path) return invalid("path");
  return guarded([&] { dygl::save_model(*model->model, path); });
}

void dygl_model_free(dygl_model* model) { delete model; }

int dygl_model_param_count(const dygl_model* model, uint64_t* out) {
  if (!model) return invalid("model");
  if (!out) return invalid("out");
  *out = model->model->param_count();
  return DYGL_OK;
}

int dygl_model_config(const dygl_model* model, char* buf, size_t cap, size_t* needed) {
  if (!model) return invalid("model");
  return copy_text(model->model->config().to_text(), buf, cap, needed);
}

int dygl_model_forward(const dygl_model* model, const float* input, int64_t n, int64_t h, int64_t w, float* logits,
                       size_t logits_len) {
  if (!model) return invalid("model");
  if (!input) return invalid("input");
  if (!logits) return invalid("logits");
  return guarded([&] {
    const dygl::ModelConfig& cfg = model->model->config();
    if (n < 1 || h < 1 || w < 1) dygl::fail(dygl::ErrorCode::dimension, "forward: extents must be positive");
    const std::size_t in_len = static_cast<std::size_t>(n * cfg.input_channels * h * w);
    const std::size_t out_len = static_cast<std::size_t>(n * cfg.output_channels * h * w);
    if (logits_len != out_len)
      dygl::fail(dygl::ErrorCode::dimension, "forward: logits buffer holds " + std::to_string(logits_len) +
                                                 " values, expected " + std::to_string(out_len));
    dygl::Tensor x = dygl::Tensor::from_f32({n, cfg.input_channels, h, w}, std::vector<float>(input, input + in_len));
    const dygl::Tensor y = model->model->predict(x);
    std::memcpy(logits, y.data<float>(), out_len * sizeof(float));
  });
}

int dygl_predict_file(const dygl_model* model, const char* image_path, const char* mask_path) {
  if (!model) return invalid("model");
  if (!image_path) return invalid("image_path");
  if (!mask_path) return invalid("mask_path");
  return guarded([&] {
    const dygl::Model& m = *model->model;
    const std::int64_t size = m.config().input_size;
    const dygl::Raster img = dygl::read_netpbm(image_path);
    if (img.channels != 3) dygl::fail(dygl::ErrorCode::format, std::string(image_path) + ": expected a P6 image");
    dygl::Tensor unit = dygl::raster_to_tensor(img);
    if (img.height != size || img.width != size)
      unit = dygl::resize_bilinear(unit.reshape({1, 3, img.height, img.width}), size, size).reshape({3, size, size});
    const dygl::Tensor x = dygl::normalize_image(unit).reshape({1, 3, size, size});
    dygl::Tensor logits = m.predict(x);
    if (img.height != size || img.width != size) logits = dygl::resize_bilinear(logits, img.height, img.width);
    dygl::Raster mask;
    mask.width = img.width;
    mask.height = img.height;
    mask.channels = 1;
    mask.pixels.resize(static_cast<std::size_t>(img.width * img.height));
    for (std::size_t i = 0; i < mask.pixels.size(); ++i) mask.pixels[i] = logits.item(i) > 0.0 ? 255 : 0;
    dygl::write_netpbm(mask_path, mask);
  });
}

int dygl_evaluate(const dygl_model* model, const char* data, const char* split, dygl_metrics* out) {
  if (!model) return invalid("model");
  if (!data) return invalid("data");
  if (!out) return invalid("out");
  return guarded([&] {
    const std::string which = split ? split : "test";
    const auto manifest = dygl::read_manifest(manifest_path(data));
    const auto samples = dygl::load_split(manifest, which, model->model->config().input_size);
    if (samples.empty()) dygl::fail(dygl::ErrorCode::contract, "evaluate: split '" + which + "' is empty");
    const dygl::MetricsReport r = dygl::evaluate_samples(*model->model, samples);
    *out = {r.dice, r.iou, r.precision, r.recall, r.specificity, r.accuracy, r.tp, r.fp, r.fn, r.tn};
  });
}

int dygl_train(const char* config_text, const char* data, const char* out_dir, int64_t synthetic_n,
               dygl_epoch_fn on_epoch, void* user, dygl_train_summary* out) {
  if (!data) return invalid("data");
  if (!out_dir) return invalid("out_dir");
  return guarded([&] {
    const dygl::RunConfig rc = dygl::RunConfig::from_text(config_text ? config_text : "");
    std::string manifest = manifest_path(data);
    if (synthetic_n > 0)
      manifest = dygl::write_synthetic_dataset(data, static_cast<std::size_t>(synthetic_n), rc.train.seed,
                                               rc.model.input_size);
    const auto entries = dygl::read_manifest(manifest);
    dygl::TrainData td;
    td.train = dygl::load_split(entries, "train", rc.model.input_size);
    td.valid = dygl::load_split(entries, "valid", rc.model.input_size);
    auto cb = [&](const dygl::EpochRecord& r) {
      if (!on_epoch) return;
      const dygl_epoch_record rec{r.epoch, r.lr, r.loss, r.val_dice, r.val_iou};
      on_epoch(&rec, user);
    };
    const dygl::TrainResult res = dygl::train(rc.model, rc.train, td, out_dir, cb);
    if (out) {
      out->steps = res.steps;
      out->epochs = static_cast<int>(res.epochs.size());
      out->best_epoch = res.best_epoch;
      out->best_val_dice = res.best_val_dice;
      out->final_loss = res.step_losses.empty() ? 0.0 : res.step_losses.back();
    }
  });
}

int dygl_gradcheck(const char* block, int seeds, dygl_gradcheck_fn on_row, void* user, int* all_passed) {
  if (seeds < 1) {
    g_last_error = "seeds must be >= 1";
    return DYGL_ERR_INVALID_ARGUMENT;
  }
  return guarded([&] {
    constexpr double tol = 1e-4;
    bool ok = true;
    dygl::gradcheck_suite(block ? block : "", seeds, [&](const dygl::GradCheckCase& c) {
      const auto& r = c.report;
      const dygl_gradcheck_row row{c.block.c_str(),
                                   c.seed,
                                   r.max_rel_err,
                                   r.max_rel_err_resolved,
                                   r.max_unresolved_ratio,
                                   r.checked,
                                   r.skipped_kinks,
                                   r.resolution_limited,
                                   r.passed_resolved(tol) ? 1 : 0,
                                   r.passed(tol) ? 1 : 0,
                                   c.seconds};
      ok = ok && r.passed_resolved(tol);
      if (on_row) on_row(&row, user);
    });
    if (all_passed) *all_passed = ok ? 1 : 0;
  });
}

const char* dygl_gradcheck_blocks(void) {
  static const std::string joined = [] {
    std::string s;
    for (const auto& b : dygl::gradcheck_blocks()) s += (s.empty() ? "" : ",") + b;
    return s;
  }();
  return joined.c_str();
}

}  // extern "C"
