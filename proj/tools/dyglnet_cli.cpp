#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "dyglnet/dyglnet.h"

namespace {

constexpr double kReferenceParams = 9.98e6;

struct Failure {
  int status;
};

void check(int status) {
  if (status != DYGL_OK) throw Failure{status};
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    std::cerr << "error: cannot open " << path << "\n";
    throw Failure{DYGL_ERR_IO};
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string model_config(const dygl_model* m) {
  std::size_t needed = 0;
  check(dygl_model_config(m, nullptr, 0, &needed));
  std::string buf(needed, '\0');
  check(dygl_model_config(m, buf.data(), buf.size(), &needed));
  buf.resize(needed - 1);
  return buf;
}

struct ModelHandle {
  dygl_model* ptr = nullptr;
  ~ModelHandle() { dygl_model_free(ptr); }
};

int run_train(const std::string& config, const std::string& data, const std::string& out, long long synthetic) {
  const std::string text = config.empty() ? std::string() : read_file(config);
  dygl_train_summary summary{};
  check(dygl_train(
      text.c_str(), data.c_str(), out.c_str(), synthetic,
      [](const dygl_epoch_record* r, void*) {
        std::printf("epoch=%d lr=%g loss=%g val_dice=%g val_iou=%g\n", r->epoch, r->lr, r->loss, r->val_dice,
                    r->val_iou);
        std::fflush(stdout);
      },
      nullptr, &summary));
  std::printf("steps=%lld epochs=%d best_epoch=%d best_val_dice=%g\n", static_cast<long long>(summary.steps),
              summary.epochs, summary.best_epoch, summary.best_val_dice);
  return 0;
}

int run_eval(const std::string& ckpt, const std::string& data, const std::string& split) {
  ModelHandle m;
  check(dygl_model_load(ckpt.c_str(), &m.ptr));
  dygl_metrics r{};
  check(dygl_evaluate(m.ptr, data.c_str(), split.c_str(), &r));
  std::printf("Dice         %.6f\nIoU          %.6f\nPrecision    %.6f\nRecall       %.6f\n"
              "Specificity  %.6f\nAccuracy     %.6f\n",
              r.dice, r.iou, r.precision, r.recall, r.specificity, r.accuracy);
  return 0;
}

int run_predict(const std::string& ckpt, const std::string& image, const std::string& out) {
  ModelHandle m;
  check(dygl_model_load(ckpt.c_str(), &m.ptr));
  check(dygl_predict_file(m.ptr, image.c_str(), out.c_str()));
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

int run_gradcheck(const std::string& block, int seeds) {
  std::printf("%-12s %5s %12s %12s %8s %6s %8s  %s\n", "block", "seed", "max_rel_err", "resolved", "checked", "kinks",
              "limited", "verdict");
  int all = 0;
  check(dygl_gradcheck(
      block.c_str(), seeds,
      [](const dygl_gradcheck_row* r, void*) {
        std::printf("%-12s %5llu %12.3e %12.3e %8llu %6llu %8llu  %s\n", r->block,
                    static_cast<unsigned long long>(r->seed), r->max_rel_err, r->max_rel_err_resolved,
                    static_cast<unsigned long long>(r->checked), static_cast<unsigned long long>(r->skipped_kinks),
                    static_cast<unsigned long long>(r->resolution_limited),
                    r->passed ? (r->passed_strict ? "pass" : "pass (resolution-limited entries present)") : "FAIL");
        std::fflush(stdout);
      },
      nullptr, &all));
  std::printf("%s\n", all ? "all gradient checks passed" : "gradient check FAILED");
  return all ? 0 : 1;
}

int run_info(const std::string& ckpt, const std::string& config) {
  ModelHandle m;
  if (!ckpt.empty()) check(dygl_model_load(ckpt.c_str(), &m.ptr));
  else check(dygl_model_build(config.empty() ? nullptr : read_file(config).c_str(), 42, &m.ptr));
  std::uint64_t count = 0;
  check(dygl_model_param_count(m.ptr, &count));
  std::printf("parameters: %llu\n", static_cast<unsigned long long>(count));
  std::printf("ratio to 9.98M reference: %.4f\n", static_cast<double>(count) / kReferenceParams);
  std::printf("config:\n%s", model_config(m.ptr).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DyGLNet segmentation toolkit"};
  app.require_subcommand(1);

  std::string config, data, out, ckpt, image, split = "test", block;
  long long synthetic = 0;
  int seeds = 5;

  auto* train = app.add_subcommand("train", "Train a model and write checkpoints");
  train->add_option("--config", config, "key = value config file")->check(CLI::ExistingFile);
  train->add_option("--data", data, "Manifest file or dataset directory")->required();
  train->add_option("--out", out, "Output directory")->required();
  train->add_option("--synthetic", synthetic, "Generate N synthetic samples into --data first")->check(CLI::PositiveNumber);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  eval->add_option("--ckpt", ckpt, "Checkpoint")->required();
  eval->add_option("--data", data, "Manifest file or dataset directory")->required();
  eval->add_option("--split", split, "train, valid or test")->check(CLI::IsMember({"train", "valid", "test"}));

  auto* predict = app.add_subcommand("predict", "Write a binary mask for one image");
  predict->add_option("--ckpt", ckpt, "Checkpoint")->required();
  predict->add_option("--image", image, "P6 image")->required();
  predict->add_option("--out", out, "Output P5 mask")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gradcheck->add_option("--block", block, std::string("One of: ") + dygl_gradcheck_blocks());
  gradcheck->add_option("--seeds", seeds, "Seeds per block")->check(CLI::PositiveNumber);

  auto* info = app.add_subcommand("info", "Parameter count and configuration");
  info->add_option("--ckpt", ckpt, "Checkpoint (default: build from --config or the default config)");
  info->add_option("--config", config, "key = value model config file")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*train) return run_train(config, data, out, synthetic);
    if (*eval) return run_eval(ckpt, data, split);
    if (*predict) return run_predict(ckpt, image, out);
    if (*gradcheck) return run_gradcheck(block, seeds);
    if (*info) return run_info(ckpt, config);
  } catch (const Failure& f) {
    const char* msg = dygl_last_error();
    if (msg && *msg) std::cerr << "error (" << dygl_status_name(f.status) << "): " << msg << "\n";
    return 1;
  }
  return 2;
}
