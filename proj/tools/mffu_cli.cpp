// Copyright (c) 2026 mffunet contributors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line surface: synthesize data, preprocess, train, evaluate,
// predict, and run the gradient verification suite.
//
// Exit codes: 0 success, 1 validation error, 2 runtime failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "mffu/checkpoint.hpp"
#include "mffu/data.hpp"
#include "mffu/gradcheck.hpp"
#include "mffu/image_io.hpp"
#include "mffu/loss_metrics.hpp"
#include "mffu/trainer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

struct SynthArgs {
  std::string out;
  int n = 8;
  int size = 64;
  std::uint64_t seed = 1;
};

struct PreprocessArgs {
  std::string input, output;
  int size = 256;
  double min_foreground = 1e-3;
};

struct TrainArgs {
  std::string data;
  int epochs = 50;
  int batch_size = 2;
  double lr = 1e-4;
  int base_width = 32;
  int classes = 3;
  int patience = 5;
  std::uint64_t seed = 0;
  std::string checkpoint = "model.mffu";
  std::string history = "history.csv";
};

struct EvaluateArgs {
  std::string data, checkpoint, report;
};

struct PredictArgs {
  std::string image, checkpoint, out;
};

struct GradcheckArgs {
  std::string ops = "all";
  std::uint64_t seed = 20260811;
};

int run_synth(const SynthArgs& a) {
  const int written = mffu::synth_dataset(a.n, a.size, a.seed, a.out);
  std::printf("wrote %d image/mask pairs to %s\n", written, a.out.c_str());
  return kExitOk;
}

int run_preprocess(const PreprocessArgs& a) {
  const auto stats = mffu::preprocess_dataset(a.input, a.output, a.size, a.min_foreground);
  std::printf("retained %d, dropped %d\n", stats.retained, stats.dropped);
  return kExitOk;
}

int run_train(const TrainArgs& a) {
  auto slices = mffu::load_dataset_dir(a.data, a.classes);
  auto samples = mffu::to_samples(slices);
  if (samples.empty()) throw std::runtime_error("no samples in " + a.data);

  mffu::TrainConfig tc;
  tc.epochs = a.epochs;
  tc.batch_size = a.batch_size;
  tc.lr = a.lr;
  tc.patience = a.patience;
  tc.seed = a.seed;
  tc.validate();

  auto splits = mffu::split_dataset(samples, tc.split_ratios, a.seed);
  if (splits[0].empty() || splits[1].empty())
    throw std::runtime_error("dataset too small for a 60/20/20 split");

  mffu::ModelConfig mc;
  mc.base_width = a.base_width;
  mc.num_classes = a.classes;
  mc.input_h = samples[0].image.dim(1);  // size comes from the data
  mc.input_w = samples[0].image.dim(2);
  mc.seed = a.seed;
  auto model = mffu::build_model<float>(mc);

  auto hist = mffu::train(model, splits[0], splits[1], tc);
  mffu::save_checkpoint(model, a.checkpoint);
  mffu::write_history_csv(a.history, hist);

  const int last = hist.epochs_run() - 1;
  std::printf("epochs_run %d stop %s best_epoch %d\n", hist.epochs_run(),
              hist.stop_reason.c_str(), hist.best_epoch);
  std::printf("final train_dsc %.6f\n", hist.train_dsc[static_cast<size_t>(last)]);
  std::printf("best val_dsc %.6f\n", 1.0 - hist.val_loss[static_cast<size_t>(hist.best_epoch)]);
  return kExitOk;
}

// Shape mismatches against the checkpoint config are runtime failures (2),
// not flag-validation failures (1).
template <typename F>
auto as_runtime(F&& f) {
  try {
    return f();
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(e.what());
  }
}

int run_evaluate(const EvaluateArgs& a) {
  auto model = mffu::load_checkpoint(a.checkpoint);
  auto slices = mffu::load_dataset_dir(a.data, model.cfg.num_classes);
  auto samples = mffu::to_samples(slices);
  auto report =
      as_runtime([&] { return mffu::evaluate_dataset(model, samples, 2, "eval"); });
  const std::string text = mffu::report_to_text(report);
  std::ofstream f(a.report, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + a.report + " for writing");
  f << text;
  if (!f.flush()) throw std::runtime_error("write failed for " + a.report);
  std::fputs(text.c_str(), stdout);
  return kExitOk;
}

int run_predict(const PredictArgs& a) {
  auto model = mffu::load_checkpoint(a.checkpoint);
  mffu::GrayImage img = mffu::load_gray8(a.image);
  const int size = model.cfg.input_h;
  std::vector<std::uint8_t> pixels = img.pixels;
  if (img.w != size || img.h != size)
    pixels = mffu::resize_nearest(pixels, img.h, img.w, size, size);

  mffu::Tensor<float> x({1, 1, size, size});
  for (std::int64_t i = 0; i < x.size(); ++i)
    x[i] = static_cast<float>(pixels[static_cast<size_t>(i)]) / 255.0f;
  auto probs = as_runtime([&] { return mffu::model_forward(model, x, mffu::Mode::Eval); });
  auto mask = mffu::binarize(probs);

  mffu::GrayImage out;
  out.w = out.h = size;
  out.pixels.resize(static_cast<size_t>(size) * size);
  for (size_t i = 0; i < out.pixels.size(); ++i)
    out.pixels[i] = static_cast<std::uint8_t>(mask.ids[i]);
  mffu::save_gray8(a.out, out);
  std::printf("wrote %s (%dx%d)\n", a.out.c_str(), size, size);
  return kExitOk;
}

int run_gradcheck(const GradcheckArgs& a) {
  auto suite = mffu::gradcheck_suite(a.seed);
  bool any = false, all_ok = true;
  std::printf("%-20s %-12s %s\n", "op", "max_rel_err", "status");
  for (auto& entry : suite) {
    if (a.ops != "all" && a.ops != entry.name) continue;
    any = true;
    const double err = entry.run();
    const bool ok = err < 1e-4;
    all_ok = all_ok && ok;
    std::printf("%-20s %-12.3e %s\n", entry.name.c_str(), err, ok ? "ok" : "FAIL");
  }
  if (!any) {
    std::fprintf(stderr, "unknown op: %s\n", a.ops.c_str());
    return kExitValidation;
  }
  return all_ok ? kExitOk : kExitValidation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MFF-CCA U-Net segmentation toolkit"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic ellipse dataset");
  synth->add_option("--out", sa.out, "Output dataset directory")->required();
  synth->add_option("--n", sa.n, "Number of slices")->default_val(8)->check(CLI::PositiveNumber);
  synth->add_option("--size", sa.size, "Slice size in pixels")->default_val(64);
  synth->add_option("--seed", sa.seed, "Generator seed")->default_val(1);

  PreprocessArgs pa;
  auto* prep = app.add_subcommand("preprocess", "Filter, resize and normalize a dataset");
  prep->add_option("--input", pa.input, "Input dataset directory")->required();
  prep->add_option("--output", pa.output, "Output dataset directory")->required();
  prep->add_option("--size", pa.size, "Target size")->default_val(256)->check(CLI::PositiveNumber);
  prep->add_option("--min-foreground", pa.min_foreground, "Informative-slice threshold")
      ->default_val(1e-3)->check(CLI::Range(0.0, 1.0));

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train on a dataset with a 60/20/20 split");
  train->add_option("--data", ta.data, "Dataset directory")->required();
  train->add_option("--epochs", ta.epochs, "Epoch budget")->default_val(50)->check(CLI::PositiveNumber);
  train->add_option("--batch-size", ta.batch_size, "Batch size")->default_val(2)->check(CLI::PositiveNumber);
  train->add_option("--lr", ta.lr, "Adam learning rate")->default_val(1e-4);
  train->add_option("--base-width", ta.base_width, "First encoder width")->default_val(32);
  train->add_option("--classes", ta.classes, "Class count")->default_val(3)->check(CLI::Range(2, 255));
  train->add_option("--patience", ta.patience, "Early-stopping patience")->default_val(5)->check(CLI::PositiveNumber);
  train->add_option("--seed", ta.seed, "Split/init/shuffle seed")->default_val(0);
  train->add_option("--checkpoint", ta.checkpoint, "Best-checkpoint output path")->default_val("model.mffu");
  train->add_option("--history", ta.history, "Per-epoch CSV output path")->default_val("history.csv");

  EvaluateArgs ea;
  auto* eval = app.add_subcommand("evaluate", "Write a DSC/JI metrics report");
  eval->add_option("--data", ea.data, "Dataset directory")->required();
  eval->add_option("--checkpoint", ea.checkpoint, "Checkpoint path")->required();
  eval->add_option("--report", ea.report, "Report output path")->required();

  PredictArgs pra;
  auto* pred = app.add_subcommand("predict", "Predict a mask for one image");
  pred->add_option("--image", pra.image, "Input image (8-bit grayscale PNG)")->required();
  pred->add_option("--checkpoint", pra.checkpoint, "Checkpoint path")->required();
  pred->add_option("--out", pra.out, "Output mask path")->required();

  GradcheckArgs ga;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference verification of every operator");
  gc->add_option("--ops", ga.ops, "all or one operator name")->default_val("all");
  gc->add_option("--seed", ga.seed, "Suite seed")->default_val(20260811);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (synth->parsed()) return run_synth(sa);
    if (prep->parsed()) return run_preprocess(pa);
    if (train->parsed()) return run_train(ta);
    if (eval->parsed()) return run_evaluate(ea);
    if (pred->parsed()) return run_predict(pra);
    if (gc->parsed()) return run_gradcheck(ga);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitOk;
}
