// Copyright (c) 2026 mffunet contributors
// SPDX-License-Identifier: Apache-2.0

#include "mffu/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "mffu/loss_metrics.hpp"

namespace mffu {
namespace {

// splitmix-style stream derivation so per-epoch shuffles are independent
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t x = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  x *= 0x94D049BB133111EBULL;
  x ^= x >> 31;
  return x;
}

std::vector<std::vector<float>> snapshot_state(Model<float>& m) {
  std::vector<std::vector<float>> state;
  visit_params(m, [&](const std::string&, Tensor<float>& t, bool) {
    state.push_back(t.values());
  });
  return state;
}

void restore_state(Model<float>& m, const std::vector<std::vector<float>>& state) {
  size_t i = 0;
  visit_params(m, [&](const std::string&, Tensor<float>& t, bool) {
    t.values() = state[i++];
  });
}

}  // namespace

std::array<std::vector<Sample>, 3> split_dataset(const std::vector<Sample>& samples,
                                                 std::array<double, 3> ratios,
                                                 std::uint64_t seed) {
  if (samples.empty()) throw std::invalid_argument("split_dataset: no samples");
  double s = 0.0;
  for (double r : ratios) {
    if (r < 0.0) throw std::invalid_argument("split_dataset: negative ratio");
    s += r;
  }
  if (std::abs(s - 1.0) > 1e-9)
    throw std::invalid_argument("split_dataset: ratios must sum to 1");

  const int n = static_cast<int>(samples.size());
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  Rng rng(seed);
  rng.shuffle(order);

  const int n_train = static_cast<int>(std::floor(n * ratios[0]));
  const int n_val = static_cast<int>(std::floor(n * ratios[1]));
  std::array<std::vector<Sample>, 3> out;
  for (int i = 0; i < n; ++i) {
    const Sample& smp = samples[static_cast<size_t>(order[static_cast<size_t>(i)])];
    if (i < n_train) out[0].push_back(smp);
    else if (i < n_train + n_val) out[1].push_back(smp);
    else out[2].push_back(smp);
  }
  return out;
}

double dataset_dice_loss(Model<float>& m, const std::vector<Sample>& samples, int batch_size) {
  if (samples.empty()) throw std::invalid_argument("dataset_dice_loss: no samples");
  const auto batches = batch_indices(static_cast<int>(samples.size()), batch_size, std::nullopt);
  double total = 0.0;
  for (const auto& idx : batches) {
    auto [images, masks] = make_batch(samples, idx);
    Tensor<float> probs = model_forward(m, images, Mode::Eval);
    const double loss = static_cast<double>(soft_dice_loss(probs, masks)[0]);
    total += loss * static_cast<double>(idx.size());
  }
  return total / static_cast<double>(samples.size());
}

TrainHistory train(Model<float>& m, const std::vector<Sample>& train_set,
                   const std::vector<Sample>& val_set, const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.empty() || val_set.empty())
    throw std::invalid_argument("train: empty train or validation split");

  std::vector<Tensor<float>> params = trainable_params(m);
  Adam<float> adam(AdamConfig{cfg.lr, 0.9, 0.999, 1e-8}, params);
  EarlyStopper stopper(cfg.patience, cfg.min_delta);

  TrainHistory hist;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::vector<float>> best_state = snapshot_state(m);
  hist.stop_reason = "max_epochs";

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto batches = batch_indices(static_cast<int>(train_set.size()), cfg.batch_size,
                                       derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    double epoch_loss = 0.0;
    int batch_no = 0;
    for (const auto& idx : batches) {
      auto [images, masks] = make_batch(train_set, idx);
      Tape<float> tape;
      BoundModel<float> bound = bind_to_tape(m, tape);
      Tensor<float> probs = model_forward(bound.model, images, Mode::Train);
      Tensor<float> loss = soft_dice_loss(probs, masks);
      const double loss_v = static_cast<double>(loss[0]);
      if (!std::isfinite(loss_v))
        throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                 std::to_string(epoch) + " batch " + std::to_string(batch_no));
      tape.backward(loss);
      // fresh tape per batch: gradients start from zero every step
      std::vector<Tensor<float>> grads;
      grads.reserve(bound.trainable.size());
      for (const auto& p : bound.trainable) grads.push_back(tape.grad(p));
      adam.step(params, grads);
      epoch_loss += loss_v * static_cast<double>(idx.size());
      ++batch_no;
    }
    epoch_loss /= static_cast<double>(train_set.size());
    const double val_loss = dataset_dice_loss(m, val_set, cfg.batch_size);

    hist.train_loss.push_back(epoch_loss);
    hist.train_dsc.push_back(1.0 - epoch_loss);
    hist.val_loss.push_back(val_loss);
    hist.val_dsc.push_back(1.0 - val_loss);

    if (val_loss < best_val) {
      best_val = val_loss;
      best_state = snapshot_state(m);
      hist.best_epoch = epoch;
    }
    if (stopper.observe(val_loss)) {
      hist.stop_reason = "early_stop";
      break;
    }
  }

  restore_state(m, best_state);
  return hist;
}

void write_history_csv(const std::string& path, const TrainHistory& h) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  std::fputs("epoch,train_loss,train_dsc,val_loss,val_dsc\n", f);
  for (int e = 0; e < h.epochs_run(); ++e) {
    std::fprintf(f, "%d,%.6f,%.6f,%.6f,%.6f\n", e, h.train_loss[static_cast<size_t>(e)],
                 h.train_dsc[static_cast<size_t>(e)], h.val_loss[static_cast<size_t>(e)],
                 h.val_dsc[static_cast<size_t>(e)]);
  }
  if (std::fclose(f) != 0) throw std::runtime_error("write failed for " + path);
}

}  // namespace mffu
