// Copyright (c) 2026 mffunet contributors
// SPDX-License-Identifier: Apache-2.0
//
// Adam optimization, dice-loss training with early stopping on the
// validation-loss plateau, and deterministic dataset splitting.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mffu/data.hpp"
#include "mffu/model.hpp"

namespace mffu {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Per-parameter first/second moment state with bias correction.
template <typename T>
class Adam {
 public:
  Adam(AdamConfig cfg, const std::vector<Tensor<T>>& params) : cfg_(cfg) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& p : params) {
      m_.emplace_back(p.shape(), T(0));
      v_.emplace_back(p.shape(), T(0));
    }
  }

  void step(std::vector<Tensor<T>>& params, const std::vector<Tensor<T>>& grads) {
    if (params.size() != m_.size() || grads.size() != m_.size())
      throw std::invalid_argument("adam: parameter/gradient count mismatch");
    ++t_;
    const T bc1 = static_cast<T>(1.0 - std::pow(cfg_.beta1, static_cast<double>(t_)));
    const T bc2 = static_cast<T>(1.0 - std::pow(cfg_.beta2, static_cast<double>(t_)));
    const auto& kt = kernels::table<T>();
    for (size_t i = 0; i < params.size(); ++i) {
      if (params[i].shape() != grads[i].shape() || params[i].shape() != m_[i].shape())
        throw std::invalid_argument("adam: shape mismatch at parameter " + std::to_string(i));
      kt.adam_step(params[i].size(), params[i].data(), grads[i].data(), m_[i].data(),
                   v_[i].data(), static_cast<T>(cfg_.beta1), static_cast<T>(cfg_.beta2),
                   static_cast<T>(cfg_.eps), static_cast<T>(cfg_.lr), bc1, bc2);
    }
  }

  std::int64_t steps_taken() const { return t_; }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

// Plateau rule: stop once the loss has failed to improve on the best seen
// value by at least min_delta for `patience` consecutive observations.
class EarlyStopper {
 public:
  EarlyStopper(int patience, double min_delta) : patience_(patience), min_delta_(min_delta) {
    if (patience < 1) throw std::invalid_argument("early stopping: patience must be >= 1");
  }

  // Returns true when training should stop after this observation.
  bool observe(double loss) {
    const int index = count_++;
    if (loss < best_ - min_delta_) {
      best_ = loss;
      best_index_ = index;
      streak_ = 0;
    } else {
      ++streak_;
    }
    return streak_ >= patience_;
  }

  double best() const { return best_; }
  int best_index() const { return best_index_; }

 private:
  int patience_;
  double min_delta_;
  double best_ = std::numeric_limits<double>::infinity();
  int best_index_ = -1;
  int streak_ = 0;
  int count_ = 0;
};

struct TrainConfig {
  int epochs = 50;
  int batch_size = 2;
  double lr = 1e-4;
  int patience = 5;
  double min_delta = 1e-4;
  std::array<double, 3> split_ratios{0.60, 0.20, 0.20};
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train config: batch size must be >= 1");
    if (patience < 1) throw std::invalid_argument("train config: patience must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("train config: lr must be positive");
    double s = 0.0;
    for (double r : split_ratios) {
      if (r < 0.0) throw std::invalid_argument("train config: negative split ratio");
      s += r;
    }
    if (std::abs(s - 1.0) > 1e-9)
      throw std::invalid_argument("train config: split ratios must sum to 1");
  }
};

struct TrainHistory {
  std::vector<double> train_loss, train_dsc, val_loss, val_dsc;
  int best_epoch = -1;
  std::string stop_reason;  // "early_stop" or "max_epochs"

  int epochs_run() const { return static_cast<int>(train_loss.size()); }
};

// Seeded shuffle, then contiguous partition: floor(n*r) for train and val,
// remainder to test. Disjoint and exhaustive.
std::array<std::vector<Sample>, 3> split_dataset(const std::vector<Sample>& samples,
                                                 std::array<double, 3> ratios,
                                                 std::uint64_t seed);

// Mean dice loss over a dataset in eval mode, weighted by sample count.
double dataset_dice_loss(Model<float>& m, const std::vector<Sample>& samples, int batch_size);

// Dice-loss training with Adam. Restores the best-validation-loss weights
// (including batch-norm running statistics) before returning. Throws
// std::runtime_error if the loss turns non-finite.
TrainHistory train(Model<float>& m, const std::vector<Sample>& train_set,
                   const std::vector<Sample>& val_set, const TrainConfig& cfg);

// epoch,train_loss,train_dsc,val_loss,val_dsc
void write_history_csv(const std::string& path, const TrainHistory& h);

}  // namespace mffu
