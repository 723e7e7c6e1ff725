// Copyright (c) 2026 mffunet contributors
// SPDX-License-Identifier: Apache-2.0
//
// Soft dice loss for training, hard DSC / Jaccard metrics for evaluation.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mffu/model.hpp"

namespace mffu {

// Integer class ids, shape N x H x W (or H x W for a single slice).
struct LabelMask {
  Shape shape;
  std::vector<std::int32_t> ids;

  std::int64_t size() const { return static_cast<std::int64_t>(ids.size()); }
};

// 1 - mean over foreground classes of the smoothed soft dice coefficient
// (2 sum(p t) + eps) / (sum p + sum t + eps). Background (class 0) is
// excluded from the mean. Differentiable in probs.
template <typename T>
Tensor<T> soft_dice_loss(const Tensor<T>& probs, const LabelMask& target, double eps = 1e-6) {
  if (probs.rank() != 4) throw std::invalid_argument("soft_dice_loss: probs must be N x K x H x W");
  const int N = probs.dim(0), K = probs.dim(1), H = probs.dim(2), W = probs.dim(3);
  if (K < 2) throw std::invalid_argument("soft_dice_loss: need at least 2 classes");
  if (target.shape != Shape{N, H, W})
    throw std::invalid_argument("soft_dice_loss: target shape " + shape_str(target.shape) +
                                " does not match probs " + shape_str(probs.shape()));
  const std::int64_t P = static_cast<std::int64_t>(H) * W;
  for (std::int32_t id : target.ids) {
    if (id < 0 || id >= K)
      throw std::invalid_argument("soft_dice_loss: class id " + std::to_string(id) + " >= K");
  }

  const int F = K - 1;
  std::vector<double> inter(static_cast<size_t>(K), 0.0);
  std::vector<double> psum(static_cast<size_t>(K), 0.0);
  std::vector<double> tsum(static_cast<size_t>(K), 0.0);
  for (int n = 0; n < N; ++n) {
    const std::int32_t* tn = target.ids.data() + static_cast<std::int64_t>(n) * P;
    for (int c = 1; c < K; ++c) {
      const T* pc = probs.data() + (static_cast<std::int64_t>(n) * K + c) * P;
      double ic = 0.0, ac = 0.0, bc = 0.0;
      for (std::int64_t i = 0; i < P; ++i) {
        const double pv = static_cast<double>(pc[i]);
        ac += pv;
        if (tn[i] == c) {
          ic += pv;
          bc += 1.0;
        }
      }
      inter[static_cast<size_t>(c)] += ic;
      psum[static_cast<size_t>(c)] += ac;
      tsum[static_cast<size_t>(c)] += bc;
    }
  }
  double mean_dice = 0.0;
  std::vector<double> denom(static_cast<size_t>(K), 0.0);
  for (int c = 1; c < K; ++c) {
    denom[static_cast<size_t>(c)] = psum[static_cast<size_t>(c)] + tsum[static_cast<size_t>(c)] + eps;
    mean_dice += (2.0 * inter[static_cast<size_t>(c)] + eps) / denom[static_cast<size_t>(c)];
  }
  mean_dice /= F;
  Tensor<T> loss({1});
  loss[0] = static_cast<T>(1.0 - mean_dice);

  if (probs.tracked()) {
    Tensor<T> ps = probs;
    std::vector<std::int32_t> tids = target.ids;
    probs.tape()->record(loss, {probs.node()},
                         [ps, tids = std::move(tids), inter, denom, N, K, P, F,
                          eps](Tape<T>& t, int self) {
                           const T g = t.grad_buffer(self)[0];
                           Tensor<T>& gp = t.grad_buffer(ps.node());
                           for (int n = 0; n < N; ++n) {
                             const std::int32_t* tn = tids.data() + static_cast<std::int64_t>(n) * P;
                             for (int c = 1; c < K; ++c) {
                               const double dn = denom[static_cast<size_t>(c)];
                               const double num = 2.0 * inter[static_cast<size_t>(c)] + eps;
                               T* gc = gp.data() + (static_cast<std::int64_t>(n) * K + c) * P;
                               for (std::int64_t i = 0; i < P; ++i) {
                                 const double tv = tn[i] == c ? 1.0 : 0.0;
                                 const double dd = (2.0 * tv * dn - num) / (dn * dn);
                                 gc[i] += static_cast<T>(-static_cast<double>(g) * dd / F);
                               }
                             }
                           }
                         });
  }
  return loss;
}

// Hard overlap metrics. Masks are treated as binary (nonzero = member).
// Both-empty convention: 1.0.
double hard_dsc(const LabelMask& a, const LabelMask& b);
double jaccard(const LabelMask& a, const LabelMask& b);

// Per-pixel argmax over the class axis; ties go to the lower class id.
LabelMask binarize(const Tensor<float>& probs);

// Binary mask selecting one class of a multi-class mask.
LabelMask class_slice(const LabelMask& m, int cls);

struct ClassMetrics {
  double dsc = 0.0;
  double ji = 0.0;
};

struct MetricsReport {
  std::string split;
  std::int64_t samples = 0;
  std::vector<ClassMetrics> per_class;  // indexed by class id
  double foreground_dsc = 0.0;
  double foreground_ji = 0.0;
};

// Global (micro-averaged) intersection / size counts accumulated per class.
struct OverlapCounts {
  std::vector<std::int64_t> inter, pred, truth;

  explicit OverlapCounts(int k) : inter(k, 0), pred(k, 0), truth(k, 0) {}
  void accumulate(const LabelMask& predicted, const LabelMask& target);
  MetricsReport finalize(const std::string& split, std::int64_t samples) const;
};

struct Sample;

MetricsReport evaluate_dataset(Model<float>& m, const std::vector<Sample>& samples,
                               int batch_size, const std::string& split);

// One `split.class.metric = value` line per metric, 6 decimal places.
std::string report_to_text(const MetricsReport& r);

}  // namespace mffu
