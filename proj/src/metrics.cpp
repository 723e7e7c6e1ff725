// Copyright (c) 2026 mffunet contributors
// SPDX-License-Identifier: Apache-2.0

#include "mffu/loss_metrics.hpp"

#include <cstdio>
#include <stdexcept>

#include "mffu/data.hpp"

namespace mffu {
namespace {

void check_same_shape(const LabelMask& a, const LabelMask& b, const char* op) {
  if (a.shape != b.shape)
    throw std::invalid_argument(std::string(op) + ": mask shape mismatch " + shape_str(a.shape) +
                                " vs " + shape_str(b.shape));
}

}  // namespace

double hard_dsc(const LabelMask& a, const LabelMask& b) {
  check_same_shape(a, b, "hard_dsc");
  std::int64_t na = 0, nb = 0, inter = 0;
  for (size_t i = 0; i < a.ids.size(); ++i) {
    const bool ia = a.ids[i] != 0, ib = b.ids[i] != 0;
    na += ia;
    nb += ib;
    inter += ia && ib;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

double jaccard(const LabelMask& a, const LabelMask& b) {
  check_same_shape(a, b, "jaccard");
  std::int64_t na = 0, nb = 0, inter = 0;
  for (size_t i = 0; i < a.ids.size(); ++i) {
    const bool ia = a.ids[i] != 0, ib = b.ids[i] != 0;
    na += ia;
    nb += ib;
    inter += ia && ib;
  }
  const std::int64_t uni = na + nb - inter;
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

LabelMask binarize(const Tensor<float>& probs) {
  if (probs.rank() != 4) throw std::invalid_argument("binarize: probs must be N x K x H x W");
  const int N = probs.dim(0), K = probs.dim(1), H = probs.dim(2), W = probs.dim(3);
  const std::int64_t P = static_cast<std::int64_t>(H) * W;
  LabelMask out;
  out.shape = {N, H, W};
  out.ids.resize(static_cast<size_t>(N) * P);
  for (int n = 0; n < N; ++n) {
    const float* base = probs.data() + static_cast<std::int64_t>(n) * K * P;
    std::int32_t* dst = out.ids.data() + static_cast<std::int64_t>(n) * P;
    for (std::int64_t i = 0; i < P; ++i) {
      int best = 0;
      float bv = base[i];
      for (int c = 1; c < K; ++c) {
        const float v = base[c * P + i];
        if (v > bv) {  // strict: ties stay with the lower class id
          bv = v;
          best = c;
        }
      }
      dst[i] = best;
    }
  }
  return out;
}

LabelMask class_slice(const LabelMask& m, int cls) {
  LabelMask out;
  out.shape = m.shape;
  out.ids.resize(m.ids.size());
  for (size_t i = 0; i < m.ids.size(); ++i) out.ids[i] = m.ids[i] == cls ? 1 : 0;
  return out;
}

void OverlapCounts::accumulate(const LabelMask& predicted, const LabelMask& target) {
  check_same_shape(predicted, target, "overlap counts");
  const int k = static_cast<int>(inter.size());
  for (size_t i = 0; i < predicted.ids.size(); ++i) {
    const std::int32_t p = predicted.ids[i], t = target.ids[i];
    if (p < 0 || p >= k || t < 0 || t >= k)
      throw std::invalid_argument("overlap counts: class id out of range");
    pred[static_cast<size_t>(p)] += 1;
    truth[static_cast<size_t>(t)] += 1;
    if (p == t) inter[static_cast<size_t>(p)] += 1;
  }
}

MetricsReport OverlapCounts::finalize(const std::string& split, std::int64_t samples) const {
  MetricsReport r;
  r.split = split;
  r.samples = samples;
  const int k = static_cast<int>(inter.size());
  double fg_dsc = 0.0, fg_ji = 0.0;
  for (int c = 0; c < k; ++c) {
    const std::int64_t i = inter[static_cast<size_t>(c)];
    const std::int64_t p = pred[static_cast<size_t>(c)];
    const std::int64_t t = truth[static_cast<size_t>(c)];
    ClassMetrics cm;
    cm.dsc = (p + t == 0) ? 1.0 : 2.0 * static_cast<double>(i) / static_cast<double>(p + t);
    const std::int64_t uni = p + t - i;
    cm.ji = (uni == 0) ? 1.0 : static_cast<double>(i) / static_cast<double>(uni);
    r.per_class.push_back(cm);
    if (c >= 1) {
      fg_dsc += cm.dsc;
      fg_ji += cm.ji;
    }
  }
  r.foreground_dsc = fg_dsc / (k - 1);
  r.foreground_ji = fg_ji / (k - 1);
  return r;
}

MetricsReport evaluate_dataset(Model<float>& m, const std::vector<Sample>& samples,
                               int batch_size, const std::string& split) {
  if (samples.empty()) throw std::invalid_argument("evaluate_dataset: no samples");
  if (batch_size < 1) throw std::invalid_argument("evaluate_dataset: batch size must be >= 1");
  OverlapCounts counts(m.cfg.num_classes);
  const auto batches = batch_indices(static_cast<int>(samples.size()), batch_size, std::nullopt);
  for (const auto& idx : batches) {
    auto [images, masks] = make_batch(samples, idx);
    Tensor<float> probs = model_forward(m, images, Mode::Eval);
    counts.accumulate(binarize(probs), masks);
  }
  return counts.finalize(split, static_cast<std::int64_t>(samples.size()));
}

std::string report_to_text(const MetricsReport& r) {
  std::string out;
  char line[128];
  std::snprintf(line, sizeof line, "%s.samples = %lld\n", r.split.c_str(),
                static_cast<long long>(r.samples));
  out += line;
  for (size_t c = 0; c < r.per_class.size(); ++c) {
    std::snprintf(line, sizeof line, "%s.class%zu.dsc = %.6f\n", r.split.c_str(), c,
                  r.per_class[c].dsc);
    out += line;
    std::snprintf(line, sizeof line, "%s.class%zu.ji = %.6f\n", r.split.c_str(), c,
                  r.per_class[c].ji);
    out += line;
  }
  std::snprintf(line, sizeof line, "%s.foreground.dsc = %.6f\n", r.split.c_str(),
                r.foreground_dsc);
  out += line;
  std::snprintf(line, sizeof line, "%s.foreground.ji = %.6f\n", r.split.c_str(), r.foreground_ji);
  out += line;
  return out;
}

}  // namespace mffu
