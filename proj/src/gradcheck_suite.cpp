// Copyright (c) 2026 mffunet contributors
// SPDX-License-Identifier: Apache-2.0
//
// Named finite-difference checks over every differentiable operator and
// composite block, at 64-bit precision.

#include "mffu/gradcheck.hpp"

#include <memory>

#include "mffu/blocks.hpp"
#include "mffu/loss_metrics.hpp"

namespace mffu {
namespace {

using D = double;
using Vec = std::vector<Tensor<D>>;

Tensor<D> rnd(Rng& rng, Shape s, double lo = -1.0, double hi = 1.0) {
  return Tensor<D>::rand_uniform(std::move(s), rng, lo, hi);
}

// magnitudes bounded away from zero, for kinked ops (ReLU)
Tensor<D> rnd_away(Rng& rng, Shape s, double min_abs, double max_abs) {
  Tensor<D> t(std::move(s));
  for (std::int64_t i = 0; i < t.size(); ++i) {
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    t[i] = sign * rng.uniform(min_abs, max_abs);
  }
  return t;
}

// distinct well-separated values, for argmax ops
Tensor<D> rnd_distinct(Rng& rng, Shape s) {
  Tensor<D> t(std::move(s));
  std::vector<int> order(static_cast<size_t>(t.size()));
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);
  for (std::int64_t i = 0; i < t.size(); ++i)
    t[i] = 0.05 * static_cast<double>(order[static_cast<size_t>(i)]) - 0.5;
  return t;
}

// scalar reduction with fixed weights, so every output coordinate's gradient
// is exercised
Tensor<D> weighted(const Tensor<D>& y, const Tensor<D>& r) { return sum_all(mul(y, r)); }

template <typename P>
size_t count_trainable(P& params) {
  size_t n = 0;
  visit_params(params, "p", [&](const std::string&, Tensor<D>&, bool tr) { n += tr ? 1 : 0; });
  return n;
}

template <typename P>
void append_trainable(P& params, Vec& v) {
  visit_params(params, "p", [&](const std::string&, Tensor<D>& t, bool tr) {
    if (tr) v.push_back(t);
  });
}

template <typename P>
void assign_trainable(P& params, const Vec& v, size_t offset) {
  size_t i = offset;
  visit_params(params, "p", [&](const std::string&, Tensor<D>& t, bool tr) {
    if (tr) t = v[i++];
  });
}

LabelMask random_mask(Rng& rng, int n, int k, int h, int w) {
  LabelMask m;
  m.shape = {n, h, w};
  m.ids.resize(static_cast<size_t>(n) * h * w);
  for (auto& id : m.ids) id = static_cast<std::int32_t>(rng.uniform_int(0, k - 1));
  return m;
}

}  // namespace

std::vector<GradCheckEntry> gradcheck_suite(std::uint64_t seed) {
  std::vector<GradCheckEntry> suite;

  suite.push_back({"add", [seed] {
    Rng rng(seed + 1);
    auto a = rnd(rng, {2, 3, 2, 2});
    auto b = rnd(rng, {1, 3, 1, 1});  // broadcast + backward reduction
    auto r = rnd(rng, {2, 3, 2, 2});
    return grad_check<D>([r](const Vec& v) { return weighted(add(v[0], v[1]), r); }, {a, b});
  }});

  suite.push_back({"mul", [seed] {
    Rng rng(seed + 2);
    auto a = rnd(rng, {2, 3, 2, 2});
    auto b = rnd(rng, {2, 3, 1, 1});  // the CCA gating pattern
    auto r = rnd(rng, {2, 3, 2, 2});
    return grad_check<D>([r](const Vec& v) { return weighted(mul(v[0], v[1]), r); }, {a, b});
  }});

  suite.push_back({"concat", [seed] {
    Rng rng(seed + 3);
    auto a = rnd(rng, {1, 2, 3, 3});
    auto b = rnd(rng, {1, 3, 3, 3});
    auto c = rnd(rng, {1, 1, 3, 3});
    auto r = rnd(rng, {1, 6, 3, 3});
    return grad_check<D>(
        [r](const Vec& v) { return weighted(concat<D>({v[0], v[1], v[2]}, 1), r); }, {a, b, c});
  }});

  suite.push_back({"relu", [seed] {
    Rng rng(seed + 4);
    auto x = rnd_away(rng, {2, 3, 4, 4}, 0.01, 1.0);
    auto r = rnd(rng, {2, 3, 4, 4});
    return grad_check<D>([r](const Vec& v) { return weighted(relu(v[0]), r); }, {x});
  }});

  suite.push_back({"sigmoid", [seed] {
    Rng rng(seed + 5);
    auto x = rnd(rng, {2, 3, 4, 4}, -3.0, 3.0);
    auto r = rnd(rng, {2, 3, 4, 4});
    return grad_check<D>([r](const Vec& v) { return weighted(sigmoid(v[0]), r); }, {x});
  }});

  suite.push_back({"softmax", [seed] {
    Rng rng(seed + 6);
    auto x = rnd(rng, {1, 3, 4, 4}, -2.0, 2.0);
    auto r = rnd(rng, {1, 3, 4, 4});
    return grad_check<D>([r](const Vec& v) { return weighted(softmax(v[0], 1), r); }, {x});
  }});

  suite.push_back({"conv2d", [seed] {
    Rng rng(seed + 7);
    auto x = rnd(rng, {2, 3, 5, 5});
    auto w = rnd(rng, {4, 3, 3, 3});
    auto b = rnd(rng, {4});
    auto r = rnd(rng, {2, 4, 5, 5});
    return grad_check<D>(
        [r](const Vec& v) { return weighted(conv2d(v[0], v[1], v[2], 1, 1), r); }, {x, w, b});
  }});

  suite.push_back({"conv2d_1x1", [seed] {
    Rng rng(seed + 8);
    auto x = rnd(rng, {1, 3, 4, 4});
    auto w = rnd(rng, {2, 3, 1, 1});
    auto b = rnd(rng, {2});
    auto r = rnd(rng, {1, 2, 4, 4});
    return grad_check<D>(
        [r](const Vec& v) { return weighted(conv2d(v[0], v[1], v[2], 1, 0), r); }, {x, w, b});
  }});

  suite.push_back({"conv_transpose2d", [seed] {
    Rng rng(seed + 9);
    auto x = rnd(rng, {1, 3, 3, 3});
    auto w = rnd(rng, {3, 2, 2, 2});
    auto b = rnd(rng, {2});
    auto r = rnd(rng, {1, 2, 6, 6});
    return grad_check<D>(
        [r](const Vec& v) { return weighted(conv_transpose2d(v[0], v[1], v[2]), r); }, {x, w, b});
  }});

  suite.push_back({"max_pool2d", [seed] {
    Rng rng(seed + 10);
    auto x = rnd_distinct(rng, {1, 2, 4, 4});
    auto r = rnd(rng, {1, 2, 2, 2});
    return grad_check<D>([r](const Vec& v) { return weighted(max_pool2d(v[0]), r); }, {x});
  }});

  suite.push_back({"global_avg_pool", [seed] {
    Rng rng(seed + 11);
    auto x = rnd(rng, {2, 3, 4, 4});
    auto r = rnd(rng, {2, 3, 1, 1});
    return grad_check<D>([r](const Vec& v) { return weighted(global_avg_pool(v[0]), r); }, {x});
  }});

  suite.push_back({"batch_norm", [seed] {
    Rng rng(seed + 12);
    auto x = rnd(rng, {2, 3, 4, 4});
    auto gamma = rnd(rng, {3}, 0.5, 1.5);
    auto beta = rnd(rng, {3}, -0.5, 0.5);
    auto r = rnd(rng, {2, 3, 4, 4});
    return grad_check<D>(
        [r](const Vec& v) {
          Tensor<D> rm({3}, D(0)), rv({3}, D(1));
          return weighted(batch_norm(v[0], v[1], v[2], rm, rv, Mode::Train), r);
        },
        {x, gamma, beta});
  }});

  suite.push_back({"conv1d_channels", [seed] {
    Rng rng(seed + 13);
    auto x = rnd(rng, {2, 6, 1, 1});
    auto w = rnd(rng, {3});
    auto b = rnd(rng, {1});
    auto r = rnd(rng, {2, 6, 1, 1});
    return grad_check<D>(
        [r](const Vec& v) { return weighted(conv1d_channels(v[0], v[1], v[2]), r); }, {x, w, b});
  }});

  suite.push_back({"soft_dice_loss", [seed] {
    Rng rng(seed + 14);
    auto logits = rnd(rng, {1, 3, 4, 4}, -1.5, 1.5);
    LabelMask target = random_mask(rng, 1, 3, 4, 4);
    return grad_check<D>(
        [target](const Vec& v) { return soft_dice_loss(softmax(v[0], 1), target); }, {logits});
  }});

  suite.push_back({"mff", [seed] {
    Rng rng(seed + 15);
    auto p = std::make_shared<MffParams<D>>(make_mff<D>(rng, 2, 4));
    auto x = rnd(rng, {1, 2, 4, 4});
    auto r = rnd(rng, {1, 4, 4, 4});
    Vec inputs{x};
    append_trainable(*p, inputs);
    return grad_check<D>(
        [p, r](const Vec& v) {
          MffParams<D> q = *p;
          assign_trainable(q, v, 1);
          return weighted(mff_forward(v[0], q, Mode::Train), r);
        },
        inputs);
  }});

  suite.push_back({"cca", [seed] {
    Rng rng(seed + 16);
    auto p = std::make_shared<CcaParams<D>>(make_cca<D>(rng, 4));
    auto x = rnd(rng, {2, 4, 4, 4});
    auto r = rnd(rng, {2, 4, 4, 4});
    Vec inputs{x};
    append_trainable(*p, inputs);
    return grad_check<D>(
        [p, r](const Vec& v) {
          CcaParams<D> q = *p;
          assign_trainable(q, v, 1);
          return weighted(cca_forward(v[0], q), r);
        },
        inputs);
  }});

  suite.push_back({"augmented_skip", [seed] {
    Rng rng(seed + 17);
    auto p = std::make_shared<SkipParams<D>>(make_skip<D>(rng, 3));
    auto x = rnd(rng, {1, 3, 4, 4});
    auto r = rnd(rng, {1, 3, 4, 4});
    Vec inputs{x};
    append_trainable(*p, inputs);
    return grad_check<D>(
        [p, r](const Vec& v) {
          SkipParams<D> q = *p;
          assign_trainable(q, v, 1);
          return weighted(augmented_skip_forward(v[0], q), r);
        },
        inputs);
  }});

  suite.push_back({"encoder", [seed] {
    Rng rng(seed + 18);
    auto p = std::make_shared<EncoderParams<D>>(make_encoder<D>(rng, 2, 4));
    auto x = rnd(rng, {1, 2, 8, 8});
    auto r1 = rnd(rng, {1, 4, 4, 4});
    auto r2 = rnd(rng, {1, 4, 8, 8});
    Vec inputs{x};
    append_trainable(*p, inputs);
    return grad_check<D>(
        [p, r1, r2](const Vec& v) {
          EncoderParams<D> q = *p;
          assign_trainable(q, v, 1);
          EncoderOut<D> out = encoder_forward(v[0], q, Mode::Train);
          return add(weighted(out.pooled, r1), weighted(out.skip, r2));
        },
        inputs);
  }});

  suite.push_back({"decoder", [seed] {
    Rng rng(seed + 19);
    auto p = std::make_shared<DecoderParams<D>>(make_decoder<D>(rng, 4, 2));
    auto x = rnd(rng, {1, 4, 4, 4});
    auto skip = rnd(rng, {1, 2, 8, 8});
    auto r = rnd(rng, {1, 2, 8, 8});
    Vec inputs{x, skip};
    append_trainable(*p, inputs);
    return grad_check<D>(
        [p, r](const Vec& v) {
          DecoderParams<D> q = *p;
          assign_trainable(q, v, 2);
          return weighted(decoder_forward(v[0], v[1], q, Mode::Train), r);
        },
        inputs);
  }});

  suite.push_back({"bridge", [seed] {
    Rng rng(seed + 20);
    auto p = std::make_shared<BridgeParams<D>>(make_bridge<D>(rng, 4, 8));
    auto x = rnd(rng, {1, 4, 4, 4});
    auto r = rnd(rng, {1, 8, 4, 4});
    Vec inputs{x};
    append_trainable(*p, inputs);
    return grad_check<D>(
        [p, r](const Vec& v) {
          BridgeParams<D> q = *p;
          assign_trainable(q, v, 1);
          return weighted(bridge_forward(v[0], q, Mode::Train), r);
        },
        inputs);
  }});

  suite.push_back({"head", [seed] {
    Rng rng(seed + 21);
    auto p = std::make_shared<HeadParams<D>>(make_head<D>(rng, 4, 3));
    auto x = rnd(rng, {1, 4, 4, 4});
    auto r = rnd(rng, {1, 3, 4, 4});
    Vec inputs{x};
    append_trainable(*p, inputs);
    return grad_check<D>(
        [p, r](const Vec& v) {
          HeadParams<D> q = *p;
          assign_trainable(q, v, 1);
          return weighted(head_forward(v[0], q), r);
        },
        inputs);
  }});

  return suite;
}

}  // namespace mffu
