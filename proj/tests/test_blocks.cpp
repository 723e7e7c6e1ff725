// Copyright (c) 2026 mffunet contributors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mffu/blocks.hpp"
#include "oracles.hpp"

using namespace mffu;

namespace {

template <typename P>
void zero_trainable(P& p) {
  visit_params(p, "p", [](const std::string&, Tensor<double>& t, bool trainable) {
    if (trainable)
      for (std::int64_t i = 0; i < t.size(); ++i) t[i] = 0.0;
  });
}

}  // namespace

TEST_CASE("mff shape contract across base widths") {
  for (int c_out : {4, 8, 16, 32}) {
    Rng rng(100 + c_out);
    auto p = make_mff<double>(rng, 1, c_out);
    auto x = Tensor<double>::rand_uniform({1, 1, 16, 16}, rng);
    auto y = mff_forward(x, p, Mode::Train);
    CHECK(y.shape() == Shape{1, c_out, 16, 16});
    CHECK(p.c1 + p.c2 + p.c3 == c_out);
    CHECK(p.c1 + p.c2 + p.c3 == p.path_w.dim(0));
  }
}

TEST_CASE("mff with all-zero parameters produces all zeros") {
  Rng rng(7);
  auto p = make_mff<double>(rng, 1, 8);  // cin != c1, so block1 projects
  zero_trainable(p);
  auto x = Tensor<double>::rand_uniform({2, 1, 6, 6}, rng, -1, 1);
  auto y = mff_forward(x, p, Mode::Train);
  for (std::int64_t i = 0; i < y.size(); ++i) CHECK(y[i] == 0.0);
}

TEST_CASE("mff matches the loop oracle") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const int cin = rng.uniform_int(1, 4);
    auto p = make_mff<double>(rng, cin, 4);
    auto x = Tensor<double>::rand_uniform({rng.uniform_int(1, 2), cin, 4, 4}, rng, -1, 1);
    auto got = mff_forward(x, p, Mode::Train);
    CHECK(oracle::max_abs_diff(got, oracle::mff_train(x, p)) < 1e-9);
  }
  // the float path stays within 1e-5
  Rng rngf(12);
  auto pf = make_mff<float>(rngf, 2, 4);
  auto xf = Tensor<float>::rand_uniform({2, 2, 8, 8}, rngf, -1, 1);
  CHECK(oracle::max_abs_diff(mff_forward(xf, pf, Mode::Train), oracle::mff_train(xf, pf)) < 1e-5);
}

TEST_CASE("cca gate is sigma(0) = 0.5 when kernel and bias are zero") {
  Rng rng(13);
  auto p = make_cca<double>(rng, 4);
  for (int i = 0; i < 3; ++i) p.conv_w[i] = 0.0;
  p.conv_b[0] = 0.0;
  auto x = Tensor<double>::rand_uniform({1, 4, 3, 3}, rng, -2, 2);
  auto y = cca_forward(x, p);
  for (std::int64_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(0.5 * x[i]));
}

TEST_CASE("cca matches the loop oracle and attenuates strictly") {
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const int c = rng.uniform_int(2, 6);
    auto p = make_cca<double>(rng, c);
    for (std::int64_t i = 0; i < p.gain.size(); ++i) p.gain[i] = rng.uniform(0.5, 1.5);
    auto x = Tensor<double>::rand_uniform({2, c, 4, 4}, rng, -1, 1);
    auto got = cca_forward(x, p);
    CHECK(oracle::max_abs_diff(got, oracle::cca(x, p)) < 1e-11);
    // attention in (0,1): |Y| < |X| wherever X != 0
    for (std::int64_t i = 0; i < x.size(); ++i) {
      if (x[i] != 0.0) CHECK(std::abs(got[i]) < std::abs(x[i]));
    }
  }
}

TEST_CASE("cca descriptor is the GAP output and scales linearly per channel") {
  Rng rng(19);
  auto x = Tensor<double>::rand_uniform({1, 3, 4, 4}, rng, 0.1, 1.0);
  auto d = global_avg_pool(x);
  auto x2 = x.clone();
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) x2.at(0, 1, i, j) *= 3.0;
  auto d2 = global_avg_pool(x2);
  CHECK(d2.at(0, 1, 0, 0) == doctest::Approx(3.0 * d.at(0, 1, 0, 0)));
  CHECK(d2.at(0, 0, 0, 0) == doctest::Approx(d.at(0, 0, 0, 0)));
  CHECK(d2.at(0, 2, 0, 0) == doctest::Approx(d.at(0, 2, 0, 0)));
}

TEST_CASE("augmented skip: zero params, branch ablation, loop oracle") {
  Rng rng(23);
  auto p = make_skip<double>(rng, 3);
  auto x = Tensor<double>::rand_uniform({1, 3, 5, 5}, rng, -1, 1);

  auto pz = p;
  zero_trainable(pz);
  auto yz = augmented_skip_forward(x, pz);
  for (std::int64_t i = 0; i < yz.size(); ++i) CHECK(yz[i] == 0.0);

  // zeroing the 1x1 branch reduces the block to ReLU(conv3x3)
  auto p1 = p;
  for (std::int64_t i = 0; i < p1.w1.size(); ++i) p1.w1[i] = 0.0;
  for (std::int64_t i = 0; i < p1.b1.size(); ++i) p1.b1[i] = 0.0;
  auto ablated = augmented_skip_forward(x, p1);
  auto direct = relu(conv2d(x, p.w3, p.b3, 1, 1));
  CHECK(oracle::max_abs_diff(ablated, direct) == 0.0);

  for (int trial = 0; trial < 10; ++trial) {
    auto xr = Tensor<double>::rand_uniform({2, 3, 4, 4}, rng, -1, 1);
    CHECK(oracle::max_abs_diff(augmented_skip_forward(xr, p), oracle::augmented_skip(xr, p)) <
          1e-11);
  }
}

TEST_CASE("block shape contracts hold across base widths") {
  for (int c : {4, 8, 16, 32}) {
    Rng rng(900 + c);
    auto enc = make_encoder<double>(rng, c / 2, c);
    auto xe = Tensor<double>::rand_uniform({1, c / 2, 8, 8}, rng);
    auto eo = encoder_forward(xe, enc, Mode::Train);
    CHECK(eo.pooled.shape() == Shape{1, c, 4, 4});
    CHECK(eo.skip.shape() == Shape{1, c, 8, 8});

    auto dec = make_decoder<double>(rng, 2 * c, c);
    auto xd = Tensor<double>::rand_uniform({1, 2 * c, 4, 4}, rng);
    auto skip = Tensor<double>::rand_uniform({1, c, 8, 8}, rng);
    CHECK(decoder_forward(xd, skip, dec, Mode::Train).shape() == Shape{1, c, 8, 8});

    auto bridge = make_bridge<double>(rng, c, 2 * c);
    auto xb = Tensor<double>::rand_uniform({1, c, 4, 4}, rng);
    CHECK(bridge_forward(xb, bridge, Mode::Train).shape() == Shape{1, 2 * c, 4, 4});

    auto head = make_head<double>(rng, c, 3);
    auto xh = Tensor<double>::rand_uniform({1, c, 4, 4}, rng);
    CHECK(head_forward(xh, head).shape() == Shape{1, 3, 4, 4});
  }
}

TEST_CASE("encoder forward wiring and shapes") {
  Rng rng(29);
  auto p = make_encoder<double>(rng, 1, 8);
  auto x = Tensor<double>::rand_uniform({1, 1, 16, 16}, rng, 0, 1);
  auto out = encoder_forward(x, p, Mode::Train);
  CHECK(out.pooled.shape() == Shape{1, 8, 8, 8});
  CHECK(out.skip.shape() == Shape{1, 8, 16, 16});  // pre-pool spatial size

  // the skip tensor is the augmented skip of the pre-pool features
  auto f = oracle::cca(oracle::mff_train(x, p.mff), p.cca);
  CHECK(oracle::max_abs_diff(out.skip, oracle::augmented_skip(f, p.skip)) < 1e-9);
  CHECK(oracle::max_abs_diff(out.pooled, oracle::max_pool2d(f)) < 1e-9);

  // zero parameters propagate zero
  auto pz = p;
  zero_trainable(pz);
  auto outz = encoder_forward(x, pz, Mode::Train);
  for (std::int64_t i = 0; i < outz.pooled.size(); ++i) CHECK(outz.pooled[i] == 0.0);
  for (std::int64_t i = 0; i < outz.skip.size(); ++i) CHECK(outz.skip[i] == 0.0);
}

TEST_CASE("decoder forward: shapes, zero trace, concat order sensitivity") {
  Rng rng(31);
  auto p = make_decoder<double>(rng, 8, 4);
  auto x = Tensor<double>::rand_uniform({1, 8, 4, 4}, rng, -1, 1);
  auto skip = Tensor<double>::rand_uniform({1, 4, 8, 8}, rng, -1, 1);
  auto y = decoder_forward(x, skip, p, Mode::Train);
  CHECK(y.shape() == Shape{1, 4, 8, 8});

  auto pz = p;
  zero_trainable(pz);
  Tensor<double> xz({1, 8, 4, 4}, 0.0), sz({1, 4, 8, 8}, 0.0);
  auto yz = decoder_forward(xz, sz, pz, Mode::Train);
  for (std::int64_t i = 0; i < yz.size(); ++i) CHECK(yz[i] == 0.0);

  // permuting the concat order changes the output for random params
  auto up = conv_transpose2d(x, p.up_w, p.up_b);
  auto permuted = concat<double>({skip, up}, 1);
  auto h = conv_bn_relu(permuted, p.stage1, Mode::Train);
  auto y_perm = conv_bn_relu(h, p.stage2, Mode::Train);
  CHECK(oracle::max_abs_diff(y, y_perm) > 1e-6);

  // spatial / channel mismatches are rejected
  CHECK_THROWS_AS(decoder_forward(x, Tensor<double>({1, 4, 9, 9}, 0.0), p, Mode::Train),
                  std::invalid_argument);
  CHECK_THROWS_AS(decoder_forward(x, Tensor<double>({1, 3, 8, 8}, 0.0), p, Mode::Train),
                  std::invalid_argument);
}

TEST_CASE("bridge forward shapes scale with the configured width") {
  Rng rng(37);
  for (int base : {4, 8, 32}) {
    auto p = make_bridge<double>(rng, 8 * base, 16 * base);
    auto x = Tensor<double>::rand_uniform({1, 8 * base, 2, 2}, rng, -1, 1);
    auto y = bridge_forward(x, p, Mode::Train);
    CHECK(y.shape() == Shape{1, 16 * base, 2, 2});
  }

  auto pz = make_bridge<double>(rng, 4, 8);
  zero_trainable(pz);
  auto yz = bridge_forward(Tensor<double>({1, 4, 3, 3}, 1.0), pz, Mode::Train);
  for (std::int64_t i = 0; i < yz.size(); ++i) CHECK(yz[i] == 0.0);
}

TEST_CASE("head produces normalized per-pixel probabilities") {
  Rng rng(41);
  // zero weights, K = 3: uniform probabilities everywhere
  auto p = make_head<double>(rng, 4, 3);
  zero_trainable(p);
  auto x = Tensor<double>::rand_uniform({1, 4, 3, 3}, rng, -1, 1);
  auto y = head_forward(x, p);
  for (std::int64_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(1.0 / 3));

  // random weights: per-pixel sums are 1 within 1e-6; K = 2 supported
  auto p2 = make_head<double>(rng, 4, 2);
  auto y2 = head_forward(x, p2);
  CHECK(y2.shape() == Shape{1, 2, 3, 3});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(y2.at(0, 0, i, j) + y2.at(0, 1, i, j) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("composite blocks are pure in eval mode") {
  Rng rng(43);
  auto p = make_encoder<float>(rng, 2, 8);
  auto x = Tensor<float>::rand_uniform({1, 2, 8, 8}, rng, 0, 1);
  auto a = encoder_forward(x, p, Mode::Eval);
  auto b = encoder_forward(x, p, Mode::Eval);
  CHECK(a.pooled.values() == b.pooled.values());
  CHECK(a.skip.values() == b.skip.values());
}
