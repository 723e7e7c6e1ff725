// Copyright (c) 2026 mffunet contributors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "mffu/ops.hpp"
#include "oracles.hpp"

using namespace mffu;

namespace {

template <typename T>
Tensor<T> grad_of(Tape<T>& tape, const Tensor<T>& t) {
  return tape.grad(t);
}

}  // namespace

TEST_CASE("tensor creation") {
  Tensor<float> z({2, 2}, 0.0f);
  CHECK(z.size() == 4);
  for (int i = 0; i < 4; ++i) CHECK(z[i] == 0.0f);

  Tensor<float> v({3}, {1.0f, 2.0f, 3.0f});
  CHECK(v[0] == 1.0f);
  CHECK(v[2] == 3.0f);

  CHECK_THROWS_AS(Tensor<float>({0, 2}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor<float>({-1}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor<float>({2, 2}, {1.0f, 2.0f}), std::invalid_argument);

  Rng r1(7), r2(7);
  auto a = Tensor<float>::randn({2}, r1);
  auto b = Tensor<float>::randn({2}, r2);
  CHECK(a.values() == b.values());  // bitwise reproducible

  Rng r3(8);
  auto c = Tensor<float>::randn({2}, r3);
  CHECK(a.values() != c.values());
}

TEST_CASE("elementwise add") {
  Tensor<double> a({2}, {1.0, 2.0}), b({2}, {3.0, 4.0});
  auto c = add(a, b);
  CHECK(c[0] == 4.0);
  CHECK(c[1] == 6.0);

  Tensor<double> zeros({2}, 0.0);
  auto d = add(a, zeros);
  CHECK(d.values() == a.values());

  CHECK_THROWS_AS(add(a, Tensor<double>({3}, 0.0)), std::invalid_argument);

  // per-channel broadcast offset + backward sum-reduction
  Rng rng(3);
  auto x = Tensor<double>::rand_uniform({1, 3, 2, 2}, rng);
  Tensor<double> off({1, 3, 1, 1}, {10.0, 20.0, 30.0});
  auto y = add(x, off);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        CHECK(y.at(0, c, i, j) == doctest::Approx(x.at(0, c, i, j) + 10.0 * (c + 1)));

  Tape<double> tape;
  auto xb = tape.watch(x);
  auto ob = tape.watch(off);
  auto loss = sum_all(add(xb, ob));
  tape.backward(loss);
  auto go = tape.grad(ob);
  for (int c = 0; c < 3; ++c) CHECK(go.at(0, c, 0, 0) == 4.0);  // spatial sum of upstream
}

TEST_CASE("elementwise mul") {
  Tensor<double> a({2}, {2.0, 3.0}), b({2}, {4.0, 5.0});
  auto c = mul(a, b);
  CHECK(c[0] == 8.0);
  CHECK(c[1] == 15.0);

  Tensor<double> ones({2}, 1.0);
  CHECK(mul(a, ones).values() == a.values());

  // channel-scaled map: the CCA application step, vs explicit loops
  Rng rng(5);
  auto x = Tensor<double>::rand_uniform({2, 3, 4, 4}, rng);
  auto s = Tensor<double>::rand_uniform({2, 3, 1, 1}, rng);
  auto y = mul(x, s);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
          CHECK(y.at(n, c, i, j) == doctest::Approx(x.at(n, c, i, j) * s.at(n, c, 0, 0)));
}

TEST_CASE("concat") {
  Tensor<double> a({1, 1}, {1.0}), b({1, 1}, {2.0});
  auto c = concat<double>({a, b}, 1);
  CHECK(c.shape() == Shape{1, 2});
  CHECK(c[0] == 1.0);
  CHECK(c[1] == 2.0);

  Rng rng(9);
  auto m1 = Tensor<double>::rand_uniform({1, 16, 2, 2}, rng);
  auto m2 = Tensor<double>::rand_uniform({1, 8, 2, 2}, rng);
  auto m3 = Tensor<double>::rand_uniform({1, 8, 2, 2}, rng);
  auto cat = concat<double>({m1, m2, m3}, 1);
  CHECK(cat.shape() == Shape{1, 32, 2, 2});

  CHECK_THROWS_AS(concat<double>({m1, Tensor<double>({1, 8, 3, 2})}, 1), std::invalid_argument);
  CHECK_THROWS_AS(concat<double>({m1}, 4), std::invalid_argument);
  CHECK_THROWS_AS(concat<double>({}, 0), std::invalid_argument);

  // backward: each input receives exactly its slice of the upstream gradient
  Tape<double> tape;
  auto b1 = tape.watch(m2);
  auto b2 = tape.watch(m3);
  auto weights = Tensor<double>::rand_uniform({1, 16, 2, 2}, rng);
  auto loss = sum_all(mul(concat<double>({b1, b2}, 1), weights));
  tape.backward(loss);
  auto g1 = tape.grad(b1);
  for (int c = 0; c < 8; ++c)
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) CHECK(g1.at(0, c, i, j) == weights.at(0, c, i, j));
}

TEST_CASE("relu") {
  Tensor<double> x({3}, {-1.0, 0.0, 2.0});
  auto y = relu(x);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.0);
  CHECK(y[2] == 2.0);

  Tape<double> tape;
  Tensor<double> x2({2}, {-1.0, 3.0});
  auto xb = tape.watch(x2);
  Tensor<double> up({2}, {7.0, 5.0});
  auto loss = sum_all(mul(relu(xb), up));
  tape.backward(loss);
  auto g = tape.grad(xb);
  CHECK(g[0] == 0.0);  // flat region
  CHECK(g[1] == 5.0);  // upstream passes through
}

TEST_CASE("sigmoid") {
  Tensor<double> x({2}, {0.0, std::log(3.0)});
  auto y = sigmoid(x);
  CHECK(y[0] == doctest::Approx(0.5));
  CHECK(y[1] == doctest::Approx(0.75));

  Tape<double> tape;
  Tensor<double> x0({1}, 0.0);
  auto xb = tape.watch(x0);
  tape.backward(sum_all(sigmoid(xb)));
  CHECK(tape.grad(xb)[0] == doctest::Approx(0.25));
}

TEST_CASE("softmax") {
  Tensor<double> eq({1, 3}, 1.0);
  auto u = softmax(eq, 1);
  for (int i = 0; i < 3; ++i) CHECK(u[i] == doctest::Approx(1.0 / 3));

  Tensor<double> two({1, 2}, {0.0, std::log(3.0)});
  auto p = softmax(two, 1);
  CHECK(p[0] == doctest::Approx(0.25));
  CHECK(p[1] == doctest::Approx(0.75));

  // shift invariance
  Rng rng(11);
  auto x = Tensor<double>::rand_uniform({2, 5, 3, 3}, rng, -2, 2);
  auto shifted = x.clone();
  for (std::int64_t i = 0; i < shifted.size(); ++i) shifted[i] += 17.5;
  auto s1 = softmax(x, 1), s2 = softmax(shifted, 1);
  CHECK(oracle::max_abs_diff(s1, s2) < 1e-12);

  // sums to one along the axis, all outputs in (0,1), finite at +-1e4
  Tensor<double> extreme({1, 3, 1, 1}, {-1e4, 0.0, 1e4});
  auto se = softmax(extreme, 1);
  double total = 0;
  for (int i = 0; i < 3; ++i) {
    CHECK(std::isfinite(se[i]));
    total += se[i];
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-6));

  auto sext = sigmoid(extreme);
  for (int i = 0; i < 3; ++i) CHECK(std::isfinite(sext[i]));
}

TEST_CASE("conv2d frozen examples") {
  // 1x1 kernel: every value 2v + 1
  Tensor<double> x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor<double> w1({1, 1, 1, 1}, {2.0});
  Tensor<double> b1({1}, {1.0});
  auto y1 = conv2d(x, w1, b1, 1, 0);
  for (int i = 0; i < 9; ++i) CHECK(y1[i] == doctest::Approx(2.0 * (i + 1) + 1.0));

  // all-ones 3x3, same padding: center output is the full sum 45
  Tensor<double> w9({1, 1, 3, 3}, 1.0);
  Tensor<double> b0({1}, 0.0);
  auto y2 = conv2d(x, w9, b0, 1, 1);
  CHECK(y2.at(0, 0, 1, 1) == doctest::Approx(45.0));
  CHECK(y2.shape() == x.shape());  // same padding preserves H and W

  // identity kernel (1 at center)
  Tensor<double> wid({1, 1, 3, 3}, {0, 0, 0, 0, 1, 0, 0, 0, 0});
  auto y3 = conv2d(x, wid, b0, 1, 1);
  CHECK(oracle::max_abs_diff(y3, x) == 0.0);

  // errors
  Tensor<double> wbad({1, 2, 3, 3}, 0.0);
  CHECK_THROWS_AS(conv2d(x, wbad, b0, 1, 1), std::invalid_argument);  // channel mismatch
  Tensor<double> x4({1, 1, 4, 4}, 0.0);                               // (4 - 3) % 2 != 0
  CHECK_THROWS_AS(conv2d(x4, w9, b0, 2, 0), std::invalid_argument);   // non-integral output
}

TEST_CASE("conv2d matches the loop oracle") {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = rng.uniform_int(1, 2), cin = rng.uniform_int(1, 4);
    const int cout = rng.uniform_int(1, 4), hw = rng.uniform_int(3, 8);
    const int k = rng.uniform() < 0.5 ? 1 : 3;
    const int pad = (k - 1) / 2;
    auto x = Tensor<double>::rand_uniform({n, cin, hw, hw}, rng, -1, 1);
    auto w = Tensor<double>::rand_uniform({cout, cin, k, k}, rng, -1, 1);
    auto b = Tensor<double>::rand_uniform({cout}, rng, -1, 1);
    auto got = conv2d(x, w, b, 1, pad);
    auto ref = oracle::conv2d(x, w, &b, 1, pad);
    CHECK(oracle::max_abs_diff(got, ref) < 1e-12);
  }
}

TEST_CASE("conv_transpose2d") {
  // single pixel scatters kernel * value
  Tensor<double> x({1, 1, 1, 1}, {3.0});
  Tensor<double> w({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  Tensor<double> b({1}, 0.0);
  auto y = conv_transpose2d(x, w, b);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  CHECK(y[0] == 3.0);
  CHECK(y[1] == 6.0);
  CHECK(y[2] == 9.0);
  CHECK(y[3] == 12.0);

  // zero input -> bias everywhere
  Tensor<double> xz({1, 1, 2, 2}, 0.0);
  Tensor<double> b5({1}, {5.0});
  auto yz = conv_transpose2d(xz, w, b5);
  for (int i = 0; i < yz.size(); ++i) CHECK(yz[i] == 5.0);

  // disjoint tiles vs oracle, multi-channel
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = rng.uniform_int(1, 2), cin = rng.uniform_int(1, 3), cout = rng.uniform_int(1, 3);
    const int hw = rng.uniform_int(1, 5);
    auto xr = Tensor<double>::rand_uniform({n, cin, hw, hw}, rng, -1, 1);
    auto wr = Tensor<double>::rand_uniform({cin, cout, 2, 2}, rng, -1, 1);
    auto br = Tensor<double>::rand_uniform({cout}, rng, -1, 1);
    CHECK(oracle::max_abs_diff(conv_transpose2d(xr, wr, br), oracle::conv_transpose2d(xr, wr, br)) <
          1e-12);
  }

  CHECK_THROWS_AS(conv_transpose2d(Tensor<double>({1, 2, 2, 2}), w, b), std::invalid_argument);
}

TEST_CASE("conv_transpose2d is the adjoint of stride-2 conv2d") {
  Rng rng(19);
  for (int trial = 0; trial < 25; ++trial) {
    const int cin = rng.uniform_int(1, 3), cout = rng.uniform_int(1, 3);
    const int hw = 2 * rng.uniform_int(1, 4);
    auto x = Tensor<double>::rand_uniform({1, cin, hw, hw}, rng, -1, 1);
    auto w = Tensor<double>::rand_uniform({cout, cin, 2, 2}, rng, -1, 1);
    auto y = Tensor<double>::rand_uniform({1, cout, hw / 2, hw / 2}, rng, -1, 1);
    Tensor<double> zero_out({cout}, 0.0), zero_in({cin}, 0.0);
    auto cx = conv2d(x, w, zero_out, 2, 0);
    auto cty = conv_transpose2d(y, w, zero_in);
    double lhs = 0, rhs = 0;
    for (std::int64_t i = 0; i < cx.size(); ++i) lhs += cx[i] * y[i];
    for (std::int64_t i = 0; i < x.size(); ++i) rhs += x[i] * cty[i];
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
  }
}

TEST_CASE("max_pool2d") {
  Tensor<double> x({1, 1, 2, 2}, {1, 2, 3, 4});
  auto y = max_pool2d(x);
  CHECK(y.size() == 1);
  CHECK(y[0] == 4.0);

  Tensor<double> c({1, 1, 4, 4}, 2.5);
  auto yc = max_pool2d(c);
  for (int i = 0; i < yc.size(); ++i) CHECK(yc[i] == 2.5);

  // backward routes to the argmax
  Tape<double> tape;
  auto xb = tape.watch(x);
  tape.backward(sum_all(max_pool2d(xb)));
  auto g = tape.grad(xb);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 0.0);
  CHECK(g[2] == 0.0);
  CHECK(g[3] == 1.0);

  // tie-break: first in row-major scan order
  Tape<double> tape2;
  Tensor<double> ties({1, 1, 2, 2}, 1.0);
  auto tb = tape2.watch(ties);
  tape2.backward(sum_all(max_pool2d(tb)));
  auto gt = tape2.grad(tb);
  CHECK(gt[0] == 1.0);
  CHECK(gt[1] == 0.0);

  CHECK_THROWS_AS(max_pool2d(Tensor<double>({1, 1, 3, 4})), std::invalid_argument);

  // pooling never increases the max
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    auto xr = Tensor<double>::rand_uniform({2, 3, 8, 8}, rng, -5, 5);
    auto pr = max_pool2d(xr);
    double mx = xr[0], mp = pr[0];
    for (std::int64_t i = 0; i < xr.size(); ++i) mx = std::max(mx, xr[i]);
    for (std::int64_t i = 0; i < pr.size(); ++i) mp = std::max(mp, pr[i]);
    CHECK(mp == doctest::Approx(mx));
  }
}

TEST_CASE("global_avg_pool") {
  Tensor<double> x({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(global_avg_pool(x)[0] == doctest::Approx(2.5));

  Tensor<double> c({2, 3, 4, 4}, 7.0);
  auto yc = global_avg_pool(c);
  for (int i = 0; i < yc.size(); ++i) CHECK(yc[i] == doctest::Approx(7.0));

  Rng rng(29);
  auto xr = Tensor<double>::rand_uniform({2, 4, 3, 3}, rng);
  CHECK(oracle::max_abs_diff(global_avg_pool(xr), oracle::global_avg_pool(xr)) < 1e-12);
}

TEST_CASE("batch_norm") {
  Rng rng(31);
  auto x = Tensor<double>::rand_uniform({2, 3, 4, 4}, rng, -2, 5);
  Tensor<double> gamma({3}, 1.0), beta({3}, 0.0);
  Tensor<double> rm({3}, 0.0), rv({3}, 1.0);
  auto y = batch_norm(x, gamma, beta, rm, rv, Mode::Train);

  // per-channel output statistics: mean ~ 0, variance ~ 1
  for (int c = 0; c < 3; ++c) {
    double mu = 0, var = 0;
    for (int n = 0; n < 2; ++n)
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) mu += y.at(n, c, i, j);
    mu /= 32;
    for (int n = 0; n < 2; ++n)
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) var += (y.at(n, c, i, j) - mu) * (y.at(n, c, i, j) - mu);
    var /= 32;
    CHECK(std::abs(mu) < 1e-5);
    CHECK(std::abs(var - 1.0) < 1e-3);
  }
  // running stats moved toward the batch statistics
  CHECK(rm[0] != 0.0);
  CHECK(rv[0] != 1.0);

  // constant input -> zero output (epsilon guards the zero variance)
  Tensor<double> cx({1, 2, 3, 3}, 4.2);
  Tensor<double> g2({2}, 1.0), b2({2}, 0.0), rm2({2}, 0.0), rv2({2}, 1.0);
  auto cy = batch_norm(cx, g2, b2, rm2, rv2, Mode::Train);
  for (int i = 0; i < cy.size(); ++i) CHECK(std::abs(cy[i]) < 1e-9);

  // gamma=2, beta=1 is an affine map of the standardized values
  Tensor<double> g3({3}, 2.0), b3({3}, 1.0), rm3({3}, 0.0), rv3({3}, 1.0);
  auto y3 = batch_norm(x, g3, b3, rm3, rv3, Mode::Train);
  for (std::int64_t i = 0; i < y.size(); ++i)
    CHECK(y3[i] == doctest::Approx(2.0 * y[i] + 1.0).epsilon(1e-9));

  // matches the loop oracle
  CHECK(oracle::max_abs_diff(y, oracle::batch_norm_train(x, gamma, beta)) < 1e-12);

  // eval mode: running stats only, repeated calls identical, no stat updates
  auto rm_copy = rm.values();
  auto e1 = batch_norm(x, gamma, beta, rm, rv, Mode::Eval);
  auto e2 = batch_norm(x, gamma, beta, rm, rv, Mode::Eval);
  CHECK(e1.values() == e2.values());
  CHECK(rm.values() == rm_copy);
}

TEST_CASE("conv1d_channels") {
  Tensor<double> x({1, 3, 1, 1}, {1, 2, 3});
  Tensor<double> ident({3}, {0, 1, 0});
  Tensor<double> b0({1}, 0.0);
  auto y1 = conv1d_channels(x, ident, b0);
  CHECK(y1[0] == 1.0);
  CHECK(y1[1] == 2.0);
  CHECK(y1[2] == 3.0);

  Tensor<double> box({3}, {1, 1, 1});
  auto y2 = conv1d_channels(x, box, b0);
  CHECK(y2[0] == 3.0);  // zero-padded left end
  CHECK(y2[1] == 6.0);
  CHECK(y2[2] == 5.0);  // zero-padded right end

  Tensor<double> zero({3}, 0.0);
  Tensor<double> b2({1}, {2.0});
  auto y3 = conv1d_channels(x, zero, b2);
  for (int i = 0; i < 3; ++i) CHECK(y3[i] == 2.0);
}

TEST_CASE("backward basics") {
  // loss = sum(x^2) at x=3 -> dx = 6; uses the same node twice
  Tape<double> tape;
  Tensor<double> x({1}, {3.0});
  auto xb = tape.watch(x);
  tape.backward(sum_all(mul(xb, xb)));
  CHECK(tape.grad(xb)[0] == doctest::Approx(6.0));

  // y = x + x -> dy/dx = 2 (additive accumulation)
  Tape<double> tape2;
  auto xb2 = tape2.watch(x);
  tape2.backward(sum_all(add(xb2, xb2)));
  CHECK(tape2.grad(xb2)[0] == doctest::Approx(2.0));

  // a watched tensor unused by the loss gets a zero gradient
  Tape<double> tape3;
  auto used = tape3.watch(x);
  auto unused = tape3.watch(Tensor<double>({2, 2}, 1.0));
  tape3.backward(sum_all(used));
  auto g = tape3.grad(unused);
  for (int i = 0; i < 4; ++i) CHECK(g[i] == 0.0);

  // error paths
  Tape<double> tape4;
  auto w = tape4.watch(Tensor<double>({2}, 1.0));
  CHECK_THROWS_AS(tape4.backward(w), std::invalid_argument);           // not scalar
  CHECK_THROWS_AS(tape4.backward(Tensor<double>({1}, 1.0)), std::invalid_argument);  // unrecorded

  // operands recorded on two different tapes are rejected
  Tape<double> ta, tb;
  auto na = ta.watch(x);
  auto nb = tb.watch(x);
  CHECK_THROWS_AS(add(na, nb), std::invalid_argument);
}

TEST_CASE("forward ops stay finite on finite extreme inputs") {
  Rng rng(37);
  Tensor<double> x({2, 3, 4, 4});
  for (std::int64_t i = 0; i < x.size(); ++i)
    x[i] = rng.uniform(-1e4, 1e4);
  for (auto& t : {sigmoid(x), softmax(x, 1), relu(x)}) {
    for (std::int64_t i = 0; i < t.size(); ++i) CHECK(std::isfinite(t[i]));
  }
}
