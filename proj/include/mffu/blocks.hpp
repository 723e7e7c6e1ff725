// Copyright (c) 2026 mffunet contributors
// SPDX-License-Identifier: Apache-2.0
//
// Composite building blocks of the segmentation network: multi-layer feature
// fusion (MFF), cross-channel attention (CCA), the augmented skip connection,
// and the encoder / decoder / bridge / head assemblies.

#pragma once

#include <array>
#include <string>
#include <utility>

#include "mffu/ops.hpp"

namespace mffu {

// ------------------------------------------------------------------ params

// 3x3 conv + batch norm pair used by decoder and bridge stages.
template <typename T>
struct ConvBnParams {
  Tensor<T> w, b;
  Tensor<T> gamma, beta;
  Tensor<T> running_mean, running_var;  // buffers, not trainable
};

// One MFF convolution block: 3x3 conv -> batch norm -> residual add of the
// block input (1x1-projected when channel counts differ) -> ReLU.
template <typename T>
struct MffConvBlock {
  Tensor<T> w, b;
  Tensor<T> gamma, beta;
  Tensor<T> running_mean, running_var;
  Tensor<T> proj_w;  // empty when the residual is an identity
  bool has_proj() const { return proj_w.size() != 0; }
};

template <typename T>
struct MffParams {
  std::array<MffConvBlock<T>, 3> block;
  Tensor<T> fuse_gamma, fuse_beta, fuse_running_mean, fuse_running_var;
  Tensor<T> path_w, path_b;  // parallel 1x1 path to C_out
  int c1 = 0, c2 = 0, c3 = 0;
};

template <typename T>
struct CcaParams {
  Tensor<T> gain;    // per-channel weight vector W, stored 1 x C x 1 x 1
  Tensor<T> conv_w;  // cross-channel kernel, length 3
  Tensor<T> conv_b;  // scalar bias
};

template <typename T>
struct SkipParams {
  Tensor<T> w3, b3;  // 3x3 branch
  Tensor<T> w1, b1;  // 1x1 branch
};

template <typename T>
struct EncoderParams {
  MffParams<T> mff;
  CcaParams<T> cca;
  SkipParams<T> skip;
};

template <typename T>
struct DecoderParams {
  Tensor<T> up_w, up_b;  // 2x2 stride-2 transpose conv
  ConvBnParams<T> stage1, stage2;
};

template <typename T>
struct BridgeParams {
  ConvBnParams<T> stage1, stage2;
};

template <typename T>
struct HeadParams {
  Tensor<T> w, b;  // 1x1 conv to the class logits
};

// ------------------------------------------------------------------ init

namespace init {

// He-style normal, std = sqrt(2 / fan_in)
template <typename T>
Tensor<T> conv_weight(Rng& rng, Shape shape, int fan_in) {
  return Tensor<T>::randn(std::move(shape), rng, 0.0, std::sqrt(2.0 / fan_in));
}

template <typename T>
ConvBnParams<T> conv_bn(Rng& rng, int cin, int cout) {
  ConvBnParams<T> p;
  p.w = conv_weight<T>(rng, {cout, cin, 3, 3}, cin * 9);
  p.b = Tensor<T>({cout}, T(0));
  p.gamma = Tensor<T>({cout}, T(1));
  p.beta = Tensor<T>({cout}, T(0));
  p.running_mean = Tensor<T>({cout}, T(0));
  p.running_var = Tensor<T>({cout}, T(1));
  return p;
}

}  // namespace init

// MFF channel split: (C/2, C/4, C/4). C_out must be divisible by 4.
inline std::array<int, 3> mff_split(int c_out) {
  if (c_out % 4 != 0)
    throw std::invalid_argument("mff channel split needs a width divisible by 4");
  return {c_out / 2, c_out / 4, c_out / 4};
}

template <typename T>
MffParams<T> make_mff(Rng& rng, int cin, int cout) {
  const auto split = mff_split(cout);
  MffParams<T> p;
  p.c1 = split[0];
  p.c2 = split[1];
  p.c3 = split[2];
  int in = cin;
  for (int i = 0; i < 3; ++i) {
    auto& b = p.block[static_cast<size_t>(i)];
    const int out = split[static_cast<size_t>(i)];
    b.w = init::conv_weight<T>(rng, {out, in, 3, 3}, in * 9);
    b.b = Tensor<T>({out}, T(0));
    b.gamma = Tensor<T>({out}, T(1));
    b.beta = Tensor<T>({out}, T(0));
    b.running_mean = Tensor<T>({out}, T(0));
    b.running_var = Tensor<T>({out}, T(1));
    if (in != out) b.proj_w = init::conv_weight<T>(rng, {out, in, 1, 1}, in);
    in = out;
  }
  p.fuse_gamma = Tensor<T>({cout}, T(1));
  p.fuse_beta = Tensor<T>({cout}, T(0));
  p.fuse_running_mean = Tensor<T>({cout}, T(0));
  p.fuse_running_var = Tensor<T>({cout}, T(1));
  p.path_w = init::conv_weight<T>(rng, {cout, cin, 1, 1}, cin);
  p.path_b = Tensor<T>({cout}, T(0));
  return p;
}

template <typename T>
CcaParams<T> make_cca(Rng& rng, int channels) {
  CcaParams<T> p;
  p.gain = Tensor<T>({1, channels, 1, 1}, T(1));
  p.conv_w = init::conv_weight<T>(rng, {3}, 3);
  p.conv_b = Tensor<T>({1}, T(0));
  return p;
}

template <typename T>
SkipParams<T> make_skip(Rng& rng, int channels) {
  SkipParams<T> p;
  p.w3 = init::conv_weight<T>(rng, {channels, channels, 3, 3}, channels * 9);
  p.b3 = Tensor<T>({channels}, T(0));
  p.w1 = init::conv_weight<T>(rng, {channels, channels, 1, 1}, channels);
  p.b1 = Tensor<T>({channels}, T(0));
  return p;
}

template <typename T>
EncoderParams<T> make_encoder(Rng& rng, int cin, int cout) {
  EncoderParams<T> p;
  p.mff = make_mff<T>(rng, cin, cout);
  p.cca = make_cca<T>(rng, cout);
  p.skip = make_skip<T>(rng, cout);
  return p;
}

template <typename T>
DecoderParams<T> make_decoder(Rng& rng, int cin, int cout) {
  DecoderParams<T> p;
  p.up_w = init::conv_weight<T>(rng, {cin, cout, 2, 2}, cin * 4);
  p.up_b = Tensor<T>({cout}, T(0));
  p.stage1 = init::conv_bn<T>(rng, 2 * cout, cout);
  p.stage2 = init::conv_bn<T>(rng, cout, cout);
  return p;
}

template <typename T>
BridgeParams<T> make_bridge(Rng& rng, int cin, int cout) {
  BridgeParams<T> p;
  p.stage1 = init::conv_bn<T>(rng, cin, cout);
  p.stage2 = init::conv_bn<T>(rng, cout, cout);
  return p;
}

template <typename T>
HeadParams<T> make_head(Rng& rng, int cin, int classes) {
  HeadParams<T> p;
  p.w = init::conv_weight<T>(rng, {classes, cin, 1, 1}, cin);
  p.b = Tensor<T>({classes}, T(0));
  return p;
}

// ------------------------------------------------------------------ visitors
//
// Canonical traversal: defines parameter names, checkpoint order and the
// optimizer's parameter order. fn(name, tensor&, trainable).

template <typename T, typename F>
void visit_params(MffParams<T>& p, const std::string& prefix, F&& fn) {
  for (int i = 0; i < 3; ++i) {
    auto& b = p.block[static_cast<size_t>(i)];
    const std::string bp = prefix + ".block" + std::to_string(i + 1);
    fn(bp + ".conv.w", b.w, true);
    fn(bp + ".conv.b", b.b, true);
    fn(bp + ".bn.gamma", b.gamma, true);
    fn(bp + ".bn.beta", b.beta, true);
    fn(bp + ".bn.running_mean", b.running_mean, false);
    fn(bp + ".bn.running_var", b.running_var, false);
    if (b.has_proj()) fn(bp + ".proj.w", b.proj_w, true);
  }
  fn(prefix + ".fuse.bn.gamma", p.fuse_gamma, true);
  fn(prefix + ".fuse.bn.beta", p.fuse_beta, true);
  fn(prefix + ".fuse.bn.running_mean", p.fuse_running_mean, false);
  fn(prefix + ".fuse.bn.running_var", p.fuse_running_var, false);
  fn(prefix + ".conv1x1.w", p.path_w, true);
  fn(prefix + ".conv1x1.b", p.path_b, true);
}

template <typename T, typename F>
void visit_params(CcaParams<T>& p, const std::string& prefix, F&& fn) {
  fn(prefix + ".gain", p.gain, true);
  fn(prefix + ".conv.w", p.conv_w, true);
  fn(prefix + ".conv.b", p.conv_b, true);
}

template <typename T, typename F>
void visit_params(SkipParams<T>& p, const std::string& prefix, F&& fn) {
  fn(prefix + ".conv3x3.w", p.w3, true);
  fn(prefix + ".conv3x3.b", p.b3, true);
  fn(prefix + ".conv1x1.w", p.w1, true);
  fn(prefix + ".conv1x1.b", p.b1, true);
}

template <typename T, typename F>
void visit_params(ConvBnParams<T>& p, const std::string& prefix, F&& fn) {
  fn(prefix + ".conv.w", p.w, true);
  fn(prefix + ".conv.b", p.b, true);
  fn(prefix + ".bn.gamma", p.gamma, true);
  fn(prefix + ".bn.beta", p.beta, true);
  fn(prefix + ".bn.running_mean", p.running_mean, false);
  fn(prefix + ".bn.running_var", p.running_var, false);
}

template <typename T, typename F>
void visit_params(EncoderParams<T>& p, const std::string& prefix, F&& fn) {
  visit_params(p.mff, prefix + ".mff", fn);
  visit_params(p.cca, prefix + ".cca", fn);
  visit_params(p.skip, prefix + ".skip", fn);
}

template <typename T, typename F>
void visit_params(DecoderParams<T>& p, const std::string& prefix, F&& fn) {
  fn(prefix + ".up.w", p.up_w, true);
  fn(prefix + ".up.b", p.up_b, true);
  visit_params(p.stage1, prefix + ".stage1", fn);
  visit_params(p.stage2, prefix + ".stage2", fn);
}

template <typename T, typename F>
void visit_params(BridgeParams<T>& p, const std::string& prefix, F&& fn) {
  visit_params(p.stage1, prefix + ".stage1", fn);
  visit_params(p.stage2, prefix + ".stage2", fn);
}

template <typename T, typename F>
void visit_params(HeadParams<T>& p, const std::string& prefix, F&& fn) {
  fn(prefix + ".conv.w", p.w, true);
  fn(prefix + ".conv.b", p.b, true);
}

// ------------------------------------------------------------------ forwards

template <typename T>
Tensor<T> conv_bn_relu(const Tensor<T>& x, const ConvBnParams<T>& p, Mode mode) {
  Tensor<T> rm = p.running_mean, rv = p.running_var;  // shared-storage aliases
  Tensor<T> y = conv2d(x, p.w, p.b, 1, 1);
  y = batch_norm(y, p.gamma, p.beta, rm, rv, mode);
  return relu(y);
}

// Path A: three sequential residual conv blocks, outputs concatenated on the
// channel axis. Path B: 1x1 conv of the block input. Fused as
// ReLU(batch_norm(concat A) + path B).
template <typename T>
Tensor<T> mff_forward(const Tensor<T>& x, const MffParams<T>& p, Mode mode) {
  std::vector<Tensor<T>> outs;
  Tensor<T> in = x;
  for (int i = 0; i < 3; ++i) {
    const auto& b = p.block[static_cast<size_t>(i)];
    Tensor<T> rm = b.running_mean, rv = b.running_var;
    Tensor<T> y = conv2d(in, b.w, b.b, 1, 1);
    y = batch_norm(y, b.gamma, b.beta, rm, rv, mode);
    Tensor<T> res = b.has_proj() ? conv2d(in, b.proj_w, 1, 0) : in;
    y = relu(add(y, res));
    outs.push_back(y);
    in = y;
  }
  Tensor<T> cat = concat(outs, 1);
  Tensor<T> frm = p.fuse_running_mean, frv = p.fuse_running_var;
  cat = batch_norm(cat, p.fuse_gamma, p.fuse_beta, frm, frv, mode);
  Tensor<T> path = conv2d(x, p.path_w, p.path_b, 1, 0);
  if (cat.shape() != path.shape())
    throw std::invalid_argument("mff_forward: concat and 1x1 path shapes differ");
  return relu(add(cat, path));
}

// Y = X (.) sigmoid(conv1d_channels(W (.) GAP(X))), gate broadcast over H x W.
template <typename T>
Tensor<T> cca_forward(const Tensor<T>& x, const CcaParams<T>& p) {
  if (x.dim(1) != p.gain.dim(1))
    throw std::invalid_argument("cca_forward: channel mismatch");
  Tensor<T> d = global_avg_pool(x);
  Tensor<T> wd = mul(d, p.gain);
  Tensor<T> s = sigmoid(conv1d_channels(wd, p.conv_w, p.conv_b));
  return mul(x, s);
}

template <typename T>
Tensor<T> augmented_skip_forward(const Tensor<T>& s, const SkipParams<T>& p) {
  if (s.dim(1) != p.w3.dim(1))
    throw std::invalid_argument("augmented_skip_forward: channel mismatch");
  return relu(add(conv2d(s, p.w3, p.b3, 1, 1), conv2d(s, p.w1, p.b1, 1, 0)));
}

template <typename T>
struct EncoderOut {
  Tensor<T> pooled;  // N x C x H/2 x W/2, feeds the next encoder
  Tensor<T> skip;    // N x C x H x W, feeds the matching decoder
};

template <typename T>
EncoderOut<T> encoder_forward(const Tensor<T>& x, const EncoderParams<T>& p, Mode mode) {
  Tensor<T> f = cca_forward(mff_forward(x, p.mff, mode), p.cca);
  return {max_pool2d(f), augmented_skip_forward(f, p.skip)};
}

template <typename T>
Tensor<T> decoder_forward(const Tensor<T>& x, const Tensor<T>& skip, const DecoderParams<T>& p,
                          Mode mode) {
  Tensor<T> up = conv_transpose2d(x, p.up_w, p.up_b);
  if (skip.dim(2) != up.dim(2) || skip.dim(3) != up.dim(3))
    throw std::invalid_argument("decoder_forward: skip spatial extents must be double the input");
  if (skip.dim(1) != up.dim(1))
    throw std::invalid_argument("decoder_forward: skip channel mismatch");
  Tensor<T> cat = concat<T>({up, skip}, 1);  // order fixed: (up-sampled, skip)
  Tensor<T> h = conv_bn_relu(cat, p.stage1, mode);
  return conv_bn_relu(h, p.stage2, mode);
}

template <typename T>
Tensor<T> bridge_forward(const Tensor<T>& x, const BridgeParams<T>& p, Mode mode) {
  Tensor<T> h = conv_bn_relu(x, p.stage1, mode);
  return conv_bn_relu(h, p.stage2, mode);
}

template <typename T>
Tensor<T> head_forward(const Tensor<T>& x, const HeadParams<T>& p) {
  return softmax(conv2d(x, p.w, p.b, 1, 0), 1);
}

}  // namespace mffu
