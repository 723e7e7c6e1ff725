// Copyright (c) 2026 mffunet contributors
// SPDX-License-Identifier: Apache-2.0
//
// Full network assembly: four encoders (base, 2b, 4b, 8b), a 16b bridge,
// four decoders (8b, 4b, 2b, b) consuming the skips in reverse order, and a
// 1x1-conv softmax head.

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mffu/blocks.hpp"

namespace mffu {

struct ModelConfig {
  int base_width = 32;
  int depth = 4;  // fixed by the published widths
  int num_classes = 3;
  int in_channels = 1;
  int input_h = 256;
  int input_w = 256;
  std::uint64_t seed = 0;

  void validate() const {
    if (depth != 4) throw std::invalid_argument("config: depth is fixed at 4");
    if (base_width < 4 || base_width % 4 != 0)
      throw std::invalid_argument("config: base width must be a positive multiple of 4");
    if (num_classes < 2) throw std::invalid_argument("config: need at least 2 classes");
    if (in_channels < 1) throw std::invalid_argument("config: need at least 1 input channel");
    if (input_h != input_w)
      throw std::invalid_argument("config: input must be square");
    const int s = input_h;
    if (s < (1 << depth) || (s & (s - 1)) != 0 || s % base_width != 0)
      throw std::invalid_argument(
          "config: input size must be a base-divisible power of two >= 16");
  }

  int encoder_width(int i) const { return base_width << i; }
  int bridge_width() const { return base_width << 4; }
  int decoder_width(int i) const { return base_width << (3 - i); }

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct Model {
  ModelConfig cfg;
  std::array<EncoderParams<T>, 4> enc;
  BridgeParams<T> bridge;
  std::array<DecoderParams<T>, 4> dec;
  HeadParams<T> head;
};

template <typename T>
Model<T> build_model(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  Model<T> m;
  m.cfg = cfg;
  int in = cfg.in_channels;
  for (int i = 0; i < 4; ++i) {
    m.enc[static_cast<size_t>(i)] = make_encoder<T>(rng, in, cfg.encoder_width(i));
    in = cfg.encoder_width(i);
  }
  m.bridge = make_bridge<T>(rng, cfg.encoder_width(3), cfg.bridge_width());
  in = cfg.bridge_width();
  for (int i = 0; i < 4; ++i) {
    m.dec[static_cast<size_t>(i)] = make_decoder<T>(rng, in, cfg.decoder_width(i));
    in = cfg.decoder_width(i);
  }
  m.head = make_head<T>(rng, cfg.base_width, cfg.num_classes);
  return m;
}

// Canonical traversal over every named tensor. fn(name, tensor&, trainable).
template <typename T, typename F>
void visit_params(Model<T>& m, F&& fn) {
  for (int i = 0; i < 4; ++i)
    visit_params(m.enc[static_cast<size_t>(i)], "enc" + std::to_string(i), fn);
  visit_params(m.bridge, "bridge", fn);
  for (int i = 0; i < 4; ++i)
    visit_params(m.dec[static_cast<size_t>(i)], "dec" + std::to_string(i), fn);
  visit_params(m.head, "head", fn);
}

template <typename T>
std::int64_t param_count(const Model<T>& m) {
  std::int64_t total = 0;
  auto& mm = const_cast<Model<T>&>(m);
  visit_params(mm, [&](const std::string&, Tensor<T>& t, bool trainable) {
    if (trainable) total += t.size();
  });
  return total;
}

template <typename T>
std::vector<Tensor<T>> trainable_params(Model<T>& m) {
  std::vector<Tensor<T>> out;
  visit_params(m, [&](const std::string&, Tensor<T>& t, bool trainable) {
    if (trainable) out.push_back(t);
  });
  return out;
}

// Name/tensor pairs in canonical traversal order; the tensors alias the
// model's storage. Names are unique and their shapes are a pure function of
// the config.
template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;
};

template <typename T>
std::vector<NamedTensor<T>> named_tensors(Model<T>& m) {
  std::vector<NamedTensor<T>> out;
  visit_params(m, [&](const std::string& name, Tensor<T>& t, bool trainable) {
    out.push_back({name, t, trainable});
  });
  return out;
}

// Copy of the model whose trainable tensors are watched on the tape. The
// copies (and the batch-norm running buffers) share storage with the
// original, so optimizer updates and stat updates land in the source model.
template <typename T>
struct BoundModel {
  Model<T> model;
  std::vector<Tensor<T>> trainable;  // traversal order, tape-bound
};

template <typename T>
BoundModel<T> bind_to_tape(const Model<T>& m, Tape<T>& tape) {
  BoundModel<T> b{m, {}};
  visit_params(b.model, [&](const std::string&, Tensor<T>& t, bool trainable) {
    if (!trainable) return;
    t = tape.watch(t);
    b.trainable.push_back(t);
  });
  return b;
}

// Intermediate shapes of one forward pass, for introspection.
struct ForwardTrace {
  std::vector<std::pair<std::string, Shape>> points;
};

template <typename T>
Tensor<T> model_forward(Model<T>& m, const Tensor<T>& x, Mode mode,
                        ForwardTrace* trace = nullptr) {
  if (x.rank() != 4 || x.dim(1) != m.cfg.in_channels || x.dim(2) != m.cfg.input_h ||
      x.dim(3) != m.cfg.input_w)
    throw std::invalid_argument("model_forward: input " + shape_str(x.shape()) +
                                " does not match the configured size");
  Tensor<T> cur = x;
  std::array<Tensor<T>, 4> skips;
  for (int i = 0; i < 4; ++i) {
    EncoderOut<T> out = encoder_forward(cur, m.enc[static_cast<size_t>(i)], mode);
    skips[static_cast<size_t>(i)] = out.skip;
    cur = out.pooled;
    if (trace) {
      trace->points.emplace_back("enc" + std::to_string(i) + ".skip", out.skip.shape());
      trace->points.emplace_back("enc" + std::to_string(i) + ".pooled", cur.shape());
    }
  }
  cur = bridge_forward(cur, m.bridge, mode);
  if (trace) trace->points.emplace_back("bridge", cur.shape());
  for (int i = 0; i < 4; ++i) {
    cur = decoder_forward(cur, skips[static_cast<size_t>(3 - i)], m.dec[static_cast<size_t>(i)],
                          mode);
    if (trace) trace->points.emplace_back("dec" + std::to_string(i), cur.shape());
  }
  Tensor<T> probs = head_forward(cur, m.head);
  if (trace) trace->points.emplace_back("head", probs.shape());
  return probs;
}

}  // namespace mffu
