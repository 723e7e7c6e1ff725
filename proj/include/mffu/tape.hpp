// Copyright (c) 2026 mffunet contributors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over a recorded computation.
//
// A Tape is an append-only, topologically ordered list of nodes. Leaves are
// registered with watch(); operators append one node per output and capture
// whatever forward context their backward pass needs. backward() walks the
// list once in reverse, accumulating gradients additively, so a tensor used
// several times receives the sum of its contributions.

#pragma once

#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mffu/tensor.hpp"

namespace mffu {

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers a leaf (parameter or input). Returns a handle tensor sharing
  // the argument's storage; the argument itself stays unbound.
  Tensor<T> watch(const Tensor<T>& t) {
    Tensor<T> bound = t;
    bound.tape_ = this;
    bound.node_ = add_node(t.shape(), {}, nullptr);
    return bound;
  }

  // Records an operation node producing `out` (mutated in place to carry the
  // node handle). Inputs may include -1 for untracked operands.
  void record(Tensor<T>& out, std::vector<int> inputs, BackwardFn fn) {
    out.tape_ = this;
    out.node_ = add_node(out.shape(), std::move(inputs), std::move(fn));
  }

  std::size_t num_nodes() const { return nodes_.size(); }

  // Gradient buffer for a node, created zero-filled on first touch.
  Tensor<T>& grad_buffer(int node) {
    auto& g = grads_[static_cast<size_t>(node)];
    if (g.size() == 0) g = Tensor<T>(nodes_[static_cast<size_t>(node)].shape, T(0));
    return g;
  }

  bool has_grad(int node) const { return grads_[static_cast<size_t>(node)].size() != 0; }

  const std::vector<int>& inputs_of(int node) const {
    return nodes_[static_cast<size_t>(node)].inputs;
  }

  // Runs the reverse sweep from a scalar loss recorded on this tape.
  void backward(const Tensor<T>& loss) {
    if (loss.tape() != this || loss.node() < 0)
      throw std::invalid_argument("backward: tensor was not recorded on this tape");
    if (loss.size() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                  shape_str(loss.shape()));
    grad_buffer(loss.node())[0] = T(1);
    for (int i = loss.node(); i >= 0; --i) {
      auto& node = nodes_[static_cast<size_t>(i)];
      if (!node.backward) continue;   // leaf
      if (!has_grad(i)) continue;     // not reachable from the loss
      node.backward(*this, i);
    }
  }

  // Gradient of a watched/recorded tensor; zeros if the loss never reached it.
  Tensor<T> grad(const Tensor<T>& t) {
    if (t.tape() != this || t.node() < 0)
      throw std::invalid_argument("grad: tensor was not recorded on this tape");
    if (!has_grad(t.node())) return Tensor<T>(t.shape(), T(0));
    return grads_[static_cast<size_t>(t.node())];
  }

 private:
  struct Node {
    Shape shape;
    std::vector<int> inputs;
    BackwardFn backward;
  };

  int add_node(Shape shape, std::vector<int> inputs, BackwardFn fn) {
    nodes_.push_back(Node{std::move(shape), std::move(inputs), std::move(fn)});
    grads_.emplace_back();
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<Node> nodes_;
  std::vector<Tensor<T>> grads_;
};

}  // namespace mffu
