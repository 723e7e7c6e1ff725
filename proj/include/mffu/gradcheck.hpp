// Copyright (c) 2026 mffunet contributors
// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference verification of recorded backward passes.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mffu/ops.hpp"

namespace mffu {

// Compares the tape gradient of a scalar-valued closure against central
// finite differences (f(x+eps) - f(x-eps)) / (2 eps) for every coordinate of
// every input. Returns max over coordinates of
// |analytic - numeric| / max(1, |analytic|, |numeric|).
//
// The closure receives either tracked or plain tensors and must rebuild its
// computation from them on every call.
template <typename T, typename F>
double grad_check(F&& f, std::vector<Tensor<T>> inputs, double eps = 1e-5) {
  Tape<T> tape;
  std::vector<Tensor<T>> bound;
  bound.reserve(inputs.size());
  for (const auto& t : inputs) bound.push_back(tape.watch(t));
  Tensor<T> loss = f(bound);
  if (loss.size() != 1)
    throw std::invalid_argument("grad_check: closure must produce a scalar");
  tape.backward(loss);
  std::vector<Tensor<T>> analytic;
  analytic.reserve(bound.size());
  for (const auto& b : bound) analytic.push_back(tape.grad(b));

  double max_err = 0.0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    Tensor<T>& x = inputs[i];
    const std::int64_t n = x.size();
    for (std::int64_t j = 0; j < n; ++j) {
      const T saved = x[j];
      x[j] = saved + static_cast<T>(eps);
      const double fp = static_cast<double>(f(inputs)[0]);
      x[j] = saved - static_cast<T>(eps);
      const double fm = static_cast<double>(f(inputs)[0]);
      x[j] = saved;
      const double num = (fp - fm) / (2.0 * eps);
      const double ana = static_cast<double>(analytic[i][j]);
      const double err =
          std::abs(ana - num) / std::max({1.0, std::abs(ana), std::abs(num)});
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

// Named gradient checks over every differentiable operator and composite
// block, run at 64-bit. Used by the CLI gradcheck command and the acceptance
// suite.
struct GradCheckEntry {
  std::string name;
  std::function<double()> run;
};

std::vector<GradCheckEntry> gradcheck_suite(std::uint64_t seed);

}  // namespace mffu
