// Copyright (c) 2026 mffunet contributors
// SPDX-License-Identifier: Apache-2.0
//
// Scalar reference kernels. These define the semantics the SIMD variants are
// tested against.

#include "mffu/kernels.hpp"

#include <cmath>

namespace mffu::kernels {
namespace {

template <typename T>
void gemm_nn_ref(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::int64_t>(i) * n;
    if (!accumulate) {
      for (int j = 0; j < n; ++j) crow[j] = T(0);
    }
    for (int p = 0; p < k; ++p) {
      const T av = a[static_cast<std::int64_t>(i) * k + p];
      const T* brow = b + static_cast<std::int64_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void gemm_nt_ref(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<std::int64_t>(i) * k;
    for (int j = 0; j < n; ++j) {
      const T* brow = b + static_cast<std::int64_t>(j) * k;
      T s = T(0);
      for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
      std::int64_t idx = static_cast<std::int64_t>(i) * n + j;
      c[idx] = accumulate ? c[idx] + s : s;
    }
  }
}

template <typename T>
void gemm_tn_ref(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<std::int64_t>(i) * n;
    if (!accumulate) {
      for (int j = 0; j < n; ++j) crow[j] = T(0);
    }
    for (int p = 0; p < k; ++p) {
      const T av = a[static_cast<std::int64_t>(p) * m + i];
      const T* brow = b + static_cast<std::int64_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void add_ref(std::int64_t n, const T* a, const T* b, T* y) {
  for (std::int64_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

template <typename T>
void mul_ref(std::int64_t n, const T* a, const T* b, T* y) {
  for (std::int64_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

template <typename T>
void axpy_ref(std::int64_t n, T alpha, const T* x, T* y) {
  for (std::int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void scale_ref(std::int64_t n, T alpha, const T* x, T* y) {
  for (std::int64_t i = 0; i < n; ++i) y[i] = alpha * x[i];
}

template <typename T>
void add_scalar_ref(std::int64_t n, const T* x, T c, T* y) {
  for (std::int64_t i = 0; i < n; ++i) y[i] = x[i] + c;
}

template <typename T>
void scale_shift_ref(std::int64_t n, T a, T b, const T* x, T* y) {
  for (std::int64_t i = 0; i < n; ++i) y[i] = a * x[i] + b;
}

template <typename T>
void relu_fwd_ref(std::int64_t n, const T* x, T* y) {
  for (std::int64_t i = 0; i < n; ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_bwd_ref(std::int64_t n, const T* x, const T* g, T* gx) {
  for (std::int64_t i = 0; i < n; ++i) gx[i] += x[i] > T(0) ? g[i] : T(0);
}

// Stable on both tails: never exponentiates a large positive argument.
template <typename T>
void sigmoid_fwd_ref(std::int64_t n, const T* x, T* y) {
  for (std::int64_t i = 0; i < n; ++i) {
    if (x[i] >= T(0)) {
      const T e = std::exp(-x[i]);
      y[i] = T(1) / (T(1) + e);
    } else {
      const T e = std::exp(x[i]);
      y[i] = e / (T(1) + e);
    }
  }
}

template <typename T>
T sum_ref(std::int64_t n, const T* x) {
  T s = T(0);
  for (std::int64_t i = 0; i < n; ++i) s += x[i];
  return s;
}

template <typename T>
T dot_ref(std::int64_t n, const T* a, const T* b) {
  T s = T(0);
  for (std::int64_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <typename T>
void adam_step_ref(std::int64_t n, T* p, const T* g, T* m, T* v, T beta1, T beta2,
                   T eps, T lr, T bc1, T bc2) {
  for (std::int64_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (T(1) - beta1) * g[i];
    v[i] = beta2 * v[i] + (T(1) - beta2) * (g[i] * g[i]);
    const T mhat = m[i] / bc1;
    const T vhat = v[i] / bc2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace

namespace detail {

template <typename T>
Table<T> make_scalar_table() {
  Table<T> t;
  t.gemm_nn = gemm_nn_ref<T>;
  t.gemm_nt = gemm_nt_ref<T>;
  t.gemm_tn = gemm_tn_ref<T>;
  t.add = add_ref<T>;
  t.mul = mul_ref<T>;
  t.axpy = axpy_ref<T>;
  t.scale = scale_ref<T>;
  t.add_scalar = add_scalar_ref<T>;
  t.scale_shift = scale_shift_ref<T>;
  t.relu_fwd = relu_fwd_ref<T>;
  t.relu_bwd = relu_bwd_ref<T>;
  t.sigmoid_fwd = sigmoid_fwd_ref<T>;
  t.sum = sum_ref<T>;
  t.dot = dot_ref<T>;
  t.adam_step = adam_step_ref<T>;
  return t;
}

template Table<float> make_scalar_table<float>();
template Table<double> make_scalar_table<double>();

}  // namespace detail
}  // namespace mffu::kernels
