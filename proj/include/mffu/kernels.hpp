// Copyright (c) 2026 mffunet contributors
// SPDX-License-Identifier: Apache-2.0
//
// Low-level arithmetic kernels with runtime backend selection.
//
// Every kernel has a scalar reference implementation; on x86-64 an AVX2
// variant is selected at runtime when the CPU supports AVX2+FMA. Elementwise
// kernels (add, mul, axpy, relu, adam_step, ...) are bit-identical across
// backends; GEMM and reductions reassociate and agree within rounding.

#pragma once

#include <cstdint>
#include <string>

namespace mffu::kernels {

enum class Backend { Scalar, Avx2 };

// GEMM family: C is M x N, K is the contraction extent, row-major storage.
//   gemm_nn: C (+)= A[M x K] * B[K x N]
//   gemm_nt: C (+)= A[M x K] * B[N x K]^T
//   gemm_tn: C (+)= A[K x M]^T * B[K x N]
template <typename T>
struct Table {
  void (*gemm_nn)(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate);
  void (*gemm_nt)(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate);
  void (*gemm_tn)(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate);

  void (*add)(std::int64_t n, const T* a, const T* b, T* y);        // y = a + b
  void (*mul)(std::int64_t n, const T* a, const T* b, T* y);        // y = a * b
  void (*axpy)(std::int64_t n, T alpha, const T* x, T* y);          // y += alpha * x
  void (*scale)(std::int64_t n, T alpha, const T* x, T* y);         // y = alpha * x
  void (*add_scalar)(std::int64_t n, const T* x, T c, T* y);        // y = x + c
  void (*scale_shift)(std::int64_t n, T a, T b, const T* x, T* y);  // y = a * x + b
  void (*relu_fwd)(std::int64_t n, const T* x, T* y);               // y = max(x, 0)
  void (*relu_bwd)(std::int64_t n, const T* x, const T* g, T* gx);  // gx += g * [x > 0]
  void (*sigmoid_fwd)(std::int64_t n, const T* x, T* y);
  T (*sum)(std::int64_t n, const T* x);
  T (*dot)(std::int64_t n, const T* a, const T* b);
  // Adam update with precomputed bias corrections bc1 = 1 - beta1^t,
  // bc2 = 1 - beta2^t. Updates p, m, v in place.
  void (*adam_step)(std::int64_t n, T* p, const T* g, T* m, T* v, T beta1, T beta2,
                    T eps, T lr, T bc1, T bc2);
};

namespace detail {
template <typename T>
Table<T> make_scalar_table();
#if MFFU_HAVE_AVX2
void fill_avx2(Table<float>& t);
void fill_avx2(Table<double>& t);
#endif
}  // namespace detail

bool avx2_available();
Backend active_backend();
// Throws std::invalid_argument if the backend is not available on this CPU.
void force_backend(Backend b);
std::string backend_name(Backend b);

template <typename T>
const Table<T>& table();

template <>
const Table<float>& table<float>();
template <>
const Table<double>& table<double>();

}  // namespace mffu::kernels
