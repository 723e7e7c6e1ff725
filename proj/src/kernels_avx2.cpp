// Copyright (c) 2026 mffunet contributors
// SPDX-License-Identifier: Apache-2.0
//
// AVX2 kernel variants. Compiled with -mavx2 -mfma; only reached through the
// dispatch table after a runtime CPU check.
//
// Elementwise kernels use separate mul/add (no FMA) so they match the scalar
// reference bit-for-bit. GEMM and reductions use FMA and wide accumulators,
// so they agree with the reference only within rounding.

#include "mffu/kernels.hpp"

#include <immintrin.h>

#include <cmath>

namespace mffu::kernels {
namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 sh = _mm_movehl_ps(lo, lo);
  lo = _mm_add_ps(lo, sh);
  sh = _mm_shuffle_ps(lo, lo, 0x1);
  lo = _mm_add_ss(lo, sh);
  return _mm_cvtss_f32(lo);
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  lo = _mm_add_sd(lo, sh);
  return _mm_cvtsd_f64(lo);
}

// ---------------------------------------------------------------- float

void gemm_nn_f32(int m, int n, int k, const float* a, const float* b, float* c,
                 bool accumulate) {
  for (int i = 0; i < m; ++i) {
    float* crow = c + static_cast<std::int64_t>(i) * n;
    const float* arow = a + static_cast<std::int64_t>(i) * k;
    int j = 0;
    for (; j + 16 <= n; j += 16) {
      __m256 acc0, acc1;
      if (accumulate) {
        acc0 = _mm256_loadu_ps(crow + j);
        acc1 = _mm256_loadu_ps(crow + j + 8);
      } else {
        acc0 = _mm256_setzero_ps();
        acc1 = _mm256_setzero_ps();
      }
      for (int p = 0; p < k; ++p) {
        const __m256 av = _mm256_set1_ps(arow[p]);
        const float* brow = b + static_cast<std::int64_t>(p) * n + j;
        acc0 = _mm256_fmadd_ps(av, _mm256_loadu_ps(brow), acc0);
        acc1 = _mm256_fmadd_ps(av, _mm256_loadu_ps(brow + 8), acc1);
      }
      _mm256_storeu_ps(crow + j, acc0);
      _mm256_storeu_ps(crow + j + 8, acc1);
    }
    for (; j + 8 <= n; j += 8) {
      __m256 acc = accumulate ? _mm256_loadu_ps(crow + j) : _mm256_setzero_ps();
      for (int p = 0; p < k; ++p) {
        const __m256 av = _mm256_set1_ps(arow[p]);
        acc = _mm256_fmadd_ps(av, _mm256_loadu_ps(b + static_cast<std::int64_t>(p) * n + j), acc);
      }
      _mm256_storeu_ps(crow + j, acc);
    }
    for (; j < n; ++j) {
      float s = accumulate ? crow[j] : 0.0f;
      for (int p = 0; p < k; ++p) s += arow[p] * b[static_cast<std::int64_t>(p) * n + j];
      crow[j] = s;
    }
  }
}

void gemm_tn_f32(int m, int n, int k, const float* a, const float* b, float* c,
                 bool accumulate) {
  for (int i = 0; i < m; ++i) {
    float* crow = c + static_cast<std::int64_t>(i) * n;
    int j = 0;
    for (; j + 16 <= n; j += 16) {
      __m256 acc0, acc1;
      if (accumulate) {
        acc0 = _mm256_loadu_ps(crow + j);
        acc1 = _mm256_loadu_ps(crow + j + 8);
      } else {
        acc0 = _mm256_setzero_ps();
        acc1 = _mm256_setzero_ps();
      }
      for (int p = 0; p < k; ++p) {
        const __m256 av = _mm256_set1_ps(a[static_cast<std::int64_t>(p) * m + i]);
        const float* brow = b + static_cast<std::int64_t>(p) * n + j;
        acc0 = _mm256_fmadd_ps(av, _mm256_loadu_ps(brow), acc0);
        acc1 = _mm256_fmadd_ps(av, _mm256_loadu_ps(brow + 8), acc1);
      }
      _mm256_storeu_ps(crow + j, acc0);
      _mm256_storeu_ps(crow + j + 8, acc1);
    }
    for (; j < n; ++j) {
      float s = accumulate ? crow[j] : 0.0f;
      for (int p = 0; p < k; ++p)
        s += a[static_cast<std::int64_t>(p) * m + i] * b[static_cast<std::int64_t>(p) * n + j];
      crow[j] = s;
    }
  }
}

void gemm_nt_f32(int m, int n, int k, const float* a, const float* b, float* c,
                 bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const float* arow = a + static_cast<std::int64_t>(i) * k;
    for (int j = 0; j < n; ++j) {
      const float* brow = b + static_cast<std::int64_t>(j) * k;
      __m256 acc = _mm256_setzero_ps();
      int p = 0;
      for (; p + 8 <= k; p += 8)
        acc = _mm256_fmadd_ps(_mm256_loadu_ps(arow + p), _mm256_loadu_ps(brow + p), acc);
      float s = hsum(acc);
      for (; p < k; ++p) s += arow[p] * brow[p];
      std::int64_t idx = static_cast<std::int64_t>(i) * n + j;
      c[idx] = accumulate ? c[idx] + s : s;
    }
  }
}

void add_f32(std::int64_t n, const float* a, const float* b, float* y) {
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) y[i] = a[i] + b[i];
}

void mul_f32(std::int64_t n, const float* a, const float* b, float* y) {
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) y[i] = a[i] * b[i];
}

void axpy_f32(std::int64_t n, float alpha, const float* x, float* y) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 prod = _mm256_mul_ps(va, _mm256_loadu_ps(x + i));
    _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(y + i), prod));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_f32(std::int64_t n, float alpha, const float* x, float* y) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_mul_ps(va, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) y[i] = alpha * x[i];
}

void add_scalar_f32(std::int64_t n, const float* x, float cst, float* y) {
  const __m256 vc = _mm256_set1_ps(cst);
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(x + i), vc));
  for (; i < n; ++i) y[i] = x[i] + cst;
}

void scale_shift_f32(std::int64_t n, float a, float b, const float* x, float* y) {
  const __m256 va = _mm256_set1_ps(a);
  const __m256 vb = _mm256_set1_ps(b);
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 prod = _mm256_mul_ps(va, _mm256_loadu_ps(x + i));
    _mm256_storeu_ps(y + i, _mm256_add_ps(prod, vb));
  }
  for (; i < n; ++i) y[i] = a * x[i] + b;
}

void relu_fwd_f32(std::int64_t n, const float* x, float* y) {
  const __m256 z = _mm256_setzero_ps();
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(y + i, _mm256_max_ps(_mm256_loadu_ps(x + i), z));
  for (; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_bwd_f32(std::int64_t n, const float* x, const float* g, float* gx) {
  const __m256 z = _mm256_setzero_ps();
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x + i), z, _CMP_GT_OQ);
    __m256 gv = _mm256_and_ps(_mm256_loadu_ps(g + i), mask);
    _mm256_storeu_ps(gx + i, _mm256_add_ps(_mm256_loadu_ps(gx + i), gv));
  }
  for (; i < n; ++i) gx[i] += x[i] > 0.0f ? g[i] : 0.0f;
}

float sum_f32(std::int64_t n, const float* x) {
  __m256 acc = _mm256_setzero_ps();
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
  float s = hsum(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

float dot_f32(std::int64_t n, const float* a, const float* b) {
  __m256 acc = _mm256_setzero_ps();
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc);
  float s = hsum(acc);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void adam_step_f32(std::int64_t n, float* p, const float* g, float* m, float* v,
                   float beta1, float beta2, float eps, float lr, float bc1, float bc2) {
  const __m256 vb1 = _mm256_set1_ps(beta1);
  const __m256 vb2 = _mm256_set1_ps(beta2);
  const __m256 v1mb1 = _mm256_set1_ps(1.0f - beta1);
  const __m256 v1mb2 = _mm256_set1_ps(1.0f - beta2);
  const __m256 veps = _mm256_set1_ps(eps);
  const __m256 vlr = _mm256_set1_ps(lr);
  const __m256 vbc1 = _mm256_set1_ps(bc1);
  const __m256 vbc2 = _mm256_set1_ps(bc2);
  std::int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 gv = _mm256_loadu_ps(g + i);
    __m256 mv = _mm256_add_ps(_mm256_mul_ps(vb1, _mm256_loadu_ps(m + i)),
                              _mm256_mul_ps(v1mb1, gv));
    __m256 vv = _mm256_add_ps(_mm256_mul_ps(vb2, _mm256_loadu_ps(v + i)),
                              _mm256_mul_ps(v1mb2, _mm256_mul_ps(gv, gv)));
    _mm256_storeu_ps(m + i, mv);
    _mm256_storeu_ps(v + i, vv);
    const __m256 mhat = _mm256_div_ps(mv, vbc1);
    const __m256 vhat = _mm256_div_ps(vv, vbc2);
    const __m256 upd =
        _mm256_div_ps(_mm256_mul_ps(vlr, mhat), _mm256_add_ps(_mm256_sqrt_ps(vhat), veps));
    _mm256_storeu_ps(p + i, _mm256_sub_ps(_mm256_loadu_ps(p + i), upd));
  }
  for (; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0f - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0f - beta2) * (g[i] * g[i]);
    const float mhat = m[i] / bc1;
    const float vhat = v[i] / bc2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

// ---------------------------------------------------------------- double

void gemm_nn_f64(int m, int n, int k, const double* a, const double* b, double* c,
                 bool accumulate) {
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<std::int64_t>(i) * n;
    const double* arow = a + static_cast<std::int64_t>(i) * k;
    int j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256d acc0, acc1;
      if (accumulate) {
        acc0 = _mm256_loadu_pd(crow + j);
        acc1 = _mm256_loadu_pd(crow + j + 4);
      } else {
        acc0 = _mm256_setzero_pd();
        acc1 = _mm256_setzero_pd();
      }
      for (int p = 0; p < k; ++p) {
        const __m256d av = _mm256_set1_pd(arow[p]);
        const double* brow = b + static_cast<std::int64_t>(p) * n + j;
        acc0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(brow), acc0);
        acc1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(brow + 4), acc1);
      }
      _mm256_storeu_pd(crow + j, acc0);
      _mm256_storeu_pd(crow + j + 4, acc1);
    }
    for (; j < n; ++j) {
      double s = accumulate ? crow[j] : 0.0;
      for (int p = 0; p < k; ++p) s += arow[p] * b[static_cast<std::int64_t>(p) * n + j];
      crow[j] = s;
    }
  }
}

void gemm_tn_f64(int m, int n, int k, const double* a, const double* b, double* c,
                 bool accumulate) {
  for (int i = 0; i < m; ++i) {
    double* crow = c + static_cast<std::int64_t>(i) * n;
    int j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256d acc0, acc1;
      if (accumulate) {
        acc0 = _mm256_loadu_pd(crow + j);
        acc1 = _mm256_loadu_pd(crow + j + 4);
      } else {
        acc0 = _mm256_setzero_pd();
        acc1 = _mm256_setzero_pd();
      }
      for (int p = 0; p < k; ++p) {
        const __m256d av = _mm256_set1_pd(a[static_cast<std::int64_t>(p) * m + i]);
        const double* brow = b + static_cast<std::int64_t>(p) * n + j;
        acc0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(brow), acc0);
        acc1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(brow + 4), acc1);
      }
      _mm256_storeu_pd(crow + j, acc0);
      _mm256_storeu_pd(crow + j + 4, acc1);
    }
    for (; j < n; ++j) {
      double s = accumulate ? crow[j] : 0.0;
      for (int p = 0; p < k; ++p)
        s += a[static_cast<std::int64_t>(p) * m + i] * b[static_cast<std::int64_t>(p) * n + j];
      crow[j] = s;
    }
  }
}

void gemm_nt_f64(int m, int n, int k, const double* a, const double* b, double* c,
                 bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::int64_t>(i) * k;
    for (int j = 0; j < n; ++j) {
      const double* brow = b + static_cast<std::int64_t>(j) * k;
      __m256d acc = _mm256_setzero_pd();
      int p = 0;
      for (; p + 4 <= k; p += 4)
        acc = _mm256_fmadd_pd(_mm256_loadu_pd(arow + p), _mm256_loadu_pd(brow + p), acc);
      double s = hsum(acc);
      for (; p < k; ++p) s += arow[p] * brow[p];
      std::int64_t idx = static_cast<std::int64_t>(i) * n + j;
      c[idx] = accumulate ? c[idx] + s : s;
    }
  }
}

void add_f64(std::int64_t n, const double* a, const double* b, double* y) {
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) y[i] = a[i] + b[i];
}

void mul_f64(std::int64_t n, const double* a, const double* b, double* y) {
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) y[i] = a[i] * b[i];
}

void axpy_f64(std::int64_t n, double alpha, const double* x, double* y) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(y + i), prod));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void scale_f64(std::int64_t n, double alpha, const double* x, double* y) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
  for (; i < n; ++i) y[i] = alpha * x[i];
}

void add_scalar_f64(std::int64_t n, const double* x, double cst, double* y) {
  const __m256d vc = _mm256_set1_pd(cst);
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, _mm256_add_pd(_mm256_loadu_pd(x + i), vc));
  for (; i < n; ++i) y[i] = x[i] + cst;
}

void scale_shift_f64(std::int64_t n, double a, double b, const double* x, double* y) {
  const __m256d va = _mm256_set1_pd(a);
  const __m256d vb = _mm256_set1_pd(b);
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d prod = _mm256_mul_pd(va, _mm256_loadu_pd(x + i));
    _mm256_storeu_pd(y + i, _mm256_add_pd(prod, vb));
  }
  for (; i < n; ++i) y[i] = a * x[i] + b;
}

void relu_fwd_f64(std::int64_t n, const double* x, double* y) {
  const __m256d z = _mm256_setzero_pd();
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(y + i, _mm256_max_pd(_mm256_loadu_pd(x + i), z));
  for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_bwd_f64(std::int64_t n, const double* x, const double* g, double* gx) {
  const __m256d z = _mm256_setzero_pd();
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), z, _CMP_GT_OQ);
    __m256d gv = _mm256_and_pd(_mm256_loadu_pd(g + i), mask);
    _mm256_storeu_pd(gx + i, _mm256_add_pd(_mm256_loadu_pd(gx + i), gv));
  }
  for (; i < n; ++i) gx[i] += x[i] > 0.0 ? g[i] : 0.0;
}

double sum_f64(std::int64_t n, const double* x) {
  __m256d acc = _mm256_setzero_pd();
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(x + i));
  double s = hsum(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

double dot_f64(std::int64_t n, const double* a, const double* b) {
  __m256d acc = _mm256_setzero_pd();
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4)
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
  double s = hsum(acc);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void adam_step_f64(std::int64_t n, double* p, const double* g, double* m, double* v,
                   double beta1, double beta2, double eps, double lr, double bc1, double bc2) {
  const __m256d vb1 = _mm256_set1_pd(beta1);
  const __m256d vb2 = _mm256_set1_pd(beta2);
  const __m256d v1mb1 = _mm256_set1_pd(1.0 - beta1);
  const __m256d v1mb2 = _mm256_set1_pd(1.0 - beta2);
  const __m256d veps = _mm256_set1_pd(eps);
  const __m256d vlr = _mm256_set1_pd(lr);
  const __m256d vbc1 = _mm256_set1_pd(bc1);
  const __m256d vbc2 = _mm256_set1_pd(bc2);
  std::int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d gv = _mm256_loadu_pd(g + i);
    __m256d mv = _mm256_add_pd(_mm256_mul_pd(vb1, _mm256_loadu_pd(m + i)),
                               _mm256_mul_pd(v1mb1, gv));
    __m256d vv = _mm256_add_pd(_mm256_mul_pd(vb2, _mm256_loadu_pd(v + i)),
                               _mm256_mul_pd(v1mb2, _mm256_mul_pd(gv, gv)));
    _mm256_storeu_pd(m + i, mv);
    _mm256_storeu_pd(v + i, vv);
    const __m256d mhat = _mm256_div_pd(mv, vbc1);
    const __m256d vhat = _mm256_div_pd(vv, vbc2);
    const __m256d upd =
        _mm256_div_pd(_mm256_mul_pd(vlr, mhat), _mm256_add_pd(_mm256_sqrt_pd(vhat), veps));
    _mm256_storeu_pd(p + i, _mm256_sub_pd(_mm256_loadu_pd(p + i), upd));
  }
  for (; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i]);
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace

namespace detail {

void fill_avx2(Table<float>& t) {
  t.gemm_nn = gemm_nn_f32;
  t.gemm_nt = gemm_nt_f32;
  t.gemm_tn = gemm_tn_f32;
  t.add = add_f32;
  t.mul = mul_f32;
  t.axpy = axpy_f32;
  t.scale = scale_f32;
  t.add_scalar = add_scalar_f32;
  t.scale_shift = scale_shift_f32;
  t.relu_fwd = relu_fwd_f32;
  t.relu_bwd = relu_bwd_f32;
  t.sum = sum_f32;
  t.dot = dot_f32;
  t.adam_step = adam_step_f32;
  // sigmoid stays scalar: exp() has no exact vector counterpart
}

void fill_avx2(Table<double>& t) {
  t.gemm_nn = gemm_nn_f64;
  t.gemm_nt = gemm_nt_f64;
  t.gemm_tn = gemm_tn_f64;
  t.add = add_f64;
  t.mul = mul_f64;
  t.axpy = axpy_f64;
  t.scale = scale_f64;
  t.add_scalar = add_scalar_f64;
  t.scale_shift = scale_shift_f64;
  t.relu_fwd = relu_fwd_f64;
  t.relu_bwd = relu_bwd_f64;
  t.sum = sum_f64;
  t.dot = dot_f64;
  t.adam_step = adam_step_f64;
}

}  // namespace detail
}  // namespace mffu::kernels
