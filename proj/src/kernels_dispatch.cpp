// Copyright (c) 2026 mffunet contributors
// SPDX-License-Identifier: Apache-2.0

#include "mffu/kernels.hpp"

#include <cstdlib>
#include <stdexcept>
#include <string>

namespace mffu::kernels {
namespace {

bool detect_avx2() {
#if MFFU_HAVE_AVX2
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend initial_backend() {
  if (const char* env = std::getenv("MFFU_KERNELS")) {
    const std::string v(env);
    if (v == "scalar") return Backend::Scalar;
    if (v == "avx2" && detect_avx2()) return Backend::Avx2;
    if (v == "avx2") throw std::runtime_error("MFFU_KERNELS=avx2 but CPU lacks AVX2+FMA");
  }
  return detect_avx2() ? Backend::Avx2 : Backend::Scalar;
}

struct State {
  Backend backend;
  Table<float> f32;
  Table<double> f64;

  State() : backend(initial_backend()) { rebuild(); }

  void rebuild() {
    f32 = detail::make_scalar_table<float>();
    f64 = detail::make_scalar_table<double>();
#if MFFU_HAVE_AVX2
    if (backend == Backend::Avx2) {
      detail::fill_avx2(f32);
      detail::fill_avx2(f64);
    }
#endif
  }
};

State& state() {
  static State s;
  return s;
}

}  // namespace

bool avx2_available() { return detect_avx2(); }

Backend active_backend() { return state().backend; }

void force_backend(Backend b) {
  if (b == Backend::Avx2 && !detect_avx2())
    throw std::invalid_argument("AVX2 backend not available on this CPU");
  state().backend = b;
  state().rebuild();
}

std::string backend_name(Backend b) {
  return b == Backend::Avx2 ? "avx2" : "scalar";
}

template <>
const Table<float>& table<float>() {
  return state().f32;
}

template <>
const Table<double>& table<double>() {
  return state().f64;
}

}  // namespace mffu::kernels
