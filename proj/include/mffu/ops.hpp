// Copyright (c) 2026 mffunet contributors
// SPDX-License-Identifier: Apache-2.0
//
// Neural operators: forward math plus recorded backward passes.
// Convolutions lower to im2col + GEMM through the kernel dispatch table;
// convolution is cross-correlation (no kernel flip).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

#include "mffu/kernels.hpp"
#include "mffu/tape.hpp"
#include "mffu/tensor.hpp"

namespace mffu {

enum class Mode { Train, Eval };

namespace detail {

template <typename T>
Tape<T>* common_tape(std::initializer_list<const Tensor<T>*> ts) {
  Tape<T>* tp = nullptr;
  for (const Tensor<T>* t : ts) {
    if (!t->tracked()) continue;
    if (tp && tp != t->tape())
      throw std::invalid_argument("operands recorded on different tapes");
    tp = t->tape();
  }
  return tp;
}

inline Shape pad_left(const Shape& s, int rank) {
  Shape out(static_cast<size_t>(rank), 1);
  std::copy(s.begin(), s.end(), out.end() - static_cast<std::ptrdiff_t>(s.size()));
  return out;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const int r = std::max(a.size(), b.size());
  Shape pa = pad_left(a, r), pb = pad_left(b, r), out(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    if (pa[i] == pb[i]) out[i] = pa[i];
    else if (pa[i] == 1) out[i] = pb[i];
    else if (pb[i] == 1) out[i] = pa[i];
    else
      throw std::invalid_argument("shapes not broadcastable: " + shape_str(a) + " vs " +
                                  shape_str(b));
  }
  return out;
}

inline std::vector<std::int64_t> broadcast_strides(const Shape& s, const Shape& out) {
  const int r = static_cast<int>(out.size());
  Shape p = pad_left(s, r);
  std::vector<std::int64_t> st(static_cast<size_t>(r));
  std::int64_t acc = 1;
  for (int i = r - 1; i >= 0; --i) {
    st[i] = (p[i] == 1) ? 0 : acc;
    acc *= p[i];
  }
  return st;
}

// out[i] = f(a[ia], b[ib]) with broadcasting
template <typename T, typename F>
void broadcast_apply(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& out, F f) {
  const Shape& os = out.shape();
  const int r = out.rank();
  const auto sa = broadcast_strides(a.shape(), os);
  const auto sb = broadcast_strides(b.shape(), os);
  std::vector<int> idx(static_cast<size_t>(r), 0);
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  std::int64_t oa = 0, ob = 0;
  const std::int64_t n = out.size();
  for (std::int64_t i = 0; i < n; ++i) {
    po[i] = f(pa[oa], pb[ob]);
    for (int d = r - 1; d >= 0; --d) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < os[d]) break;
      idx[d] = 0;
      oa -= sa[d] * os[d];
      ob -= sb[d] * os[d];
    }
  }
}

// target += g summed over the axes g was broadcast along
template <typename T>
void reduce_into(const Tensor<T>& g, Tensor<T>& target) {
  if (g.shape() == target.shape()) {
    kernels::table<T>().axpy(g.size(), T(1), g.data(), target.data());
    return;
  }
  const Shape& os = g.shape();
  const int r = g.rank();
  const auto st = broadcast_strides(target.shape(), os);
  std::vector<int> idx(static_cast<size_t>(r), 0);
  const T* pg = g.data();
  T* pt = target.data();
  std::int64_t ot = 0;
  const std::int64_t n = g.size();
  for (std::int64_t i = 0; i < n; ++i) {
    pt[ot] += pg[i];
    for (int d = r - 1; d >= 0; --d) {
      ++idx[d];
      ot += st[d];
      if (idx[d] < os[d]) break;
      idx[d] = 0;
      ot -= st[d] * os[d];
    }
  }
}

// scratch: product of g (broadcast to `out` shape implicitly equal) and other
template <typename T>
Tensor<T> mul_broadcast(const Tensor<T>& g, const Tensor<T>& other) {
  Tensor<T> tmp(g.shape());
  broadcast_apply(g, other, tmp, [](T x, T y) { return x * y; });
  return tmp;
}

template <typename T>
void require_rank4(const Tensor<T>& x, const char* op) {
  if (x.rank() != 4)
    throw std::invalid_argument(std::string(op) + ": expected N x C x H x W, got " +
                                shape_str(x.shape()));
}

// col is [C*k*k, Hout*Wout]; zero padding
template <typename T>
void im2col(const T* x, int C, int H, int W, int k, int stride, int pad, int Hout, int Wout,
            T* col) {
  const std::int64_t P = static_cast<std::int64_t>(Hout) * Wout;
  std::int64_t row = 0;
  for (int c = 0; c < C; ++c) {
    const T* plane = x + static_cast<std::int64_t>(c) * H * W;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj, ++row) {
        T* dst = col + row * P;
        std::int64_t p = 0;
        for (int i = 0; i < Hout; ++i) {
          const int si = i * stride + ki - pad;
          if (si < 0 || si >= H) {
            for (int j = 0; j < Wout; ++j) dst[p++] = T(0);
            continue;
          }
          const T* srow = plane + static_cast<std::int64_t>(si) * W;
          for (int j = 0; j < Wout; ++j) {
            const int sj = j * stride + kj - pad;
            dst[p++] = (sj < 0 || sj >= W) ? T(0) : srow[sj];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int C, int H, int W, int k, int stride, int pad, int Hout,
                int Wout, T* x) {
  const std::int64_t P = static_cast<std::int64_t>(Hout) * Wout;
  std::int64_t row = 0;
  for (int c = 0; c < C; ++c) {
    T* plane = x + static_cast<std::int64_t>(c) * H * W;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj, ++row) {
        const T* src = col + row * P;
        std::int64_t p = 0;
        for (int i = 0; i < Hout; ++i) {
          const int si = i * stride + ki - pad;
          if (si < 0 || si >= H) {
            p += Wout;
            continue;
          }
          T* drow = plane + static_cast<std::int64_t>(si) * W;
          for (int j = 0; j < Wout; ++j) {
            const int sj = j * stride + kj - pad;
            if (sj >= 0 && sj < W) drow[sj] += src[p];
            ++p;
          }
        }
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape os = detail::broadcast_shape(a.shape(), b.shape());
  Tensor<T> out(os);
  if (a.shape() == b.shape())
    kernels::table<T>().add(a.size(), a.data(), b.data(), out.data());
  else
    detail::broadcast_apply(a, b, out, [](T x, T y) { return x + y; });

  Tape<T>* tp = detail::common_tape<T>({&a, &b});
  if (tp) {
    Tensor<T> as = a, bs = b;
    tp->record(out, {a.node(), b.node()}, [as, bs](Tape<T>& t, int self) {
      const Tensor<T>& g = t.grad_buffer(self);
      if (as.node() >= 0) detail::reduce_into(g, t.grad_buffer(as.node()));
      if (bs.node() >= 0) detail::reduce_into(g, t.grad_buffer(bs.node()));
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  const Shape os = detail::broadcast_shape(a.shape(), b.shape());
  Tensor<T> out(os);
  if (a.shape() == b.shape())
    kernels::table<T>().mul(a.size(), a.data(), b.data(), out.data());
  else
    detail::broadcast_apply(a, b, out, [](T x, T y) { return x * y; });

  Tape<T>* tp = detail::common_tape<T>({&a, &b});
  if (tp) {
    Tensor<T> as = a, bs = b;
    tp->record(out, {a.node(), b.node()}, [as, bs](Tape<T>& t, int self) {
      const Tensor<T>& g = t.grad_buffer(self);
      if (as.node() >= 0) {
        Tensor<T> tmp = detail::mul_broadcast(g, bs);
        detail::reduce_into(tmp, t.grad_buffer(as.node()));
      }
      if (bs.node() >= 0) {
        Tensor<T> tmp = detail::mul_broadcast(g, as);
        detail::reduce_into(tmp, t.grad_buffer(bs.node()));
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------- concat

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& ts, int axis) {
  if (ts.empty()) throw std::invalid_argument("concat: needs at least one tensor");
  const int r = ts[0].rank();
  if (axis < 0 || axis >= r) throw std::invalid_argument("concat: axis out of range");
  Shape os = ts[0].shape();
  os[static_cast<size_t>(axis)] = 0;
  for (const auto& t : ts) {
    if (t.rank() != r) throw std::invalid_argument("concat: rank mismatch");
    for (int d = 0; d < r; ++d) {
      if (d == axis) continue;
      if (t.dim(d) != ts[0].dim(d))
        throw std::invalid_argument("concat: extent mismatch off the concat axis: " +
                                    shape_str(t.shape()) + " vs " + shape_str(ts[0].shape()));
    }
    os[static_cast<size_t>(axis)] += t.dim(axis);
  }
  Tensor<T> out(os);

  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= os[static_cast<size_t>(d)];
  for (int d = axis + 1; d < r; ++d) inner *= os[static_cast<size_t>(d)];
  const std::int64_t ostep = static_cast<std::int64_t>(os[static_cast<size_t>(axis)]) * inner;

  std::int64_t off = 0;
  for (const auto& t : ts) {
    const std::int64_t tstep = static_cast<std::int64_t>(t.dim(axis)) * inner;
    for (std::int64_t o = 0; o < outer; ++o)
      std::memcpy(out.data() + o * ostep + off, t.data() + o * tstep,
                  sizeof(T) * static_cast<size_t>(tstep));
    off += tstep;
  }

  std::vector<const Tensor<T>*> ptrs;
  for (const auto& t : ts) ptrs.push_back(&t);
  Tape<T>* tp = nullptr;
  for (const auto& t : ts) {
    if (!t.tracked()) continue;
    if (tp && tp != t.tape()) throw std::invalid_argument("concat: tensors on different tapes");
    tp = t.tape();
  }
  if (tp) {
    std::vector<int> in_nodes;
    std::vector<std::int64_t> steps;
    for (const auto& t : ts) {
      in_nodes.push_back(t.node());
      steps.push_back(static_cast<std::int64_t>(t.dim(axis)) * inner);
    }
    std::vector<int> nodes_copy = in_nodes;
    tp->record(out, std::move(in_nodes),
               [nodes_copy, steps, outer, ostep](Tape<T>& t, int self) {
                 const Tensor<T>& g = t.grad_buffer(self);
                 std::int64_t off2 = 0;
                 for (size_t i = 0; i < nodes_copy.size(); ++i) {
                   if (nodes_copy[i] >= 0) {
                     Tensor<T>& gi = t.grad_buffer(nodes_copy[i]);
                     for (std::int64_t o = 0; o < outer; ++o) {
                       const T* src = g.data() + o * ostep + off2;
                       T* dst = gi.data() + o * steps[i];
                       for (std::int64_t j = 0; j < steps[i]; ++j) dst[j] += src[j];
                     }
                   }
                   off2 += steps[i];
                 }
               });
  }
  return out;
}

// ---------------------------------------------------------------- activations

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  kernels::table<T>().relu_fwd(x.size(), x.data(), out.data());
  if (x.tracked()) {
    Tensor<T> xs = x;
    x.tape()->record(out, {x.node()}, [xs](Tape<T>& t, int self) {
      const Tensor<T>& g = t.grad_buffer(self);
      Tensor<T>& gx = t.grad_buffer(xs.node());
      kernels::table<T>().relu_bwd(g.size(), xs.data(), g.data(), gx.data());
    });
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  kernels::table<T>().sigmoid_fwd(x.size(), x.data(), out.data());
  if (x.tracked()) {
    Tensor<T> xs = x, ys = out;
    x.tape()->record(out, {x.node()}, [xs, ys](Tape<T>& t, int self) {
      const Tensor<T>& g = t.grad_buffer(self);
      Tensor<T>& gx = t.grad_buffer(xs.node());
      const T* pg = g.data();
      const T* py = ys.data();
      T* pgx = gx.data();
      const std::int64_t n = g.size();
      for (std::int64_t i = 0; i < n; ++i) pgx[i] += pg[i] * py[i] * (T(1) - py[i]);
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  if (axis < 0 || axis >= x.rank()) throw std::invalid_argument("softmax: axis out of range");
  Tensor<T> out(x.shape());
  std::int64_t outer = 1, inner = 1;
  const int len = x.dim(axis);
  for (int d = 0; d < axis; ++d) outer *= x.dim(d);
  for (int d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);

  const T* px = x.data();
  T* po = out.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::int64_t base = o * len * inner + i;
      T mx = px[base];
      for (int c = 1; c < len; ++c) mx = std::max(mx, px[base + c * inner]);
      T s = T(0);
      for (int c = 0; c < len; ++c) {
        const T e = std::exp(px[base + c * inner] - mx);
        po[base + c * inner] = e;
        s += e;
      }
      const T invs = T(1) / s;
      for (int c = 0; c < len; ++c) po[base + c * inner] *= invs;
    }
  }

  if (x.tracked()) {
    Tensor<T> xs = x, ys = out;
    x.tape()->record(out, {x.node()}, [xs, ys, outer, inner, len](Tape<T>& t, int self) {
      const Tensor<T>& g = t.grad_buffer(self);
      Tensor<T>& gx = t.grad_buffer(xs.node());
      const T* pg = g.data();
      const T* py = ys.data();
      T* pgx = gx.data();
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t i = 0; i < inner; ++i) {
          const std::int64_t base = o * len * inner + i;
          T dotgy = T(0);
          for (int c = 0; c < len; ++c) dotgy += pg[base + c * inner] * py[base + c * inner];
          for (int c = 0; c < len; ++c) {
            const std::int64_t k = base + c * inner;
            pgx[k] += py[k] * (pg[k] - dotgy);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------- conv2d

namespace detail {

template <typename T>
Tensor<T> conv2d_impl(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, int stride,
                      int padding) {
  require_rank4(x, "conv2d");
  if (w.rank() != 4) throw std::invalid_argument("conv2d: weights must be Cout x Cin x k x k");
  const int N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != Cin)
    throw std::invalid_argument("conv2d: channel mismatch, input " + shape_str(x.shape()) +
                                " weights " + shape_str(w.shape()));
  if (w.dim(3) != k) throw std::invalid_argument("conv2d: kernel must be square");
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if ((H + 2 * padding - k) % stride != 0 || (W + 2 * padding - k) % stride != 0)
    throw std::invalid_argument("conv2d: non-integral output extent");
  const int Hout = (H + 2 * padding - k) / stride + 1;
  const int Wout = (W + 2 * padding - k) / stride + 1;
  if (Hout < 1 || Wout < 1) throw std::invalid_argument("conv2d: empty output");
  if (bias && (bias->rank() != 1 || bias->dim(0) != Cout))
    throw std::invalid_argument("conv2d: bias must have Cout entries");

  const int K = Cin * k * k;
  const std::int64_t P = static_cast<std::int64_t>(Hout) * Wout;
  Tensor<T> out({N, Cout, Hout, Wout});
  const auto& kt = kernels::table<T>();

  std::vector<T> col(static_cast<size_t>(K) * P);
  for (int n = 0; n < N; ++n) {
    const T* xn = x.data() + static_cast<std::int64_t>(n) * Cin * H * W;
    T* yn = out.data() + static_cast<std::int64_t>(n) * Cout * P;
    im2col(xn, Cin, H, W, k, stride, padding, Hout, Wout, col.data());
    kt.gemm_nn(Cout, static_cast<int>(P), K, w.data(), col.data(), yn, false);
    if (bias) {
      for (int co = 0; co < Cout; ++co)
        kt.add_scalar(P, yn + co * P, (*bias)[co], yn + co * P);
    }
  }

  Tape<T>* tp = bias ? common_tape<T>({&x, &w, bias}) : common_tape<T>({&x, &w});
  if (tp) {
    Tensor<T> xs = x, ws = w;
    Tensor<T> bsave = bias ? *bias : Tensor<T>();
    const int bnode = bias ? bias->node() : -1;
    tp->record(out, {x.node(), w.node(), bnode},
               [xs, ws, bnode, N, Cin, H, W, Cout, k, stride, padding, Hout, Wout, K,
                P](Tape<T>& t, int self) {
                 const Tensor<T>& g = t.grad_buffer(self);
                 const auto& kt2 = kernels::table<T>();
                 std::vector<T> col2(static_cast<size_t>(K) * P);
                 const bool need_x = xs.node() >= 0;
                 const bool need_w = ws.node() >= 0;
                 for (int n = 0; n < N; ++n) {
                   const T* gn = g.data() + static_cast<std::int64_t>(n) * Cout * P;
                   const T* xn = xs.data() + static_cast<std::int64_t>(n) * Cin * H * W;
                   if (need_w || need_x)
                     im2col(xn, Cin, H, W, k, stride, padding, Hout, Wout, col2.data());
                   if (need_w) {
                     Tensor<T>& gw = t.grad_buffer(ws.node());
                     kt2.gemm_nt(Cout, K, static_cast<int>(P), gn, col2.data(), gw.data(), true);
                   }
                   if (need_x) {
                     // reuse col2 as the dcol scratch
                     kt2.gemm_tn(K, static_cast<int>(P), Cout, ws.data(), gn, col2.data(), false);
                     Tensor<T>& gx = t.grad_buffer(xs.node());
                     T* gxn = gx.data() + static_cast<std::int64_t>(n) * Cin * H * W;
                     col2im_add(col2.data(), Cin, H, W, k, stride, padding, Hout, Wout, gxn);
                   }
                   if (bnode >= 0) {
                     Tensor<T>& gb = t.grad_buffer(bnode);
                     for (int co = 0; co < Cout; ++co) gb[co] += kt2.sum(P, gn + co * P);
                   }
                 }
               });
  }
  return out;
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride = 1,
                 int padding = 0) {
  return detail::conv2d_impl(x, w, &b, stride, padding);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride = 1, int padding = 0) {
  return detail::conv2d_impl<T>(x, w, nullptr, stride, padding);
}

// ---------------------------------------------------------------- conv_transpose2d

// Fixed 2x2 kernel, stride 2: the adjoint of a stride-2 2x2 conv2d. Each
// input pixel scatters kernel * value into its own 2x2 output tile.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::require_rank4(x, "conv_transpose2d");
  if (w.rank() != 4 || w.dim(2) != 2 || w.dim(3) != 2)
    throw std::invalid_argument("conv_transpose2d: weights must be Cin x Cout x 2 x 2");
  const int N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Cout = w.dim(1);
  if (w.dim(0) != Cin)
    throw std::invalid_argument("conv_transpose2d: channel mismatch, input " +
                                shape_str(x.shape()) + " weights " + shape_str(w.shape()));
  if (b.rank() != 1 || b.dim(0) != Cout)
    throw std::invalid_argument("conv_transpose2d: bias must have Cout entries");

  const std::int64_t P = static_cast<std::int64_t>(H) * W;
  const int rows = Cout * 4;
  Tensor<T> out({N, Cout, 2 * H, 2 * W});
  const auto& kt = kernels::table<T>();

  std::vector<T> ocol(static_cast<size_t>(rows) * P);
  for (int n = 0; n < N; ++n) {
    const T* xn = x.data() + static_cast<std::int64_t>(n) * Cin * P;
    // w viewed as [Cin, Cout*4]: ocol = w^T * x
    kt.gemm_tn(rows, static_cast<int>(P), Cin, w.data(), xn, ocol.data(), false);
    T* on = out.data() + static_cast<std::int64_t>(n) * Cout * 4 * P;
    for (int co = 0; co < Cout; ++co) {
      const T bias = b[co];
      for (int u = 0; u < 2; ++u) {
        for (int v = 0; v < 2; ++v) {
          const T* src = ocol.data() + (static_cast<std::int64_t>(co) * 4 + u * 2 + v) * P;
          T* plane = on + static_cast<std::int64_t>(co) * 4 * P;
          for (int i = 0; i < H; ++i) {
            T* drow = plane + (static_cast<std::int64_t>(2 * i + u)) * 2 * W + v;
            const T* srow = src + static_cast<std::int64_t>(i) * W;
            for (int j = 0; j < W; ++j) drow[2 * j] = srow[j] + bias;
          }
        }
      }
    }
  }

  Tape<T>* tp = detail::common_tape<T>({&x, &w, &b});
  if (tp) {
    Tensor<T> xs = x, ws = w;
    const int bnode = b.node();
    tp->record(out, {x.node(), w.node(), bnode},
               [xs, ws, bnode, N, Cin, Cout, H, W, P, rows](Tape<T>& t, int self) {
                 const Tensor<T>& g = t.grad_buffer(self);
                 const auto& kt2 = kernels::table<T>();
                 std::vector<T> dcol(static_cast<size_t>(rows) * P);
                 for (int n = 0; n < N; ++n) {
                   const T* gn = g.data() + static_cast<std::int64_t>(n) * Cout * 4 * P;
                   // gather the 2x2 tiles back into [Cout*4, H*W]
                   for (int co = 0; co < Cout; ++co) {
                     for (int u = 0; u < 2; ++u) {
                       for (int v = 0; v < 2; ++v) {
                         T* dst = dcol.data() + (static_cast<std::int64_t>(co) * 4 + u * 2 + v) * P;
                         const T* plane = gn + static_cast<std::int64_t>(co) * 4 * P;
                         for (int i = 0; i < H; ++i) {
                           const T* srow = plane + (static_cast<std::int64_t>(2 * i + u)) * 2 * W + v;
                           T* drow = dst + static_cast<std::int64_t>(i) * W;
                           for (int j = 0; j < W; ++j) drow[j] = srow[2 * j];
                         }
                       }
                     }
                   }
                   if (xs.node() >= 0) {
                     Tensor<T>& gx = t.grad_buffer(xs.node());
                     T* gxn = gx.data() + static_cast<std::int64_t>(n) * Cin * P;
                     kt2.gemm_nn(Cin, static_cast<int>(P), rows, ws.data(), dcol.data(), gxn, true);
                   }
                   if (ws.node() >= 0) {
                     Tensor<T>& gw = t.grad_buffer(ws.node());
                     const T* xn = xs.data() + static_cast<std::int64_t>(n) * Cin * P;
                     kt2.gemm_nt(Cin, rows, static_cast<int>(P), xn, dcol.data(), gw.data(), true);
                   }
                   if (bnode >= 0) {
                     Tensor<T>& gb = t.grad_buffer(bnode);
                     for (int co = 0; co < Cout; ++co)
                       gb[co] += kt2.sum(4 * P, gn + static_cast<std::int64_t>(co) * 4 * P);
                   }
                 }
               });
  }
  return out;
}

// ---------------------------------------------------------------- pooling

// 2x2 window, stride 2. Ties route the gradient to the first element in
// row-major scan order.
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x) {
  detail::require_rank4(x, "max_pool2d");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 != 0 || W % 2 != 0)
    throw std::invalid_argument("max_pool2d: spatial extents must be even, got " +
                                shape_str(x.shape()));
  const int Ho = H / 2, Wo = W / 2;
  Tensor<T> out({N, C, Ho, Wo});
  std::vector<std::int64_t> argmax(static_cast<size_t>(out.size()));

  const T* px = x.data();
  T* po = out.data();
  std::int64_t oi = 0;
  for (int nc = 0; nc < N * C; ++nc) {
    const T* plane = px + static_cast<std::int64_t>(nc) * H * W;
    const std::int64_t pbase = static_cast<std::int64_t>(nc) * H * W;
    for (int i = 0; i < Ho; ++i) {
      for (int j = 0; j < Wo; ++j, ++oi) {
        const std::int64_t k00 = static_cast<std::int64_t>(2 * i) * W + 2 * j;
        std::int64_t best = k00;
        T bv = plane[k00];
        const std::int64_t cands[3] = {k00 + 1, k00 + W, k00 + W + 1};
        for (std::int64_t k : cands) {
          if (plane[k] > bv) {
            bv = plane[k];
            best = k;
          }
        }
        po[oi] = bv;
        argmax[static_cast<size_t>(oi)] = pbase + best;
      }
    }
  }

  if (x.tracked()) {
    Tensor<T> xs = x;
    x.tape()->record(out, {x.node()}, [xs, argmax = std::move(argmax)](Tape<T>& t, int self) {
      const Tensor<T>& g = t.grad_buffer(self);
      Tensor<T>& gx = t.grad_buffer(xs.node());
      const std::int64_t n = g.size();
      for (std::int64_t i = 0; i < n; ++i) gx[argmax[static_cast<size_t>(i)]] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  detail::require_rank4(x, "global_avg_pool");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t P = static_cast<std::int64_t>(H) * W;
  Tensor<T> out({N, C, 1, 1});
  const auto& kt = kernels::table<T>();
  for (int nc = 0; nc < N * C; ++nc)
    out[nc] = kt.sum(P, x.data() + static_cast<std::int64_t>(nc) * P) / static_cast<T>(P);

  if (x.tracked()) {
    Tensor<T> xs = x;
    x.tape()->record(out, {x.node()}, [xs, N, C, P](Tape<T>& t, int self) {
      const Tensor<T>& g = t.grad_buffer(self);
      Tensor<T>& gx = t.grad_buffer(xs.node());
      for (int nc = 0; nc < N * C; ++nc) {
        const T v = g[nc] / static_cast<T>(P);
        T* dst = gx.data() + static_cast<std::int64_t>(nc) * P;
        for (std::int64_t i = 0; i < P; ++i) dst[i] += v;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------- batch norm

// Train mode normalizes with batch statistics over N x H x W per channel and
// updates the running buffers in place: new = (1 - momentum) * old +
// momentum * batch. Eval mode uses the running buffers.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, Mode mode,
                     double momentum = 0.1, double eps = 1e-5) {
  detail::require_rank4(x, "batch_norm");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (gamma.size() != C || beta.size() != C || running_mean.size() != C ||
      running_var.size() != C)
    throw std::invalid_argument("batch_norm: per-channel parameter size mismatch");
  const std::int64_t P = static_cast<std::int64_t>(H) * W;
  const std::int64_t m = static_cast<std::int64_t>(N) * P;
  Tensor<T> out(x.shape());
  const auto& kt = kernels::table<T>();

  std::vector<T> mean(static_cast<size_t>(C)), inv_std(static_cast<size_t>(C));
  if (mode == Mode::Train) {
    for (int c = 0; c < C; ++c) {
      double s = 0.0;
      for (int n = 0; n < N; ++n)
        s += static_cast<double>(
            kt.sum(P, x.data() + (static_cast<std::int64_t>(n) * C + c) * P));
      const double mu = s / static_cast<double>(m);
      double sq = 0.0;
      for (int n = 0; n < N; ++n) {
        const T* plane = x.data() + (static_cast<std::int64_t>(n) * C + c) * P;
        for (std::int64_t i = 0; i < P; ++i) {
          const double d = static_cast<double>(plane[i]) - mu;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(m);
      mean[static_cast<size_t>(c)] = static_cast<T>(mu);
      inv_std[static_cast<size_t>(c)] = static_cast<T>(1.0 / std::sqrt(var + eps));
      running_mean[c] =
          static_cast<T>((1.0 - momentum) * static_cast<double>(running_mean[c]) + momentum * mu);
      running_var[c] =
          static_cast<T>((1.0 - momentum) * static_cast<double>(running_var[c]) + momentum * var);
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[static_cast<size_t>(c)] = running_mean[c];
      inv_std[static_cast<size_t>(c)] =
          static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[c]) + eps));
    }
  }

  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const T a = gamma[c] * inv_std[static_cast<size_t>(c)];
      const T b = beta[c] - a * mean[static_cast<size_t>(c)];
      const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * P;
      kt.scale_shift(P, a, b, x.data() + off, out.data() + off);
    }
  }

  Tape<T>* tp = detail::common_tape<T>({&x, &gamma, &beta});
  if (tp) {
    Tensor<T> xs = x, gs = gamma;
    const int gnode = gamma.node(), bnode = beta.node();
    const bool train = mode == Mode::Train;
    tp->record(out, {x.node(), gnode, bnode},
               [xs, gs, gnode, bnode, mean, inv_std, N, C, P, m, train](Tape<T>& t, int self) {
                 const Tensor<T>& g = t.grad_buffer(self);
                 for (int c = 0; c < C; ++c) {
                   const T mu = mean[static_cast<size_t>(c)];
                   const T istd = inv_std[static_cast<size_t>(c)];
                   // per-channel reductions over N x H x W
                   double sum_g = 0.0, sum_gx = 0.0;
                   for (int n = 0; n < N; ++n) {
                     const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * P;
                     const T* pg = g.data() + off;
                     const T* px = xs.data() + off;
                     for (std::int64_t i = 0; i < P; ++i) {
                       sum_g += static_cast<double>(pg[i]);
                       sum_gx += static_cast<double>(pg[i]) *
                                 (static_cast<double>(px[i]) - static_cast<double>(mu)) *
                                 static_cast<double>(istd);
                     }
                   }
                   if (bnode >= 0) t.grad_buffer(bnode)[c] += static_cast<T>(sum_g);
                   if (gnode >= 0) t.grad_buffer(gnode)[c] += static_cast<T>(sum_gx);
                   if (xs.node() >= 0) {
                     Tensor<T>& gx = t.grad_buffer(xs.node());
                     const T a = gs[c] * istd;
                     if (train) {
                       const T mg = static_cast<T>(sum_g / static_cast<double>(m));
                       const T mgx = static_cast<T>(sum_gx / static_cast<double>(m));
                       for (int n = 0; n < N; ++n) {
                         const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * P;
                         const T* pg = g.data() + off;
                         const T* px = xs.data() + off;
                         T* pgx = gx.data() + off;
                         for (std::int64_t i = 0; i < P; ++i) {
                           const T xhat = (px[i] - mu) * istd;
                           pgx[i] += a * (pg[i] - mg - xhat * mgx);
                         }
                       }
                     } else {
                       for (int n = 0; n < N; ++n) {
                         const std::int64_t off = (static_cast<std::int64_t>(n) * C + c) * P;
                         kernels::table<T>().axpy(P, a, g.data() + off, gx.data() + off);
                       }
                     }
                   }
                 }
               });
  }
  return out;
}

// ---------------------------------------------------------------- conv1d over channels

// 1-D cross-correlation along the channel axis of an N x C x 1 x 1 descriptor,
// zero padding 1, one length-3 filter shared across the batch.
template <typename T>
Tensor<T> conv1d_channels(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::require_rank4(x, "conv1d_channels");
  if (x.dim(2) != 1 || x.dim(3) != 1)
    throw std::invalid_argument("conv1d_channels: expected N x C x 1 x 1 descriptor");
  if (w.size() != 3) throw std::invalid_argument("conv1d_channels: kernel must have length 3");
  if (b.size() != 1) throw std::invalid_argument("conv1d_channels: bias must be scalar");
  const int N = x.dim(0), C = x.dim(1);
  Tensor<T> out(x.shape());
  for (int n = 0; n < N; ++n) {
    const T* xn = x.data() + static_cast<std::int64_t>(n) * C;
    T* yn = out.data() + static_cast<std::int64_t>(n) * C;
    for (int c = 0; c < C; ++c) {
      T s = b[0];
      for (int j = 0; j < 3; ++j) {
        const int src = c + j - 1;
        if (src >= 0 && src < C) s += w[j] * xn[src];
      }
      yn[c] = s;
    }
  }

  Tape<T>* tp = detail::common_tape<T>({&x, &w, &b});
  if (tp) {
    Tensor<T> xs = x, ws = w;
    const int bnode = b.node();
    tp->record(out, {x.node(), w.node(), bnode}, [xs, ws, bnode, N, C](Tape<T>& t, int self) {
      const Tensor<T>& g = t.grad_buffer(self);
      for (int n = 0; n < N; ++n) {
        const T* gn = g.data() + static_cast<std::int64_t>(n) * C;
        const T* xn = xs.data() + static_cast<std::int64_t>(n) * C;
        for (int c = 0; c < C; ++c) {
          if (bnode >= 0) t.grad_buffer(bnode)[0] += gn[c];
          for (int j = 0; j < 3; ++j) {
            const int src = c + j - 1;
            if (src < 0 || src >= C) continue;
            if (ws.node() >= 0) t.grad_buffer(ws.node())[j] += gn[c] * xn[src];
            if (xs.node() >= 0)
              t.grad_buffer(xs.node())[static_cast<std::int64_t>(n) * C + src] += gn[c] * ws[j];
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------- reductions

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  Tensor<T> out({1});
  out[0] = kernels::table<T>().sum(x.size(), x.data());
  if (x.tracked()) {
    Tensor<T> xs = x;
    x.tape()->record(out, {x.node()}, [xs](Tape<T>& t, int self) {
      const T g = t.grad_buffer(self)[0];
      Tensor<T>& gx = t.grad_buffer(xs.node());
      T* p = gx.data();
      const std::int64_t n = gx.size();
      for (std::int64_t i = 0; i < n; ++i) p[i] += g;
    });
  }
  return out;
}

}  // namespace mffu
