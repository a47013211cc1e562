// Copyright (c) 2026 The acwm-lab Authors
// SPDX-License-Identifier: Apache-2.0

// Differentiable op set used by the world model. Every op returns a new
// Tensor whose backward closure accumulates into its inputs' gradients.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "acwm/core/error.hpp"
#include "acwm/core/gemm.hpp"
#include "acwm/core/rope.hpp"
#include "acwm/core/tensor.hpp"

namespace acwm {

namespace detail {

struct BroadcastPlan {
  Shape out;
  std::vector<std::int64_t> stride_a;
  std::vector<std::int64_t> stride_b;
};

inline std::vector<std::int64_t> row_major_strides(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// Right-aligned numpy-style broadcasting.
inline BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  BroadcastPlan p;
  p.out.assign(r, 1);
  p.stride_a.assign(r, 0);
  p.stride_b.assign(r, 0);
  const auto sa = row_major_strides(a);
  const auto sb = row_major_strides(b);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t oa = r - a.size();
    const std::size_t ob = r - b.size();
    const std::int64_t ea = i >= oa ? a[i - oa] : 1;
    const std::int64_t eb = i >= ob ? b[i - ob] : 1;
    if (ea != eb && ea != 1 && eb != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b) +
                       " (axis " + std::to_string(i) + ": " + std::to_string(ea) + " vs " + std::to_string(eb) +
                       ")");
    }
    p.out[i] = std::max(ea, eb);
    if (i >= oa && ea != 1) p.stride_a[i] = sa[i - oa];
    if (i >= ob && eb != 1) p.stride_b[i] = sb[i - ob];
  }
  return p;
}

// Calls fn(out_index, a_index, b_index) for every output element.
template <class Fn>
void for_each_broadcast(const BroadcastPlan& p, Fn&& fn) {
  const std::size_t r = p.out.size();
  const std::int64_t total = numel(p.out);
  if (r == 0) {
    fn(0, 0, 0);
    return;
  }
  const std::int64_t inner = p.out[r - 1];
  const std::int64_t ia = p.stride_a[r - 1];
  const std::int64_t ib = p.stride_b[r - 1];
  std::vector<std::int64_t> idx(r, 0);
  std::int64_t off_a = 0, off_b = 0;
  for (std::int64_t o = 0; o < total; o += inner) {
    for (std::int64_t j = 0; j < inner; ++j) fn(o + j, off_a + j * ia, off_b + j * ib);
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      off_a += p.stride_a[d];
      off_b += p.stride_b[d];
      if (idx[d] < p.out[d]) break;
      off_a -= p.stride_a[d] * p.out[d];
      off_b -= p.stride_b[d] * p.out[d];
      idx[d] = 0;
    }
  }
}

template <class T>
void check_finite(std::span<const T> v, const char* op) {
  for (const T x : v) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite value");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class T, class Fwd, class GradA, class GradB>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* name, Fwd fwd, GradA ga, GradB gb) {
  const bool same = a.shape() == b.shape();
  if (same) {
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
    return make_result<T>(a.shape(), std::move(out), {a.node(), b.node()}, [ga, gb](Node<T>& self) {
      auto& A = *self.inputs[0];
      auto& B = *self.inputs[1];
      if (A.requires_grad) {
        auto& g = A.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += ga(self.grad[i], A.value[i], B.value[i]);
      }
      if (B.requires_grad) {
        auto& g = B.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += gb(self.grad[i], A.value[i], B.value[i]);
      }
    });
  }
  auto plan = detail::plan_broadcast(a.shape(), b.shape(), name);
  std::vector<T> out(static_cast<std::size_t>(numel(plan.out)));
  const auto av = a.values();
  const auto bv = b.values();
  detail::for_each_broadcast(plan, [&](std::int64_t o, std::int64_t i, std::int64_t j) { out[o] = fwd(av[i], bv[j]); });
  Shape out_shape = plan.out;
  return make_result<T>(std::move(out_shape), std::move(out), {a.node(), b.node()},
                        [plan = std::move(plan), ga, gb](Node<T>& self) {
                          auto& A = *self.inputs[0];
                          auto& B = *self.inputs[1];
                          if (A.requires_grad) {
                            auto& g = A.ensure_grad();
                            detail::for_each_broadcast(plan, [&](std::int64_t o, std::int64_t i, std::int64_t j) {
                              g[i] += ga(self.grad[o], A.value[i], B.value[j]);
                            });
                          }
                          if (B.requires_grad) {
                            auto& g = B.ensure_grad();
                            detail::for_each_broadcast(plan, [&](std::int64_t o, std::int64_t i, std::int64_t j) {
                              g[j] += gb(self.grad[o], A.value[i], B.value[j]);
                            });
                          }
                        });
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      a, b, "add", [](T x, T y) { return x + y; }, [](T g, T, T) { return g; }, [](T g, T, T) { return g; });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T g, T, T) { return g; }, [](T g, T, T) { return -g; });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op<T>(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T g, T, T y) { return g * y; },
      [](T g, T x, T) { return g * x; });
}

template <class T, class Fwd, class Deriv>
Tensor<T> unary_op(const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  const auto xv = x.values();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  return make_result<T>(x.shape(), std::move(out), {x.node()}, [deriv](Node<T>& self) {
    auto& X = *self.inputs[0];
    auto& g = X.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv(X.value[i], self.value[i]);
  });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return unary_op<T>(x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  return unary_op<T>(x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> square(const Tensor<T>& x) {
  return unary_op<T>(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

/// x * sigmoid(x); derivative s(x) * (1 + x * (1 - s(x))).
template <class T>
Tensor<T> silu(const Tensor<T>& x) {
  return unary_op<T>(
      x, [](T v) { return v / (T(1) + std::exp(-v)); },
      [](T v, T) {
        const T s = T(1) / (T(1) + std::exp(-v));
        return s * (T(1) + v * (T(1) - s));
      });
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " has " + std::to_string(x.numel()) +
                     " elements, target " + shape_str(shape) + " has " + std::to_string(numel(shape)));
  }
  std::vector<T> out(x.values().begin(), x.values().end());
  return make_result<T>(std::move(shape), std::move(out), {x.node()}, [](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

/// Swaps axes 1 and 2 of a rank-4 tensor: (A, B, C, D) -> (A, C, B, D).
template <class T>
Tensor<T> transpose12(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("transpose12 expects rank 4, got " + shape_str(x.shape()));
  const auto A = x.dim(0), B = x.dim(1), C = x.dim(2), D = x.dim(3);
  const auto xv = x.values();
  std::vector<T> out(xv.size());
  for (std::int64_t a = 0; a < A; ++a)
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t c = 0; c < C; ++c)
        std::copy_n(xv.data() + ((a * B + b) * C + c) * D, D, out.data() + ((a * C + c) * B + b) * D);
  return make_result<T>({A, C, B, D}, std::move(out), {x.node()}, [A, B, C, D](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::int64_t a = 0; a < A; ++a)
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c) {
          const T* src = self.grad.data() + ((a * C + c) * B + b) * D;
          T* dst = g.data() + ((a * B + b) * C + c) * D;
          for (std::int64_t d = 0; d < D; ++d) dst[d] += src[d];
        }
  });
}

/// out[i] = x[index[i]]; used for patchify/unpatchify permutations.
template <class T>
Tensor<T> gather(const Tensor<T>& x, std::vector<std::int64_t> index, Shape shape) {
  if (numel(shape) != static_cast<std::int64_t>(index.size())) throw ShapeError("gather: index/shape mismatch");
  const auto xv = x.values();
  std::vector<T> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= x.numel()) throw ShapeError("gather: index out of range");
    out[i] = xv[static_cast<std::size_t>(index[i])];
  }
  return make_result<T>(std::move(shape), std::move(out), {x.node()}, [index = std::move(index)](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < index.size(); ++i) g[static_cast<std::size_t>(index[i])] += self.grad[i];
  });
}

/// Columns [start, start+len) of the last axis.
template <class T>
Tensor<T> slice_last(const Tensor<T>& x, std::int64_t start, std::int64_t len) {
  const std::int64_t D = x.shape().back();
  if (start < 0 || len < 0 || start + len > D) {
    throw ShapeError("slice_last: [" + std::to_string(start) + ", " + std::to_string(start + len) +
                     ") outside last axis of " + shape_str(x.shape()));
  }
  const std::int64_t rows = x.numel() / D;
  Shape shape = x.shape();
  shape.back() = len;
  const auto xv = x.values();
  std::vector<T> out(static_cast<std::size_t>(rows * len));
  for (std::int64_t r = 0; r < rows; ++r) std::copy_n(xv.data() + r * D + start, len, out.data() + r * len);
  return make_result<T>(std::move(shape), std::move(out), {x.node()}, [rows, D, start, len](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t j = 0; j < len; ++j) g[r * D + start + j] += self.grad[r * len + j];
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = T(0);
  for (const T v : x.values()) s += v;
  return make_result<T>({}, {s}, {x.node()}, [](Node<T>& self) {
    auto& g = self.inputs[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

// ---------------------------------------------------------------------------
// Dense layers

/// y = x W + b over the last axis; W is (in, out), b is (out) or undefined.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& W, const Tensor<T>& b = {}) {
  if (W.rank() != 2) throw ShapeError("linear: weight must be rank 2, got " + shape_str(W.shape()));
  const std::int64_t in = W.dim(0), out = W.dim(1);
  if (x.rank() == 0 || x.shape().back() != in) {
    throw ShapeError("linear: input last axis of " + shape_str(x.shape()) + " does not match weight " +
                     shape_str(W.shape()));
  }
  const bool has_bias = b.defined();
  if (has_bias && (b.rank() != 1 || b.dim(0) != out)) throw ShapeError("linear: bias shape " + shape_str(b.shape()));
  const std::int64_t rows = x.numel() / in;
  std::vector<T> y(static_cast<std::size_t>(rows * out), T(0));
  if (has_bias)
    for (std::int64_t r = 0; r < rows; ++r) std::copy_n(b.values().data(), out, y.data() + r * out);
  const int m = static_cast<int>(rows), k = static_cast<int>(in), n = static_cast<int>(out);
  if (rows > 0) blas::gemm(false, false, m, n, k, T(1), x.values().data(), k, W.values().data(), n, T(1), y.data(), n);
  Shape shape = x.shape();
  shape.back() = out;
  std::vector<std::shared_ptr<Node<T>>> inputs{x.node(), W.node()};
  if (has_bias) inputs.push_back(b.node());
  return make_result<T>(std::move(shape), std::move(y), std::move(inputs), [m, k, n](Node<T>& self) {
    auto& X = *self.inputs[0];
    auto& Wn = *self.inputs[1];
    const T* gy = self.grad.data();
    if (m == 0) return;
    // dX = dY W^T, dW = X^T dY, db = column sums of dY.
    if (X.requires_grad) blas::gemm(false, true, m, k, n, T(1), gy, n, Wn.value.data(), n, T(1), X.ensure_grad().data(), k);
    if (Wn.requires_grad) blas::gemm(true, false, k, n, m, T(1), X.value.data(), k, gy, n, T(1), Wn.ensure_grad().data(), n);
    if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
      auto& gb = self.inputs[2]->ensure_grad();
      for (int r = 0; r < m; ++r)
        for (int j = 0; j < n; ++j) gb[j] += gy[static_cast<std::size_t>(r) * n + j];
    }
  });
}

inline constexpr double kLayerNormEps = 1e-5;

/// Normalizes over the last axis to zero mean, unit variance (no affine).
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, double eps = kLayerNormEps) {
  if (x.rank() == 0) throw ShapeError("layer_norm on a scalar");
  const std::int64_t D = x.shape().back();
  const std::int64_t rows = x.numel() / D;
  const auto xv = x.values();
  std::vector<T> y(xv.size());
  std::vector<T> inv_std(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * D;
    T mu = 0;
    for (std::int64_t j = 0; j < D; ++j) mu += xr[j];
    mu /= static_cast<T>(D);
    T var = 0;
    for (std::int64_t j = 0; j < D; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(D);
    const T is = T(1) / std::sqrt(var + static_cast<T>(eps));
    inv_std[static_cast<std::size_t>(r)] = is;
    for (std::int64_t j = 0; j < D; ++j) y[r * D + j] = (xr[j] - mu) * is;
  }
  return make_result<T>(x.shape(), std::move(y), {x.node()},
                        [rows, D, inv_std = std::move(inv_std)](Node<T>& self) {
                          auto& g = self.inputs[0]->ensure_grad();
                          for (std::int64_t r = 0; r < rows; ++r) {
                            const T* gy = self.grad.data() + r * D;
                            const T* yr = self.value.data() + r * D;
                            T mg = 0, mgy = 0;
                            for (std::int64_t j = 0; j < D; ++j) {
                              mg += gy[j];
                              mgy += gy[j] * yr[j];
                            }
                            mg /= static_cast<T>(D);
                            mgy /= static_cast<T>(D);
                            const T is = inv_std[static_cast<std::size_t>(r)];
                            for (std::int64_t j = 0; j < D; ++j) g[r * D + j] += is * (gy[j] - mg - yr[j] * mgy);
                          }
                        });
}

/// LN(x) * (1 + gamma) + beta. gamma and beta broadcast against x and must
/// end in x's last-axis extent.
template <class T>
Tensor<T> layer_norm_modulated(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                               double eps = kLayerNormEps) {
  const std::int64_t D = x.rank() ? x.shape().back() : 0;
  for (const Tensor<T>* p : {&gamma, &beta}) {
    if (p->rank() == 0 || p->shape().back() != D) {
      throw ShapeError("layer_norm_modulated: last axis of x " + shape_str(x.shape()) + " is " +
                       std::to_string(D) + " but modulation has shape " + shape_str(p->shape()));
    }
  }
  return add(mul(layer_norm(x, eps), add_scalar(gamma, T(1))), beta);
}

// ---------------------------------------------------------------------------
// Temporal convolution

inline std::int64_t conv1d_output_length(std::int64_t length, std::int64_t kernel, std::int64_t stride,
                                         std::int64_t padding) {
  if (length < 1 || stride < 1 || length + 2 * padding < kernel) return 0;
  return (length + 2 * padding - kernel) / stride + 1;
}

/// x (B, L, Cin), W (Cout, Cin, K), b (Cout) -> (B, Lout, Cout).
template <class T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& W, const Tensor<T>& b, std::int64_t stride,
                 std::int64_t padding) {
  if (x.rank() != 3 || W.rank() != 3) {
    throw ShapeError("conv1d: expected x (B, L, Cin) and W (Cout, Cin, K), got " + shape_str(x.shape()) + " and " +
                     shape_str(W.shape()));
  }
  const std::int64_t B = x.dim(0), L = x.dim(1), Cin = x.dim(2);
  const std::int64_t Cout = W.dim(0), K = W.dim(2);
  if (W.dim(1) != Cin) throw ShapeError("conv1d: weight in-channels " + std::to_string(W.dim(1)) + " != " +
                                        std::to_string(Cin));
  if (b.defined() && (b.rank() != 1 || b.dim(0) != Cout)) throw ShapeError("conv1d: bias shape mismatch");
  const std::int64_t Lo = conv1d_output_length(L, K, stride, padding);
  if (Lo < 1) throw ShapeError("conv1d: input length " + std::to_string(L) + " too short");
  const T* xv = x.values().data();
  const T* wv = W.values().data();
  std::vector<T> y(static_cast<std::size_t>(B * Lo * Cout), T(0));
  for (std::int64_t n = 0; n < B; ++n)
    for (std::int64_t o = 0; o < Lo; ++o) {
      T* yo = y.data() + (n * Lo + o) * Cout;
      for (std::int64_t c = 0; c < Cout; ++c) {
        T acc = b.defined() ? b.values()[static_cast<std::size_t>(c)] : T(0);
        for (std::int64_t k = 0; k < K; ++k) {
          const std::int64_t t = o * stride - padding + k;
          if (t < 0 || t >= L) continue;
          const T* xt = xv + (n * L + t) * Cin;
          for (std::int64_t i = 0; i < Cin; ++i) acc += wv[(c * Cin + i) * K + k] * xt[i];
        }
        yo[c] = acc;
      }
    }
  std::vector<std::shared_ptr<Node<T>>> inputs{x.node(), W.node()};
  if (b.defined()) inputs.push_back(b.node());
  return make_result<T>({B, Lo, Cout}, std::move(y), std::move(inputs),
                        [B, L, Cin, Cout, K, Lo, stride, padding](Node<T>& self) {
                          auto& X = *self.inputs[0];
                          auto& Wn = *self.inputs[1];
                          std::vector<T>* gx = X.requires_grad ? &X.ensure_grad() : nullptr;
                          std::vector<T>* gw = Wn.requires_grad ? &Wn.ensure_grad() : nullptr;
                          std::vector<T>* gb = (self.inputs.size() > 2 && self.inputs[2]->requires_grad)
                                                   ? &self.inputs[2]->ensure_grad()
                                                   : nullptr;
                          for (std::int64_t n = 0; n < B; ++n)
                            for (std::int64_t o = 0; o < Lo; ++o)
                              for (std::int64_t c = 0; c < Cout; ++c) {
                                const T g = self.grad[(n * Lo + o) * Cout + c];
                                if (gb) (*gb)[c] += g;
                                for (std::int64_t k = 0; k < K; ++k) {
                                  const std::int64_t t = o * stride - padding + k;
                                  if (t < 0 || t >= L) continue;
                                  for (std::int64_t i = 0; i < Cin; ++i) {
                                    const std::int64_t wi = (c * Cin + i) * K + k;
                                    const std::int64_t xi = (n * L + t) * Cin + i;
                                    if (gx) (*gx)[xi] += g * Wn.value[wi];
                                    if (gw) (*gw)[wi] += g * X.value[xi];
                                  }
                                }
                              }
                        });
}

// ---------------------------------------------------------------------------
// Attention

struct AttentionRope {
  const RopeTable* table = nullptr;
  const RopePositions* query_positions = nullptr;
  const RopePositions* key_positions = nullptr;
};

namespace detail {

// Copies head h of q/k rows, rotating them when rope is active.
template <class T>
void load_head(std::span<const T> src, std::int64_t rows, std::int64_t D, std::int64_t dh, std::int64_t h,
               std::int64_t seq, const RopeTable* table, const RopePositions* pos, std::vector<T>& dst) {
  dst.resize(static_cast<std::size_t>(rows * dh));
  for (std::int64_t i = 0; i < rows; ++i) {
    std::copy_n(src.data() + (seq * rows + i) * D + h * dh, dh, dst.data() + i * dh);
    if (table) table->apply(std::span<T>(dst.data() + i * dh, static_cast<std::size_t>(dh)), pos->at(static_cast<int>(i)));
  }
}

// Row-softmax of scaled scores for one (sequence, head).
template <class T>
void softmax_scores(const std::vector<T>& q, const std::vector<T>& k, std::int64_t nq, std::int64_t nk,
                    std::int64_t dh, T scale, T* p) {
  blas::gemm(false, true, static_cast<int>(nq), static_cast<int>(nk), static_cast<int>(dh), scale, q.data(),
             static_cast<int>(dh), k.data(), static_cast<int>(dh), T(0), p, static_cast<int>(nk));
  for (std::int64_t i = 0; i < nq; ++i) {
    T* row = p + i * nk;
    const T mx = *std::max_element(row, row + nk);
    T z = 0;
    for (std::int64_t j = 0; j < nk; ++j) {
      row[j] = std::exp(row[j] - mx);
      z += row[j];
    }
    for (std::int64_t j = 0; j < nk; ++j) row[j] /= z;
  }
}

struct AttentionDims {
  std::int64_t B, Nq, Nk, D, heads, dh;
};

template <class T>
AttentionDims check_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int heads,
                              const AttentionRope& rope) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3) {
    throw ShapeError("attention: q, k, v must be (batch, tokens, dim), got " + shape_str(q.shape()) + ", " +
                     shape_str(k.shape()) + ", " + shape_str(v.shape()));
  }
  AttentionDims d{q.dim(0), q.dim(1), k.dim(1), q.dim(2), heads, 0};
  if (k.dim(0) != d.B || v.dim(0) != d.B) throw ShapeError("attention: batch extents differ");
  if (k.dim(2) != d.D || v.dim(2) != d.D) throw ShapeError("attention: q, k, v must share the model dim");
  if (v.dim(1) != d.Nk) throw ShapeError("attention: k and v sequence lengths differ");
  if (heads <= 0 || d.D % heads != 0) throw ShapeError("attention: dim " + std::to_string(d.D) +
                                                       " not divisible by heads " + std::to_string(heads));
  d.dh = d.D / heads;
  if (rope.table) {
    if (d.dh % 2 != 0) throw DomainError("attention: rope requires an even head dim, got " + std::to_string(d.dh));
    if (rope.table->head_dim() != d.dh) throw ShapeError("attention: rope table head dim mismatch");
    if (!rope.query_positions || !rope.key_positions) throw ShapeError("attention: rope positions missing");
    if (rope.query_positions->count() != d.Nq || rope.key_positions->count() != d.Nk) {
      throw ShapeError("attention: rope position count does not match token count");
    }
    if (rope.query_positions->axes != rope.table->axes() || rope.key_positions->axes != rope.table->axes()) {
      throw ShapeError("attention: rope position axes do not match table");
    }
  }
  return d;
}

}  // namespace detail

/// softmax(q k^T / sqrt(d_head)) v per head, with optional rotary rotation of
/// q and k. q (B, Nq, D), k and v (B, Nk, D).
template <class T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, int heads,
                    const AttentionRope& rope = {}) {
  const auto d = detail::check_attention(q, k, v, heads, rope);
  const T sc = T(1) / std::sqrt(static_cast<T>(d.dh));
  std::vector<T> out(static_cast<std::size_t>(d.B * d.Nq * d.D), T(0));
  // Saved for backward: rotated q, rotated k, probabilities, per (b, h).
  const std::int64_t nbh = d.B * d.heads;
  std::vector<T> saved_q(static_cast<std::size_t>(nbh * d.Nq * d.dh));
  std::vector<T> saved_k(static_cast<std::size_t>(nbh * d.Nk * d.dh));
  std::vector<T> saved_p(static_cast<std::size_t>(nbh * d.Nq * d.Nk));
  std::vector<T> qh, kh;
  const auto vv = v.values();
  const int nq = static_cast<int>(d.Nq), nk = static_cast<int>(d.Nk), dh = static_cast<int>(d.dh),
            ld = static_cast<int>(d.D);
  for (std::int64_t b = 0; b < d.B; ++b)
    for (std::int64_t h = 0; h < d.heads; ++h) {
      const std::int64_t bh = b * d.heads + h;
      detail::load_head<T>(q.values(), d.Nq, d.D, d.dh, h, b, rope.table, rope.query_positions, qh);
      detail::load_head<T>(k.values(), d.Nk, d.D, d.dh, h, b, rope.table, rope.key_positions, kh);
      T* p = saved_p.data() + bh * d.Nq * d.Nk;
      detail::softmax_scores(qh, kh, d.Nq, d.Nk, d.dh, sc, p);
      // O_h = P V_h, reading and writing the head's columns in place.
      blas::gemm(false, false, nq, dh, nk, T(1), p, nk, vv.data() + b * d.Nk * d.D + h * d.dh, ld, T(0),
                 out.data() + b * d.Nq * d.D + h * d.dh, ld);
      std::copy(qh.begin(), qh.end(), saved_q.begin() + bh * d.Nq * d.dh);
      std::copy(kh.begin(), kh.end(), saved_k.begin() + bh * d.Nk * d.dh);
    }
  const RopeTable* table = rope.table;
  // Positions are copied so the closure does not depend on caller lifetimes.
  RopePositions pq = table ? *rope.query_positions : RopePositions{};
  RopePositions pk = table ? *rope.key_positions : RopePositions{};
  std::shared_ptr<const RopeTable> table_copy = table ? std::make_shared<RopeTable>(*table) : nullptr;
  return make_result<T>(
      q.shape(), std::move(out), {q.node(), k.node(), v.node()},
      [d, sc, saved_q = std::move(saved_q), saved_k = std::move(saved_k), saved_p = std::move(saved_p),
       table_copy, pq = std::move(pq), pk = std::move(pk)](Node<T>& self) {
        auto& Q = *self.inputs[0];
        auto& K = *self.inputs[1];
        auto& V = *self.inputs[2];
        std::vector<T>* gq = Q.requires_grad ? &Q.ensure_grad() : nullptr;
        std::vector<T>* gk = K.requires_grad ? &K.ensure_grad() : nullptr;
        std::vector<T>* gv = V.requires_grad ? &V.ensure_grad() : nullptr;
        std::vector<T> dp(static_cast<std::size_t>(d.Nq * d.Nk));
        std::vector<T> dq(static_cast<std::size_t>(d.Nq * d.dh));
        std::vector<T> dk(static_cast<std::size_t>(d.Nk * d.dh));
        for (std::int64_t b = 0; b < d.B; ++b)
          for (std::int64_t h = 0; h < d.heads; ++h) {
            const std::int64_t bh = b * d.heads + h;
            const T* P = saved_p.data() + bh * d.Nq * d.Nk;
            const T* qr = saved_q.data() + bh * d.Nq * d.dh;
            const T* kr = saved_k.data() + bh * d.Nk * d.dh;
            const int nq = static_cast<int>(d.Nq), nk = static_cast<int>(d.Nk), dh = static_cast<int>(d.dh),
                      ld = static_cast<int>(d.D);
            const T* go = self.grad.data() + b * d.Nq * d.D + h * d.dh;
            // dP = dO V^T, dV = P^T dO
            blas::gemm(false, true, nq, nk, dh, T(1), go, ld, V.value.data() + b * d.Nk * d.D + h * d.dh, ld, T(0),
                       dp.data(), nk);
            if (gv) blas::gemm(true, false, nk, dh, nq, T(1), P, nk, go, ld, T(1), gv->data() + b * d.Nk * d.D + h * d.dh, ld);
            if (!gq && !gk) continue;
            // dS = P * (dP - rowsum(P * dP)), scaled.
            for (std::int64_t i = 0; i < d.Nq; ++i) {
              T dot = 0;
              for (std::int64_t j = 0; j < d.Nk; ++j) dot += P[i * d.Nk + j] * dp[i * d.Nk + j];
              for (std::int64_t j = 0; j < d.Nk; ++j) dp[i * d.Nk + j] = P[i * d.Nk + j] * (dp[i * d.Nk + j] - dot) * sc;
            }
            blas::gemm(false, false, nq, dh, nk, T(1), dp.data(), nk, kr, dh, T(0), dq.data(), dh);
            blas::gemm(true, false, nk, dh, nq, T(1), dp.data(), nk, qr, dh, T(0), dk.data(), dh);
            if (gq) {
              for (std::int64_t i = 0; i < d.Nq; ++i) {
                std::span<T> row(dq.data() + i * d.dh, static_cast<std::size_t>(d.dh));
                if (table_copy) table_copy->apply(row, pq.at(static_cast<int>(i)), true);
                T* dst = gq->data() + (b * d.Nq + i) * d.D + h * d.dh;
                for (std::int64_t c = 0; c < d.dh; ++c) dst[c] += row[c];
              }
            }
            if (gk) {
              for (std::int64_t j = 0; j < d.Nk; ++j) {
                std::span<T> row(dk.data() + j * d.dh, static_cast<std::size_t>(d.dh));
                if (table_copy) table_copy->apply(row, pk.at(static_cast<int>(j)), true);
                T* dst = gk->data() + (b * d.Nk + j) * d.D + h * d.dh;
                for (std::int64_t c = 0; c < d.dh; ++c) dst[c] += row[c];
              }
            }
          }
      });
}

/// Softmax probability matrix (B, heads, Nq, Nk) of the attention above,
/// without building a graph.
template <class T>
std::vector<T> attention_probabilities(const Tensor<T>& q, const Tensor<T>& k, int heads,
                                       const AttentionRope& rope = {}) {
  const auto d = detail::check_attention(q, k, k, heads, rope);
  const T sc = T(1) / std::sqrt(static_cast<T>(d.dh));
  std::vector<T> probs(static_cast<std::size_t>(d.B * d.heads * d.Nq * d.Nk));
  std::vector<T> qh, kh;
  for (std::int64_t b = 0; b < d.B; ++b)
    for (std::int64_t h = 0; h < d.heads; ++h) {
      detail::load_head<T>(q.values(), d.Nq, d.D, d.dh, h, b, rope.table, rope.query_positions, qh);
      detail::load_head<T>(k.values(), d.Nk, d.D, d.dh, h, b, rope.table, rope.key_positions, kh);
      detail::softmax_scores(qh, kh, d.Nq, d.Nk, d.dh, sc, probs.data() + (b * d.heads + h) * d.Nq * d.Nk);
    }
  return probs;
}

}  // namespace acwm
