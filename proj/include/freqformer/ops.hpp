#pragma once

// Differentiable tensor primitives: elementwise arithmetic with broadcasting,
// reductions, reshaping, concatenation and slicing, activations, softmax,
// batched matmul and channel layer-norm. Spatial ops (padding, convolution,
// pixel shuffle, interpolation) live in spatial_ops.hpp.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "freqformer/tensor.hpp"

namespace fqf {

namespace detail {

template <class T, class Fn>
Tensor<T> make_result(const Shape& shape, std::vector<T> data, const std::vector<Tensor<T>>& inputs, Fn&& bw) {
  auto node = std::make_shared<Node<T>>();
  node->shape = shape;
  node->data = std::move(data);
  if (grad_enabled()) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) node->parents.push_back(in.node());
    }
    if (!node->parents.empty()) {
      node->requires_grad = true;
      node->backward = std::forward<Fn>(bw);
    }
  }
  return Tensor<T>::from_node(std::move(node));
}

template <class T>
std::vector<T>& grad_of(const Tensor<T>& t) {
  return t.node()->grad_buffer();
}

inline std::size_t idx(std::int64_t i) { return static_cast<std::size_t>(i); }

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const auto pa = a.padded4();
  const auto pb = b.padded4();
  std::array<std::int64_t, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) {
    if (pa[i] == pb[i] || pb[i] == 1) {
      out[i] = pa[i];
    } else if (pa[i] == 1) {
      out[i] = pb[i];
    } else {
      throw ShapeError(op, "cannot broadcast " + a.str() + " with " + b.str() + " (axis " +
                               std::to_string(static_cast<int>(i) - 4 + std::max(a.rank(), b.rank())) + ")");
    }
  }
  const int r = std::max(a.rank(), b.rank());
  return Shape(std::span<const std::int64_t>(out.data() + (4 - r), static_cast<std::size_t>(r)));
}

/// Strides of `in` when viewed at the (rank-4 padded) extents of `out`; zero on broadcast axes.
inline std::array<std::int64_t, 4> broadcast_strides(const Shape& in, const Shape& out) {
  const auto pi = in.padded4();
  const auto po = out.padded4();
  std::array<std::int64_t, 4> strides{};
  std::int64_t s = 1;
  for (int i = 3; i >= 0; --i) {
    const auto k = static_cast<std::size_t>(i);
    strides[k] = (pi[k] == po[k]) ? s : 0;
    s *= pi[k];
  }
  return strides;
}

/// Visits every output element with the matching offsets into both operands.
template <class F>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, F&& f) {
  const auto po = out.padded4();
  const auto sa = broadcast_strides(a, out);
  const auto sb = broadcast_strides(b, out);
  std::size_t o = 0;
  for (std::int64_t i0 = 0; i0 < po[0]; ++i0) {
    for (std::int64_t i1 = 0; i1 < po[1]; ++i1) {
      for (std::int64_t i2 = 0; i2 < po[2]; ++i2) {
        const std::int64_t ba = i0 * sa[0] + i1 * sa[1] + i2 * sa[2];
        const std::int64_t bb = i0 * sb[0] + i1 * sb[1] + i2 * sb[2];
        for (std::int64_t i3 = 0; i3 < po[3]; ++i3, ++o) {
          f(o, idx(ba + i3 * sa[3]), idx(bb + i3 * sb[3]));
        }
      }
    }
  }
}

// Fwd(a, b) -> value; Partials(a, b) -> {d/da, d/db}.
template <class T, class Fwd, class Partials>
Tensor<T> binary_op(const char* name, const Tensor<T>& a, const Tensor<T>& b, Fwd fwd, Partials partials) {
  const bool same = a.shape() == b.shape();
  const Shape out_shape = same ? a.shape() : broadcast_shape(a.shape(), b.shape(), name);
  std::vector<T> out(idx(out_shape.numel()));
  const auto av = a.data();
  const auto bv = b.data();
  if (same) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
  } else {
    for_each_broadcast(out_shape, a.shape(), b.shape(),
                       [&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = fwd(av[ia], bv[ib]); });
  }
  return make_result<T>(out_shape, std::move(out), {a, b}, [a, b, out_shape, same, partials](const std::vector<T>& g) {
    const auto av = a.data();
    const auto bv = b.data();
    T* ga = a.requires_grad() ? grad_of(a).data() : nullptr;
    T* gb = b.requires_grad() ? grad_of(b).data() : nullptr;
    auto step = [&](std::size_t o, std::size_t ia, std::size_t ib) {
      const auto [da, db] = partials(av[ia], bv[ib]);
      if (ga) ga[ia] += g[o] * da;
      if (gb) gb[ib] += g[o] * db;
    };
    if (same) {
      for (std::size_t i = 0; i < g.size(); ++i) step(i, i, i);
    } else {
      for_each_broadcast(out_shape, a.shape(), b.shape(), step);
    }
  });
}

// Fwd(x) -> y; Deriv(x, y) -> dy/dx.
template <class T, class Fwd, class Deriv>
Tensor<T> unary_op(const Tensor<T>& x, Fwd fwd, Deriv deriv) {
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  auto result = make_result<T>(x.shape(), std::move(out), {x}, [] (const std::vector<T>&) {});
  if (result.requires_grad()) {
    std::weak_ptr<Node<T>> self = result.node();
    result.node()->backward = [x, self, deriv](const std::vector<T>& g) {
      const auto xv = x.data();
      const auto yv = self.lock()->data;
      auto& gx = grad_of(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i], yv[i]);
    };
  }
  return result;
}

/// Splits a tensor around `axis` into (outer, extent, inner) for axis-wise loops.
inline std::array<std::int64_t, 3> split_axis(const Shape& s, int axis) {
  const int a = s.normalize(axis);
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < a; ++i) outer *= s[i];
  for (int i = a + 1; i < s.rank(); ++i) inner *= s[i];
  return {outer, s[a], inner};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic (numpy-style broadcasting)
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T) { return std::pair<T, T>{T(1), T(1)}; });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T) { return std::pair<T, T>{T(1), T(-1)}; });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T x, T y) { return std::pair<T, T>{y, x}; });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op<T>(
      "div", a, b, [](T x, T y) { return x / y; },
      [](T x, T y) { return std::pair<T, T>{T(1) / y, -x / (y * y)}; });
}

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return detail::unary_op<T>(x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> mul_scalar(const Tensor<T>& x, T s) {
  return detail::unary_op<T>(x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <class T>
Tensor<T> pow_scalar(const Tensor<T>& x, T p) {
  return detail::unary_op<T>(
      x, [p](T v) { return std::pow(v, p); }, [p](T v, T) { return p * std::pow(v, p - T(1)); });
}

/// Subgradient 0 at the origin.
template <class T>
Tensor<T> abs(const Tensor<T>& x) {
  return detail::unary_op<T>(
      x, [](T v) { return std::abs(v); }, [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

/// Exact (erf-based) GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T kInvSqrt2 = T(0.70710678118654752440);
  constexpr T kInvSqrt2Pi = T(0.39894228040143267794);
  return detail::unary_op<T>(
      x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * kInvSqrt2)); },
      [](T v, T) { return T(0.5) * (T(1) + std::erf(v * kInvSqrt2)) + v * kInvSqrt2Pi * std::exp(T(-0.5) * v * v); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary_op<T>(
      x, [](T v) { return v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v)); },
      [](T, T y) { return y * (T(1) - y); });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = T(0);
  for (T v : x.data()) total += v;
  return detail::make_result<T>(Shape{}, {total}, {x}, [x](const std::vector<T>& g) {
    auto& gx = detail::grad_of(x);
    for (auto& v : gx) v += g[0];
  });
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  const T inv = T(1) / static_cast<T>(x.numel());
  T total = T(0);
  for (T v : x.data()) total += v;
  return detail::make_result<T>(Shape{}, {total * inv}, {x}, [x, inv](const std::vector<T>& g) {
    auto& gx = detail::grad_of(x);
    for (auto& v : gx) v += g[0] * inv;
  });
}

/// Sum along one axis, keeping it with extent 1.
template <class T>
Tensor<T> sum_axis(const Tensor<T>& x, int axis) {
  const auto [outer, n, inner] = detail::split_axis(x.shape(), axis);
  const Shape out_shape = x.shape().with(axis, 1);
  std::vector<T> out(detail::idx(outer * inner), T(0));
  const auto xv = x.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t k = 0; k < n; ++k) {
      const T* src = xv.data() + (o * n + k) * inner;
      T* dst = out.data() + o * inner;
      for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  return detail::make_result<T>(out_shape, std::move(out), {x}, [x, outer, n, inner](const std::vector<T>& g) {
    auto& gx = detail::grad_of(x);
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t k = 0; k < n; ++k) {
        T* dst = gx.data() + (o * n + k) * inner;
        const T* src = g.data() + o * inner;
        for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape) {
  if (shape.numel() != x.numel()) {
    throw ShapeError("reshape", "cannot view " + x.shape().str() + " as " + shape.str());
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return detail::make_result<T>(shape, std::move(out), {x}, [x](const std::vector<T>& g) {
    auto& gx = detail::grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

/// Swaps the two trailing axes.
template <class T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
  if (x.rank() < 2) throw ShapeError("transpose_last2", "rank must be >= 2, got " + x.shape().str());
  const std::int64_t rows = x.dim(-2), cols = x.dim(-1);
  const std::int64_t batch = x.numel() / std::max<std::int64_t>(1, rows * cols);
  const Shape out_shape = x.shape().with(-2, cols).with(-1, rows);
  std::vector<T> out(detail::idx(x.numel()));
  const auto xv = x.data();
  for (std::int64_t b = 0; b < batch; ++b) {
    const T* src = xv.data() + b * rows * cols;
    T* dst = out.data() + b * rows * cols;
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
  }
  return detail::make_result<T>(out_shape, std::move(out), {x}, [x, batch, rows, cols](const std::vector<T>& g) {
    auto& gx = detail::grad_of(x);
    for (std::int64_t b = 0; b < batch; ++b) {
      T* dst = gx.data() + b * rows * cols;
      const T* src = g.data() + b * rows * cols;
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < cols; ++c) dst[r * cols + c] += src[c * rows + r];
    }
  });
}

/// Concatenation along `axis`; all other extents must agree.
template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat", "no inputs");
  const Shape& first = parts.front().shape();
  const int a = first.normalize(axis);
  std::int64_t total = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Shape& s = parts[p].shape();
    if (s.rank() != first.rank()) throw ShapeError("concat", "rank mismatch at input " + std::to_string(p));
    for (int i = 0; i < s.rank(); ++i) {
      if (i != a && s[i] != first[i]) {
        throw ShapeError("concat", "input " + std::to_string(p) + " has extent " + std::to_string(s[i]) +
                                       " on axis " + std::to_string(i) + ", expected " + std::to_string(first[i]));
      }
    }
    total += s[a];
  }
  const Shape out_shape = first.with(a, total);
  const auto [outer, unused, inner] = detail::split_axis(out_shape, a);
  (void)unused;
  std::vector<T> out(detail::idx(out_shape.numel()));
  std::int64_t offset = 0;
  std::vector<std::int64_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::int64_t n = p.dim(a);
    const auto pv = p.data();
    for (std::int64_t o = 0; o < outer; ++o) {
      std::copy_n(pv.data() + o * n * inner, n * inner, out.data() + (o * total + offset) * inner);
    }
    offset += n;
  }
  return detail::make_result<T>(out_shape, std::move(out), parts,
                                [parts, offsets, a, outer = outer, inner = inner, total](const std::vector<T>& g) {
                                  for (std::size_t k = 0; k < parts.size(); ++k) {
                                    if (!parts[k].requires_grad()) continue;
                                    auto& gp = detail::grad_of(parts[k]);
                                    const std::int64_t n = parts[k].dim(a);
                                    for (std::int64_t o = 0; o < outer; ++o) {
                                      const T* src = g.data() + (o * total + offsets[k]) * inner;
                                      T* dst = gp.data() + o * n * inner;
                                      for (std::int64_t i = 0; i < n * inner; ++i) dst[i] += src[i];
                                    }
                                  }
                                });
}

/// Half-open range [start, end) along `axis`.
template <class T>
Tensor<T> slice(const Tensor<T>& x, int axis, std::int64_t start, std::int64_t end) {
  const int a = x.shape().normalize(axis);
  const std::int64_t n = x.dim(a);
  if (start < 0 || end > n || start >= end) {
    throw ShapeError("slice", "range [" + std::to_string(start) + "," + std::to_string(end) + ") invalid for axis " +
                                  std::to_string(a) + " of extent " + std::to_string(n));
  }
  const auto [outer, unused, inner] = detail::split_axis(x.shape(), a);
  (void)unused;
  const std::int64_t m = end - start;
  std::vector<T> out(detail::idx(outer * m * inner));
  const auto xv = x.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    std::copy_n(xv.data() + (o * n + start) * inner, m * inner, out.data() + o * m * inner);
  }
  return detail::make_result<T>(x.shape().with(a, m), std::move(out), {x},
                                [x, outer = outer, inner = inner, n, m, start](const std::vector<T>& g) {
                                  auto& gx = detail::grad_of(x);
                                  for (std::int64_t o = 0; o < outer; ++o) {
                                    const T* src = g.data() + o * m * inner;
                                    T* dst = gx.data() + (o * n + start) * inner;
                                    for (std::int64_t i = 0; i < m * inner; ++i) dst[i] += src[i];
                                  }
                                });
}

/// Spatial window of a [B,C,H,W] tensor.
template <class T>
Tensor<T> crop(const Tensor<T>& x, std::int64_t top, std::int64_t left, std::int64_t height, std::int64_t width) {
  if (x.rank() != 4) throw ShapeError("crop", "expected [B,C,H,W], got " + x.shape().str());
  return slice(slice(x, 2, top, top + height), 3, left, left + width);
}

// ---------------------------------------------------------------------------
// Softmax, matmul, normalization
// ---------------------------------------------------------------------------

/// Numerically stable softmax (max-subtracted) along `axis`.
template <class T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  const auto [outer, n, inner] = detail::split_axis(x.shape(), axis);
  std::vector<T> out(detail::idx(x.numel()));
  const auto xv = x.data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::int64_t base = o * n * inner + i;
      T mx = xv[detail::idx(base)];
      for (std::int64_t k = 1; k < n; ++k) mx = std::max(mx, xv[detail::idx(base + k * inner)]);
      T total = T(0);
      for (std::int64_t k = 0; k < n; ++k) {
        const T e = std::exp(xv[detail::idx(base + k * inner)] - mx);
        out[detail::idx(base + k * inner)] = e;
        total += e;
      }
      const T inv = T(1) / total;
      for (std::int64_t k = 0; k < n; ++k) out[detail::idx(base + k * inner)] *= inv;
    }
  }
  auto result = detail::make_result<T>(x.shape(), std::move(out), {x}, [](const std::vector<T>&) {});
  if (result.requires_grad()) {
    std::weak_ptr<detail::Node<T>> self = result.node();
    result.node()->backward = [x, self, outer = outer, n = n, inner = inner](const std::vector<T>& g) {
      const auto& y = self.lock()->data;
      auto& gx = detail::grad_of(x);
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t i = 0; i < inner; ++i) {
          const std::int64_t base = o * n * inner + i;
          T dot = T(0);
          for (std::int64_t k = 0; k < n; ++k) dot += g[detail::idx(base + k * inner)] * y[detail::idx(base + k * inner)];
          for (std::int64_t k = 0; k < n; ++k) {
            const auto j = detail::idx(base + k * inner);
            gx[j] += y[j] * (g[j] - dot);
          }
        }
      }
    };
  }
  return result;
}

/// Batched product over the two trailing axes; leading axes broadcast.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul", "operands need rank >= 2, got " + a.shape().str() + " and " + b.shape().str());
  }
  const std::int64_t M = a.dim(-2), K = a.dim(-1), K2 = b.dim(-2), N = b.dim(-1);
  if (K != K2) {
    throw ShapeError("matmul", "inner extents differ: " + std::to_string(K) + " vs " + std::to_string(K2) + " (" +
                                   a.shape().str() + " x " + b.shape().str() + ")");
  }
  const auto pa = a.shape().padded4();
  const auto pb = b.shape().padded4();
  std::array<std::int64_t, 2> batch{};
  for (std::size_t i = 0; i < 2; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1) {
      throw ShapeError("matmul", "batch extents not broadcastable: " + a.shape().str() + " x " + b.shape().str());
    }
    batch[i] = std::max(pa[i], pb[i]);
  }
  const int out_rank = std::max(a.rank(), b.rank());
  std::array<std::int64_t, 4> od{batch[0], batch[1], M, N};
  const Shape out_shape(std::span<const std::int64_t>(od.data() + (4 - out_rank), static_cast<std::size_t>(out_rank)));

  auto a_off = [pa, M, K](std::int64_t i0, std::int64_t i1) {
    return ((pa[0] == 1 ? 0 : i0) * pa[1] + (pa[1] == 1 ? 0 : i1)) * M * K;
  };
  auto b_off = [pb, K, N](std::int64_t i0, std::int64_t i1) {
    return ((pb[0] == 1 ? 0 : i0) * pb[1] + (pb[1] == 1 ? 0 : i1)) * K * N;
  };

  std::vector<T> out(detail::idx(out_shape.numel()), T(0));
  const auto av = a.data();
  const auto bv = b.data();
  for (std::int64_t i0 = 0; i0 < batch[0]; ++i0) {
    for (std::int64_t i1 = 0; i1 < batch[1]; ++i1) {
      const T* A = av.data() + a_off(i0, i1);
      const T* B = bv.data() + b_off(i0, i1);
      T* C = out.data() + (i0 * batch[1] + i1) * M * N;
      for (std::int64_t m = 0; m < M; ++m) {
        for (std::int64_t k = 0; k < K; ++k) {
          const T s = A[m * K + k];
          const T* brow = B + k * N;
          T* crow = C + m * N;
          for (std::int64_t n = 0; n < N; ++n) crow[n] += s * brow[n];
        }
      }
    }
  }
  return detail::make_result<T>(out_shape, std::move(out), {a, b}, [=](const std::vector<T>& g) {
    const auto av = a.data();
    const auto bv = b.data();
    T* ga = a.requires_grad() ? detail::grad_of(a).data() : nullptr;
    T* gb = b.requires_grad() ? detail::grad_of(b).data() : nullptr;
    for (std::int64_t i0 = 0; i0 < batch[0]; ++i0) {
      for (std::int64_t i1 = 0; i1 < batch[1]; ++i1) {
        const T* A = av.data() + a_off(i0, i1);
        const T* B = bv.data() + b_off(i0, i1);
        const T* G = g.data() + (i0 * batch[1] + i1) * M * N;
        if (ga) {
          T* GA = ga + a_off(i0, i1);
          for (std::int64_t m = 0; m < M; ++m)
            for (std::int64_t k = 0; k < K; ++k) {
              T acc = T(0);
              for (std::int64_t n = 0; n < N; ++n) acc += G[m * N + n] * B[k * N + n];
              GA[m * K + k] += acc;
            }
        }
        if (gb) {
          T* GB = gb + b_off(i0, i1);
          for (std::int64_t m = 0; m < M; ++m)
            for (std::int64_t k = 0; k < K; ++k) {
              const T s = A[m * K + k];
              for (std::int64_t n = 0; n < N; ++n) GB[k * N + n] += s * G[m * N + n];
            }
        }
      }
    }
  });
}

/// Per spatial position, normalizes across channels to zero mean / unit
/// variance, then applies per-channel gain and offset. Input is [B,C,H,W].
template <class T>
Tensor<T> layer_norm_channel(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& offset, T eps = T(1e-6)) {
  if (x.rank() != 4) throw ShapeError("layer_norm_channel", "expected [B,C,H,W], got " + x.shape().str());
  const std::int64_t B = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  if (gain.numel() != C || offset.numel() != C) {
    throw ShapeError("layer_norm_channel", "gain/offset need " + std::to_string(C) + " entries (channel axis)");
  }
  if (!(eps > T(0))) throw ShapeError("layer_norm_channel", "eps must be positive");
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto ov = offset.data();
  std::vector<T> out(xv.size());
  std::vector<T> xhat(xv.size());
  std::vector<T> inv_std(detail::idx(B * HW));
  for (std::int64_t b = 0; b < B; ++b) {
    const T* X = xv.data() + b * C * HW;
    for (std::int64_t p = 0; p < HW; ++p) {
      T mu = T(0);
      for (std::int64_t c = 0; c < C; ++c) mu += X[c * HW + p];
      mu /= static_cast<T>(C);
      T var = T(0);
      for (std::int64_t c = 0; c < C; ++c) {
        const T d = X[c * HW + p] - mu;
        var += d * d;
      }
      var /= static_cast<T>(C);
      const T is = T(1) / std::sqrt(var + eps);
      inv_std[detail::idx(b * HW + p)] = is;
      for (std::int64_t c = 0; c < C; ++c) {
        const auto j = detail::idx(b * C * HW + c * HW + p);
        xhat[j] = (X[c * HW + p] - mu) * is;
        out[j] = gv[detail::idx(c)] * xhat[j] + ov[detail::idx(c)];
      }
    }
  }
  return detail::make_result<T>(
      x.shape(), std::move(out), {x, gain, offset},
      [x, gain, offset, xhat = std::move(xhat), inv_std = std::move(inv_std), B, C, HW](const std::vector<T>& g) {
        const auto gv = gain.data();
        if (gain.requires_grad()) {
          auto& gg = detail::grad_of(gain);
          for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t c = 0; c < C; ++c) {
              T acc = T(0);
              const std::int64_t base = b * C * HW + c * HW;
              for (std::int64_t p = 0; p < HW; ++p) acc += g[detail::idx(base + p)] * xhat[detail::idx(base + p)];
              gg[detail::idx(c)] += acc;
            }
        }
        if (offset.requires_grad()) {
          auto& go = detail::grad_of(offset);
          for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t c = 0; c < C; ++c) {
              T acc = T(0);
              const std::int64_t base = b * C * HW + c * HW;
              for (std::int64_t p = 0; p < HW; ++p) acc += g[detail::idx(base + p)];
              go[detail::idx(c)] += acc;
            }
        }
        if (x.requires_grad()) {
          auto& gx = detail::grad_of(x);
          const T invC = T(1) / static_cast<T>(C);
          for (std::int64_t b = 0; b < B; ++b) {
            for (std::int64_t p = 0; p < HW; ++p) {
              T m1 = T(0), m2 = T(0);
              for (std::int64_t c = 0; c < C; ++c) {
                const auto j = detail::idx(b * C * HW + c * HW + p);
                const T gh = g[j] * gv[detail::idx(c)];
                m1 += gh;
                m2 += gh * xhat[j];
              }
              m1 *= invC;
              m2 *= invC;
              const T is = inv_std[detail::idx(b * HW + p)];
              for (std::int64_t c = 0; c < C; ++c) {
                const auto j = detail::idx(b * C * HW + c * HW + p);
                gx[j] += is * (g[j] * gv[detail::idx(c)] - m1 - xhat[j] * m2);
              }
            }
          }
        }
      });
}

/// x / sqrt(sum(x^2 along axis) + eps).
template <class T>
Tensor<T> l2_normalize(const Tensor<T>& x, int axis, T eps = T(1e-12)) {
  return mul(x, pow_scalar(add_scalar(sum_axis(mul(x, x), axis), eps), T(-0.5)));
}

/// Mean absolute difference.
template <class T>
Tensor<T> l1_loss(const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape() == b.shape())) throw ShapeError("l1_loss", "shapes differ: " + a.shape().str() + " vs " + b.shape().str());
  return mean(abs(sub(a, b)));
}

}  // namespace fqf
