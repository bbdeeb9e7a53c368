#pragma once

// Spatial primitives on [B,C,H,W] tensors: explicit padding, dilated/grouped
// convolution, pixel shuffle and bilinear resampling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "freqformer/ops.hpp"

namespace fqf {

enum class PadMode { Zero, Replicate, Reflect };

struct Padding {
  PadMode mode = PadMode::Zero;
  int top = 0;
  int bottom = 0;
  int left = 0;
  int right = 0;

  static Padding uniform(int margin, PadMode mode = PadMode::Zero) { return {mode, margin, margin, margin, margin}; }

  bool empty() const { return top == 0 && bottom == 0 && left == 0 && right == 0; }
};

struct Conv2dOptions {
  int stride = 1;
  int dilation = 1;
  int groups = 1;
  Padding padding{};
};

namespace detail {

inline void require_rank4(const char* op, const Shape& s, const char* what) {
  if (s.rank() != 4) throw ShapeError(op, std::string(what) + " must be [B,C,H,W], got " + s.str());
}

/// Source index for each padded coordinate, or -1 for a zero pad.
inline std::vector<std::int64_t> pad_index_map(std::int64_t n, int before, int after, PadMode mode) {
  std::vector<std::int64_t> map(static_cast<std::size_t>(n + before + after));
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(map.size()); ++i) {
    std::int64_t s = i - before;
    if (s < 0 || s >= n) {
      switch (mode) {
        case PadMode::Zero:
          s = -1;
          break;
        case PadMode::Replicate:
          s = std::clamp<std::int64_t>(s, 0, n - 1);
          break;
        case PadMode::Reflect:
          s = s < 0 ? -s : 2 * (n - 1) - s;
          break;
      }
    }
    map[static_cast<std::size_t>(i)] = s;
  }
  return map;
}

}  // namespace detail

/// Explicit border extension of the two spatial axes.
template <class T>
Tensor<T> pad2d(const Tensor<T>& x, const Padding& pad) {
  detail::require_rank4("pad2d", x.shape(), "input");
  if (pad.top < 0 || pad.bottom < 0 || pad.left < 0 || pad.right < 0) throw ShapeError("pad2d", "negative margin");
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (pad.mode == PadMode::Reflect && (std::max(pad.top, pad.bottom) >= H || std::max(pad.left, pad.right) >= W)) {
    throw ShapeError("pad2d", "reflect margin must be smaller than the extent (H=" + std::to_string(H) +
                                  ", W=" + std::to_string(W) + ")");
  }
  if (pad.empty()) return x;
  const auto ymap = detail::pad_index_map(H, pad.top, pad.bottom, pad.mode);
  const auto xmap = detail::pad_index_map(W, pad.left, pad.right, pad.mode);
  const std::int64_t Hp = static_cast<std::int64_t>(ymap.size()), Wp = static_cast<std::int64_t>(xmap.size());
  std::vector<T> out(detail::idx(B * C * Hp * Wp), T(0));
  const auto xv = x.data();
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const T* src = xv.data() + bc * H * W;
    T* dst = out.data() + bc * Hp * Wp;
    for (std::int64_t y = 0; y < Hp; ++y) {
      const std::int64_t sy = ymap[detail::idx(y)];
      if (sy < 0) continue;
      for (std::int64_t xx = 0; xx < Wp; ++xx) {
        const std::int64_t sx = xmap[detail::idx(xx)];
        if (sx >= 0) dst[y * Wp + xx] = src[sy * W + sx];
      }
    }
  }
  return detail::make_result<T>(Shape{B, C, Hp, Wp}, std::move(out), {x}, [=](const std::vector<T>& g) {
    auto& gx = detail::grad_of(x);
    for (std::int64_t bc = 0; bc < B * C; ++bc) {
      T* dst = gx.data() + bc * H * W;
      const T* src = g.data() + bc * Hp * Wp;
      for (std::int64_t y = 0; y < Hp; ++y) {
        const std::int64_t sy = ymap[detail::idx(y)];
        if (sy < 0) continue;
        for (std::int64_t xx = 0; xx < Wp; ++xx) {
          const std::int64_t sx = xmap[detail::idx(xx)];
          if (sx >= 0) dst[sy * W + sx] += src[y * Wp + xx];
        }
      }
    }
  });
}

namespace detail {

/// Cross-correlation without padding. Inner loops run along contiguous rows.
template <class T>
Tensor<T> conv2d_valid(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, int stride, int dilation,
                       int groups) {
  const std::int64_t B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t Cout = w.dim(0), Cg = w.dim(1), KH = w.dim(2), KW = w.dim(3);
  const std::int64_t Og = Cout / groups;
  const std::int64_t span_h = dilation * (KH - 1) + 1, span_w = dilation * (KW - 1) + 1;
  if (H < span_h || W < span_w) {
    throw ShapeError("conv2d", "padded input " + std::to_string(H) + "x" + std::to_string(W) +
                                   " smaller than kernel footprint " + std::to_string(span_h) + "x" +
                                   std::to_string(span_w));
  }
  const std::int64_t OH = (H - span_h) / stride + 1, OW = (W - span_w) / stride + 1;
  std::vector<T> out(idx(B * Cout * OH * OW), T(0));
  const auto xv = x.data();
  const auto wv = w.data();
  const bool has_bias = bias.defined();

  // Each output plane is accumulated in double and rounded once.
  std::vector<double> plane(idx(OH * OW));
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t co = 0; co < Cout; ++co) {
      double* O = plane.data();
      std::fill(plane.begin(), plane.end(), has_bias ? static_cast<double>(bias.data()[idx(co)]) : 0.0);
      const std::int64_t g = co / Og;
      for (std::int64_t cig = 0; cig < Cg; ++cig) {
        const T* X = xv.data() + (b * Cin + g * Cg + cig) * H * W;
        const T* Wk = wv.data() + (co * Cg + cig) * KH * KW;
        for (std::int64_t kh = 0; kh < KH; ++kh) {
          for (std::int64_t kw = 0; kw < KW; ++kw) {
            const double wt = Wk[kh * KW + kw];
            for (std::int64_t oy = 0; oy < OH; ++oy) {
              const T* src = X + (oy * stride + kh * dilation) * W + kw * dilation;
              double* dst = O + oy * OW;
              if (stride == 1) {
                for (std::int64_t ox = 0; ox < OW; ++ox) dst[ox] += wt * static_cast<double>(src[ox]);
              } else {
                for (std::int64_t ox = 0; ox < OW; ++ox) dst[ox] += wt * static_cast<double>(src[ox * stride]);
              }
            }
          }
        }
      }
      std::transform(plane.begin(), plane.end(), out.begin() + (b * Cout + co) * OH * OW,
                     [](double v) { return static_cast<T>(v); });
    }
  }

  std::vector<Tensor<T>> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return make_result<T>(Shape{B, Cout, OH, OW}, std::move(out), inputs, [=](const std::vector<T>& gout) {
    const auto xv = x.data();
    const auto wv = w.data();
    T* gx = x.requires_grad() ? grad_of(x).data() : nullptr;
    T* gw = w.requires_grad() ? grad_of(w).data() : nullptr;
    if (has_bias && bias.requires_grad()) {
      auto& gb = grad_of(bias);
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t co = 0; co < Cout; ++co) {
          const T* G = gout.data() + (b * Cout + co) * OH * OW;
          T acc = T(0);
          for (std::int64_t i = 0; i < OH * OW; ++i) acc += G[i];
          gb[idx(co)] += acc;
        }
    }
    for (std::int64_t b = 0; b < B; ++b) {
      for (std::int64_t co = 0; co < Cout; ++co) {
        const T* G = gout.data() + (b * Cout + co) * OH * OW;
        const std::int64_t g = co / Og;
        for (std::int64_t cig = 0; cig < Cg; ++cig) {
          const std::int64_t ci = g * Cg + cig;
          const T* X = xv.data() + (b * Cin + ci) * H * W;
          T* GX = gx ? gx + (b * Cin + ci) * H * W : nullptr;
          const T* Wk = wv.data() + (co * Cg + cig) * KH * KW;
          T* GW = gw ? gw + (co * Cg + cig) * KH * KW : nullptr;
          for (std::int64_t kh = 0; kh < KH; ++kh) {
            for (std::int64_t kw = 0; kw < KW; ++kw) {
              const T wt = Wk[kh * KW + kw];
              T acc = T(0);
              for (std::int64_t oy = 0; oy < OH; ++oy) {
                const std::int64_t row = (oy * stride + kh * dilation) * W + kw * dilation;
                const T* grow = G + oy * OW;
                if (GW) {
                  const T* src = X + row;
                  if (stride == 1) {
                    for (std::int64_t ox = 0; ox < OW; ++ox) acc += grow[ox] * src[ox];
                  } else {
                    for (std::int64_t ox = 0; ox < OW; ++ox) acc += grow[ox] * src[ox * stride];
                  }
                }
                if (GX) {
                  T* dst = GX + row;
                  if (stride == 1) {
                    for (std::int64_t ox = 0; ox < OW; ++ox) dst[ox] += wt * grow[ox];
                  } else {
                    for (std::int64_t ox = 0; ox < OW; ++ox) dst[ox * stride] += wt * grow[ox];
                  }
                }
              }
              if (GW) GW[kh * KW + kw] += acc;
            }
          }
        }
      }
    }
  });
}

}  // namespace detail

/// 2-D cross-correlation: input [B,Cin,H,W], weight [Cout,Cin/groups,kH,kW],
/// optional bias [Cout]. Padding is applied explicitly before the sweep.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias = {}, const Conv2dOptions& opt = {}) {
  detail::require_rank4("conv2d", x.shape(), "input");
  detail::require_rank4("conv2d", w.shape(), "weight");
  if (opt.groups < 1 || opt.stride < 1 || opt.dilation < 1) {
    throw ShapeError("conv2d", "stride, dilation and groups must be >= 1");
  }
  const std::int64_t Cin = x.dim(1), Cout = w.dim(0);
  if (Cin % opt.groups != 0) {
    throw ShapeError("conv2d", "input channels (dim 1) = " + std::to_string(Cin) + " not divisible by groups = " +
                                   std::to_string(opt.groups));
  }
  if (Cout % opt.groups != 0) {
    throw ShapeError("conv2d", "output channels (weight dim 0) = " + std::to_string(Cout) +
                                   " not divisible by groups = " + std::to_string(opt.groups));
  }
  if (w.dim(1) * opt.groups != Cin) {
    throw ShapeError("conv2d", "weight dim 1 = " + std::to_string(w.dim(1)) + " but input channels / groups = " +
                                   std::to_string(Cin / opt.groups));
  }
  if (bias.defined() && !(bias.shape() == Shape{Cout})) {
    throw ShapeError("conv2d", "bias must be [" + std::to_string(Cout) + "], got " + bias.shape().str());
  }
  if (debug_checks() && !all_finite(x)) throw NumericError("conv2d: non-finite value in input");
  return detail::conv2d_valid(pad2d(x, opt.padding), w, bias, opt.stride, opt.dilation, opt.groups);
}

/// [B, C*r*r, H, W] -> [B, C, H*r, W*r].
template <class T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int r) {
  detail::require_rank4("pixel_shuffle", x.shape(), "input");
  if (r < 1) throw ShapeError("pixel_shuffle", "factor must be >= 1");
  const std::int64_t B = x.dim(0), Cr = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (Cr % (r * r) != 0) {
    throw ShapeError("pixel_shuffle", "channels (dim 1) = " + std::to_string(Cr) + " not divisible by r^2 = " +
                                          std::to_string(r * r));
  }
  const std::int64_t C = Cr / (r * r);
  const std::int64_t OH = H * r, OW = W * r;
  // src offset for each output element
  std::vector<std::int64_t> map(detail::idx(x.numel()));
  std::size_t o = 0;
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t y = 0; y < OH; ++y)
        for (std::int64_t xx = 0; xx < OW; ++xx, ++o) {
          const std::int64_t ci = c * r * r + (y % r) * r + (xx % r);
          map[o] = ((b * Cr + ci) * H + y / r) * W + xx / r;
        }
  const auto xv = x.data();
  std::vector<T> out(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = xv[detail::idx(map[i])];
  return detail::make_result<T>(Shape{B, C, OH, OW}, std::move(out), {x}, [x, map = std::move(map)](const std::vector<T>& g) {
    auto& gx = detail::grad_of(x);
    for (std::size_t i = 0; i < map.size(); ++i) gx[detail::idx(map[i])] += g[i];
  });
}

/// [B, C, H*r, W*r] -> [B, C*r*r, H, W]; exact inverse of pixel_shuffle.
template <class T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, int r) {
  detail::require_rank4("pixel_unshuffle", x.shape(), "input");
  if (r < 1) throw ShapeError("pixel_unshuffle", "factor must be >= 1");
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % r != 0 || W % r != 0) {
    throw ShapeError("pixel_unshuffle", "spatial extents " + std::to_string(H) + "x" + std::to_string(W) +
                                            " not divisible by " + std::to_string(r));
  }
  const std::int64_t OH = H / r, OW = W / r, OC = C * r * r;
  std::vector<std::int64_t> map(detail::idx(x.numel()));
  std::size_t o = 0;
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t oc = 0; oc < OC; ++oc)
      for (std::int64_t y = 0; y < OH; ++y)
        for (std::int64_t xx = 0; xx < OW; ++xx, ++o) {
          const std::int64_t c = oc / (r * r), i = (oc / r) % r, j = oc % r;
          map[o] = ((b * C + c) * H + y * r + i) * W + xx * r + j;
        }
  const auto xv = x.data();
  std::vector<T> out(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = xv[detail::idx(map[i])];
  return detail::make_result<T>(Shape{B, OC, OH, OW}, std::move(out), {x}, [x, map = std::move(map)](const std::vector<T>& g) {
    auto& gx = detail::grad_of(x);
    for (std::size_t i = 0; i < map.size(); ++i) gx[detail::idx(map[i])] += g[i];
  });
}

namespace detail {

struct LerpAxis {
  std::vector<std::int64_t> i0, i1;
  std::vector<double> frac;
};

/// Source taps for resampling one axis from n_in to n_out samples.
inline LerpAxis lerp_axis(std::int64_t n_in, std::int64_t n_out, bool align_corners) {
  LerpAxis ax;
  ax.i0.resize(static_cast<std::size_t>(n_out));
  ax.i1.resize(static_cast<std::size_t>(n_out));
  ax.frac.resize(static_cast<std::size_t>(n_out));
  for (std::int64_t d = 0; d < n_out; ++d) {
    double src;
    if (align_corners) {
      src = n_out > 1 ? static_cast<double>(d) * static_cast<double>(n_in - 1) / static_cast<double>(n_out - 1) : 0.0;
    } else {
      src = (static_cast<double>(d) + 0.5) * static_cast<double>(n_in) / static_cast<double>(n_out) - 0.5;
      src = std::max(src, 0.0);
    }
    auto lo = static_cast<std::int64_t>(std::floor(src));
    lo = std::min(lo, n_in - 1);
    const auto k = static_cast<std::size_t>(d);
    ax.i0[k] = lo;
    ax.i1[k] = std::min(lo + 1, n_in - 1);
    ax.frac[k] = src - static_cast<double>(lo);
  }
  return ax;
}

}  // namespace detail

/// Separable bilinear resampling of the spatial axes.
///
/// Values are formed as nested lerps (a + t*(b - a)), so constant regions stay
/// exactly constant at any output size.
template <class T>
Tensor<T> interpolate_bilinear(const Tensor<T>& x, std::int64_t out_h, std::int64_t out_w, bool align_corners = false) {
  detail::require_rank4("interpolate_bilinear", x.shape(), "input");
  if (out_h < 1 || out_w < 1) throw ShapeError("interpolate_bilinear", "output extents must be >= 1");
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H == out_h && W == out_w) {
    // Every tap lands on a sample with zero fraction in both conventions.
    return reshape(x, x.shape());
  }
  auto ay = detail::lerp_axis(H, out_h, align_corners);
  auto ax = detail::lerp_axis(W, out_w, align_corners);
  std::vector<T> out(detail::idx(B * C * out_h * out_w));
  const auto xv = x.data();
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const T* X = xv.data() + bc * H * W;
    T* O = out.data() + bc * out_h * out_w;
    for (std::int64_t y = 0; y < out_h; ++y) {
      const auto ky = detail::idx(y);
      const T fy = static_cast<T>(ay.frac[ky]);
      const T* r0 = X + ay.i0[ky] * W;
      const T* r1 = X + ay.i1[ky] * W;
      for (std::int64_t xx = 0; xx < out_w; ++xx) {
        const auto kx = detail::idx(xx);
        const T fx = static_cast<T>(ax.frac[kx]);
        const auto c0 = ax.i0[kx], c1 = ax.i1[kx];
        const T top = r0[c0] + fx * (r0[c1] - r0[c0]);
        const T bot = r1[c0] + fx * (r1[c1] - r1[c0]);
        O[y * out_w + xx] = top + fy * (bot - top);
      }
    }
  }
  return detail::make_result<T>(
      Shape{B, C, out_h, out_w}, std::move(out), {x},
      [x, ay = std::move(ay), ax = std::move(ax), B, C, H, W, out_h, out_w](const std::vector<T>& g) {
        auto& gx = detail::grad_of(x);
        for (std::int64_t bc = 0; bc < B * C; ++bc) {
          T* GX = gx.data() + bc * H * W;
          const T* G = g.data() + bc * out_h * out_w;
          for (std::int64_t y = 0; y < out_h; ++y) {
            const auto ky = detail::idx(y);
            const T fy = static_cast<T>(ay.frac[ky]);
            T* r0 = GX + ay.i0[ky] * W;
            T* r1 = GX + ay.i1[ky] * W;
            for (std::int64_t xx = 0; xx < out_w; ++xx) {
              const auto kx = detail::idx(xx);
              const T fx = static_cast<T>(ax.frac[kx]);
              const T v = G[y * out_w + xx];
              const auto c0 = ax.i0[kx], c1 = ax.i1[kx];
              r0[c0] += v * (T(1) - fy) * (T(1) - fx);
              r0[c1] += v * (T(1) - fy) * fx;
              r1[c0] += v * fy * (T(1) - fx);
              r1[c1] += v * fy * fx;
            }
          }
        }
      });
}

}  // namespace fqf
