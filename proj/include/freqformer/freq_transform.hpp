#pragma once

// Multi-level frequency decomposition of an image into a smooth low component
// and a signed high residual, plus the fixed (parameter-free) recomposition.
//
// Level i convolves the previous low component depthwise with the separable
// [1 2 1]/4 x [1 2 1]/4 kernel at dilation 2^i (i = 1..L) under replicate
// padding, and pushes the removed detail into the high component:
//
//   low_i  = conv(low_{i-1}, k, dilation 2^i)
//   high_i = high_{i-1} + low_{i-1} - low_i
//
// with low_0 = image and high_0 = 0. The sum low_L + high_L telescopes back to
// the image.

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "freqformer/ops.hpp"
#include "freqformer/spatial_ops.hpp"

namespace fqf {

/// The 3x3 smoothing kernel; all entries are dyadic rationals summing to 1.
template <class T>
constexpr std::array<T, 9> freq_kernel() {
  return {T(1) / 16, T(1) / 8, T(1) / 16, T(1) / 8, T(1) / 4, T(1) / 8, T(1) / 16, T(1) / 8, T(1) / 16};
}

/// Dilation used at decomposition level `level` (1-based).
constexpr int dilation_for_level(int level) { return 1 << level; }

/// Smallest spatial extent on which an L-level decomposition is defined: the
/// footprint of the level-L dilated kernel.
constexpr std::int64_t min_extent_for_levels(int levels) { return 2 * static_cast<std::int64_t>(dilation_for_level(levels)) + 1; }

inline constexpr int kMaxFreqLevels = 5;

template <class T>
struct FrequencyPair {
  Tensor<T> low;
  Tensor<T> high;
  int levels = 0;
};

namespace detail {

inline void check_decompose_args(const Shape& s, int levels) {
  if (s.rank() != 4) throw ShapeError("decompose", "image must be [B,C,H,W], got " + s.str());
  if (levels < 1 || levels > kMaxFreqLevels) {
    throw ShapeError("decompose", "levels must be in [1," + std::to_string(kMaxFreqLevels) + "], got " +
                                      std::to_string(levels));
  }
  const std::int64_t need = min_extent_for_levels(levels);
  if (s[2] < need || s[3] < need) {
    throw ShapeError("decompose", "image " + std::to_string(s[2]) + "x" + std::to_string(s[3]) + " too small for " +
                                      std::to_string(levels) + " levels; minimum size is " + std::to_string(need) + "x" +
                                      std::to_string(need));
  }
}

template <class T>
Tensor<T> depthwise_kernel(std::int64_t channels) {
  constexpr auto k = freq_kernel<T>();
  std::vector<T> w;
  w.reserve(static_cast<std::size_t>(channels * 9));
  for (std::int64_t c = 0; c < channels; ++c) w.insert(w.end(), k.begin(), k.end());
  return Tensor<T>(Shape{channels, 1, 3, 3}, std::move(w));
}

}  // namespace detail

/// One smoothing step of the recursion: depthwise kernel at the given dilation.
template <class T>
Tensor<T> smooth_level(const Tensor<T>& x, int dilation) {
  Conv2dOptions opt;
  opt.dilation = dilation;
  opt.groups = static_cast<int>(x.dim(1));
  opt.padding = Padding::uniform(dilation, PadMode::Replicate);
  return conv2d(x, detail::depthwise_kernel<T>(x.dim(1)), Tensor<T>{}, opt);
}

/// Low components low_0..low_L (index 0 is the input itself).
template <class T>
std::vector<Tensor<T>> low_pyramid(const Tensor<T>& image, int levels) {
  detail::check_decompose_args(image.shape(), levels);
  std::vector<Tensor<T>> lows{image};
  for (int i = 1; i <= levels; ++i) lows.push_back(smooth_level(lows.back(), dilation_for_level(i)));
  return lows;
}

/// L-level decomposition. Differentiable with respect to the image.
template <class T>
FrequencyPair<T> decompose(const Tensor<T>& image, int levels) {
  const auto lows = low_pyramid(image, levels);
  Tensor<T> high = Tensor<T>::zeros(image.shape());
  for (int i = 1; i <= levels; ++i) {
    high = add(high, sub(lows[static_cast<std::size_t>(i - 1)], lows[static_cast<std::size_t>(i)]));
  }
  return {lows.back(), high, levels};
}

/// Fixed composition: low + high.
template <class T>
Tensor<T> recompose_fixed(const FrequencyPair<T>& pair) {
  if (!(pair.low.shape() == pair.high.shape())) {
    throw ShapeError("recompose_fixed", "low " + pair.low.shape().str() + " and high " + pair.high.shape().str() +
                                            " differ");
  }
  return add(pair.low, pair.high);
}

/// Anisotropic total variation, summed over all channels.
template <class T>
double total_variation(const Tensor<T>& x) {
  const std::int64_t BC = x.dim(0) * x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto v = x.data();
  double tv = 0.0;
  for (std::int64_t p = 0; p < BC; ++p) {
    const T* X = v.data() + p * H * W;
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t xx = 0; xx < W; ++xx) {
        if (xx + 1 < W) tv += std::abs(static_cast<double>(X[y * W + xx + 1]) - X[y * W + xx]);
        if (y + 1 < H) tv += std::abs(static_cast<double>(X[(y + 1) * W + xx]) - X[y * W + xx]);
      }
  }
  return tv;
}

}  // namespace fqf
