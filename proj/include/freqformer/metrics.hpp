#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "freqformer/tensor.hpp"

namespace fqf {

inline constexpr double kPsnrCap = 100.0;

template <class T>
double mse(const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape() == b.shape())) throw ShapeError("mse", "shapes differ: " + a.shape().str() + " vs " + b.shape().str());
  const auto av = a.data();
  const auto bv = b.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double d = static_cast<double>(av[i]) - static_cast<double>(bv[i]);
    acc += d * d;
  }
  return av.empty() ? 0.0 : acc / static_cast<double>(av.size());
}

/// 10*log10(peak^2 / MSE), capped at 100 dB when MSE < 1e-10.
template <class T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak = 1.0) {
  if (!(a.shape() == b.shape())) throw ShapeError("psnr", "shapes differ: " + a.shape().str() + " vs " + b.shape().str());
  const double m = mse(a, b);
  if (m < 1e-10) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / m));
}

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double peak = 1.0;
};

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
inline std::vector<double> gaussian_taps(int size, double sigma) {
  std::vector<double> g(static_cast<std::size_t>(size));
  const double c = (size - 1) / 2.0;
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - c;
    g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += g[static_cast<std::size_t>(i)];
  }
  for (auto& v : g) v /= total;
  return g;
}

/// Mean SSIM over all fully-contained windows, averaged over channels (and
/// batch). Gaussian window 11x11, sigma 1.5, K1 = 0.01, K2 = 0.03.
template <class T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, const SsimOptions& opt = {}) {
  if (!(a.shape() == b.shape())) throw ShapeError("ssim", "shapes differ: " + a.shape().str() + " vs " + b.shape().str());
  if (a.rank() != 4) throw ShapeError("ssim", "expected [B,C,H,W], got " + a.shape().str());
  const std::int64_t P = a.dim(0) * a.dim(1), H = a.dim(2), W = a.dim(3);
  const int n = opt.window;
  if (H < n || W < n) {
    throw ShapeError("ssim", "image " + std::to_string(H) + "x" + std::to_string(W) + " smaller than the " +
                                 std::to_string(n) + "x" + std::to_string(n) + " window");
  }
  const auto taps = gaussian_taps(n, opt.sigma);
  const double c1 = (opt.k1 * opt.peak) * (opt.k1 * opt.peak);
  const double c2 = (opt.k2 * opt.peak) * (opt.k2 * opt.peak);
  const std::int64_t OH = H - n + 1, OW = W - n + 1;

  // Separable filter of one plane into the valid region.
  auto filter = [&](const std::vector<double>& src) {
    std::vector<double> rows(static_cast<std::size_t>(H * OW));
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < OW; ++x) {
        double acc = 0.0;
        for (int k = 0; k < n; ++k) acc += taps[static_cast<std::size_t>(k)] * src[static_cast<std::size_t>(y * W + x + k)];
        rows[static_cast<std::size_t>(y * OW + x)] = acc;
      }
    std::vector<double> out(static_cast<std::size_t>(OH * OW));
    for (std::int64_t y = 0; y < OH; ++y)
      for (std::int64_t x = 0; x < OW; ++x) {
        double acc = 0.0;
        for (int k = 0; k < n; ++k) acc += taps[static_cast<std::size_t>(k)] * rows[static_cast<std::size_t>((y + k) * OW + x)];
        out[static_cast<std::size_t>(y * OW + x)] = acc;
      }
    return out;
  };

  const auto av = a.data();
  const auto bv = b.data();
  double total = 0.0;
  const auto plane = static_cast<std::size_t>(H * W);
  for (std::int64_t p = 0; p < P; ++p) {
    std::vector<double> x(plane), y(plane), xx(plane), yy(plane), xy(plane);
    for (std::size_t i = 0; i < plane; ++i) {
      x[i] = av[static_cast<std::size_t>(p) * plane + i];
      y[i] = bv[static_cast<std::size_t>(p) * plane + i];
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter(x), my = filter(y), sxx = filter(xx), syy = filter(yy), sxy = filter(xy);
    double acc = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i];
      const double vy = syy[i] - my[i] * my[i];
      const double cov = sxy[i] - mx[i] * my[i];
      acc += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    total += acc / static_cast<double>(mx.size());
  }
  return total / static_cast<double>(P);
}

}  // namespace fqf
