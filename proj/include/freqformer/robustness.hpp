#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "freqformer/freq_transform.hpp"
#include "freqformer/metrics.hpp"

namespace fqf {

struct ResizeRobustnessReport {
  double psnr_low = 0.0;   // mean over images, dB
  double psnr_high = 0.0;  // mean over images, dB
  std::vector<double> per_image_low;
  std::vector<double> per_image_high;
};

/// Downsample by `factor` and restore to the original size (bilinear both ways).
template <class T>
Tensor<T> resize_round_trip(const Tensor<T>& x, double factor) {
  const auto h = std::max<std::int64_t>(1, std::llround(static_cast<double>(x.dim(2)) * factor));
  const auto w = std::max<std::int64_t>(1, std::llround(static_cast<double>(x.dim(3)) * factor));
  return interpolate_bilinear(interpolate_bilinear(x, h, w), x.dim(2), x.dim(3));
}

/// How much of each frequency component survives a resize round trip: every
/// image is decomposed, each component is downsampled by `factor` and restored,
/// and the PSNR of restored vs. original component is averaged over images.
template <class T>
ResizeRobustnessReport resize_robustness_report(const std::vector<Tensor<T>>& images, double factor, int levels = 3) {
  if (images.empty()) throw ShapeError("resize_robustness_report", "image list is empty");
  if (!(factor > 0.0 && factor < 1.0)) throw ShapeError("resize_robustness_report", "factor must be in (0, 1)");
  NoGradGuard no_grad;
  ResizeRobustnessReport r;
  for (const auto& img : images) {
    const auto pair = decompose(img, levels);
    r.per_image_low.push_back(psnr(resize_round_trip(pair.low, factor), pair.low));
    r.per_image_high.push_back(psnr(resize_round_trip(pair.high, factor), pair.high));
  }
  for (std::size_t i = 0; i < images.size(); ++i) {
    r.psnr_low += r.per_image_low[i];
    r.psnr_high += r.per_image_high[i];
  }
  r.psnr_low /= static_cast<double>(images.size());
  r.psnr_high /= static_cast<double>(images.size());
  return r;
}

}  // namespace fqf
