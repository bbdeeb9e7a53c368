#pragma once

// Synthetic moire pairs and natural-content test cards.
//
// A moire image is derived from a clean one as
//
//   moire_c = clamp(clean_c * (1 + a * sin(2*pi*(fx_c*x + fy_c*y + k*(x^2 + y^2)) + phi_c)) + delta_c, 0, 1)
//
// with per-channel carriers (fx_c, fy_c), per-channel phases phi_c, amplitude
// a, curvature k and a global colour shift delta.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "freqformer/image_io.hpp"
#include "freqformer/rng.hpp"
#include "freqformer/tensor.hpp"

namespace fqf {

struct MoireParams {
  std::array<double, 3> fx{0.0, 0.0, 0.0};      // cycles / pixel
  std::array<double, 3> fy{0.0, 0.0, 0.0};
  std::array<double, 3> phase{0.0, 0.0, 0.0};   // radians
  double amplitude = 0.0;                       // a in [0, 0.5]
  double curvature = 0.0;                       // cycles / pixel^2
  std::array<double, 3> shift{0.0, 0.0, 0.0};   // delta in [-0.1, 0.1]^3
  std::uint64_t seed = 0;

  /// Largest local carrier frequency along either axis on an H x W grid.
  double max_local_frequency(std::int64_t H, std::int64_t W) const {
    double m = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      for (double x : {0.0, static_cast<double>(W - 1)})
        m = std::max(m, std::abs(fx[c] + 2.0 * curvature * x));
      for (double y : {0.0, static_cast<double>(H - 1)})
        m = std::max(m, std::abs(fy[c] + 2.0 * curvature * y));
    }
    return m;
  }

  void validate(std::int64_t H, std::int64_t W) const {
    if (!(amplitude >= 0.0 && amplitude <= 0.5)) throw ConfigError("moire amplitude must lie in [0, 0.5]");
    for (double d : shift) {
      if (!(d >= -0.1 && d <= 0.1)) throw ConfigError("moire colour shift must lie in [-0.1, 0.1]");
    }
    const double f = max_local_frequency(H, W);
    if (!(f < 0.5)) {
      throw ConfigError("moire carrier reaches " + std::to_string(f) + " cycles/pixel, at or above Nyquist (0.5)");
    }
  }

  std::string str() const {
    std::ostringstream os;
    os.precision(17);
    auto list = [&os](const std::array<double, 3>& v) { os << v[0] << ',' << v[1] << ',' << v[2]; };
    os << "fx=";
    list(fx);
    os << "\nfy=";
    list(fy);
    os << "\nphase=";
    list(phase);
    os << "\namplitude=" << amplitude << "\ncurvature=" << curvature << "\nshift=";
    list(shift);
    os << "\nseed=" << seed << '\n';
    return os.str();
  }
};

struct SamplePair {
  Tensor<float> moire;
  Tensor<float> clean;
  MoireParams meta;
};

template <class T>
Tensor<T> apply_moire(const Tensor<T>& clean, const MoireParams& p) {
  if (clean.rank() != 4 || clean.dim(1) != 3) throw ShapeError("gen_moire_pair", "expected [B,3,H,W], got " + clean.shape().str());
  const std::int64_t B = clean.dim(0), H = clean.dim(2), W = clean.dim(3);
  p.validate(H, W);
  std::vector<T> out(clean.data().begin(), clean.data().end());
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < 3; ++c) {
      const auto C = static_cast<std::size_t>(c);
      T* X = out.data() + (b * 3 + c) * H * W;
      for (std::int64_t y = 0; y < H; ++y)
        for (std::int64_t x = 0; x < W; ++x) {
          const double xd = static_cast<double>(x), yd = static_cast<double>(y);
          const double arg = 2.0 * std::numbers::pi * (p.fx[C] * xd + p.fy[C] * yd + p.curvature * (xd * xd + yd * yd)) + p.phase[C];
          const double v = static_cast<double>(X[y * W + x]) * (1.0 + p.amplitude * std::sin(arg)) + p.shift[C];
          X[y * W + x] = static_cast<T>(std::clamp(v, 0.0, 1.0));
        }
    }
  return Tensor<T>(clean.shape(), std::move(out));
}

inline SamplePair gen_moire_pair(const Tensor<float>& clean, const MoireParams& params) {
  for (float v : clean.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw ConfigError("clean image values must lie in [0, 1]");
  }
  return {apply_moire(clean, params), clean, params};
}

/// Random degradation: carrier magnitude in [0.1, 0.4] cycles/pixel at a random
/// orientation, small per-channel detuning, phases 120 degrees apart plus
/// jitter, amplitude in [0.1, 0.3], curvature kept below Nyquist on the grid,
/// shift in [-0.08, 0.08]^3.
inline MoireParams sample_moire_params(Rng& rng, std::int64_t H, std::int64_t W) {
  MoireParams p;
  p.seed = rng.next_u64();
  Rng r(p.seed);
  const double f = r.uniform(0.1, 0.4);
  const double theta = r.uniform(0.0, std::numbers::pi);
  const double phi0 = r.uniform(0.0, 2.0 * std::numbers::pi);
  for (std::size_t c = 0; c < 3; ++c) {
    const double fc = f * (1.0 + r.uniform(-0.03, 0.03));
    p.fx[c] = fc * std::cos(theta);
    p.fy[c] = fc * std::sin(theta);
    p.phase[c] = phi0 + 2.0 * std::numbers::pi * static_cast<double>(c) / 3.0 + r.uniform(-0.3, 0.3);
  }
  p.amplitude = r.uniform(0.1, 0.3);
  // Curvature budget: keep the local frequency under 0.48 everywhere.
  double base = 0.0;
  for (std::size_t c = 0; c < 3; ++c) base = std::max({base, std::abs(p.fx[c]), std::abs(p.fy[c])});
  const double span = 2.0 * static_cast<double>(std::max(H, W));
  const double kmax = std::max(0.0, (0.48 - base) / span);
  p.curvature = r.uniform(-1.0, 1.0) * std::min(kmax, 4e-4);
  for (auto& d : p.shift) d = r.uniform(-0.08, 0.08);
  p.validate(H, W);
  return p;
}

// ---------------------------------------------------------------------------
// Test cards

/// Per-channel affine colour ramp in [0.15, 0.85].
inline Tensor<float> ramp_card(std::int64_t H, std::int64_t W, Rng& rng) {
  std::vector<float> v(static_cast<std::size_t>(3 * H * W));
  for (std::int64_t c = 0; c < 3; ++c) {
    const double a = rng.uniform(0.15, 0.85), b = rng.uniform(0.15, 0.85), d = rng.uniform(0.15, 0.85);
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        const double u = static_cast<double>(x) / static_cast<double>(std::max<std::int64_t>(1, W - 1));
        const double t = static_cast<double>(y) / static_cast<double>(std::max<std::int64_t>(1, H - 1));
        v[static_cast<std::size_t>((c * H + y) * W + x)] = static_cast<float>(a + (b - a) * u * 0.5 + (d - a) * t * 0.5);
      }
  }
  return Tensor<float>(Shape{1, 3, H, W}, std::move(v));
}

/// Zero-mean noise with amplitude spectrum 1/f^beta (random phases), scaled to
/// unit standard deviation. One plane of H x W.
inline std::vector<double> fourier_noise(std::int64_t H, std::int64_t W, double beta, Rng& rng) {
  using cd = std::complex<double>;
  std::vector<cd> spec(static_cast<std::size_t>(H * W));
  for (std::int64_t ky = 0; ky < H; ++ky)
    for (std::int64_t kx = 0; kx < W; ++kx) {
      const double fy = static_cast<double>(ky <= H / 2 ? ky : ky - H) / static_cast<double>(H);
      const double fx = static_cast<double>(kx <= W / 2 ? kx : kx - W) / static_cast<double>(W);
      const double f = std::hypot(fx, fy);
      const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
      spec[static_cast<std::size_t>(ky * W + kx)] = f > 0.0 ? std::polar(std::pow(f, -beta), phase) : cd(0.0);
    }
  // Separable inverse DFT: rows over kx, then columns over ky.
  std::vector<cd> rows(static_cast<std::size_t>(H * W));
  for (std::int64_t ky = 0; ky < H; ++ky)
    for (std::int64_t x = 0; x < W; ++x) {
      cd acc = 0.0;
      for (std::int64_t kx = 0; kx < W; ++kx)
        acc += spec[static_cast<std::size_t>(ky * W + kx)] *
               std::polar(1.0, 2.0 * std::numbers::pi * static_cast<double>(kx * x % W) / static_cast<double>(W));
      rows[static_cast<std::size_t>(ky * W + x)] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(H * W));
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x) {
      cd acc = 0.0;
      for (std::int64_t ky = 0; ky < H; ++ky)
        acc += rows[static_cast<std::size_t>(ky * W + x)] *
               std::polar(1.0, 2.0 * std::numbers::pi * static_cast<double>(ky * y % H) / static_cast<double>(H));
      out[static_cast<std::size_t>(y * W + x)] = acc.real();
    }
  double mean = 0.0, sq = 0.0;
  for (double v : out) mean += v;
  mean /= static_cast<double>(out.size());
  for (double v : out) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(out.size()));
  for (double& v : out) v = sd > 0.0 ? (v - mean) / sd : 0.0;
  return out;
}

/// Background of 1/f^beta noise around mid-grey, one plane per channel.
inline Tensor<float> noise_card(std::int64_t H, std::int64_t W, Rng& rng, double beta = 1.5, double contrast = 0.12) {
  std::vector<float> v(static_cast<std::size_t>(3 * H * W));
  const auto shared = fourier_noise(H, W, beta, rng);
  for (std::int64_t c = 0; c < 3; ++c) {
    const auto own = fourier_noise(H, W, beta, rng);
    const double base = rng.uniform(0.35, 0.65);
    for (std::int64_t p = 0; p < H * W; ++p) {
      const auto P = static_cast<std::size_t>(p);
      const double n = 0.8 * shared[P] + 0.6 * own[P];
      v[static_cast<std::size_t>(c * H * W + p)] = static_cast<float>(std::clamp(base + contrast * n, 0.0, 1.0));
    }
  }
  return Tensor<float>(Shape{1, 3, H, W}, std::move(v));
}

/// Paints soft-edged discs and rectangles over `base` (edge ramp of ~2 px).
inline Tensor<float> paint_shapes(const Tensor<float>& base, int count, Rng& rng, double softness = 2.0) {
  const std::int64_t H = base.dim(2), W = base.dim(3);
  std::vector<float> v(base.data().begin(), base.data().end());
  for (int s = 0; s < count; ++s) {
    const bool disc = rng.uniform() < 0.5;
    const double cx = rng.uniform(0.0, static_cast<double>(W)), cy = rng.uniform(0.0, static_cast<double>(H));
    const double rx = rng.uniform(0.08, 0.3) * static_cast<double>(W), ry = rng.uniform(0.08, 0.3) * static_cast<double>(H);
    const std::array<double, 3> colour{rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
    const double opacity = rng.uniform(0.4, 0.9);
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
        // Signed distance (pixels, negative inside), approximate for ellipses.
        const double d = disc ? (std::hypot(dx / rx, dy / ry) - 1.0) * std::min(rx, ry)
                              : std::max(std::abs(dx) - rx, std::abs(dy) - ry);
        const double t = std::clamp(0.5 - d / (2.0 * softness), 0.0, 1.0);
        const double m = opacity * t * t * (3.0 - 2.0 * t);
        for (std::int64_t c = 0; c < 3; ++c) {
          auto& px = v[static_cast<std::size_t>((c * H + y) * W + x)];
          px = static_cast<float>((1.0 - m) * px + m * colour[static_cast<std::size_t>(c)]);
        }
      }
  }
  return Tensor<float>(base.shape(), std::move(v));
}

/// Natural-content stand-in: colour ramp plus 1/f noise texture plus a few
/// soft-edged shapes. Values in [0, 1].
inline Tensor<float> natural_card(std::int64_t H, std::int64_t W, Rng& rng) {
  const Tensor<float> ramp = ramp_card(H, W, rng);
  const Tensor<float> noise = noise_card(H, W, rng);
  std::vector<float> v(static_cast<std::size_t>(3 * H * W));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::clamp(0.5f * ramp.data()[i] + 0.5f * noise.data()[i], 0.0f, 1.0f);
  const int shapes = 2 + static_cast<int>(rng.below(4));
  return paint_shapes(Tensor<float>(Shape{1, 3, H, W}, std::move(v)), shapes, rng);
}

// ---------------------------------------------------------------------------
// Dataset directories: NNN_moire.png / NNN_clean.png (+ NNN_meta.txt).

inline std::string pair_stem(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%03zu", index);
  return buf;
}

inline void write_dataset(const std::string& dir, const std::vector<SamplePair>& pairs) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto base = (std::filesystem::path(dir) / pair_stem(i)).string();
    save_png(pairs[i].moire, base + "_moire.png");
    save_png(pairs[i].clean, base + "_clean.png");
    std::ofstream meta(base + "_meta.txt", std::ios::trunc);
    if (!meta) throw IoError("cannot write " + base + "_meta.txt");
    meta << pairs[i].meta.str();
  }
}

struct DatasetItem {
  std::string id;
  Tensor<float> moire;
  Tensor<float> clean;
};

/// Loads every NNN_moire.png that has a matching NNN_clean.png, ordered by id.
inline std::vector<DatasetItem> load_dataset(const std::string& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("no such directory: " + dir);
  std::map<std::string, std::filesystem::path> moire;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    const std::string suffix = "_moire.png";
    if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
      moire.emplace(name.substr(0, name.size() - suffix.size()), e.path());
    }
  }
  std::vector<DatasetItem> items;
  for (const auto& [id, path] : moire) {
    const auto clean = std::filesystem::path(dir) / (id + "_clean.png");
    if (!std::filesystem::exists(clean)) throw IoError("pair " + id + " has no " + clean.filename().string());
    DatasetItem item{id, load_png(path.string()), load_png(clean.string())};
    if (!(item.moire.shape() == item.clean.shape())) {
      throw ShapeError("load_dataset", "pair " + id + " has mismatched extents " + item.moire.shape().str() + " vs " +
                                           item.clean.shape().str());
    }
    items.push_back(std::move(item));
  }
  if (items.empty()) throw IoError("no *_moire.png / *_clean.png pairs in " + dir);
  return items;
}

}  // namespace fqf
