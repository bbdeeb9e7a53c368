#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace fqf {

/// Seeded generator whose draws are identical across standard libraries.
///
/// The engine is std::mt19937_64 (fully specified by the standard); the
/// distributions are computed here because the std:: ones are not.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::int64_t below(std::int64_t n) {
    if (n <= 1) return 0;
    const auto un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    std::uint64_t r = engine_();
    while (r >= limit) r = engine_();
    return static_cast<std::int64_t>(r % un);
  }

  /// Standard normal via Box-Muller (one value per call, the pair's sine half is cached).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Derive an independent stream, e.g. one per component.
  Rng fork() { return Rng(engine_() ^ 0x9E3779B97F4A7C15ull); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace fqf
