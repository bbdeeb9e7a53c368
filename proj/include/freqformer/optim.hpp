#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "freqformer/params.hpp"

namespace fqf {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moments are kept in double.
template <class T>
class Adam {
 public:
  Adam(ParamList<T> params, AdamOptions opt = {}) : params_(std::move(params)), opt_(opt) {
    for (const auto& [name, t] : params_) {
      m_.emplace_back(static_cast<std::size_t>(t.numel()), 0.0);
      v_.emplace_back(static_cast<std::size_t>(t.numel()), 0.0);
    }
  }

  std::int64_t steps() const { return t_; }
  const ParamList<T>& params() const { return params_; }
  const std::vector<double>& first_moment(std::size_t i) const { return m_[i]; }
  const std::vector<double>& second_moment(std::size_t i) const { return v_[i]; }

  /// Applies one update. A non-finite gradient aborts before any parameter changes.
  void step(double lr) {
    for (const auto& [name, t] : params_) {
      for (T g : t.grad()) {
        if (!std::isfinite(static_cast<double>(g))) throw NumericError("non-finite gradient in " + name);
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor<T> p = params_[i].second;
      const auto g = p.grad();
      auto w = p.mutable_data();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        const double gj = g.empty() ? 0.0 : static_cast<double>(g[j]);
        m[j] = opt_.beta1 * m[j] + (1.0 - opt_.beta1) * gj;
        v[j] = opt_.beta2 * v[j] + (1.0 - opt_.beta2) * gj * gj;
        const double mh = m[j] / c1, vh = v[j] / c2;
        w[j] = static_cast<T>(static_cast<double>(w[j]) - lr * mh / (std::sqrt(vh) + opt_.eps));
      }
    }
  }

 private:
  ParamList<T> params_;
  AdamOptions opt_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
};

/// Global L2 norm of all gradients.
template <class T>
double grad_norm(const ParamList<T>& params) {
  double acc = 0.0;
  for (const auto& [name, t] : params)
    for (T g : t.grad()) acc += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(acc);
}

/// Rescales gradients so their global norm is at most `max_norm` (no-op when
/// max_norm <= 0). Returns the norm before clipping.
template <class T>
double clip_grad_norm(const ParamList<T>& params, double max_norm) {
  const double norm = grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm && std::isfinite(norm)) {
    const double s = max_norm / norm;
    for (const auto& item : params) {
      Tensor<T> t = item.second;
      for (auto& g : t.mutable_grad()) g = static_cast<T>(static_cast<double>(g) * s);
    }
  }
  return norm;
}

/// lr0 * 0.5 * (1 + cos(pi * (epoch mod cycle) / cycle)); restarts every cycle.
inline double cosine_cycle_lr(std::int64_t epoch, double lr0, std::int64_t cycle) {
  if (cycle < 1) throw ConfigError("cycle_epochs must be >= 1");
  const double phase = static_cast<double>(epoch % cycle) / static_cast<double>(cycle);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * phase));
}

}  // namespace fqf
