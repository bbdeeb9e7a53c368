#pragma once

// Central finite-difference gradient checks in double precision, and the
// suite used by the `gradcheck` command.
//
// Every check reduces the function under test to a scalar by a fixed random
// projection, sum(f(x) * R), so that all output entries contribute.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "freqformer/blocks.hpp"
#include "freqformer/freq_transform.hpp"
#include "freqformer/model.hpp"
#include "freqformer/training.hpp"

namespace fqf {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 1e-4;
  std::size_t checked = 0;

  bool passed() const { return checked > 0 && max_rel_error <= tolerance; }
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  std::size_t max_entries_per_tensor = 0;  // 0 checks every entry
  std::uint64_t seed = 1;
};

/// |a - n| / max(|a|, |n|, 1e-6)
inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

/// Compares backward() against central differences of `f` with respect to
/// every tensor in `wrt` (which must be leaves that require grad).
inline GradCheckResult gradcheck(const std::string& name, const std::function<Tensor<double>()>& f,
                                 const std::vector<Tensor<double>>& wrt, const GradCheckOptions& opt = {}) {
  GradCheckResult r{name, 0.0, opt.tolerance, 0};
  for (auto t : wrt) t.zero_grad();
  backward(f());
  std::vector<std::vector<double>> analytic;
  for (const auto& t : wrt) {
    if (t.has_grad()) analytic.emplace_back(t.grad().begin(), t.grad().end());
    else analytic.emplace_back(static_cast<std::size_t>(t.numel()), 0.0);
  }
  NoGradGuard no_grad;
  Rng rng(opt.seed);
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    Tensor<double> t = wrt[k];
    const auto n = static_cast<std::size_t>(t.numel());
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    if (opt.max_entries_per_tensor > 0 && n > opt.max_entries_per_tensor) {
      for (std::size_t i = 0; i < opt.max_entries_per_tensor; ++i) {
        std::swap(idx[i], idx[i + static_cast<std::size_t>(rng.below(static_cast<std::int64_t>(n - i)))]);
      }
      idx.resize(opt.max_entries_per_tensor);
    }
    auto data = t.mutable_data();
    for (std::size_t i : idx) {
      const double v = data[i];
      data[i] = v + opt.step;
      const double fp = f().item();
      data[i] = v - opt.step;
      const double fm = f().item();
      data[i] = v;
      const double numeric = (fp - fm) / (2.0 * opt.step);
      r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic[k][i], numeric));
      ++r.checked;
    }
  }
  return r;
}

namespace detail {

inline Tensor<double> leaf(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return make_parameter(Tensor<double>::uniform(s, rng, lo, hi));
}

/// Values in [lo, hi] with random sign: keeps |x| away from kinks at zero.
inline Tensor<double> signed_leaf(const Shape& s, Rng& rng, double lo, double hi) {
  Tensor<double> t = Tensor<double>::uniform(s, rng, lo, hi);
  for (auto& v : t.mutable_data()) v = rng.uniform() < 0.5 ? -v : v;
  return make_parameter(t);
}

/// Scalar probe sum(y * R) for a fixed random R of y's shape.
class Projector {
 public:
  explicit Projector(std::uint64_t seed) : rng_(seed) {}

  Tensor<double> operator()(const Tensor<double>& y) {
    if (!r_.defined() || !(r_.shape() == y.shape())) r_ = Tensor<double>::uniform(y.shape(), rng_, -1.0, 1.0);
    return sum(mul(y, r_));
  }

 private:
  Rng rng_;
  Tensor<double> r_;
};

inline void append(std::vector<GradCheckResult>& out, const std::string& name, const std::function<Tensor<double>(Projector&)>& f,
                   const std::vector<Tensor<double>>& wrt, const GradCheckOptions& opt) {
  Projector proj(opt.seed * 7919 + out.size());
  out.push_back(gradcheck(name, [&] { return f(proj); }, wrt, opt));
}

template <class Module>
std::vector<Tensor<double>> params_of(const Module& m) {
  ParamList<double> p;
  m.collect("m", p);
  std::vector<Tensor<double>> out;
  for (const auto& [name, t] : p) out.push_back(t);
  return out;
}

}  // namespace detail

/// Every differentiable primitive on three random shapes each.
inline std::vector<GradCheckResult> gradcheck_ops(const GradCheckOptions& opt = {}) {
  using detail::append;
  using detail::leaf;
  using P = detail::Projector;
  std::vector<GradCheckResult> out;
  Rng rng(opt.seed);
  const std::vector<Shape> shapes{Shape{2, 3}, Shape{1, 2, 3, 4}, Shape{2, 1, 5, 3}};

  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& s = shapes[i];
    const std::string tag = " " + s.str();
    auto a = leaf(s, rng), b = leaf(s, rng);
    auto bs = leaf(Shape{s[-1]}, rng);  // broadcast along the last axis
    auto pos = leaf(s, rng, 0.5, 2.0);
    auto away = detail::signed_leaf(s, rng, 0.2, 1.0);
    append(out, "add" + tag, [=](P& p) { return p(add(a, bs)); }, {a, bs}, opt);
    append(out, "sub" + tag, [=](P& p) { return p(sub(a, b)); }, {a, b}, opt);
    append(out, "mul" + tag, [=](P& p) { return p(mul(a, b)); }, {a, b}, opt);
    append(out, "div" + tag, [=](P& p) { return p(div(a, pos)); }, {a, pos}, opt);
    append(out, "add_scalar" + tag, [=](P& p) { return p(add_scalar(a, 0.7)); }, {a}, opt);
    append(out, "mul_scalar" + tag, [=](P& p) { return p(mul_scalar(a, -1.3)); }, {a}, opt);
    append(out, "pow_scalar" + tag, [=](P& p) { return p(pow_scalar(pos, 2.5)); }, {pos}, opt);
    append(out, "abs" + tag, [=](P& p) { return p(abs(away)); }, {away}, opt);
    append(out, "gelu" + tag, [=](P& p) { return p(gelu(a)); }, {a}, opt);
    append(out, "sigmoid" + tag, [=](P& p) { return p(sigmoid(a)); }, {a}, opt);
    append(out, "sum" + tag, [=](P&) { return mul_scalar(sum(mul(a, a)), 0.5); }, {a}, opt);
    append(out, "mean" + tag, [=](P&) { return mean(mul(a, b)); }, {a, b}, opt);
    append(out, "sum_axis" + tag, [=](P& p) { return p(sum_axis(a, 0)); }, {a}, opt);
    append(out, "reshape" + tag, [=](P& p) { return p(reshape(a, Shape{s.numel()})); }, {a}, opt);
    append(out, "transpose_last2" + tag, [=](P& p) { return p(transpose_last2(a)); }, {a}, opt);
    append(out, "concat" + tag, [=](P& p) { return p(concat(std::vector<Tensor<double>>{a, b}, -1)); }, {a, b}, opt);
    append(out, "slice" + tag, [=](P& p) { return p(slice(a, -1, 1, s[-1])); }, {a}, opt);
    append(out, "softmax" + tag, [=](P& p) { return p(softmax(mul_scalar(a, 3.0), -1)); }, {a}, opt);
    append(out, "l2_normalize" + tag, [=](P& p) { return p(l2_normalize(a, -1)); }, {a}, opt);
    append(out, "l1_loss" + tag, [=](P&) { return l1_loss(away, mul_scalar(away, 0.5)); }, {away}, opt);
  }

  const std::vector<std::pair<Shape, Shape>> mm{{Shape{3, 4}, Shape{4, 2}}, {Shape{2, 3, 4}, Shape{2, 4, 5}},
                                                {Shape{2, 2, 3, 2}, Shape{1, 2, 2, 3}}};
  for (const auto& [sa, sb] : mm) {
    auto a = leaf(sa, rng), b = leaf(sb, rng);
    append(out, "matmul " + sa.str() + "x" + sb.str(), [=](P& p) { return p(matmul(a, b)); }, {a, b}, opt);
  }

  const std::vector<Shape> img{Shape{1, 3, 5, 6}, Shape{2, 4, 4, 4}, Shape{1, 2, 7, 3}};
  for (const auto& s : img) {
    const std::string tag = " " + s.str();
    const std::int64_t C = s[1];
    auto x = leaf(s, rng);
    auto g = leaf(Shape{C}, rng, 0.5, 1.5), o = leaf(Shape{C}, rng);
    append(out, "layer_norm_channel" + tag, [=](P& p) { return p(layer_norm_channel(x, g, o)); }, {x, g, o}, opt);
    append(out, "crop" + tag, [=](P& p) { return p(crop(x, 1, 1, s[2] - 2, s[3] - 1)); }, {x}, opt);
    for (auto mode : {PadMode::Zero, PadMode::Replicate, PadMode::Reflect}) {
      append(out, "pad2d mode " + std::to_string(static_cast<int>(mode)) + tag,
             [=](P& p) { return p(pad2d(x, Padding{mode, 1, 2, 2, 1})); }, {x}, opt);
    }
    append(out, "interpolate_bilinear up" + tag, [=](P& p) { return p(interpolate_bilinear(x, 2 * s[2] + 1, 3 * s[3])); }, {x}, opt);
    append(out, "interpolate_bilinear down" + tag, [=](P& p) { return p(interpolate_bilinear(x, 2, 2)); }, {x}, opt);
    append(out, "interpolate_bilinear corners" + tag,
           [=](P& p) { return p(interpolate_bilinear(x, s[2] + 2, s[3] + 3, true)); }, {x}, opt);
  }

  // Convolution grid: dilation x groups x padding, plus a strided case.
  for (int dilation : {1, 2, 4}) {
    for (int depthwise = 0; depthwise < 2; ++depthwise) {
      for (auto mode : {PadMode::Zero, PadMode::Replicate}) {
        const std::int64_t C = 3, Cout = depthwise ? 3 : 4;
        auto x = leaf(Shape{1, C, 9, 10}, rng);
        auto w = leaf(Shape{Cout, depthwise ? 1 : C, 3, 3}, rng);
        auto bias = leaf(Shape{Cout}, rng);
        Conv2dOptions co;
        co.dilation = dilation;
        co.groups = depthwise ? static_cast<int>(C) : 1;
        co.padding = Padding::uniform(dilation, mode);
        append(out,
               "conv2d d" + std::to_string(dilation) + (depthwise ? " depthwise" : " dense") +
                   (mode == PadMode::Zero ? " zero" : " replicate"),
               [=](P& p) { return p(conv2d(x, w, bias, co)); }, {x, w, bias}, opt);
      }
    }
  }
  {
    auto x = leaf(Shape{2, 2, 7, 8}, rng);
    auto w = leaf(Shape{4, 2, 3, 3}, rng);
    Conv2dOptions co;
    co.stride = 2;
    co.padding = Padding::uniform(1);
    append(out, "conv2d stride 2", [=](P& p) { return p(conv2d(x, w, Tensor<double>{}, co)); }, {x, w}, opt);
  }

  for (const auto& s : {Shape{1, 4, 2, 3}, Shape{2, 8, 3, 5}, Shape{1, 18, 2, 2}}) {
    const int r = s[1] == 18 ? 3 : 2;
    auto x = leaf(s, rng);
    append(out, "pixel_shuffle " + s.str(), [=](P& p) { return p(pixel_shuffle(x, r)); }, {x}, opt);
    auto y = leaf(Shape{s[0], s[1] / (r * r), s[2] * r, s[3] * r}, rng);
    append(out, "pixel_unshuffle " + y.shape().str(), [=](P& p) { return p(pixel_unshuffle(y, r)); }, {y}, opt);
  }

  for (int levels : {1, 2, 3}) {
    auto x = leaf(Shape{1, 3, 18, 20}, rng);
    append(out, "decompose L" + std::to_string(levels), [=](P& p) {
      const auto pair = decompose(x, levels);
      return add(p(pair.low), mul_scalar(sum(mul(pair.high, pair.high)), 0.5));
    }, {x}, opt);
  }
  return out;
}

/// Learned blocks with every parameter randomized (zero-initialized
/// projections would otherwise hide whole sub-graphs).
inline std::vector<GradCheckResult> gradcheck_blocks(const GradCheckOptions& opt = {}) {
  using detail::append;
  using P = detail::Projector;
  std::vector<GradCheckResult> out;
  Rng rng(opt.seed + 101);
  auto randomize = [&rng](const auto& module) {
    ParamList<double> p;
    module.collect("m", p);
    randomize_parameters(p, rng, 0.3);
  };
  auto with_input = [](std::vector<Tensor<double>> params, const Tensor<double>& x) {
    params.push_back(x);
    return params;
  };

  {
    RDDB<double> m(8, 4, rng);
    randomize(m);
    auto x = detail::leaf(Shape{1, 8, 6, 6}, rng);
    append(out, "rddb", [=](P& p) { return p(m(x)); }, with_input(detail::params_of(m), x), opt);
  }
  {
    ChannelAttention<double> m(4, 2, rng);
    randomize(m);
    auto x = detail::leaf(Shape{1, 4, 3, 3}, rng);
    append(out, "channel_attention", [=](P& p) { return p(m(x)); }, with_input(detail::params_of(m), x), opt);
  }
  {
    GatedFFN<double> m(4, 6, rng);
    randomize(m);
    auto x = detail::leaf(Shape{2, 4, 4, 3}, rng);
    append(out, "gated_ffn", [=](P& p) { return p(m(x)); }, with_input(detail::params_of(m), x), opt);
  }
  {
    SACAConfig cfg{8, 2, 2, 1.5, 4};
    SACABlock<double> m(cfg, rng, {16});
    randomize(m);
    auto x = detail::leaf(Shape{1, 8, 4, 4}, rng);
    auto side = detail::leaf(Shape{1, 16, 2, 2}, rng);
    auto wrt = with_input(detail::params_of(m), x);
    wrt.push_back(side);
    append(out, "saca_block N=2 with fusion", [=](P& p) { return p(m(x, {side})); }, wrt, opt);
  }
  {
    Downsample<double> d(4, rng);
    Upsample<double> u(8, rng);
    randomize(d);
    randomize(u);
    auto x = detail::leaf(Shape{1, 4, 4, 6}, rng);
    append(out, "downsample", [=](P& p) { return p(d(x)); }, with_input(detail::params_of(d), x), opt);
    auto y = detail::leaf(Shape{1, 8, 2, 3}, rng);
    append(out, "upsample", [=](P& p) { return p(u(y)); }, with_input(detail::params_of(u), y), opt);
  }
  return out;
}

/// Tiny full model (width 4, 16x16 input, two frequency levels) through the
/// joint path: decompose, both branches, low-feature alignment, FCT. A sample
/// of entries per parameter tensor is checked.
inline std::vector<GradCheckResult> gradcheck_model(const GradCheckOptions& base = {}) {
  GradCheckOptions opt = base;
  opt.tolerance = std::max(opt.tolerance, 1e-3);
  if (opt.max_entries_per_tensor == 0) opt.max_entries_per_tensor = 3;
  ModelConfig cfg;
  cfg.base_channels = 4;
  cfg.freq_levels = 2;
  cfg.rddb_growth = 2;
  cfg.fct_heads = 2;
  Freqformer<double> model(cfg, opt.seed);
  Rng rng(opt.seed + 202);
  randomize_parameters(model.parameters(), rng, 0.15);
  auto image = detail::leaf(Shape{1, 3, 16, 16}, rng, 0.0, 1.0);

  TrainConfig tc;
  tc.crop_side = 8;
  tc.resize_side = 8;
  const CropBox box{4, 8, 12, 16};
  detail::Projector proj(opt.seed + 303);
  auto f = [&]() {
    const auto pair = decompose(image, cfg.freq_levels);
    Stage2Sample<double> s;
    s.high_in = crop_box(pair.high, box);
    s.low_in = interpolate_bilinear(pair.low, tc.resize_side, tc.resize_side);
    s.box = box;
    s.full_h = 16;
    s.full_w = 16;
    return proj(joint_forward(model, s));
  };
  std::vector<Tensor<double>> wrt{image};
  for (const auto& [name, t] : model.parameters()) wrt.push_back(t);
  return {gradcheck("end-to-end model (width 4, 16x16)", f, wrt, opt)};
}

/// Runs the named group ("ops", "blocks", "model") or all of them.
inline std::vector<GradCheckResult> run_gradcheck_suite(const std::string& module, const GradCheckOptions& opt = {}) {
  std::vector<GradCheckResult> out;
  auto take = [&out](std::vector<GradCheckResult> r) { out.insert(out.end(), r.begin(), r.end()); };
  if (module == "all" || module == "ops") take(gradcheck_ops(opt));
  if (module == "all" || module == "blocks") take(gradcheck_blocks(opt));
  if (module == "all" || module == "model") take(gradcheck_model(opt));
  if (out.empty()) throw ConfigError("unknown gradcheck module '" + module + "' (expected all, ops, blocks or model)");
  return out;
}

}  // namespace fqf
