#pragma once

// Two-stage training.
//
// Stage 1 trains one branch on its own component stream. The high branch sees
// random crops of I_h (moire) against I_h (clean); the low branch sees I_l
// resized to a fixed side. Targets at half and quarter scale are bilinear
// downsamples of the full-scale target.
//
// Stage 2 trains both branches and the FCT jointly, one sample at a time with
// gradient accumulation: the high branch runs on the crop, the low branch on
// the resized low component, and the low feature is interpolated to the
// full-image feature grid and cropped to the same box before fusion.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "freqformer/losses.hpp"
#include "freqformer/model.hpp"
#include "freqformer/optim.hpp"
#include "freqformer/synth.hpp"

namespace fqf {

enum class Stage { High, Low, Joint };

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::High:
      return "high";
    case Stage::Low:
      return "low";
    case Stage::Joint:
      return "joint";
  }
  return "?";
}

inline Stage parse_stage(const std::string& s) {
  if (s == "high") return Stage::High;
  if (s == "low") return Stage::Low;
  if (s == "joint") return Stage::Joint;
  throw ConfigError("unknown stage '" + s + "' (expected high, low or joint)");
}

struct TrainConfig {
  Stage stage = Stage::High;
  double lr0 = 2e-4;
  int epochs = 1;
  std::int64_t steps = 0;         // > 0 overrides epochs
  int batch = 2;
  std::int64_t crop_side = 64;
  std::int64_t resize_side = 64;
  double lambda1 = 1.0;
  double lambda2 = 0.1;
  int cycle_epochs = 0;           // 0 means one cycle over the whole run
  std::uint64_t seed = 0;
  AdamOptions adam{};
  double clip = 1.0;              // global grad-norm clip, <= 0 disables
  bool fct_warm_start = true;     // stage 2 starts from the fixed composition

  void validate(const ModelConfig& model) const {
    const std::int64_t m = model.divisor();
    if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
    if (lambda1 < 0.0 || lambda2 < 0.0) throw ConfigError("lambda1 and lambda2 must be >= 0");
    if (batch < 1) throw ConfigError("batch must be >= 1");
    if (epochs < 1 && steps < 1) throw ConfigError("need epochs >= 1 or steps >= 1");
    if (cycle_epochs < 0) throw ConfigError("cycle_epochs must be >= 0");
    if (crop_side < m || crop_side % m != 0) {
      throw ConfigError("crop_side " + std::to_string(crop_side) + " must be a positive multiple of " + std::to_string(m));
    }
    if (resize_side < m || resize_side % m != 0) {
      throw ConfigError("resize_side " + std::to_string(resize_side) + " must be a positive multiple of " + std::to_string(m));
    }
  }
};

struct CropBox {
  std::int64_t x1 = 0, y1 = 0, x2 = 0, y2 = 0;  // half-open

  std::int64_t width() const { return x2 - x1; }
  std::int64_t height() const { return y2 - y1; }
  bool operator==(const CropBox&) const = default;
};

template <class T>
Tensor<T> crop_box(const Tensor<T>& x, const CropBox& b) {
  return crop(x, b.y1, b.x1, b.height(), b.width());
}

/// Uniform crop of side `side` whose corner lies on multiples of `align`.
inline CropBox random_crop(std::int64_t H, std::int64_t W, std::int64_t side, std::int64_t align, Rng& rng) {
  if (H < side || W < side) {
    throw ShapeError("sample_stage1", "image " + std::to_string(H) + "x" + std::to_string(W) + " smaller than crop_side " +
                                          std::to_string(side));
  }
  const std::int64_t y = rng.below((H - side) / align + 1) * align;
  const std::int64_t x = rng.below((W - side) / align + 1) * align;
  return {x, y, x + side, y + side};
}

/// Full-scale target plus bilinear downsamples to 1/2 and 1/4.
template <class T>
std::vector<Tensor<T>> target_pyramid(const Tensor<T>& gt) {
  return {gt, interpolate_bilinear(gt, gt.dim(2) / 2, gt.dim(3) / 2), interpolate_bilinear(gt, gt.dim(2) / 4, gt.dim(3) / 4)};
}

template <class T>
struct Stage1Sample {
  Tensor<T> input;
  std::vector<Tensor<T>> targets;  // full, half, quarter
  std::optional<CropBox> box;      // high branch only
};

template <class T>
Stage1Sample<T> sample_stage1(const Tensor<T>& moire, const Tensor<T>& clean, BranchKind branch, const TrainConfig& cfg,
                              const ModelConfig& model, Rng& rng) {
  if (!(moire.shape() == clean.shape())) {
    throw ShapeError("sample_stage1", "moire " + moire.shape().str() + " and clean " + clean.shape().str() + " differ");
  }
  NoGradGuard no_grad;
  const auto pm = decompose(moire, model.freq_levels);
  const auto pc = decompose(clean, model.freq_levels);
  Stage1Sample<T> s;
  if (branch == BranchKind::High) {
    const CropBox box = random_crop(moire.dim(2), moire.dim(3), cfg.crop_side, model.shuffle_factor, rng);
    s.input = crop_box(pm.high, box);
    s.targets = target_pyramid(crop_box(pc.high, box));
    s.box = box;
  } else {
    const std::int64_t r = cfg.resize_side;
    s.input = interpolate_bilinear(pm.low, r, r);
    s.targets = {interpolate_bilinear(pc.low, r, r), interpolate_bilinear(pc.low, r / 2, r / 2),
                 interpolate_bilinear(pc.low, r / 4, r / 4)};
  }
  return s;
}

template <class T>
struct Stage2Sample {
  Tensor<T> high_in;   // crop of I_h (moire)
  Tensor<T> low_in;    // I_l (moire) resized to resize_side
  Tensor<T> target;    // crop of the clean image
  CropBox box;
  std::int64_t full_h = 0, full_w = 0;
};

template <class T>
Stage2Sample<T> sample_stage2(const Tensor<T>& moire, const Tensor<T>& clean, const TrainConfig& cfg, const ModelConfig& model,
                              Rng& rng) {
  if (!(moire.shape() == clean.shape())) {
    throw ShapeError("sample_stage2", "moire " + moire.shape().str() + " and clean " + clean.shape().str() + " differ");
  }
  const std::int64_t s = model.shuffle_factor, H = moire.dim(2), W = moire.dim(3);
  if (H % s != 0 || W % s != 0) {
    throw ShapeError("sample_stage2", "image extents must be multiples of the shuffle factor " + std::to_string(s));
  }
  NoGradGuard no_grad;
  const auto pm = decompose(moire, model.freq_levels);
  Stage2Sample<T> out;
  out.box = random_crop(H, W, cfg.crop_side, s, rng);
  out.high_in = crop_box(pm.high, out.box);
  out.low_in = interpolate_bilinear(pm.low, cfg.resize_side, cfg.resize_side);
  out.target = crop_box(clean, out.box);
  out.full_h = H;
  out.full_w = W;
  return out;
}

/// Low feature resampled onto the full-image feature grid (full / s) and cut
/// to the crop box (in feature coordinates, box / s).
template <class T>
Tensor<T> align_low_feature(const Tensor<T>& feat_low, std::int64_t full_h, std::int64_t full_w, const CropBox& box, int s) {
  const Tensor<T> full = interpolate_bilinear(feat_low, full_h / s, full_w / s);
  return crop(full, box.y1 / s, box.x1 / s, box.height() / s, box.width() / s);
}

template <class T>
Tensor<T> joint_forward(const Freqformer<T>& model, const Stage2Sample<T>& sample) {
  const int s = model.config().shuffle_factor;
  const Tensor<T> feat_high = model.high(sample.high_in).feat;
  const Tensor<T> feat_low = model.low(sample.low_in).feat;
  return model.fct(align_low_feature(feat_low, sample.full_h, sample.full_w, sample.box, s), feat_high);
}

struct LossRecord {
  std::int64_t step = 0;
  double lr = 0.0;
  double l1 = 0.0;
  double lp = 0.0;
  double total = 0.0;
};

inline std::string format_loss_record(const LossRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g,%.9g", static_cast<long long>(r.step), r.lr, r.l1, r.lp, r.total);
  return buf;
}

inline constexpr const char* kLossLogHeader = "# step,lr,l1,lp,total";

namespace detail {

template <class T>
std::vector<std::vector<T>> snapshot(const ParamList<T>& params) {
  std::vector<std::vector<T>> s;
  for (const auto& [name, t] : params) s.emplace_back(t.data().begin(), t.data().end());
  return s;
}

template <class T>
void restore(const ParamList<T>& params, const std::vector<std::vector<T>>& s) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T> t = params[i].second;
    std::copy(s[i].begin(), s[i].end(), t.mutable_data().begin());
  }
}

struct Schedule {
  std::int64_t steps_per_epoch = 1;
  std::int64_t total_steps = 1;
  std::int64_t cycle = 1;
};

inline Schedule make_schedule(const TrainConfig& cfg, std::size_t n) {
  Schedule s;
  s.steps_per_epoch = (static_cast<std::int64_t>(n) + cfg.batch - 1) / cfg.batch;
  s.total_steps = cfg.steps > 0 ? cfg.steps : cfg.epochs * s.steps_per_epoch;
  const std::int64_t epochs = (s.total_steps + s.steps_per_epoch - 1) / s.steps_per_epoch;
  s.cycle = cfg.cycle_epochs > 0 ? cfg.cycle_epochs : epochs;
  return s;
}

/// Sample order: a fresh permutation per epoch, concatenated.
class SampleOrder {
 public:
  SampleOrder(std::size_t n, Rng& rng) : n_(n), rng_(rng) {}

  std::size_t next() {
    if (pos_ == perm_.size()) {
      perm_.resize(n_);
      std::iota(perm_.begin(), perm_.end(), std::size_t{0});
      for (std::size_t i = n_; i > 1; --i) std::swap(perm_[i - 1], perm_[static_cast<std::size_t>(rng_.below(static_cast<std::int64_t>(i)))]);
      pos_ = 0;
    }
    return perm_[pos_++];
  }

 private:
  std::size_t n_;
  Rng& rng_;
  std::vector<std::size_t> perm_;
  std::size_t pos_ = 0;
};

/// Update with divergence protection: on a non-finite loss or gradient the
/// parameters are restored to the last good values and DivergenceError thrown.
template <class T>
void guarded_update(const ParamList<T>& params, Adam<T>& adam, std::vector<std::vector<T>>& last_good, double loss,
                    double lr, double clip, std::int64_t step) {
  if (!std::isfinite(loss)) {
    restore(params, last_good);
    throw DivergenceError(static_cast<int>(step), "loss became non-finite at step " + std::to_string(step));
  }
  clip_grad_norm(params, clip);
  try {
    adam.step(lr);
  } catch (const NumericError& e) {
    restore(params, last_good);
    throw DivergenceError(static_cast<int>(step), std::string(e.what()) + " at step " + std::to_string(step));
  }
  for (const auto& [name, t] : params) {
    if (!all_finite(t)) {
      restore(params, last_good);
      throw DivergenceError(static_cast<int>(step), "parameter " + name + " became non-finite at step " + std::to_string(step));
    }
  }
  last_good = snapshot(params);
}

}  // namespace detail

using StepCallback = std::function<void(const LossRecord&)>;

/// Trains one branch. Only that branch's parameters enter the graph.
template <class T>
std::vector<LossRecord> train_stage1(Freqformer<T>& model, BranchKind branch, const std::vector<DatasetItem>& data,
                                     const TrainConfig& cfg, const FeatureExtractor<T>& extractor,
                                     const StepCallback& on_step = {}) {
  if (data.empty()) throw ConfigError("training data is empty");
  cfg.validate(model.config());
  const ParamList<T> params = model.branch_parameters(branch);
  const Branch<T>& net = model.branch(branch);
  Adam<T> adam(params, cfg.adam);
  const auto sched = detail::make_schedule(cfg, data.size());
  Rng rng(cfg.seed);
  detail::SampleOrder order(data.size(), rng);
  auto last_good = detail::snapshot(params);
  std::vector<LossRecord> log;

  for (std::int64_t step = 0; step < sched.total_steps; ++step) {
    const double lr = cosine_cycle_lr(step / sched.steps_per_epoch, cfg.lr0, sched.cycle);
    std::vector<Tensor<T>> inputs;
    std::array<std::vector<Tensor<T>>, 3> targets;
    for (int b = 0; b < cfg.batch; ++b) {
      const auto& item = data[order.next()];
      auto s = sample_stage1(item.moire.template cast<T>(), item.clean.template cast<T>(), branch, cfg, model.config(), rng);
      inputs.push_back(s.input);
      for (std::size_t k = 0; k < 3; ++k) targets[k].push_back(s.targets[k]);
    }
    params.zero_grad();
    const auto out = net(concat(inputs, 0));
    const auto loss = stage1_loss(out, {concat(targets[0], 0), concat(targets[1], 0), concat(targets[2], 0)}, cfg.lambda1, extractor);
    const double total = static_cast<double>(loss.total.item());
    if (std::isfinite(total)) backward(loss.total);
    detail::guarded_update(params, adam, last_good, total, lr, cfg.clip, step);
    log.push_back({step, lr, loss.l1, loss.lp, total});
    if (on_step) on_step(log.back());
  }
  return log;
}

/// Joint training of both branches and the FCT.
template <class T>
std::vector<LossRecord> train_stage2(Freqformer<T>& model, const std::vector<DatasetItem>& data, const TrainConfig& cfg,
                                     const FeatureExtractor<T>& extractor, const StepCallback& on_step = {}) {
  if (data.empty()) throw ConfigError("training data is empty");
  cfg.validate(model.config());
  if (cfg.fct_warm_start && model.config().fct_width() == 2 * model.config().base_channels) {
    model.fct.warm_start(model.low, model.high);
  }
  const ParamList<T> params = model.parameters();
  Adam<T> adam(params, cfg.adam);
  const auto sched = detail::make_schedule(cfg, data.size());
  Rng rng(cfg.seed);
  detail::SampleOrder order(data.size(), rng);
  auto last_good = detail::snapshot(params);
  std::vector<LossRecord> log;
  const T inv_batch = T(1) / static_cast<T>(cfg.batch);

  for (std::int64_t step = 0; step < sched.total_steps; ++step) {
    const double lr = cosine_cycle_lr(step / sched.steps_per_epoch, cfg.lr0, sched.cycle);
    params.zero_grad();
    LossRecord rec{step, lr, 0.0, 0.0, 0.0};
    for (int b = 0; b < cfg.batch; ++b) {
      const auto& item = data[order.next()];
      const auto sample = sample_stage2(item.moire.template cast<T>(), item.clean.template cast<T>(), cfg, model.config(), rng);
      const auto loss = stage2_loss(joint_forward(model, sample), sample.target, cfg.lambda2, extractor);
      const double total = static_cast<double>(loss.total.item());
      rec.l1 += loss.l1 / cfg.batch;
      rec.lp += loss.lp / cfg.batch;
      rec.total += total / cfg.batch;
      if (std::isfinite(total)) backward(mul_scalar(loss.total, inv_batch));
    }
    detail::guarded_update(params, adam, last_good, rec.total, lr, cfg.clip, step);
    log.push_back(rec);
    if (on_step) on_step(log.back());
  }
  return log;
}

}  // namespace fqf
