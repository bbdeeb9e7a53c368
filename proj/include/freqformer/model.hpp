#pragma once

// Dual-branch model: a high- and a low-frequency encoder-decoder with
// per-level image heads, fused by the learnable frequency composition
// transform (FCT).
//
// Branch topology (level l has width C_l = C * 2^l, s = shuffle factor):
//
//   x0 = stem(pixel_unshuffle(x, s))                     3s^2 -> C_0
//   e0 = enc0(x0);  e1 = enc1(down0(e0));  e2 = enc2(down1(e1))
//   d2 = dec2(e2)
//   d1 = dec1(up1(d2) + e1 | fusion {d2})                 (high branch only)
//   d0 = dec0(up0(d1) + e0 | fusion {d2, d1})             (high branch only)
//   image_l = pixel_shuffle(head_l(d_l), s);  feat = d0
//
// Initialization makes the branch an exact identity on its input at the top
// level: residual projections and up-convs start at zero, the stem copies the
// unshuffled input into its first 3s^2 channels and the top head reads them
// back. This needs base_channels >= 3s^2; a narrower stem carries only its
// first base_channels input channels. The FCT starts as
// [head_low | head_high] over [feat_low; feat_high], i.e. as the fixed
// composition of the two branch predictions.

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "freqformer/blocks.hpp"
#include "freqformer/freq_transform.hpp"

namespace fqf {

struct ModelConfig {
  std::int64_t base_channels = 16;
  std::array<int, 3> enc_n_high{2, 2, 2};
  std::array<int, 3> dec_n_high{4, 4, 2};
  std::array<int, 3> enc_n_low{1, 2, 2};
  std::array<int, 3> dec_n_low{1, 2, 2};
  std::array<int, 3> heads{1, 2, 4};
  int n_f = 2;
  int fct_heads = 2;
  int freq_levels = 3;
  int shuffle_factor = 2;
  double ffn_expand = 2.0;
  std::int64_t rddb_growth = 8;    // at the top level; doubles per level
  std::int64_t fct_channels = 0;   // 0 selects 2 * base_channels

  std::int64_t level_channels(int level) const { return base_channels << level; }
  std::int64_t level_growth(int level) const { return rddb_growth << level; }
  std::int64_t fct_width() const { return fct_channels > 0 ? fct_channels : 2 * base_channels; }
  std::int64_t image_channels() const { return 3LL * shuffle_factor * shuffle_factor; }

  /// Spatial extents fed to a branch must be multiples of this.
  std::int64_t divisor() const { return 4LL * shuffle_factor; }

  void validate() const {
    if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
    if (shuffle_factor < 1) throw ConfigError("shuffle_factor must be >= 1");
    if (freq_levels < 1 || freq_levels > kMaxFreqLevels) {
      throw ConfigError("freq_levels must be in [1," + std::to_string(kMaxFreqLevels) + "]");
    }
    for (int l = 0; l < 3; ++l) {
      if (heads[l] < 1 || level_channels(l) % heads[l] != 0) {
        throw ConfigError("level " + std::to_string(l) + " width " + std::to_string(level_channels(l)) +
                          " not divisible by heads " + std::to_string(heads[l]));
      }
      for (const auto* n : {&enc_n_high, &dec_n_high, &enc_n_low, &dec_n_low}) {
        if ((*n)[l] < 1) throw ConfigError("every block needs N >= 1 transformer layers");
      }
    }
    if (dec_n_high[0] % 2 != 0 || dec_n_high[1] % 2 != 0) {
      throw ConfigError("dec_n_high entries at the fused levels (0 and 1) must be even");
    }
    if (n_f < 1) throw ConfigError("n_f must be >= 1");
    if (fct_heads < 1 || fct_width() % fct_heads != 0) {
      throw ConfigError("FCT width " + std::to_string(fct_width()) + " not divisible by fct_heads " +
                        std::to_string(fct_heads));
    }
    if (!(ffn_expand > 0.0)) throw ConfigError("ffn_expand must be positive");
    if (rddb_growth < 1) throw ConfigError("rddb_growth must be >= 1");
  }
};

enum class BranchKind { High, Low };

inline const char* branch_name(BranchKind k) { return k == BranchKind::High ? "high" : "low"; }

template <class T>
struct BranchOutput {
  std::array<Tensor<T>, 3> images;  // full, half, quarter resolution
  Tensor<T> feat;                   // top decoder feature before the top head
};

/// Input/output of every SA-CA block of one forward pass, in execution order.
template <class T>
struct BlockTrace {
  struct Entry {
    std::string name;
    Tensor<T> input;
    Tensor<T> output;
  };
  std::vector<Entry> entries;
};

namespace detail {

inline SACAConfig saca_config(const ModelConfig& cfg, int level, int n_layers) {
  SACAConfig s;
  s.channels = cfg.level_channels(level);
  s.n_layers = n_layers;
  s.heads = cfg.heads[static_cast<std::size_t>(level)];
  s.ffn_expand = cfg.ffn_expand;
  s.rddb_growth = cfg.level_growth(level);
  return s;
}

inline std::vector<std::int64_t> fusion_sources(const ModelConfig& cfg, BranchKind kind, int level) {
  if (kind == BranchKind::Low) return {};
  if (level == 1) return {cfg.level_channels(2)};
  if (level == 0) return {cfg.level_channels(2), cfg.level_channels(1)};
  return {};
}

/// Writes ones at (o, o, centre) for o < n, zeros elsewhere.
template <class T>
void set_identity_rows(Conv2d<T>& conv, std::int64_t n) {
  conv.zero_init();
  const std::int64_t cin = conv.weight.dim(1), kh = conv.weight.dim(2), kw = conv.weight.dim(3);
  auto w = conv.weight.mutable_data();
  for (std::int64_t o = 0; o < std::min({n, conv.out_channels(), cin}); ++o) {
    w[static_cast<std::size_t>(((o * cin + o) * kh + kh / 2) * kw + kw / 2)] = T(1);
  }
}

}  // namespace detail

template <class T>
class Branch {
 public:
  Conv2d<T> stem;
  std::array<SACABlock<T>, 3> enc;
  std::array<SACABlock<T>, 3> dec;
  std::array<Downsample<T>, 2> down;
  std::array<Upsample<T>, 2> up;   // up[l] maps level l+1 to level l
  std::array<Conv2d<T>, 3> heads;

  Branch() = default;
  Branch(const ModelConfig& cfg, BranchKind kind, Rng& rng) : kind_(kind), s_(cfg.shuffle_factor) {
    cfg.validate();
    const auto& enc_n = kind == BranchKind::High ? cfg.enc_n_high : cfg.enc_n_low;
    const auto& dec_n = kind == BranchKind::High ? cfg.dec_n_high : cfg.dec_n_low;
    const std::int64_t img = cfg.image_channels();

    stem = Conv2d<T>(img, cfg.base_channels, 3, rng);
    {
      // Identity rows on the first 3s^2 channels; the rest keep random taps.
      const auto random = std::vector<T>(stem.weight.data().begin(), stem.weight.data().end());
      detail::set_identity_rows(stem, img);
      auto w = stem.weight.mutable_data();
      const std::size_t row = static_cast<std::size_t>(img * 9);
      for (std::size_t i = static_cast<std::size_t>(std::min(img, cfg.base_channels)) * row; i < w.size(); ++i) w[i] = random[i];
    }
    for (int l = 0; l < 3; ++l) {
      const auto L = static_cast<std::size_t>(l);
      enc[L] = SACABlock<T>(detail::saca_config(cfg, l, enc_n[L]), rng);
    }
    for (int l = 0; l < 2; ++l) {
      const auto L = static_cast<std::size_t>(l);
      down[L] = Downsample<T>(cfg.level_channels(l), rng);
      up[L] = Upsample<T>(cfg.level_channels(l + 1), rng);
      up[L].conv.zero_init();
    }
    for (int l = 2; l >= 0; --l) {
      const auto L = static_cast<std::size_t>(l);
      dec[L] = SACABlock<T>(detail::saca_config(cfg, l, dec_n[L]), rng, detail::fusion_sources(cfg, kind, l));
    }
    for (int l = 0; l < 3; ++l) heads[static_cast<std::size_t>(l)] = Conv2d<T>(cfg.level_channels(l), img, 3, rng);
    detail::set_identity_rows(heads[0], img);
  }

  BranchKind kind() const { return kind_; }
  int shuffle_factor() const { return s_; }

  /// Component image predicted from a top-level feature.
  Tensor<T> project(const Tensor<T>& feat) const { return pixel_shuffle(heads[0](feat), s_); }

  BranchOutput<T> operator()(const Tensor<T>& x, BlockTrace<T>* trace = nullptr) const {
    const std::int64_t m = 4LL * s_;
    if (x.rank() != 4 || x.dim(1) != 3) throw ShapeError("branch_forward", "expected [B,3,H,W], got " + x.shape().str());
    if (x.dim(2) % m != 0 || x.dim(3) % m != 0) {
      throw ShapeError("branch_forward", "input extents " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                                             " must be multiples of " + std::to_string(m));
    }
    auto run = [trace](const char* name, const SACABlock<T>& block, const Tensor<T>& in,
                       const std::vector<Tensor<T>>& injected = {}) {
      Tensor<T> out = block(in, injected);
      if (trace) trace->entries.push_back({name, in, out});
      return out;
    };
    const Tensor<T> e0 = run("enc0", enc[0], stem(pixel_unshuffle(x, s_)));
    const Tensor<T> e1 = run("enc1", enc[1], down[0](e0));
    const Tensor<T> e2 = run("enc2", enc[2], down[1](e1));
    const Tensor<T> d2 = run("dec2", dec[2], e2);
    const bool fused = dec[1].fusion.has_value();
    const Tensor<T> d1 = run("dec1", dec[1], add(up[1](d2), e1), fused ? std::vector<Tensor<T>>{d2} : std::vector<Tensor<T>>{});
    const Tensor<T> d0 =
        run("dec0", dec[0], add(up[0](d1), e0), fused ? std::vector<Tensor<T>>{d2, d1} : std::vector<Tensor<T>>{});
    BranchOutput<T> out;
    out.images[0] = project(d0);
    out.images[1] = pixel_shuffle(heads[1](d1), s_);
    out.images[2] = pixel_shuffle(heads[2](d2), s_);
    out.feat = d0;
    return out;
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    stem.collect(prefix + ".stem", out);
    for (std::size_t l = 0; l < 3; ++l) enc[l].collect(prefix + ".enc" + std::to_string(l), out);
    for (std::size_t l = 0; l < 2; ++l) down[l].collect(prefix + ".down" + std::to_string(l), out);
    for (std::size_t l = 0; l < 2; ++l) up[l].collect(prefix + ".up" + std::to_string(l), out);
    for (std::size_t l = 0; l < 3; ++l) dec[l].collect(prefix + ".dec" + std::to_string(l), out);
    for (std::size_t l = 0; l < 3; ++l) heads[l].collect(prefix + ".head" + std::to_string(l), out);
  }

 private:
  BranchKind kind_ = BranchKind::High;
  int s_ = 2;
};

/// Learnable frequency composition: F = in_low(feat_low) + in_high(feat_high),
/// n_f transformer layers, then a 3x3 conv to 3s^2 channels and pixel shuffle.
template <class T>
class FCT {
 public:
  Conv2d<T> in_low;
  Conv2d<T> in_high;
  std::vector<TransformerLayer<T>> post;
  Conv2d<T> out;

  FCT() = default;
  FCT(const ModelConfig& cfg, Rng& rng) : s_(cfg.shuffle_factor) {
    const std::int64_t C = cfg.base_channels, F = cfg.fct_width();
    in_low = Conv2d<T>(C, F, 1, rng);
    in_high = Conv2d<T>(C, F, 1, rng);
    for (int i = 0; i < cfg.n_f; ++i) post.emplace_back(F, cfg.fct_heads, ffn_hidden(F, cfg.ffn_expand), rng);
    out = Conv2d<T>(F, cfg.image_channels(), 3, rng);
  }

  /// Pre-projection fused feature.
  Tensor<T> fused_feature(const Tensor<T>& feat_low, const Tensor<T>& feat_high) const {
    if (!(feat_low.shape() == feat_high.shape())) {
      throw ShapeError("fct_fuse", "feat_low " + feat_low.shape().str() + " and feat_high " + feat_high.shape().str() +
                                       " are not aligned");
    }
    Tensor<T> f = add(in_low(feat_low), in_high(feat_high));
    for (const auto& layer : post) f = layer(f);
    return f;
  }

  Tensor<T> operator()(const Tensor<T>& feat_low, const Tensor<T>& feat_high) const {
    return pixel_shuffle(out(fused_feature(feat_low, feat_high)), s_);
  }

  /// Sets the FCT to the fixed composition of the two branch heads:
  /// in_low = [I; 0], in_high = [0; I], out = [head_low | head_high]. Needs F = 2C.
  void warm_start(const Branch<T>& low, const Branch<T>& high) {
    const std::int64_t C = in_low.in_channels(), F = in_low.out_channels();
    if (F != 2 * C) throw ConfigError("FCT warm start needs fct width = 2 * base_channels");
    in_low.zero_init();
    in_high.zero_init();
    auto wl = in_low.weight.mutable_data();
    auto wh = in_high.weight.mutable_data();
    for (std::int64_t c = 0; c < C; ++c) {
      wl[static_cast<std::size_t>(c * C + c)] = T(1);
      wh[static_cast<std::size_t>((C + c) * C + c)] = T(1);
    }
    const std::int64_t O = out.out_channels();
    auto wo = out.weight.mutable_data();
    const auto hl = low.heads[0].weight.data(), hh = high.heads[0].weight.data();
    for (std::int64_t o = 0; o < O; ++o) {
      for (std::int64_t c = 0; c < C; ++c) {
        for (std::int64_t k = 0; k < 9; ++k) {
          wo[static_cast<std::size_t>((o * F + c) * 9 + k)] = hl[static_cast<std::size_t>((o * C + c) * 9 + k)];
          wo[static_cast<std::size_t>((o * F + C + c) * 9 + k)] = hh[static_cast<std::size_t>((o * C + c) * 9 + k)];
        }
      }
    }
    auto bo = out.bias.mutable_data();
    const auto bl = low.heads[0].bias.data(), bh = high.heads[0].bias.data();
    for (std::int64_t o = 0; o < O; ++o) bo[static_cast<std::size_t>(o)] = bl[static_cast<std::size_t>(o)] + bh[static_cast<std::size_t>(o)];
  }

  void collect(const std::string& prefix, ParamList<T>& out_list) const {
    in_low.collect(prefix + ".in_low", out_list);
    in_high.collect(prefix + ".in_high", out_list);
    for (std::size_t i = 0; i < post.size(); ++i) post[i].collect(prefix + ".post." + std::to_string(i), out_list);
    out.collect(prefix + ".out", out_list);
  }

 private:
  int s_ = 2;
};

/// How the low branch sees the image at inference.
struct LowMode {
  enum Kind { Resize, Full } kind = Resize;
  std::int64_t side = 64;

  static LowMode resize(std::int64_t side) { return {Resize, side}; }
  static LowMode full() { return {Full, 0}; }
};

template <class T>
class Freqformer {
 public:
  Branch<T> high;
  Branch<T> low;
  FCT<T> fct;

  Freqformer() = default;
  explicit Freqformer(const ModelConfig& cfg, std::uint64_t seed = 0) : cfg_(cfg) {
    cfg.validate();
    Rng root(seed);
    Rng rh = root.fork(), rl = root.fork(), rf = root.fork();
    high = Branch<T>(cfg, BranchKind::High, rh);
    low = Branch<T>(cfg, BranchKind::Low, rl);
    fct = FCT<T>(cfg, rf);
    if (cfg.fct_width() == 2 * cfg.base_channels) fct.warm_start(low, high);
  }

  const ModelConfig& config() const { return cfg_; }

  const Branch<T>& branch(BranchKind k) const { return k == BranchKind::High ? high : low; }

  /// All parameters, named "high.*", "low.*" and "fct.*".
  ParamList<T> parameters() const {
    ParamList<T> p;
    high.collect("high", p);
    low.collect("low", p);
    fct.collect("fct", p);
    return p;
  }

  ParamList<T> branch_parameters(BranchKind k) const {
    ParamList<T> p;
    branch(k).collect(branch_name(k), p);
    return p;
  }

  /// Demoires one image: decompose, high branch at full resolution, low branch
  /// on the resized (or full) low component, low feature resampled onto the
  /// high feature grid, FCT. Inputs whose extents are not multiples of
  /// 4 * shuffle_factor are replicate-padded and the output cropped back.
  Tensor<T> infer(const Tensor<T>& image, const LowMode& mode) const {
    if (image.rank() != 4 || image.dim(1) != 3) throw ShapeError("infer", "expected [B,3,H,W], got " + image.shape().str());
    const auto pair = decompose(image, cfg_.freq_levels);
    const std::int64_t H = image.dim(2), W = image.dim(3), m = cfg_.divisor();
    const std::int64_t Hp = (H + m - 1) / m * m, Wp = (W + m - 1) / m * m;
    const Padding pad{PadMode::Replicate, 0, static_cast<int>(Hp - H), 0, static_cast<int>(Wp - W)};

    const Tensor<T> feat_high = high(pad2d(pair.high, pad)).feat;
    Tensor<T> low_in;
    if (mode.kind == LowMode::Resize) {
      if (mode.side < m || mode.side % m != 0) {
        throw ShapeError("infer", "low-branch side " + std::to_string(mode.side) + " must be a positive multiple of " +
                                      std::to_string(m));
      }
      low_in = interpolate_bilinear(pair.low, mode.side, mode.side);
    } else {
      low_in = pad2d(pair.low, pad);
    }
    const Tensor<T> feat_low = interpolate_bilinear(low(low_in).feat, feat_high.dim(2), feat_high.dim(3));
    const Tensor<T> out = fct(feat_low, feat_high);
    return (Hp == H && Wp == W) ? out : crop(out, 0, 0, H, W);
  }

 private:
  ModelConfig cfg_;
};

// Closed-form parameter counts.

inline std::int64_t branch_param_count(const ModelConfig& cfg, BranchKind kind) {
  const auto& enc_n = kind == BranchKind::High ? cfg.enc_n_high : cfg.enc_n_low;
  const auto& dec_n = kind == BranchKind::High ? cfg.dec_n_high : cfg.dec_n_low;
  const std::int64_t img = cfg.image_channels();
  std::int64_t n = conv_param_count(img, cfg.base_channels, 3);
  for (int l = 0; l < 3; ++l) {
    const auto L = static_cast<std::size_t>(l);
    const std::int64_t c = cfg.level_channels(l);
    n += saca_param_count(detail::saca_config(cfg, l, enc_n[L]));
    n += saca_param_count(detail::saca_config(cfg, l, dec_n[L]), detail::fusion_sources(cfg, kind, l));
    n += conv_param_count(c, img, 3);
    if (l < 2) {
      n += conv_param_count(4 * c, 2 * c, 1);          // down
      n += conv_param_count(2 * c, 4 * c, 1);          // up from level l+1
    }
  }
  return n;
}

/// Parameters the learnable FCT adds on top of the fixed composition:
/// 2(C*F + F) + n_f * layer(F) + 9*F*3s^2 + 3s^2.
inline std::int64_t fct_param_count(const ModelConfig& cfg) {
  const std::int64_t C = cfg.base_channels, F = cfg.fct_width();
  return 2 * conv_param_count(C, F, 1) + cfg.n_f * layer_param_count(F, cfg.fct_heads, ffn_hidden(F, cfg.ffn_expand)) +
         conv_param_count(F, cfg.image_channels(), 3);
}

/// The same transform written as one 1x1 conv over concat(feat_low, feat_high)
/// has F fewer bias parameters.
inline std::int64_t fct_concat_param_count(const ModelConfig& cfg) {
  const std::int64_t C = cfg.base_channels, F = cfg.fct_width();
  return conv_param_count(2 * C, F, 1) + cfg.n_f * layer_param_count(F, cfg.fct_heads, ffn_hidden(F, cfg.ffn_expand)) +
         conv_param_count(F, cfg.image_channels(), 3);
}

inline std::int64_t model_param_count(const ModelConfig& cfg) {
  return branch_param_count(cfg, BranchKind::High) + branch_param_count(cfg, BranchKind::Low) + fct_param_count(cfg);
}

}  // namespace fqf
