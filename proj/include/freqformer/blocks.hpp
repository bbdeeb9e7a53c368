#pragma once

// Learned building blocks: convolution layer, channel layer-norm, the residual
// dilated dense block (RDDB), channel attention, gated FFN, the spatial-aware
// channel-attention (SA-CA) composite, resolution changes and hierarchical
// fusion. Every residual branch ends in a zero-initialized projection, so a
// freshly built block is exactly the identity map.
//
// Parameter counts (C channels, g RDDB growth, h heads, c' FFN hidden width,
// conv(i,o,k,groups) = o*(i/groups)*k*k + o):
//
//   RDDB(C,g)      = sum_{j=0..3} [9*g*(C + j*g) + g] + C*(C + 4g) + C
//   Attention(C,h) = (3C*C + 3C) + (27C + 3C) + (C*C + C) + h
//   FFN(C,c')      = (2c'*C + 2c') + (18c' + 2c') + (C*c' + C)
//   Layer          = Attention + FFN + 4C          (two layer norms)
//   SACA(C,N)      = RDDB + N * Layer (+ fusion, below)
//   Fusion(C,{Ck}) = sum_k (C*Ck + C) + C*C*(1 + K) + C      (K sources)

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "freqformer/ops.hpp"
#include "freqformer/params.hpp"
#include "freqformer/spatial_ops.hpp"

namespace fqf {

template <class T>
class Conv2d {
 public:
  Tensor<T> weight;
  Tensor<T> bias;
  Conv2dOptions options;

  Conv2d() = default;

  /// Square kernel with "same" zero padding; uniform init with bound 1/sqrt(fan_in).
  Conv2d(std::int64_t in_channels, std::int64_t out_channels, int kernel, Rng& rng, int groups = 1, int dilation = 1) {
    if (in_channels % groups != 0 || out_channels % groups != 0) {
      throw ShapeError("Conv2d", "channels " + std::to_string(in_channels) + "->" + std::to_string(out_channels) +
                                     " not divisible by groups " + std::to_string(groups));
    }
    const std::int64_t fan_in = in_channels / groups * kernel * kernel;
    const T bound = T(1) / std::sqrt(static_cast<T>(fan_in));
    weight = make_parameter(Tensor<T>::uniform(Shape{out_channels, in_channels / groups, kernel, kernel}, rng, -bound, bound));
    bias = make_parameter(Tensor<T>::uniform(Shape{out_channels}, rng, -bound, bound));
    options.groups = groups;
    options.dilation = dilation;
    options.padding = Padding::uniform(dilation * (kernel - 1) / 2);
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, options); }

  void zero_init() {
    std::fill(weight.mutable_data().begin(), weight.mutable_data().end(), T(0));
    std::fill(bias.mutable_data().begin(), bias.mutable_data().end(), T(0));
  }

  std::int64_t in_channels() const { return weight.dim(1) * options.groups; }
  std::int64_t out_channels() const { return weight.dim(0); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.add(prefix + ".weight", weight);
    out.add(prefix + ".bias", bias);
  }
};

template <class T>
class LayerNorm2d {
 public:
  Tensor<T> gain;
  Tensor<T> offset;

  LayerNorm2d() = default;
  explicit LayerNorm2d(std::int64_t channels)
      : gain(make_parameter(Tensor<T>::ones(Shape{channels}))),
        offset(make_parameter(Tensor<T>::zeros(Shape{channels}))) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm_channel(x, gain, offset, T(1e-6)); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.add(prefix + ".gain", gain);
    out.add(prefix + ".offset", offset);
  }
};

/// Residual dilated dense block: four 3x3 stages at dilations 1,2,4,1, each
/// seeing the concatenation of the block input and all earlier stage outputs,
/// then a 1x1 fusion back to the input width and a residual add.
template <class T>
class RDDB {
 public:
  static constexpr std::array<int, 4> kDilations{1, 2, 4, 1};

  std::array<Conv2d<T>, 4> stages;
  Conv2d<T> fusion;

  RDDB() = default;
  RDDB(std::int64_t channels, std::int64_t growth, Rng& rng) : channels_(channels) {
    if (growth < 1) throw ConfigError("RDDB growth must be >= 1");
    for (std::size_t j = 0; j < stages.size(); ++j) {
      stages[j] = Conv2d<T>(channels + static_cast<std::int64_t>(j) * growth, growth, 3, rng, 1, kDilations[j]);
    }
    fusion = Conv2d<T>(channels + 4 * growth, channels, 1, rng);
    fusion.zero_init();
  }

  /// Chebyshev radius of the block's receptive field.
  static constexpr int receptive_radius() { return kDilations[0] + kDilations[1] + kDilations[2] + kDilations[3]; }

  Tensor<T> operator()(const Tensor<T>& x) const {
    if (x.rank() != 4 || x.dim(1) != channels_) {
      throw ShapeError("rddb", "expected " + std::to_string(channels_) + " channels (dim 1), got " + x.shape().str());
    }
    std::vector<Tensor<T>> feats{x};
    for (const auto& stage : stages) feats.push_back(gelu(stage(concat(feats, 1))));
    return add(x, fusion(concat(feats, 1)));
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    for (std::size_t j = 0; j < stages.size(); ++j) stages[j].collect(prefix + ".stage" + std::to_string(j), out);
    fusion.collect(prefix + ".fusion", out);
  }

 private:
  std::int64_t channels_ = 0;
};

/// Multi-head attention across channels: each head forms a (C/h)x(C/h)
/// affinity between L2-normalized query and key rows, scaled by a learnable
/// per-head temperature.
template <class T>
class ChannelAttention {
 public:
  Conv2d<T> qkv;
  Conv2d<T> qkv_dw;
  Conv2d<T> proj;
  Tensor<T> temperature;

  ChannelAttention() = default;
  ChannelAttention(std::int64_t channels, int heads, Rng& rng) : channels_(channels), heads_(heads) {
    if (heads < 1 || channels % heads != 0) {
      throw ShapeError("channel_attention", "channels " + std::to_string(channels) + " not divisible by heads " +
                                                std::to_string(heads));
    }
    qkv = Conv2d<T>(channels, 3 * channels, 1, rng);
    qkv_dw = Conv2d<T>(3 * channels, 3 * channels, 3, rng, static_cast<int>(3 * channels));
    proj = Conv2d<T>(channels, channels, 1, rng);
    proj.zero_init();
    temperature = make_parameter(Tensor<T>::ones(Shape{heads}));
  }

  int heads() const { return heads_; }

  /// Attention probabilities, [B, heads, C/heads, C/heads]; rows sum to 1.
  Tensor<T> attention_map(const Tensor<T>& x) const { return attend(x).first; }

  /// Projected attention output without the residual.
  Tensor<T> residual(const Tensor<T>& x) const {
    const auto [attn, v] = attend(x);
    const Tensor<T> out = reshape(matmul(attn, v), x.shape());
    return proj(out);
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return add(x, residual(x)); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    qkv.collect(prefix + ".qkv", out);
    qkv_dw.collect(prefix + ".qkv_dw", out);
    proj.collect(prefix + ".proj", out);
    out.add(prefix + ".temperature", temperature);
  }

 private:
  std::pair<Tensor<T>, Tensor<T>> attend(const Tensor<T>& x) const {
    if (x.rank() != 4 || x.dim(1) != channels_) {
      throw ShapeError("channel_attention", "expected " + std::to_string(channels_) + " channels (dim 1), got " +
                                                x.shape().str());
    }
    const std::int64_t B = x.dim(0), C = channels_, HW = x.dim(2) * x.dim(3);
    const Shape head_shape{B, heads_, C / heads_, HW};
    const Tensor<T> t = qkv_dw(qkv(x));
    const Tensor<T> q = l2_normalize(reshape(slice(t, 1, 0, C), head_shape), 3);
    const Tensor<T> k = l2_normalize(reshape(slice(t, 1, C, 2 * C), head_shape), 3);
    const Tensor<T> v = reshape(slice(t, 1, 2 * C, 3 * C), head_shape);
    const Tensor<T> logits = mul(matmul(q, transpose_last2(k)), reshape(temperature, Shape{1, heads_, 1, 1}));
    return {softmax(logits, 3), v};
  }

  std::int64_t channels_ = 0;
  int heads_ = 1;
};

/// Gated feed-forward: X and Y from a 1x1 + depthwise 3x3 projection,
/// output = proj(gelu(X) * Y) (+ residual).
template <class T>
class GatedFFN {
 public:
  Conv2d<T> project_in;
  Conv2d<T> dw;
  Conv2d<T> project_out;

  GatedFFN() = default;
  GatedFFN(std::int64_t channels, std::int64_t hidden, Rng& rng) : hidden_(hidden) {
    if (hidden < 1) throw ConfigError("GatedFFN hidden width must be >= 1");
    project_in = Conv2d<T>(channels, 2 * hidden, 1, rng);
    dw = Conv2d<T>(2 * hidden, 2 * hidden, 3, rng, static_cast<int>(2 * hidden));
    project_out = Conv2d<T>(hidden, channels, 1, rng);
    project_out.zero_init();
  }

  std::int64_t hidden() const { return hidden_; }

  Tensor<T> residual(const Tensor<T>& x) const {
    const Tensor<T> t = dw(project_in(x));
    return project_out(mul(gelu(slice(t, 1, 0, hidden_)), slice(t, 1, hidden_, 2 * hidden_)));
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return add(x, residual(x)); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    project_in.collect(prefix + ".project_in", out);
    dw.collect(prefix + ".dw", out);
    project_out.collect(prefix + ".project_out", out);
  }

 private:
  std::int64_t hidden_ = 0;
};

/// Hidden width of the gated FFN for a given channel count.
inline std::int64_t ffn_hidden(std::int64_t channels, double expand) {
  return std::max<std::int64_t>(1, static_cast<std::int64_t>(static_cast<double>(channels) * expand));
}

/// Pre-norm transformer layer: x += attn(norm1(x)); x += ffn(norm2(x)).
template <class T>
class TransformerLayer {
 public:
  LayerNorm2d<T> norm1;
  ChannelAttention<T> attn;
  LayerNorm2d<T> norm2;
  GatedFFN<T> ffn;

  TransformerLayer() = default;
  TransformerLayer(std::int64_t channels, int heads, std::int64_t hidden, Rng& rng)
      : norm1(channels), attn(channels, heads, rng), norm2(channels), ffn(channels, hidden, rng) {}

  Tensor<T> operator()(const Tensor<T>& x) const {
    const Tensor<T> y = add(x, attn.residual(norm1(x)));
    return add(y, ffn.residual(norm2(y)));
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    norm1.collect(prefix + ".norm1", out);
    attn.collect(prefix + ".attn", out);
    norm2.collect(prefix + ".norm2", out);
    ffn.collect(prefix + ".ffn", out);
  }
};

/// Injects coarser decoder features into a host block halfway through its
/// transformer layers: each source is bilinearly resized to the host grid and
/// projected to the host width by a 1x1 conv, then [state, sources...] is fused
/// by a 1x1 conv. The fusion conv starts as [I | 0], i.e. it passes the state
/// through unchanged until the injected slice learns non-zero weights.
template <class T>
class HierarchicalFusion {
 public:
  std::vector<Conv2d<T>> projections;
  Conv2d<T> fuse;

  HierarchicalFusion() = default;
  HierarchicalFusion(std::int64_t host_channels, const std::vector<std::int64_t>& source_channels, Rng& rng)
      : host_(host_channels) {
    for (auto c : source_channels) projections.emplace_back(c, host_channels, 1, rng);
    const auto k = static_cast<std::int64_t>(source_channels.size());
    fuse = Conv2d<T>(host_channels * (1 + k), host_channels, 1, rng);
    fuse.zero_init();
    auto w = fuse.weight.mutable_data();
    for (std::int64_t c = 0; c < host_channels; ++c) w[static_cast<std::size_t>(c * host_channels * (1 + k) + c)] = T(1);
  }

  std::size_t sources() const { return projections.size(); }

  Tensor<T> operator()(const Tensor<T>& state, const std::vector<Tensor<T>>& injected) const {
    if (injected.size() != projections.size()) {
      throw ShapeError("hierarchical_fusion", "missing required feature: expected " + std::to_string(projections.size()) +
                                                  " injected tensors, got " + std::to_string(injected.size()));
    }
    std::vector<Tensor<T>> parts{state};
    for (std::size_t k = 0; k < injected.size(); ++k) {
      if (!injected[k].defined()) throw ShapeError("hierarchical_fusion", "missing required feature " + std::to_string(k));
      parts.push_back(projections[k](interpolate_bilinear(injected[k], state.dim(2), state.dim(3))));
    }
    return fuse(concat(parts, 1));
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    for (std::size_t k = 0; k < projections.size(); ++k) projections[k].collect(prefix + ".proj" + std::to_string(k), out);
    fuse.collect(prefix + ".fuse", out);
  }

 private:
  std::int64_t host_ = 0;
};

struct SACAConfig {
  std::int64_t channels = 16;
  int n_layers = 1;
  int heads = 1;
  double ffn_expand = 2.0;
  std::int64_t rddb_growth = 8;

  void validate() const {
    if (channels < 1) throw ConfigError("SA-CA channels must be >= 1");
    if (n_layers < 1) throw ConfigError("SA-CA needs at least one transformer layer (N >= 1)");
    if (heads < 1 || channels % heads != 0) {
      throw ConfigError("SA-CA channels " + std::to_string(channels) + " not divisible by heads " + std::to_string(heads));
    }
    if (!(ffn_expand > 0.0)) throw ConfigError("SA-CA ffn_expand must be positive");
    if (rddb_growth < 1) throw ConfigError("SA-CA rddb_growth must be >= 1");
  }
};

/// SA-CA block: RDDB, then N transformer layers. With fusion sources, the
/// hierarchical fusion sits between layer N/2 - 1 and layer N/2.
template <class T>
class SACABlock {
 public:
  RDDB<T> rddb;
  std::vector<TransformerLayer<T>> layers;
  std::optional<HierarchicalFusion<T>> fusion;

  SACABlock() = default;
  SACABlock(const SACAConfig& cfg, Rng& rng, const std::vector<std::int64_t>& fusion_sources = {}) : cfg_(cfg) {
    cfg.validate();
    if (!fusion_sources.empty() && cfg.n_layers % 2 != 0) {
      throw ConfigError("hierarchical fusion needs an even layer count, got N = " + std::to_string(cfg.n_layers));
    }
    rddb = RDDB<T>(cfg.channels, cfg.rddb_growth, rng);
    const auto hidden = ffn_hidden(cfg.channels, cfg.ffn_expand);
    for (int i = 0; i < cfg.n_layers; ++i) layers.emplace_back(cfg.channels, cfg.heads, hidden, rng);
    if (!fusion_sources.empty()) fusion.emplace(cfg.channels, fusion_sources, rng);
  }

  const SACAConfig& config() const { return cfg_; }

  Tensor<T> operator()(const Tensor<T>& x, const std::vector<Tensor<T>>& injected = {}) const {
    Tensor<T> h = rddb(x);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (fusion && i == layers.size() / 2) h = (*fusion)(h, injected);
      h = layers[i](h);
    }
    return h;
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    rddb.collect(prefix + ".rddb", out);
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect(prefix + ".layers." + std::to_string(i), out);
    if (fusion) fusion->collect(prefix + ".fusion", out);
  }

 private:
  SACAConfig cfg_;
};

/// [B,C,H,W] -> [B,2C,H/2,W/2]: pixel unshuffle then 1x1 conv 4C -> 2C.
template <class T>
class Downsample {
 public:
  Conv2d<T> conv;

  Downsample() = default;
  Downsample(std::int64_t channels, Rng& rng) : conv(4 * channels, 2 * channels, 1, rng) {}

  Tensor<T> operator()(const Tensor<T>& x) const {
    if (x.rank() != 4 || x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0) {
      throw ShapeError("downsample", "spatial extents must be even, got " + x.shape().str());
    }
    return conv(pixel_unshuffle(x, 2));
  }

  void collect(const std::string& prefix, ParamList<T>& out) const { conv.collect(prefix + ".conv", out); }
};

/// [B,C,H,W] -> [B,C/2,2H,2W]: 1x1 conv C -> 2C then pixel shuffle.
template <class T>
class Upsample {
 public:
  Conv2d<T> conv;

  Upsample() = default;
  Upsample(std::int64_t channels, Rng& rng) {
    if (channels % 2 != 0) throw ShapeError("upsample", "channel count must be even, got " + std::to_string(channels));
    conv = Conv2d<T>(channels, 2 * channels, 1, rng);
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    if (x.rank() != 4 || x.dim(1) % 2 != 0) throw ShapeError("upsample", "channel count must be even, got " + x.shape().str());
    return pixel_shuffle(conv(x), 2);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const { conv.collect(prefix + ".conv", out); }
};

// Closed-form parameter counts matching the formulas in the header comment.

constexpr std::int64_t conv_param_count(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t groups = 1) {
  return out * (in / groups) * kernel * kernel + out;
}

constexpr std::int64_t rddb_param_count(std::int64_t c, std::int64_t g) {
  std::int64_t n = 0;
  for (std::int64_t j = 0; j < 4; ++j) n += conv_param_count(c + j * g, g, 3);
  return n + conv_param_count(c + 4 * g, c, 1);
}

constexpr std::int64_t attention_param_count(std::int64_t c, std::int64_t heads) {
  return conv_param_count(c, 3 * c, 1) + conv_param_count(3 * c, 3 * c, 3, 3 * c) + conv_param_count(c, c, 1) + heads;
}

constexpr std::int64_t ffn_param_count(std::int64_t c, std::int64_t hidden) {
  return conv_param_count(c, 2 * hidden, 1) + conv_param_count(2 * hidden, 2 * hidden, 3, 2 * hidden) +
         conv_param_count(hidden, c, 1);
}

constexpr std::int64_t layer_param_count(std::int64_t c, std::int64_t heads, std::int64_t hidden) {
  return attention_param_count(c, heads) + ffn_param_count(c, hidden) + 4 * c;
}

inline std::int64_t fusion_param_count(std::int64_t c, const std::vector<std::int64_t>& sources) {
  std::int64_t n = 0;
  for (auto ck : sources) n += conv_param_count(ck, c, 1);
  return n + conv_param_count(c * (1 + static_cast<std::int64_t>(sources.size())), c, 1);
}

inline std::int64_t saca_param_count(const SACAConfig& cfg, const std::vector<std::int64_t>& fusion_sources = {}) {
  std::int64_t n = rddb_param_count(cfg.channels, cfg.rddb_growth) +
                   cfg.n_layers * layer_param_count(cfg.channels, cfg.heads, ffn_hidden(cfg.channels, cfg.ffn_expand));
  if (!fusion_sources.empty()) n += fusion_param_count(cfg.channels, fusion_sources);
  return n;
}

}  // namespace fqf
