#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "freqformer/blocks.hpp"
#include "freqformer/checkpoint.hpp"
#include "freqformer/model.hpp"

namespace fqf {

/// Frozen multi-stage feature pyramid for the perceptual loss. The default is
/// a seeded random-convolution stack
///   conv3x3 3->8, gelu | conv3x3/2 8->16, gelu | conv3x3/2 16->32, gelu
/// whose weights never receive updates. Pretrained weights with the same
/// names ("stage<k>.weight", "stage<k>.bias") can be loaded from a checkpoint.
template <class T>
class FeatureExtractor {
 public:
  static constexpr std::uint64_t kDefaultSeed = 0x7065726365707431ull;

  std::vector<Conv2d<T>> stages;

  explicit FeatureExtractor(std::uint64_t seed = kDefaultSeed) {
    Rng rng(seed);
    const std::int64_t widths[4] = {3, 8, 16, 32};
    for (int k = 0; k < 3; ++k) {
      Conv2d<T> c(widths[k], widths[k + 1], 3, rng);
      c.options.stride = k == 0 ? 1 : 2;
      c.weight.set_requires_grad(false);
      c.bias.set_requires_grad(false);
      stages.push_back(std::move(c));
    }
  }

  ParamList<T> parameters() const {
    ParamList<T> p;
    for (std::size_t k = 0; k < stages.size(); ++k) stages[k].collect("stage" + std::to_string(k), p);
    return p;
  }

  void load(const std::string& path) { load_checkpoint(parameters(), path); }

  std::vector<Tensor<T>> operator()(const Tensor<T>& x) const {
    std::vector<Tensor<T>> feats;
    Tensor<T> h = x;
    for (const auto& s : stages) {
      h = gelu(s(h));
      feats.push_back(h);
    }
    return feats;
  }
};

/// Sum over extractor stages of the mean absolute feature difference.
template <class T>
Tensor<T> perceptual_loss(const Tensor<T>& a, const Tensor<T>& b, const FeatureExtractor<T>& extractor) {
  if (!(a.shape() == b.shape())) {
    throw ShapeError("perceptual_loss", "shapes differ: " + a.shape().str() + " vs " + b.shape().str());
  }
  const auto fa = extractor(a);
  const auto fb = extractor(b);
  Tensor<T> total = l1_loss(fa[0], fb[0]);
  for (std::size_t k = 1; k < fa.size(); ++k) total = add(total, l1_loss(fa[k], fb[k]));
  return total;
}

template <class T>
struct LossTerms {
  Tensor<T> total;
  double l1 = 0.0;  // summed L1 terms
  double lp = 0.0;  // summed perceptual terms, before weighting
};

/// Deep-supervision loss: sum over the three scales of L1 + lambda1 * Lp.
template <class T>
LossTerms<T> stage1_loss(const std::vector<Tensor<T>>& outputs, const std::vector<Tensor<T>>& targets, double lambda1,
                         const FeatureExtractor<T>& extractor) {
  if (outputs.size() != 3 || targets.size() != 3) {
    throw ShapeError("stage1_loss", "expected 3 scales, got " + std::to_string(outputs.size()) + " outputs and " +
                                        std::to_string(targets.size()) + " targets");
  }
  LossTerms<T> r;
  for (std::size_t i = 0; i < 3; ++i) {
    const Tensor<T> l1 = l1_loss(outputs[i], targets[i]);
    Tensor<T> term = l1;
    r.l1 += static_cast<double>(l1.item());
    if (lambda1 != 0.0) {
      const Tensor<T> lp = perceptual_loss(outputs[i], targets[i], extractor);
      r.lp += static_cast<double>(lp.item());
      term = add(term, mul_scalar(lp, static_cast<T>(lambda1)));
    }
    r.total = r.total.defined() ? add(r.total, term) : term;
  }
  return r;
}

template <class T>
LossTerms<T> stage1_loss(const BranchOutput<T>& out, const std::vector<Tensor<T>>& targets, double lambda1,
                         const FeatureExtractor<T>& extractor) {
  return stage1_loss(std::vector<Tensor<T>>(out.images.begin(), out.images.end()), targets, lambda1, extractor);
}

/// Single-scale loss of the fused output: L1 + lambda2 * Lp.
template <class T>
LossTerms<T> stage2_loss(const Tensor<T>& pred, const Tensor<T>& gt, double lambda2, const FeatureExtractor<T>& extractor) {
  LossTerms<T> r;
  const Tensor<T> l1 = l1_loss(pred, gt);
  r.l1 = static_cast<double>(l1.item());
  r.total = l1;
  if (lambda2 != 0.0) {
    const Tensor<T> lp = perceptual_loss(pred, gt, extractor);
    r.lp = static_cast<double>(lp.item());
    r.total = add(l1, mul_scalar(lp, static_cast<T>(lambda2)));
  }
  return r;
}

}  // namespace fqf
