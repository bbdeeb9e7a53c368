#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "test_util.hpp"

using namespace fqf;
using fqf::testing::bit_equal;
using fqf::testing::max_abs_diff;
using fqf::testing::random_tensor;

namespace {

template <class Module>
ParamList<double> params_of(const Module& m) {
  ParamList<double> p;
  m.collect("m", p);
  return p;
}

template <class Module>
std::int64_t count_of(const Module& m) {
  std::int64_t n = 0;
  for (const auto& [name, t] : params_of(m)) n += t.numel();
  return n;
}

}  // namespace

TEST(RDDB, IdentityAtInit) {
  Rng rng(1);
  RDDB<double> block(8, 4, rng);
  const auto x = random_tensor<double>(Shape{2, 8, 9, 7}, 2);
  EXPECT_TRUE(bit_equal(block(x), x));
}

TEST(RDDB, ReceptiveFieldBoundedByDilations) {
  Rng rng(3);
  RDDB<double> block(4, 4, rng);
  auto p = params_of(block);
  Rng prng(4);
  randomize_parameters(p, prng, 0.3);
  const std::int64_t N = 25, c = 12;
  const auto x = random_tensor<double>(Shape{1, 4, N, N}, 5);
  auto xp = x.detach();
  xp.mutable_data()[static_cast<std::size_t>(c * N + c)] += 1.0;
  const auto y0 = block(x), y1 = block(xp);
  const int radius = RDDB<double>::receptive_radius();
  EXPECT_EQ(radius, 8);
  int max_changed = -1;
  for (std::int64_t ch = 0; ch < 4; ++ch)
    for (std::int64_t yy = 0; yy < N; ++yy)
      for (std::int64_t xx = 0; xx < N; ++xx) {
        const auto i = static_cast<std::size_t>((ch * N + yy) * N + xx);
        if (y0.data()[i] != y1.data()[i]) {
          max_changed = std::max<int>(max_changed, static_cast<int>(std::max(std::abs(yy - c), std::abs(xx - c))));
        }
      }
  EXPECT_EQ(max_changed, radius);
}

TEST(RDDB, ChannelMismatchRejected) {
  Rng rng(6);
  RDDB<float> block(8, 4, rng);
  EXPECT_THROW(block(Tensor<float>(Shape{1, 6, 8, 8})), ShapeError);
}

TEST(ChannelAttention, IdentityAtInit) {
  Rng rng(7);
  ChannelAttention<double> attn(8, 2, rng);
  const auto x = random_tensor<double>(Shape{1, 8, 5, 6}, 8);
  EXPECT_TRUE(bit_equal(attn(x), x));
  for (double t : attn.temperature.data()) EXPECT_EQ(t, 1.0);
}

TEST(ChannelAttention, RowsAreProbabilityVectors) {
  Rng rng(9);
  ChannelAttention<double> attn(12, 3, rng);
  const auto a = attn.attention_map(random_tensor<double>(Shape{2, 12, 6, 5}, 10, -3.0, 3.0));
  ASSERT_EQ(a.shape(), (Shape{2, 3, 4, 4}));
  for (std::int64_t r = 0; r < 2 * 3 * 4; ++r) {
    double s = 0;
    for (std::int64_t c = 0; c < 4; ++c) {
      const double v = a.data()[static_cast<std::size_t>(r * 4 + c)];
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(ChannelAttention, MatchesStraightLineOracle) {
  Rng rng(11);
  ChannelAttention<double> attn(4, 2, rng);
  auto p = params_of(attn);
  Rng prng(12);
  randomize_parameters(p, prng, 0.5);
  const std::int64_t C = 4, heads = 2, d = 2, HW = 9;
  const auto x = random_tensor<double>(Shape{1, C, 3, 3}, 13);
  const auto t = attn.qkv_dw(attn.qkv(x));
  auto val = [&](std::int64_t ch, std::int64_t p) { return t.data()[static_cast<std::size_t>(ch * HW + p)]; };
  std::vector<double> o(static_cast<std::size_t>(C * HW), 0.0);
  for (std::int64_t h = 0; h < heads; ++h) {
    std::vector<std::vector<double>> q(2, std::vector<double>(HW)), k = q;
    for (std::int64_t i = 0; i < d; ++i) {
      double nq = 0, nk = 0;
      for (std::int64_t p = 0; p < HW; ++p) {
        nq += val(h * d + i, p) * val(h * d + i, p);
        nk += val(C + h * d + i, p) * val(C + h * d + i, p);
      }
      for (std::int64_t p = 0; p < HW; ++p) {
        q[static_cast<std::size_t>(i)][static_cast<std::size_t>(p)] = val(h * d + i, p) / std::sqrt(nq + 1e-12);
        k[static_cast<std::size_t>(i)][static_cast<std::size_t>(p)] = val(C + h * d + i, p) / std::sqrt(nk + 1e-12);
      }
    }
    for (std::int64_t i = 0; i < d; ++i) {
      double logit[2], mx = -1e300, den = 0;
      for (std::int64_t j = 0; j < d; ++j) {
        double s = 0;
        for (std::int64_t p = 0; p < HW; ++p) s += q[static_cast<std::size_t>(i)][static_cast<std::size_t>(p)] * k[static_cast<std::size_t>(j)][static_cast<std::size_t>(p)];
        logit[j] = s * attn.temperature.data()[static_cast<std::size_t>(h)];
        mx = std::max(mx, logit[j]);
      }
      for (double& l : logit) den += std::exp(l - mx);
      for (std::int64_t p = 0; p < HW; ++p) {
        double acc = 0;
        for (std::int64_t j = 0; j < d; ++j) acc += std::exp(logit[j] - mx) / den * val(2 * C + h * d + j, p);
        o[static_cast<std::size_t>((h * d + i) * HW + p)] = acc;
      }
    }
  }
  const auto w = attn.proj.weight.data();
  const auto b = attn.proj.bias.data();
  const auto y = attn(x);
  double worst = 0;
  for (std::int64_t co = 0; co < C; ++co)
    for (std::int64_t p = 0; p < HW; ++p) {
      double acc = b[static_cast<std::size_t>(co)];
      for (std::int64_t ci = 0; ci < C; ++ci) acc += w[static_cast<std::size_t>(co * C + ci)] * o[static_cast<std::size_t>(ci * HW + p)];
      acc += x.data()[static_cast<std::size_t>(co * HW + p)];
      worst = std::max(worst, std::abs(acc - y.data()[static_cast<std::size_t>(co * HW + p)]));
    }
  EXPECT_LE(worst, 1e-5);
}

TEST(ChannelAttention, HeadDivisibilityEnforced) {
  Rng rng(14);
  EXPECT_THROW(ChannelAttention<float>(6, 4, rng), ShapeError);
}

TEST(GatedFFN, IdentityAtInit) {
  Rng rng(15);
  GatedFFN<double> ffn(6, 12, rng);
  const auto x = random_tensor<double>(Shape{1, 6, 4, 5}, 16);
  EXPECT_TRUE(bit_equal(ffn(x), x));
}

TEST(GatedFFN, ClosedGatePassesInputThrough) {
  Rng rng(17);
  GatedFFN<double> ffn(6, 12, rng);
  auto p = params_of(ffn);
  Rng prng(18);
  randomize_parameters(p, prng, 0.5);
  // Zero the X half of the input projection so gelu(X) == gelu(0) == 0.
  auto w = ffn.project_in.weight.mutable_data();
  auto b = ffn.project_in.bias.mutable_data();
  for (std::int64_t o = 0; o < 12; ++o) {
    b[static_cast<std::size_t>(o)] = 0.0;
    for (std::int64_t i = 0; i < 6; ++i) w[static_cast<std::size_t>(o * 6 + i)] = 0.0;
    ffn.dw.bias.mutable_data()[static_cast<std::size_t>(o)] = 0.0;
  }
  for (auto& v : ffn.project_out.bias.mutable_data()) v = 0.0;
  const auto x = random_tensor<double>(Shape{1, 6, 4, 5}, 19);
  EXPECT_TRUE(bit_equal(ffn(x), x));
  randomize_parameters(p, prng, 0.5);
  EXPECT_GT(max_abs_diff(ffn(x), x), 0.0);
}

TEST(SACABlock, ZeroLayersRejected) {
  Rng rng(20);
  SACAConfig cfg;
  cfg.n_layers = 0;
  EXPECT_THROW(SACABlock<float>(cfg, rng), ConfigError);
}

TEST(SACABlock, OddLayersWithFusionRejected) {
  Rng rng(21);
  SACAConfig cfg;
  cfg.n_layers = 3;
  EXPECT_THROW(SACABlock<float>(cfg, rng, {32}), ConfigError);
}

TEST(SACABlock, IdentityAtInit) {
  Rng rng(22);
  SACAConfig cfg{8, 2, 2, 2.0, 4};
  SACABlock<double> block(cfg, rng);
  const auto x = random_tensor<double>(Shape{1, 8, 8, 8}, 23);
  EXPECT_TRUE(bit_equal(block(x), x));
}

TEST(SACABlock, ShapePreservedOverRandomConfigs) {
  Rng rng(24);
  for (int trial = 0; trial < 12; ++trial) {
    const int heads = 1 + static_cast<int>(rng.below(3));
    SACAConfig cfg;
    cfg.heads = heads;
    cfg.channels = heads * (1 + rng.below(4));
    cfg.n_layers = 1 + static_cast<int>(rng.below(3));
    cfg.ffn_expand = rng.uniform(0.5, 3.0);
    cfg.rddb_growth = 1 + rng.below(6);
    SACABlock<float> block(cfg, rng);
    auto p = ParamList<float>();
    block.collect("b", p);
    randomize_parameters(p, rng, 0.2f);
    const Shape s{1 + rng.below(2), cfg.channels, 3 + rng.below(6), 3 + rng.below(6)};
    const auto y = block(random_tensor<float>(s, 100 + static_cast<std::uint64_t>(trial)));
    EXPECT_EQ(y.shape(), s);
    EXPECT_TRUE(all_finite(y));
  }
}

TEST(SACABlock, ParameterCountMatchesClosedForm) {
  Rng rng(25);
  for (auto [c, n, h, e, g] : std::vector<std::tuple<std::int64_t, int, int, double, std::int64_t>>{
           {16, 2, 1, 2.0, 8}, {32, 4, 2, 2.0, 16}, {12, 1, 3, 1.5, 5}}) {
    SACAConfig cfg{c, n, h, e, g};
    SACABlock<double> block(cfg, rng);
    EXPECT_EQ(count_of(block), saca_param_count(cfg));
    EXPECT_EQ(count_of(block.rddb), rddb_param_count(c, g));
    EXPECT_EQ(count_of(block.layers[0].attn), attention_param_count(c, h));
    EXPECT_EQ(count_of(block.layers[0].ffn), ffn_param_count(c, ffn_hidden(c, e)));
  }
}

TEST(SACABlock, ParameterNamesAreUnique) {
  Rng rng(26);
  SACABlock<float> block(SACAConfig{8, 2, 2, 2.0, 4}, rng, {16, 32});
  ParamList<float> p;
  EXPECT_NO_THROW(block.collect("blk", p));
  EXPECT_TRUE(p.find("blk.layers.1.attn.qkv.weight") != nullptr);
  EXPECT_TRUE(p.find("blk.fusion.proj1.weight") != nullptr);
}

TEST(HierarchicalFusion, InitialFusionEqualsNoFusionPath) {
  Rng rng(27);
  SACAConfig cfg{8, 2, 2, 2.0, 4};
  SACABlock<double> fused(cfg, rng, {16, 32});
  ParamList<double> p;
  fused.collect("b", p);
  Rng prng(28);
  randomize_parameters(p.filter("b.rddb"), prng, 0.2);
  randomize_parameters(p.filter("b.layers"), prng, 0.2);
  SACABlock<double> plain = fused;
  plain.fusion.reset();
  const auto x = random_tensor<double>(Shape{1, 8, 8, 8}, 29);
  const std::vector<Tensor<double>> injected{random_tensor<double>(Shape{1, 16, 4, 4}, 30),
                                             random_tensor<double>(Shape{1, 32, 2, 2}, 31)};
  EXPECT_TRUE(bit_equal(fused(x, injected), plain(x)));
}

TEST(HierarchicalFusion, ParameterDifferenceIsFusionConvs) {
  Rng rng(32);
  SACAConfig cfg{16, 4, 2, 2.0, 8};
  const std::vector<std::int64_t> sources{32, 64};
  SACABlock<double> with(cfg, rng, sources), without(cfg, rng);
  const std::int64_t diff = count_of(with) - count_of(without);
  EXPECT_EQ(diff, fusion_param_count(16, sources));
  EXPECT_EQ(diff, conv_param_count(32, 16, 1) + conv_param_count(64, 16, 1) + conv_param_count(48, 16, 1));
}

TEST(HierarchicalFusion, MissingFeatureRejected) {
  Rng rng(33);
  SACABlock<float> block(SACAConfig{8, 2, 2, 2.0, 4}, rng, {16, 32});
  const auto x = random_tensor<float>(Shape{1, 8, 8, 8}, 34);
  try {
    block(x, {random_tensor<float>(Shape{1, 16, 4, 4}, 35)});
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("missing required feature"), std::string::npos);
  }
}

TEST(Resample, ShapeContract) {
  Rng rng(36);
  Downsample<float> down(16, rng);
  Upsample<float> up(32, rng);
  const auto x = random_tensor<float>(Shape{1, 16, 8, 8}, 37);
  const auto d = down(x);
  EXPECT_EQ(d.shape(), (Shape{1, 32, 4, 4}));
  EXPECT_EQ(up(d).shape(), (Shape{1, 16, 8, 8}));
  EXPECT_THROW(down(random_tensor<float>(Shape{1, 16, 7, 8}, 38)), ShapeError);
  EXPECT_THROW(Upsample<float>(15, rng), ShapeError);
}

TEST(Resample, ShufflePathKeepsConstants) {
  const Tensor<float> x(Shape{1, 4, 6, 6}, 0.75f);
  const auto u = pixel_unshuffle(x, 2);
  for (float v : u.data()) EXPECT_EQ(v, 0.75f);
}

TEST(GradSuite, EveryBlockPasses) {
  for (const auto& r : gradcheck_blocks(GradCheckOptions{})) EXPECT_TRUE(r.passed()) << r.name << " " << r.max_rel_error;
}
