#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "test_util.hpp"

using namespace fqf;
using fqf::testing::bit_equal;
using fqf::testing::max_abs_diff;
using fqf::testing::random_tensor;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.base_channels = 8;
  c.enc_n_high = {1, 1, 1};
  c.dec_n_high = {2, 2, 1};
  c.enc_n_low = {1, 1, 1};
  c.dec_n_low = {1, 1, 1};
  c.heads = {1, 2, 2};
  c.n_f = 1;
  c.rddb_growth = 4;
  return c;
}

TrainConfig small_train(Stage stage) {
  TrainConfig t;
  t.stage = stage;
  t.steps = 2;
  t.batch = 2;
  t.crop_side = 16;
  t.resize_side = 16;
  t.seed = 5;
  return t;
}

std::vector<DatasetItem> tiny_data(std::uint64_t seed, int n, std::int64_t side) {
  Rng rng(seed);
  std::vector<DatasetItem> items;
  for (int i = 0; i < n; ++i) {
    const auto clean = natural_card(side, side, rng);
    const auto pair = gen_moire_pair(clean, sample_moire_params(rng, side, side));
    items.push_back({pair_stem(static_cast<std::size_t>(i)), pair.moire, pair.clean});
  }
  return items;
}

template <class T>
ParamList<T> one(const std::string& name, const Tensor<T>& t) {
  ParamList<T> p;
  p.add(name, t);
  return p;
}

Tensor<float> filled(Shape s, float v) { return Tensor<float>(s, v); }

double grad_l1(const ParamList<float>& p) {
  double acc = 0.0;
  for (const auto& [name, t] : p)
    for (float g : t.grad()) acc += std::abs(static_cast<double>(g));
  return acc;
}

// Half-pixel bilinear sample of plane `X` (H x W) at source coordinates.
double sample(const float* X, std::int64_t H, std::int64_t W, double sy, double sx) {
  auto axis = [](double s, std::int64_t n, std::int64_t& i0, std::int64_t& i1, double& f) {
    s = std::max(s, 0.0);
    i0 = std::min<std::int64_t>(static_cast<std::int64_t>(std::floor(s)), n - 1);
    i1 = std::min<std::int64_t>(i0 + 1, n - 1);
    f = s - static_cast<double>(i0);
  };
  std::int64_t y0, y1, x0, x1;
  double fy, fx;
  axis(sy, H, y0, y1, fy);
  axis(sx, W, x0, x1, fx);
  const double top = X[y0 * W + x0] * (1 - fx) + X[y0 * W + x1] * fx;
  const double bot = X[y1 * W + x0] * (1 - fx) + X[y1 * W + x1] * fx;
  return top * (1 - fy) + bot * fy;
}

}  // namespace

TEST(Losses, L1ClosedForm) {
  const auto a = filled(Shape{1, 3, 2, 2}, 0.75f), b = filled(Shape{1, 3, 2, 2}, 0.25f);
  EXPECT_FLOAT_EQ(l1_loss(a, b).item(), 0.5f);
  EXPECT_EQ(l1_loss(a, a).item(), 0.0f);
}

TEST(Losses, PerceptualExtractorIsFrozenAndSeeded) {
  const FeatureExtractor<float> e1, e2;
  const auto p1 = e1.parameters(), p2 = e2.parameters();
  ASSERT_EQ(p1.size(), 6u);
  for (std::size_t i = 0; i < p1.size(); ++i) {
    EXPECT_TRUE(bit_equal(p1[i].second, p2[i].second));
    EXPECT_FALSE(p1[i].second.requires_grad());
  }
  const auto a = make_parameter(random_tensor<float>(Shape{1, 3, 16, 16}, 1, 0, 1));
  const auto b = random_tensor<float>(Shape{1, 3, 16, 16}, 2, 0, 1);
  EXPECT_EQ(perceptual_loss(a, a, e1).item(), 0.0f);
  EXPECT_FLOAT_EQ(perceptual_loss(a, b, e1).item(), perceptual_loss(b, a, e1).item());
  backward(perceptual_loss(a, b, e1));
  EXPECT_GT(grad_l1(one<float>("a", a)), 0.0);
  for (const auto& [name, t] : p1) EXPECT_TRUE(t.grad().empty() || grad_l1(one<float>(name, t)) == 0.0) << name;
}

TEST(Losses, Stage1SumsThreeScales) {
  const FeatureExtractor<float> ext;
  const std::vector<Tensor<float>> out{filled(Shape{1, 3, 4, 4}, 0.5f), filled(Shape{1, 3, 2, 2}, 0.25f), filled(Shape{1, 3, 1, 1}, 1.0f)};
  const std::vector<Tensor<float>> gt{filled(Shape{1, 3, 4, 4}, 0.0f), filled(Shape{1, 3, 2, 2}, 0.0f), filled(Shape{1, 3, 1, 1}, 0.0f)};
  const auto plain = stage1_loss(out, gt, 0.0, ext);
  EXPECT_NEAR(plain.total.item(), 1.75, 1e-7);
  EXPECT_NEAR(plain.l1, 1.75, 1e-7);
  EXPECT_EQ(plain.lp, 0.0);
  double lp = 0.0;
  for (int i = 0; i < 3; ++i) lp += perceptual_loss(out[static_cast<std::size_t>(i)], gt[static_cast<std::size_t>(i)], ext).item();
  const auto weighted = stage1_loss(out, gt, 0.5, ext);
  EXPECT_NEAR(weighted.lp, lp, 1e-6);
  EXPECT_NEAR(weighted.total.item(), 1.75 + 0.5 * lp, 1e-6);
  EXPECT_THROW(stage1_loss(std::vector<Tensor<float>>(out.begin(), out.begin() + 2), gt, 0.0, ext), ShapeError);
}

TEST(Losses, Stage2SingleScale) {
  const FeatureExtractor<float> ext;
  const auto a = random_tensor<float>(Shape{1, 3, 8, 8}, 3, 0, 1), b = random_tensor<float>(Shape{1, 3, 8, 8}, 4, 0, 1);
  double l1 = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) l1 += std::abs(static_cast<double>(a.data()[i]) - b.data()[i]);
  l1 /= static_cast<double>(a.numel());
  const auto plain = stage2_loss(a, b, 0.0, ext);
  EXPECT_NEAR(plain.total.item(), l1, 1e-6);
  const auto full = stage2_loss(a, b, 0.1, ext);
  EXPECT_NEAR(full.total.item(), l1 + 0.1 * perceptual_loss(a, b, ext).item(), 1e-6);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto p = make_parameter(Tensor<float>(Shape{3}, std::vector<float>{1.0f, 1.0f, 1.0f}));
  backward(sum(mul(p, Tensor<float>(Shape{3}, std::vector<float>{2.0f, -0.5f, 0.0f}))));
  Adam<float> adam(one<float>("p", p));
  adam.step(0.01);
  EXPECT_NEAR(p.data()[0], 0.99, 1e-7);
  EXPECT_NEAR(p.data()[1], 1.01, 1e-7);
  EXPECT_EQ(p.data()[2], 1.0f);
}

TEST(Adam, ZeroGradientDecaysMoments) {
  auto p = make_parameter(Tensor<float>(Shape{1}, 0.0f));
  Adam<float> adam(one<float>("p", p));
  p.mutable_grad()[0] = 1.0f;
  adam.step(0.1);
  const double m1 = adam.first_moment(0)[0], v1 = adam.second_moment(0)[0];
  p.mutable_grad()[0] = 0.0f;
  const float before = p.data()[0];
  adam.step(0.1);
  EXPECT_NEAR(adam.first_moment(0)[0], 0.9 * m1, 1e-15);
  EXPECT_NEAR(adam.second_moment(0)[0], 0.999 * v1, 1e-15);
  EXPECT_LT(p.data()[0], before);  // momentum keeps moving
}

TEST(Adam, MinimisesQuadratic) {
  auto x = make_parameter(Tensor<double>(Shape{2}, std::vector<double>{0.0, -4.0}));
  const Tensor<double> target(Shape{2}, std::vector<double>{3.0, 1.0});
  Adam<double> adam(one<double>("x", x));
  const int steps = 1000;
  for (int i = 0; i < steps; ++i) {
    x.zero_grad();
    const auto d = sub(x, target);
    backward(sum(mul(d, d)));
    adam.step(cosine_cycle_lr(i, 0.1, steps));
  }
  EXPECT_NEAR(x.data()[0], 3.0, 1e-3);
  EXPECT_NEAR(x.data()[1], 1.0, 1e-3);
}

TEST(Adam, NonFiniteGradientAbortsBeforeUpdate) {
  auto p = make_parameter(Tensor<float>(Shape{2}, 1.0f));
  Adam<float> adam(one<float>("p", p));
  p.mutable_grad()[0] = 1.0f;
  p.mutable_grad()[1] = std::nanf("");
  EXPECT_THROW(adam.step(0.1), NumericError);
  EXPECT_EQ(p.data()[0], 1.0f);
  EXPECT_EQ(adam.steps(), 0);
}

TEST(Schedule, CosineWithRestarts) {
  EXPECT_DOUBLE_EQ(cosine_cycle_lr(0, 2e-4, 10), 2e-4);
  EXPECT_NEAR(cosine_cycle_lr(5, 2e-4, 10), 1e-4, 1e-18);
  EXPECT_DOUBLE_EQ(cosine_cycle_lr(10, 2e-4, 10), 2e-4);
  for (int e = 0; e < 40; ++e) {
    const double lr = cosine_cycle_lr(e, 2e-4, 7);
    EXPECT_GT(lr, 0.0);
    EXPECT_LE(lr, 2e-4);
    if (e % 7 != 0) {
      EXPECT_LT(lr, cosine_cycle_lr(e - 1, 2e-4, 7));
    }
  }
  EXPECT_THROW(cosine_cycle_lr(0, 1e-3, 0), ConfigError);
}

TEST(Sampling, CropsAreSeededAndAligned) {
  Rng a(9), b(9);
  for (int i = 0; i < 200; ++i) {
    const auto ba = random_crop(70, 90, 32, 2, a), bb = random_crop(70, 90, 32, 2, b);
    EXPECT_EQ(ba, bb);
    EXPECT_EQ(ba.x1 % 2, 0);
    EXPECT_EQ(ba.y1 % 2, 0);
    EXPECT_LE(ba.x2, 90);
    EXPECT_LE(ba.y2, 70);
    EXPECT_EQ(ba.width(), 32);
  }
  Rng c(1);
  EXPECT_THROW(random_crop(20, 40, 32, 2, c), ShapeError);
}

TEST(Sampling, HighSampleIsCropOfDecomposition) {
  const auto data = tiny_data(3, 1, 48);
  const auto cfg = small_train(Stage::High);
  const ModelConfig mc = small_config();
  Rng rng(4);
  const auto s = sample_stage1(data[0].moire, data[0].clean, BranchKind::High, cfg, mc, rng);
  ASSERT_TRUE(s.box.has_value());
  const auto pm = decompose(data[0].moire, mc.freq_levels);
  const auto pc = decompose(data[0].clean, mc.freq_levels);
  EXPECT_TRUE(bit_equal(s.input, crop_box(pm.high, *s.box)));
  EXPECT_TRUE(bit_equal(s.targets[0], crop_box(pc.high, *s.box)));
  EXPECT_EQ(s.targets[1].shape(), (Shape{1, 3, 8, 8}));
  EXPECT_EQ(s.targets[2].shape(), (Shape{1, 3, 4, 4}));
  EXPECT_LT(max_abs_diff(s.targets[1], interpolate_bilinear(s.targets[0], 8, 8)), 1e-7);
}

TEST(Sampling, LowSampleIsResizedPyramid) {
  const auto data = tiny_data(3, 1, 48);
  const auto cfg = small_train(Stage::Low);
  const ModelConfig mc = small_config();
  Rng rng(4);
  const auto s = sample_stage1(data[0].moire, data[0].clean, BranchKind::Low, cfg, mc, rng);
  EXPECT_FALSE(s.box.has_value());
  EXPECT_EQ(s.input.shape(), (Shape{1, 3, 16, 16}));
  EXPECT_EQ(s.targets[1].shape(), (Shape{1, 3, 8, 8}));
  EXPECT_EQ(s.targets[2].shape(), (Shape{1, 3, 4, 4}));
  const auto pm = decompose(data[0].moire, mc.freq_levels);
  EXPECT_TRUE(bit_equal(s.input, interpolate_bilinear(pm.low, 16, 16)));
}

TEST(Sampling, LowFeatureAlignmentMatchesGlobalSampling) {
  const auto feat = random_tensor<float>(Shape{1, 4, 8, 8}, 6);
  const std::int64_t H = 40, W = 56;
  const int s = 2;
  const CropBox box{10, 6, 26, 22};
  const auto got = align_low_feature(feat, H, W, box, s);
  ASSERT_EQ(got.shape(), (Shape{1, 4, 8, 8}));
  const std::int64_t gh = H / s, gw = W / s;
  double worst = 0.0;
  for (std::int64_t c = 0; c < 4; ++c)
    for (std::int64_t i = 0; i < 8; ++i)
      for (std::int64_t j = 0; j < 8; ++j) {
        const double gy = static_cast<double>(box.y1 / s + i), gx = static_cast<double>(box.x1 / s + j);
        const double ref = sample(feat.data().data() + c * 64, 8, 8, (gy + 0.5) * 8.0 / static_cast<double>(gh) - 0.5,
                                  (gx + 0.5) * 8.0 / static_cast<double>(gw) - 0.5);
        worst = std::max(worst, std::abs(ref - got.data()[static_cast<std::size_t>((c * 8 + i) * 8 + j)]));
      }
  EXPECT_LT(worst, 1e-4);
}

TEST(Stage1, OnlyTrainedBranchMoves) {
  Freqformer<float> model(small_config(), 1);
  std::vector<Tensor<float>> snap;
  for (const auto& [n, t] : model.parameters()) snap.push_back(t.detach());
  train_stage1(model, BranchKind::High, tiny_data(7, 2, 32), small_train(Stage::High), FeatureExtractor<float>());
  const auto after = model.parameters();
  bool high_moved = false;
  for (std::size_t i = 0; i < after.size(); ++i) {
    const bool same = bit_equal(after[i].second, snap[i]);
    if (after[i].first.rfind("high.", 0) == 0) high_moved |= !same;
    else EXPECT_TRUE(same) << after[i].first;
  }
  EXPECT_TRUE(high_moved);
}

TEST(Stage1, EveryHeadReceivesGradient) {
  for (BranchKind k : {BranchKind::High, BranchKind::Low}) {
    Freqformer<float> model(small_config(), 1);
    const auto data = tiny_data(8, 1, 32);
    Rng rng(2);
    const auto s = sample_stage1(data[0].moire, data[0].clean, k, small_train(Stage::High), model.config(), rng);
    backward(stage1_loss(model.branch(k)(s.input), s.targets, 1.0, FeatureExtractor<float>()).total);
    const std::string prefix = k == BranchKind::High ? "high" : "low";
    for (int h = 0; h < 3; ++h) EXPECT_GT(grad_l1(model.parameters().filter(prefix + ".head" + std::to_string(h))), 0.0) << prefix << h;
    EXPECT_EQ(grad_l1(model.parameters().filter(k == BranchKind::High ? "low." : "high.")), 0.0);
  }
}

TEST(Stage2, GradientsReachAllThreeGroups) {
  Freqformer<float> model(small_config(), 1);
  const auto data = tiny_data(9, 1, 48);
  Rng rng(3);
  const auto s = sample_stage2(data[0].moire, data[0].clean, small_train(Stage::Joint), model.config(), rng);
  EXPECT_EQ(s.high_in.shape(), (Shape{1, 3, 16, 16}));
  EXPECT_TRUE(bit_equal(s.target, crop_box(data[0].clean, s.box)));
  backward(stage2_loss(joint_forward(model, s), s.target, 0.1, FeatureExtractor<float>()).total);
  for (const char* g : {"high.", "low.", "fct."}) EXPECT_GT(grad_l1(model.parameters().filter(g)), 0.0) << g;
}

TEST(Training, EqualSeedsGiveIdenticalRuns) {
  const auto data = tiny_data(10, 3, 32);
  for (Stage st : {Stage::High, Stage::Low, Stage::Joint}) {
    std::vector<std::string> logs[2];
    ParamList<float> finals[2];
    std::vector<Freqformer<float>> models;
    for (int r = 0; r < 2; ++r) {
      Freqformer<float> m(small_config(), 1);
      const auto cfg = small_train(st);
      const auto log = st == Stage::Joint ? train_stage2(m, data, cfg, FeatureExtractor<float>())
                                          : train_stage1(m, st == Stage::High ? BranchKind::High : BranchKind::Low, data, cfg,
                                                         FeatureExtractor<float>());
      for (const auto& rec : log) logs[r].push_back(format_loss_record(rec));
      models.push_back(std::move(m));
    }
    EXPECT_EQ(logs[0], logs[1]) << stage_name(st);
    const auto a = models[0].parameters(), b = models[1].parameters();
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(bit_equal(a[i].second, b[i].second)) << a[i].first;
  }
}

TEST(Training, DivergenceRestoresLastGoodParameters) {
  auto p = make_parameter(Tensor<float>(Shape{2}, 1.0f));
  const ParamList<float> params = one<float>("p", p);
  Adam<float> adam(params);
  auto good = detail::snapshot(params);
  p.mutable_grad()[0] = 1.0f;
  detail::guarded_update(params, adam, good, 0.5, 0.1, 0.0, 0);
  const float moved = p.data()[0];
  EXPECT_LT(moved, 1.0f);
  try {
    detail::guarded_update(params, adam, good, std::nan(""), 0.1, 0.0, 1);
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_EQ(e.step(), 1);
  }
  EXPECT_EQ(p.data()[0], moved);
  p.mutable_grad()[1] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(detail::guarded_update(params, adam, good, 0.5, 0.1, 0.0, 2), DivergenceError);
  EXPECT_EQ(p.data()[0], moved);
}

TEST(Training, RejectsBadConfigs) {
  Freqformer<float> m(small_config(), 1);
  const auto data = tiny_data(11, 1, 32);
  auto cfg = small_train(Stage::High);
  cfg.crop_side = 12;
  EXPECT_THROW(train_stage1(m, BranchKind::High, data, cfg, FeatureExtractor<float>()), ConfigError);
  cfg = small_train(Stage::High);
  cfg.crop_side = 64;
  EXPECT_THROW(train_stage1(m, BranchKind::High, data, cfg, FeatureExtractor<float>()), ShapeError);
  EXPECT_THROW(train_stage1(m, BranchKind::High, {}, small_train(Stage::High), FeatureExtractor<float>()), ConfigError);
}
