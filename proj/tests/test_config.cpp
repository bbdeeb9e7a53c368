#include <gtest/gtest.h>

#include <fstream>

#include "test_util.hpp"

using namespace fqf;

namespace {

std::string config_error(const std::string& text) {
  try {
    ModelConfig m;
    TrainConfig t;
    apply_config(parse_key_values(text, "x.cfg"), m, t);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(ConfigFile, ParsesCommentsAndWhitespace) {
  ModelConfig m;
  TrainConfig t;
  apply_config(parse_key_values("# header\n\n  base_channels = 24  # wide\nheads=1, 2 ,4\nlr0=0.001\nstage=low\n"), m, t);
  EXPECT_EQ(m.base_channels, 24);
  EXPECT_EQ(m.heads, (std::array<int, 3>{1, 2, 4}));
  EXPECT_DOUBLE_EQ(t.lr0, 0.001);
  EXPECT_EQ(t.stage, Stage::Low);
}

TEST(ConfigFile, ErrorsNameTheLine) {
  EXPECT_NE(config_error("base_channels=8\nbase_channels=16\n").find("x.cfg:2"), std::string::npos);
  EXPECT_NE(config_error("a=1\nno equals sign\n").find("x.cfg:2"), std::string::npos);
  EXPECT_NE(config_error("=3\n").find("x.cfg:1"), std::string::npos);
}

TEST(ConfigFile, RejectsUnknownKeysAndBadValues) {
  EXPECT_NE(config_error("bogus=1\n").find("bogus"), std::string::npos);
  EXPECT_NE(config_error("base_channels=abc\n"), "");
  EXPECT_NE(config_error("base_channels=8x\n"), "");
  EXPECT_NE(config_error("heads=1,2\n"), "");
  EXPECT_NE(config_error("heads=1,2,3,4\n"), "");
  EXPECT_NE(config_error("stage=middle\n"), "");
}

TEST(ConfigFile, LowDepthAliasSetsBothHalves) {
  ModelConfig m;
  TrainConfig t;
  apply_config(parse_key_values("n_low=2,3,4\n"), m, t);
  EXPECT_EQ(m.enc_n_low, (std::array<int, 3>{2, 3, 4}));
  EXPECT_EQ(m.dec_n_low, (std::array<int, 3>{2, 3, 4}));
}

TEST(ConfigFile, FormatParseRoundTrip) {
  ModelConfig m;
  m.base_channels = 8;
  m.dec_n_high = {3, 2, 1};
  m.ffn_expand = 2.5;
  TrainConfig t;
  t.stage = Stage::Joint;
  t.lr0 = 3.7e-4;
  t.seed = 12345678901ULL;
  t.fct_warm_start = false;
  ModelConfig m2;
  TrainConfig t2;
  apply_config(parse_key_values(format_model_config(m) + format_train_config(t)), m2, t2);
  EXPECT_EQ(format_model_config(m2), format_model_config(m));
  EXPECT_EQ(format_train_config(t2), format_train_config(t));
  EXPECT_DOUBLE_EQ(t2.lr0, 3.7e-4);
  EXPECT_EQ(t2.seed, 12345678901ULL);
}

TEST(ConfigFile, ModelConfigFileValidatesAndIgnoresTrainingKeys) {
  const auto dir = fqf::testing::scratch_dir("config");
  const auto ok = (dir / "ok.cfg").string(), bad = (dir / "bad.cfg").string();
  std::ofstream(ok) << "base_channels=8\nrddb_growth=4\nsteps=10\n";
  std::ofstream(bad) << "base_channels=0\n";
  EXPECT_EQ(load_model_config(ok).base_channels, 8);
  EXPECT_THROW(load_model_config(bad), ConfigError);
  EXPECT_THROW(load_model_config((dir / "none.cfg").string()), IoError);
}
