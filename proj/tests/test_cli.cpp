#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "test_util.hpp"

using namespace fqf;
using fqf::testing::scratch_dir;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run fqf_run(const std::string& args, const fs::path& dir) {
  const auto log = (dir / "cli_output.txt").string();
  const std::string cmd = std::string(FQF_BINARY) + " " + args + " >" + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream f(log);
  std::stringstream ss;
  ss << f.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string p(const fs::path& x) { return x.string(); }

void write_tiny_config(const fs::path& path, const std::string& extra = "") {
  std::ofstream(path) << "base_channels=8\nenc_n_high=1,1,1\ndec_n_high=2,2,1\nn_low=1,1,1\nheads=1,2,2\nn_f=1\n"
                         "rddb_growth=4\ncrop_side=16\nresize_side=16\nsteps=2\nbatch=2\n"
                      << extra;
}

std::vector<std::uint8_t> bytes(const fs::path& x) { return read_file_bytes(x.string()); }

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  const auto dir = scratch_dir("cli_usage");
  EXPECT_EQ(fqf_run("", dir).code, 2);
  EXPECT_EQ(fqf_run("frobnicate", dir).code, 2);
  EXPECT_EQ(fqf_run("--help", dir).code, 0);
  EXPECT_EQ(fqf_run("decompose --input " + p(dir / "none.png") + " --out-low a.png --out-high b.png", dir).code, 2);
  EXPECT_EQ(fqf_run("gen-data --out-dir " + p(dir / "g") + " --count 0", dir).code, 2);
  const auto r = fqf_run("train --stage sideways --data-dir " + p(dir) + " --out-ckpt " + p(dir / "x.ckpt"), dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("sideways"), std::string::npos);
}

TEST(Cli, SeedFromEnvironmentOrFlag) {
  const auto dir = scratch_dir("cli_seed");
  const auto a = fqf_run("gen-data --out-dir " + p(dir / "a") + " --count 1 --size 24 --seed 4", dir);
  ASSERT_EQ(a.code, 0) << a.out;
  EXPECT_NE(a.out.find("# seed=4"), std::string::npos);
  setenv("FQF_SEED", "4", 1);
  const auto b = fqf_run("gen-data --out-dir " + p(dir / "b") + " --count 1 --size 24", dir);
  unsetenv("FQF_SEED");
  ASSERT_EQ(b.code, 0) << b.out;
  EXPECT_EQ(bytes(dir / "a" / "000_moire.png"), bytes(dir / "b" / "000_moire.png"));
}

TEST(Cli, ConstantImageDecomposesToFlatLowAndMidGreyHigh) {
  const auto dir = scratch_dir("cli_const");
  save_png(Tensor<float>(Shape{1, 3, 32, 40}, 100.0f / 255.0f), p(dir / "c.png"));
  const auto r = fqf_run("decompose --input " + p(dir / "c.png") + " --out-low " + p(dir / "l.png") + " --out-high " + p(dir / "h.png"), dir);
  ASSERT_EQ(r.code, 0) << r.out;
  const auto low = read_png_rgb8(p(dir / "l.png")), high = read_png_rgb8(p(dir / "h.png"));
  for (auto v : low.pixels) ASSERT_EQ(v, 100);
  for (auto v : high.pixels) ASSERT_EQ(v, 128);
  EXPECT_TRUE(fs::exists(dir / "h.png.fqf"));
}

TEST(Cli, DecomposeRecomposeRoundTrip) {
  const auto dir = scratch_dir("cli_roundtrip");
  Rng rng(2);
  save_png(natural_card(48, 56, rng), p(dir / "n.png"));
  ASSERT_EQ(fqf_run("decompose --input " + p(dir / "n.png") + " --out-low " + p(dir / "l.png") + " --out-high " + p(dir / "h.png"), dir).code, 0);
  const auto r = fqf_run("recompose --low " + p(dir / "l.png") + " --high " + p(dir / "h.png") + " --output " + p(dir / "r.png"), dir);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_GE(psnr(load_png(p(dir / "r.png")), load_png(p(dir / "n.png"))), 55.0);
  fs::remove(dir / "h.png.fqf");
  EXPECT_EQ(fqf_run("recompose --low " + p(dir / "l.png") + " --high " + p(dir / "h.png") + " --output " + p(dir / "s.png"), dir).code, 2);
  EXPECT_FALSE(fs::exists(dir / "s.png"));
}

TEST(Cli, EvalOfCleanPairsIsPerfect) {
  const auto dir = scratch_dir("cli_eval");
  Rng rng(3);
  std::vector<SamplePair> pairs;
  for (int i = 0; i < 2; ++i) {
    const auto c = rgb8_to_tensor(tensor_to_rgb8(natural_card(24, 24, rng)));
    pairs.push_back({c, c, {}});
  }
  write_dataset(p(dir / "d"), pairs);
  const auto r = fqf_run("eval --data-dir " + p(dir / "d"), dir);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("000,100.000000,1.000000"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("mean,100.000000,1.000000"), std::string::npos) << r.out;
}

TEST(Cli, TrainInferAreReproducible) {
  const auto dir = scratch_dir("cli_repro");
  write_tiny_config(dir / "t.cfg");
  const std::string cfg = " --config " + p(dir / "t.cfg");
  ASSERT_EQ(fqf_run("gen-data --out-dir " + p(dir / "d") + " --count 2 --size 32 --seed 7", dir).code, 0);
  for (const char* run : {"a", "b"}) {
    const auto r = fqf_run("train --stage high --data-dir " + p(dir / "d") + " --out-ckpt " + p(dir / (std::string(run) + ".ckpt")) + cfg + " --seed 1", dir);
    ASSERT_EQ(r.code, 0) << r.out;
    const auto i = fqf_run("infer --ckpt " + p(dir / (std::string(run) + ".ckpt")) + " --input " + p(dir / "d" / "000_moire.png") +
                               " --output " + p(dir / (std::string(run) + ".png")) + cfg,
                           dir);
    ASSERT_EQ(i.code, 0) << i.out;
  }
  EXPECT_EQ(bytes(dir / "a.ckpt"), bytes(dir / "b.ckpt"));
  EXPECT_EQ(bytes(dir / "a.ckpt.log"), bytes(dir / "b.ckpt.log"));
  EXPECT_EQ(bytes(dir / "a.png"), bytes(dir / "b.png"));
  const auto e = fqf_run("eval --ckpt " + p(dir / "a.ckpt") + " --data-dir " + p(dir / "d") + " --low-mode full", dir);
  EXPECT_EQ(e.code, 0) << e.out;
  EXPECT_EQ(fqf_run("infer --ckpt " + p(dir / "a.ckpt") + " --input " + p(dir / "d" / "000_moire.png") + " --output " +
                        p(dir / "c.png") + " --low-mode sideways",
                    dir)
                .code,
            2);
  EXPECT_FALSE(fs::exists(dir / "c.png"));
}

TEST(Cli, JointStageNeedsBothBranchCheckpoints) {
  const auto dir = scratch_dir("cli_joint");
  write_tiny_config(dir / "t.cfg");
  ASSERT_EQ(fqf_run("gen-data --out-dir " + p(dir / "d") + " --count 2 --size 32", dir).code, 0);
  const std::string base = "train --config " + p(dir / "t.cfg") + " --data-dir " + p(dir / "d");
  EXPECT_EQ(fqf_run(base + " --stage joint --out-ckpt " + p(dir / "j.ckpt"), dir).code, 2);
  ASSERT_EQ(fqf_run(base + " --stage high --out-ckpt " + p(dir / "h.ckpt"), dir).code, 0);
  ASSERT_EQ(fqf_run(base + " --stage low --out-ckpt " + p(dir / "l.ckpt"), dir).code, 0);
  const auto r = fqf_run(base + " --stage joint --high-ckpt " + p(dir / "h.ckpt") + " --low-ckpt " + p(dir / "l.ckpt") +
                             " --out-ckpt " + p(dir / "j.ckpt"),
                         dir);
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(dir / "j.ckpt.cfg"));
}

TEST(Cli, DivergenceExitsOneWithoutCheckpoint) {
  const auto dir = scratch_dir("cli_diverge");
  write_tiny_config(dir / "t.cfg", "lr0=1e30\n");
  ASSERT_EQ(fqf_run("gen-data --out-dir " + p(dir / "d") + " --count 2 --size 32", dir).code, 0);
  const auto r = fqf_run("train --config " + p(dir / "t.cfg") + " --stage high --data-dir " + p(dir / "d") + " --out-ckpt " + p(dir / "x.ckpt"), dir);
  EXPECT_EQ(r.code, 1) << r.out;
  EXPECT_FALSE(fs::exists(dir / "x.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "x.ckpt.last_good"));
}

TEST(Cli, FailedCommandRemovesPartialOutputs) {
  const auto dir = scratch_dir("cli_partial");
  Rng rng(4);
  save_png(natural_card(32, 32, rng), p(dir / "n.png"));
  const auto r = fqf_run("decompose --input " + p(dir / "n.png") + " --out-low " + p(dir / "l.png") + " --out-high " +
                             p(dir / "missing_dir" / "h.png"),
                         dir);
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(fs::exists(dir / "l.png"));
}

TEST(Cli, ResizeReportAndGradcheck) {
  const auto dir = scratch_dir("cli_misc");
  Rng rng(5);
  fs::create_directories(dir / "imgs");
  save_png(natural_card(64, 64, rng), p(dir / "imgs" / "a.png"));
  const auto r = fqf_run("resize-report --data-dir " + p(dir / "imgs"), dir);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("a.png,"), std::string::npos);
  EXPECT_EQ(fqf_run("resize-report --data-dir " + p(dir / "imgs") + " --factor 1.5", dir).code, 2);
  const auto g = fqf_run("gradcheck --module ops", dir);
  EXPECT_EQ(g.code, 0) << g.out;
  EXPECT_NE(g.out.find(" 0 failed"), std::string::npos);
}
