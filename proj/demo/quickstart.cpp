// Minimal tour of the library: synthesize a moire pair, split it into
// frequency components, build a small model and run a few training steps.
//
//   quickstart [out_dir]    writes the images as PNGs when out_dir is given

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "freqformer/freqformer.hpp"

int main(int argc, char** argv) {
  using namespace fqf;
  Rng rng(7);

  // A clean test card and its degraded copy.
  const Tensor<float> clean = natural_card(64, 64, rng);
  const SamplePair pair = gen_moire_pair(clean, sample_moire_params(rng, 64, 64));
  std::printf("moire vs clean:       psnr %.2f dB  ssim %.4f\n", psnr(pair.moire, clean), ssim(pair.moire, clean));

  // Low + high always adds back up to the input.
  const auto parts = decompose(pair.moire, 3);
  const Tensor<float> back = recompose_fixed(parts);
  float err = 0.0f;
  for (std::size_t i = 0; i < back.data().size(); ++i) err = std::max(err, std::abs(back.data()[i] - pair.moire.data()[i]));
  std::printf("recompose error:      %.3e\n", static_cast<double>(err));

  // A narrow model starts out as the identity map (width >= 3 * 2^2 channels).
  ModelConfig cfg;
  cfg.base_channels = 12;
  cfg.rddb_growth = 4;
  Freqformer<float> model(cfg, 1);
  std::printf("model parameters:     %lld\n", static_cast<long long>(model_param_count(cfg)));
  {
    NoGradGuard no_grad;
    const auto y = model.infer(pair.moire, LowMode::resize(32));
    std::printf("untrained output:     psnr vs input %.2f dB\n", psnr(y, pair.moire));
  }

  // A few stage-1 steps on the high branch.
  std::vector<DatasetItem> data;
  for (int i = 0; i < 4; ++i) {
    const auto p = gen_moire_pair(natural_card(64, 64, rng), sample_moire_params(rng, 64, 64));
    data.push_back({pair_stem(static_cast<std::size_t>(i)), p.moire, p.clean});
  }
  TrainConfig train;
  train.steps = 6;
  train.crop_side = 32;
  train.lr0 = 1e-3;
  train.seed = 3;
  const auto log = train_stage1(model, BranchKind::High, data, train, FeatureExtractor<float>(), [](const LossRecord& r) {
    std::printf("  step %lld  loss %.5f\n", static_cast<long long>(r.step), r.total);
  });

  if (argc > 1) {
    const std::filesystem::path dir = argv[1];
    std::filesystem::create_directories(dir);
    save_png(clean, (dir / "clean.png").string());
    save_png(pair.moire, (dir / "moire.png").string());
    save_png(parts.low, (dir / "low.png").string());
    NoGradGuard no_grad;
    save_png(model.infer(pair.moire, LowMode::resize(32)), (dir / "restored.png").string());
    std::printf("wrote images to %s\n", dir.string().c_str());
  }
  return log.empty() ? 1 : 0;
}
