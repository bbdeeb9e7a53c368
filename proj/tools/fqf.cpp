// fqf: command-line driver for decomposition, data generation, training,
// inference, evaluation and gradient checks.
//
// Exit codes: 0 success, 1 computational failure, 2 usage or I/O error.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "freqformer/freqformer.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

/// Files written by the current command; removed if the command fails.
std::vector<std::string> g_outputs;

std::string track(const std::string& path) {
  g_outputs.push_back(path);
  return path;
}

void remove_outputs() {
  std::error_code ec;
  for (const auto& p : g_outputs) fs::remove(p, ec);
  g_outputs.clear();
}

std::uint64_t default_seed() {
  if (const char* env = std::getenv("FQF_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw fqf::ConfigError(std::string("FQF_SEED is not an unsigned integer: ") + env);
    }
  }
  return 0;
}

void print_comment_block(const std::string& text) {
  std::size_t start = 0;
  while (start < text.size()) {
    const auto end = text.find('\n', start);
    std::printf("# %s\n", text.substr(start, end - start).c_str());
    if (end == std::string::npos) break;
    start = end + 1;
  }
}

struct Common {
  std::uint64_t seed = 0;
  std::string config;
  fqf::ModelConfig model;
  fqf::TrainConfig train;

  /// Loads --config (if any), applies the seed and prints the resolved state.
  void resolve(const char* command, bool print_model = true, bool print_train = false) {
    if (!config.empty()) fqf::apply_config(fqf::read_key_value_file(config), model, train);
    train.seed = seed;
    model.validate();
    std::printf("# fqf %s\n# seed=%llu\n", command, static_cast<unsigned long long>(seed));
    if (print_model) print_comment_block(fqf::format_model_config(model));
    if (print_train) print_comment_block(fqf::format_train_config(train));
  }
};

// High components are signed; they are stored as code = round(255 * (h * 0.5 + 0.5)),
// so h = 0 lands on code 128, which decodes back to exactly 0. The low PNG
// stores x - decode(code), so low + high restores the 8-bit input.
constexpr double kHighScale = 0.5;
constexpr double kHighOffset = 0.5;
constexpr int kHighZeroCode = 128;

double decode_high(std::uint8_t code) { return (code - kHighZeroCode) / (255.0 * kHighScale); }

void write_sidecar(const std::string& path, int levels) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw fqf::IoError("cannot write " + path);
  f << "encoding=offset\nscale=" << kHighScale << "\noffset=" << kHighOffset << "\nzero_code=" << kHighZeroCode << "\nlevels=" << levels << '\n';
}

void check_sidecar(const std::string& path) {
  if (!fs::exists(path)) throw fqf::IoError("missing sidecar " + path + " (was the high image written by decompose?)");
  for (const auto& [k, v] : fqf::read_key_value_file(path)) {
    if (k == "encoding" && v != "offset") throw fqf::ConfigError("unsupported high encoding '" + v + "' in " + path);
    if ((k == "scale" && std::stod(v) != kHighScale) || (k == "offset" && std::stod(v) != kHighOffset) ||
        (k == "zero_code" && std::stoi(v) != kHighZeroCode)) {
      throw fqf::ConfigError("unsupported high scale/offset in " + path);
    }
  }
}

int cmd_decompose(const std::string& input, int levels, const std::string& out_low, const std::string& out_high) {
  const fqf::Rgb8 src = fqf::read_png_rgb8(input);
  const auto x = fqf::rgb8_to_tensor(src);
  const auto pair = fqf::decompose(x, levels);
  const std::int64_t H = src.height, W = src.width;
  fqf::Rgb8 low{H, W, std::vector<std::uint8_t>(src.pixels.size())}, high = low;
  const auto hv = pair.high.data();
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t p = 0; p < H * W; ++p) {
      const auto i = static_cast<std::size_t>(p * 3 + c);
      const double h = hv[static_cast<std::size_t>(c * H * W + p)];
      high.pixels[i] = fqf::quantize_unit(h * kHighScale + kHighOffset);
      low.pixels[i] = fqf::quantize_unit(src.pixels[i] / 255.0 - decode_high(high.pixels[i]));
    }
  fqf::write_png_rgb8(low, track(out_low));
  fqf::write_png_rgb8(high, track(out_high));
  write_sidecar(track(out_high + ".fqf"), levels);
  std::printf("decomposed %s (%lldx%lld, L=%d)\n", input.c_str(), static_cast<long long>(H), static_cast<long long>(W), levels);
  return 0;
}

int cmd_recompose(const std::string& low_path, const std::string& high_path, const std::string& output) {
  check_sidecar(high_path + ".fqf");
  const fqf::Rgb8 low = fqf::read_png_rgb8(low_path);
  const fqf::Rgb8 high = fqf::read_png_rgb8(high_path);
  if (low.height != high.height || low.width != high.width) {
    throw fqf::ShapeError("recompose", "low and high extents differ");
  }
  fqf::Rgb8 out{low.height, low.width, std::vector<std::uint8_t>(low.pixels.size())};
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    out.pixels[i] = fqf::quantize_unit(low.pixels[i] / 255.0 + decode_high(high.pixels[i]));
  }
  fqf::write_png_rgb8(out, track(output));
  std::printf("recomposed %s\n", output.c_str());
  return 0;
}

std::vector<fs::path> png_files(const std::string& dir) {
  if (!fs::is_directory(dir)) throw fqf::IoError("no such directory: " + dir);
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw fqf::IoError("no .png files in " + dir);
  return out;
}

int cmd_resize_report(const std::string& dir, double factor, int levels) {
  const auto files = png_files(dir);
  std::vector<fqf::Tensor<float>> images;
  for (const auto& f : files) images.push_back(fqf::load_png(f.string()));
  const auto r = fqf::resize_robustness_report(images, factor, levels);
  std::printf("# image,psnr_low,psnr_high\n");
  for (std::size_t i = 0; i < files.size(); ++i) {
    std::printf("%s,%.6f,%.6f\n", files[i].filename().string().c_str(), r.per_image_low[i], r.per_image_high[i]);
  }
  std::printf("mean,%.6f,%.6f\n", r.psnr_low, r.psnr_high);
  return 0;
}

int cmd_gen_data(const std::string& clean_dir, const std::string& out_dir, int count, std::int64_t size, std::uint64_t seed) {
  if (count < 1) throw fqf::ConfigError("--count must be >= 1");
  std::vector<fqf::Tensor<float>> sources;
  if (!clean_dir.empty()) {
    for (const auto& f : png_files(clean_dir)) sources.push_back(fqf::load_png(f.string()));
  }
  fqf::Rng rng(seed);
  std::vector<fqf::SamplePair> pairs;
  for (int i = 0; i < count; ++i) {
    const fqf::Tensor<float> clean = sources.empty() ? fqf::natural_card(size, size, rng)
                                                     : sources[static_cast<std::size_t>(i) % sources.size()];
    // Quantize first so the stored clean image is exactly what the moire was made from.
    const auto q = fqf::rgb8_to_tensor(fqf::tensor_to_rgb8(clean));
    pairs.push_back(fqf::gen_moire_pair(q, fqf::sample_moire_params(rng, q.dim(2), q.dim(3))));
  }
  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto base = (fs::path(out_dir) / fqf::pair_stem(i)).string();
    track(base + "_moire.png");
    track(base + "_clean.png");
    track(base + "_meta.txt");
  }
  fqf::write_dataset(out_dir, pairs);
  std::printf("wrote %d pairs to %s\n", count, out_dir.c_str());
  return 0;
}

int cmd_train(Common& common, const std::string& stage_name, const std::string& data_dir, const std::string& out_ckpt,
              const std::string& init_ckpt, const std::string& high_ckpt, const std::string& low_ckpt,
              const std::string& log_path) {
  if (!stage_name.empty()) common.train.stage = fqf::parse_stage(stage_name);
  const fqf::Stage stage = common.train.stage;
  if (stage == fqf::Stage::Joint && (high_ckpt.empty() || low_ckpt.empty())) {
    throw fqf::ConfigError("--stage joint needs --high-ckpt and --low-ckpt");
  }
  common.train.validate(common.model);
  const auto data = fqf::load_dataset(data_dir);
  fqf::Freqformer<float> model(common.model, common.seed);
  if (!init_ckpt.empty()) fqf::load_checkpoint(model.parameters(), init_ckpt);
  if (stage == fqf::Stage::Joint) {
    fqf::load_checkpoint(model.parameters().filter("high."), high_ckpt, true);
    fqf::load_checkpoint(model.parameters().filter("low."), low_ckpt, true);
  }
  const std::string log_file = track(log_path.empty() ? out_ckpt + ".log" : log_path);
  std::ofstream log(log_file, std::ios::trunc);
  if (!log) throw fqf::IoError("cannot write " + log_file);
  log << fqf::kLossLogHeader << '\n';
  auto on_step = [&log](const fqf::LossRecord& r) {
    log << fqf::format_loss_record(r) << '\n';
    log.flush();
  };
  const fqf::FeatureExtractor<float> extractor;
  std::printf("# training stage %s on %zu pairs\n", fqf::stage_name(stage), data.size());
  std::vector<fqf::LossRecord> records;
  try {
    if (stage == fqf::Stage::Joint) {
      records = fqf::train_stage2(model, data, common.train, extractor, on_step);
    } else {
      const auto branch = stage == fqf::Stage::High ? fqf::BranchKind::High : fqf::BranchKind::Low;
      records = fqf::train_stage1(model, branch, data, common.train, extractor, on_step);
    }
  } catch (const fqf::DivergenceError& e) {
    // Keep the restored last-good parameters next to the requested path.
    const std::string keep = out_ckpt + ".last_good";
    fqf::save_model(model, keep);
    std::fprintf(stderr, "fqf: %s; last good parameters saved to %s\n", e.what(), keep.c_str());
    return kExitFailure;
  }
  fqf::save_model(model, track(out_ckpt));
  track(out_ckpt + ".cfg");
  std::printf("steps=%zu final_total=%.9g\n", records.size(), records.empty() ? 0.0 : records.back().total);
  std::printf("wrote %s\n", out_ckpt.c_str());
  return 0;
}

fqf::LowMode low_mode(const std::string& name, std::int64_t side) {
  if (name == "resize") return fqf::LowMode::resize(side);
  if (name == "full") return fqf::LowMode::full();
  throw fqf::ConfigError("unknown --low-mode '" + name + "' (expected resize or full)");
}

int cmd_infer(const std::string& ckpt, const std::string& input, const std::string& output, const std::string& mode,
              std::int64_t side) {
  const auto model = fqf::load_model(ckpt);
  print_comment_block(fqf::format_model_config(model.config()));
  fqf::NoGradGuard no_grad;
  const auto y = model.infer(fqf::load_png(input), low_mode(mode, side));
  fqf::save_png(y, track(output));
  std::printf("wrote %s\n", output.c_str());
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, const std::string& mode, std::int64_t side) {
  const auto data = fqf::load_dataset(data_dir);
  std::optional<fqf::Freqformer<float>> model;
  if (!ckpt.empty()) model.emplace(fqf::load_model(ckpt));
  fqf::NoGradGuard no_grad;
  std::printf("# id,psnr,ssim\n");
  double sp = 0.0, ss = 0.0;
  for (const auto& item : data) {
    const auto pred = model ? model->infer(item.moire, low_mode(mode, side)) : item.moire;
    // Score what would be written to disk: quantize the prediction to 8 bits.
    const auto q = fqf::rgb8_to_tensor(fqf::tensor_to_rgb8(pred));
    const double p = fqf::psnr(q, item.clean), s = fqf::ssim(q, item.clean);
    sp += p;
    ss += s;
    std::printf("%s,%.6f,%.6f\n", item.id.c_str(), p, s);
  }
  std::printf("mean,%.6f,%.6f\n", sp / static_cast<double>(data.size()), ss / static_cast<double>(data.size()));
  return 0;
}

int cmd_gradcheck(const std::string& module, std::uint64_t seed) {
  fqf::GradCheckOptions opt;
  opt.seed = seed + 1;
  const auto results = fqf::run_gradcheck_suite(module, opt);
  int failed = 0;
  for (const auto& r : results) {
    std::printf("%s,%s,%.3e,%.0e,%zu\n", r.passed() ? "PASS" : "FAIL", r.name.c_str(), r.max_rel_error, r.tolerance, r.checked);
    failed += r.passed() ? 0 : 1;
  }
  std::printf("# %zu checks, %d failed\n", results.size(), failed);
  return failed == 0 ? 0 : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Frequency-decomposition demoireing toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  try {
    common.seed = default_seed();
  } catch (const fqf::Error& e) {
    std::fprintf(stderr, "fqf: %s\n", e.what());
    return kExitUsage;
  }
  app.add_option("--seed", common.seed, "Random seed (default: $FQF_SEED or 0)");
  app.add_option("--config", common.config, "key=value configuration file");

  std::string input, output, out_low, out_high, low_in, high_in, data_dir, clean_dir, out_dir, stage, out_ckpt, ckpt,
      init_ckpt, high_ckpt, low_ckpt, log_path, mode = "resize", module = "all";
  int levels = 0, count = 8;
  double factor = 0.25;
  std::int64_t size = 64, side = 0;

  auto* dec = app.add_subcommand("decompose", "Split an image into low and offset-encoded high PNGs");
  dec->add_option("--input", input, "Input PNG")->required();
  dec->add_option("--levels", levels, "Decomposition levels (default: freq_levels)");
  dec->add_option("--out-low", out_low, "Low component PNG")->required();
  dec->add_option("--out-high", out_high, "High component PNG (+ .fqf sidecar)")->required();

  auto* rec = app.add_subcommand("recompose", "Invert decompose");
  rec->add_option("--low", low_in, "Low component PNG")->required();
  rec->add_option("--high", high_in, "High component PNG")->required();
  rec->add_option("--output", output, "Output PNG")->required();

  auto* rr = app.add_subcommand("resize-report", "Resize robustness of the low and high components");
  rr->add_option("--data-dir", data_dir, "Directory of PNG images")->required();
  rr->add_option("--factor", factor, "Downsample factor in (0,1)");
  rr->add_option("--levels", levels, "Decomposition levels (default: freq_levels)");

  auto* gen = app.add_subcommand("gen-data", "Write synthetic moire/clean pairs");
  gen->add_option("--clean-dir", clean_dir, "Clean PNGs to degrade (default: synthetic test cards)");
  gen->add_option("--out-dir", out_dir, "Output directory")->required();
  gen->add_option("--count", count, "Number of pairs");
  gen->add_option("--size", size, "Side of synthetic test cards");

  auto* tr = app.add_subcommand("train", "Train one stage");
  tr->add_option("--stage", stage, "high, low or joint (default: config 'stage')");
  tr->add_option("--data-dir", data_dir, "Dataset directory (NNN_moire.png / NNN_clean.png)")->required();
  tr->add_option("--out-ckpt", out_ckpt, "Output checkpoint")->required();
  tr->add_option("--init-ckpt", init_ckpt, "Start from this checkpoint");
  tr->add_option("--high-ckpt", high_ckpt, "Stage-1 high checkpoint (joint)");
  tr->add_option("--low-ckpt", low_ckpt, "Stage-1 low checkpoint (joint)");
  tr->add_option("--log", log_path, "Loss log (default: <out-ckpt>.log)");

  auto* inf = app.add_subcommand("infer", "Demoire one image");
  inf->add_option("--ckpt", ckpt, "Checkpoint")->required();
  inf->add_option("--input", input, "Input PNG")->required();
  inf->add_option("--output", output, "Output PNG")->required();
  inf->add_option("--low-mode", mode, "resize or full");
  inf->add_option("--low-side", side, "Low-branch side for resize mode (default: resize_side)");

  auto* ev = app.add_subcommand("eval", "PSNR/SSIM over a dataset");
  ev->add_option("--ckpt", ckpt, "Checkpoint (omit to score the moire inputs)");
  ev->add_option("--data-dir", data_dir, "Dataset directory")->required();
  ev->add_option("--low-mode", mode, "resize or full");
  ev->add_option("--low-side", side, "Low-branch side for resize mode (default: resize_side)");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gc->add_option("--module", module, "all, ops, blocks or model");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    const bool is_train = tr->parsed();
    const bool uses_ckpt_config = inf->parsed() || ev->parsed();
    common.resolve(app.get_subcommands().front()->get_name().c_str(), !uses_ckpt_config, is_train);
    if (levels == 0) levels = common.model.freq_levels;
    if (side == 0) side = common.train.resize_side;
    if (dec->parsed()) return cmd_decompose(input, levels, out_low, out_high);
    if (rec->parsed()) return cmd_recompose(low_in, high_in, output);
    if (rr->parsed()) return cmd_resize_report(data_dir, factor, levels);
    if (gen->parsed()) return cmd_gen_data(clean_dir, out_dir, count, size, common.seed);
    if (is_train) return cmd_train(common, stage, data_dir, out_ckpt, init_ckpt, high_ckpt, low_ckpt, log_path);
    if (inf->parsed()) return cmd_infer(ckpt, input, output, mode, side);
    if (ev->parsed()) return cmd_eval(ckpt, data_dir, mode, side);
    if (gc->parsed()) return cmd_gradcheck(module, common.seed);
  } catch (const fqf::IoError& e) {
    remove_outputs();
    std::fprintf(stderr, "fqf: %s\n", e.what());
    return kExitUsage;
  } catch (const fqf::ConfigError& e) {
    remove_outputs();
    std::fprintf(stderr, "fqf: %s\n", e.what());
    return kExitUsage;
  } catch (const fqf::ShapeError& e) {
    remove_outputs();
    std::fprintf(stderr, "fqf: %s\n", e.what());
    return kExitUsage;
  } catch (const fqf::CheckpointError& e) {
    remove_outputs();
    std::fprintf(stderr, "fqf: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    remove_outputs();
    std::fprintf(stderr, "fqf: %s\n", e.what());
    return kExitFailure;
  }
  return kExitUsage;
}
