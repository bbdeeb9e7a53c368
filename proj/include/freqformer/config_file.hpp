#pragma once

// Flat key=value configuration shared by the model and the trainer.
//
//   # comment
//   base_channels = 16
//   dec_n_high = 4,4,2
//   lr0 = 0.0002
//
// Keys are unique; unknown keys are rejected.

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "freqformer/model.hpp"
#include "freqformer/training.hpp"

namespace fqf {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError("bad value for " + key + ": '" + v + "'");
  return out;
}

inline std::array<int, 3> parse_triple(const std::string& key, const std::string& v) {
  std::array<int, 3> out{};
  std::stringstream ss(v);
  std::string part;
  std::size_t n = 0;
  while (std::getline(ss, part, ',')) {
    if (n == 3) throw ConfigError(key + " needs exactly 3 comma-separated values");
    out[n++] = parse_number<int>(key, trim(part));
  }
  if (n != 3) throw ConfigError(key + " needs exactly 3 comma-separated values");
  return out;
}

inline std::string fmt(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

inline std::string fmt(const std::array<int, 3>& v) {
  return std::to_string(v[0]) + "," + std::to_string(v[1]) + "," + std::to_string(v[2]);
}

}  // namespace detail

inline KeyValues parse_key_values(const std::string& text, const std::string& source = "<config>") {
  KeyValues kv;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key=value");
    }
    std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    for (const auto& [k, v] : kv) {
      if (k == key) throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key " + key);
    }
    kv.emplace_back(std::move(key), std::move(value));
  }
  return kv;
}

inline KeyValues read_key_value_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_key_values(ss.str(), path);
}

/// Returns false when `key` is not a model key.
inline bool apply_model_key(ModelConfig& c, const std::string& key, const std::string& v) {
  using detail::parse_number;
  if (key == "base_channels") c.base_channels = parse_number<std::int64_t>(key, v);
  else if (key == "enc_n_high") c.enc_n_high = detail::parse_triple(key, v);
  else if (key == "dec_n_high") c.dec_n_high = detail::parse_triple(key, v);
  else if (key == "enc_n_low") c.enc_n_low = detail::parse_triple(key, v);
  else if (key == "dec_n_low") c.dec_n_low = detail::parse_triple(key, v);
  else if (key == "n_low") c.enc_n_low = c.dec_n_low = detail::parse_triple(key, v);
  else if (key == "heads") c.heads = detail::parse_triple(key, v);
  else if (key == "n_f") c.n_f = parse_number<int>(key, v);
  else if (key == "fct_heads") c.fct_heads = parse_number<int>(key, v);
  else if (key == "freq_levels") c.freq_levels = parse_number<int>(key, v);
  else if (key == "shuffle_factor") c.shuffle_factor = parse_number<int>(key, v);
  else if (key == "ffn_expand") c.ffn_expand = parse_number<double>(key, v);
  else if (key == "rddb_growth") c.rddb_growth = parse_number<std::int64_t>(key, v);
  else if (key == "fct_channels") c.fct_channels = parse_number<std::int64_t>(key, v);
  else return false;
  return true;
}

/// Returns false when `key` is not a training key.
inline bool apply_train_key(TrainConfig& c, const std::string& key, const std::string& v) {
  using detail::parse_number;
  if (key == "stage") c.stage = parse_stage(v);
  else if (key == "lr0") c.lr0 = parse_number<double>(key, v);
  else if (key == "epochs") c.epochs = parse_number<int>(key, v);
  else if (key == "steps") c.steps = parse_number<std::int64_t>(key, v);
  else if (key == "batch") c.batch = parse_number<int>(key, v);
  else if (key == "crop_side") c.crop_side = parse_number<std::int64_t>(key, v);
  else if (key == "resize_side") c.resize_side = parse_number<std::int64_t>(key, v);
  else if (key == "lambda1") c.lambda1 = parse_number<double>(key, v);
  else if (key == "lambda2") c.lambda2 = parse_number<double>(key, v);
  else if (key == "cycle_epochs") c.cycle_epochs = parse_number<int>(key, v);
  else if (key == "seed") c.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "beta1") c.adam.beta1 = parse_number<double>(key, v);
  else if (key == "beta2") c.adam.beta2 = parse_number<double>(key, v);
  else if (key == "eps") c.adam.eps = parse_number<double>(key, v);
  else if (key == "clip") c.clip = parse_number<double>(key, v);
  else if (key == "fct_warm_start") c.fct_warm_start = parse_number<int>(key, v) != 0;
  else return false;
  return true;
}

/// Applies every entry; a key that is neither a model nor a training key is an error.
inline void apply_config(const KeyValues& kv, ModelConfig& model, TrainConfig& train) {
  for (const auto& [k, v] : kv) {
    if (!apply_model_key(model, k, v) && !apply_train_key(train, k, v)) throw ConfigError("unknown config key: " + k);
  }
}

inline std::string format_model_config(const ModelConfig& c) {
  std::string s;
  auto line = [&s](const std::string& k, const std::string& v) { s += k + "=" + v + "\n"; };
  line("base_channels", std::to_string(c.base_channels));
  line("enc_n_high", detail::fmt(c.enc_n_high));
  line("dec_n_high", detail::fmt(c.dec_n_high));
  line("enc_n_low", detail::fmt(c.enc_n_low));
  line("dec_n_low", detail::fmt(c.dec_n_low));
  line("heads", detail::fmt(c.heads));
  line("n_f", std::to_string(c.n_f));
  line("fct_heads", std::to_string(c.fct_heads));
  line("freq_levels", std::to_string(c.freq_levels));
  line("shuffle_factor", std::to_string(c.shuffle_factor));
  line("ffn_expand", detail::fmt(c.ffn_expand));
  line("rddb_growth", std::to_string(c.rddb_growth));
  line("fct_channels", std::to_string(c.fct_channels));
  return s;
}

inline std::string format_train_config(const TrainConfig& c) {
  std::string s;
  auto line = [&s](const std::string& k, const std::string& v) { s += k + "=" + v + "\n"; };
  line("stage", stage_name(c.stage));
  line("lr0", detail::fmt(c.lr0));
  line("epochs", std::to_string(c.epochs));
  line("steps", std::to_string(c.steps));
  line("batch", std::to_string(c.batch));
  line("crop_side", std::to_string(c.crop_side));
  line("resize_side", std::to_string(c.resize_side));
  line("lambda1", detail::fmt(c.lambda1));
  line("lambda2", detail::fmt(c.lambda2));
  line("cycle_epochs", std::to_string(c.cycle_epochs));
  line("seed", std::to_string(c.seed));
  line("beta1", detail::fmt(c.adam.beta1));
  line("beta2", detail::fmt(c.adam.beta2));
  line("eps", detail::fmt(c.adam.eps));
  line("clip", detail::fmt(c.clip));
  line("fct_warm_start", c.fct_warm_start ? "1" : "0");
  return s;
}

/// Model configuration from a file; training keys are allowed and ignored.
inline ModelConfig load_model_config(const std::string& path) {
  ModelConfig m;
  TrainConfig t;
  apply_config(read_key_value_file(path), m, t);
  m.validate();
  return m;
}

/// Writes `<ckpt>` plus the `<ckpt>.cfg` model description next to it.
template <class T>
void save_model(const Freqformer<T>& model, const std::string& path) {
  save_checkpoint(model.parameters(), path);
  std::ofstream f(path + ".cfg", std::ios::trunc);
  if (!f) throw IoError("cannot write " + path + ".cfg");
  f << format_model_config(model.config());
}

/// Rebuilds a model from `<ckpt>.cfg` and loads `<ckpt>` into it.
inline Freqformer<float> load_model(const std::string& path) {
  Freqformer<float> model(load_model_config(path + ".cfg"));
  load_checkpoint(model.parameters(), path);
  return model;
}

}  // namespace fqf
