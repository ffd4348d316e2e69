#pragma once

#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "binaural/dataset_io.hpp"
#include "binaural/dsp.hpp"
#include "binaural/errors.hpp"

namespace binaural::net {

enum class DecoderMode { kTriple, kSingle };

inline constexpr std::size_t kDecoderDepth = 5;
inline constexpr std::size_t kEncoderDepth = 5;
inline constexpr std::size_t kViewTaps = 4;

struct ModelConfig {
  std::size_t base_width = 8;  // d; audio/view bottleneck width is 4d
  std::size_t image_height = 32;
  std::size_t image_width = 32;
  std::size_t patch_size = 8;
  std::size_t view_embed = 32;  // transformer width inside the view encoders
  std::size_t view_blocks = 4;
  std::vector<std::size_t> view_taps = {1, 2, 3, 4};  // 1-based block indices
  DecoderMode decoder_mode = DecoderMode::kTriple;
  bool use_image = true;
  bool use_depth = true;
  double leaky_slope = 0.2;
  StftConfig stft;
  std::uint64_t init_seed = 1;

  std::size_t audio_width() const { return 4 * base_width; }
  std::size_t patch_rows() const { return image_height / patch_size; }
  std::size_t patch_cols() const { return image_width / patch_size; }
  std::size_t patches() const { return patch_rows() * patch_cols(); }

  void validate() const {
    stft.validate();
    if (base_width == 0 || view_embed == 0) throw ConfigError("model: widths must be positive");
    if (patch_size == 0 || image_height % patch_size != 0 || image_width % patch_size != 0)
      throw ConfigError("model: image " + std::to_string(image_height) + "x" + std::to_string(image_width) +
                        " is not divisible by patch size " + std::to_string(patch_size));
    if (view_taps.size() != kViewTaps) throw ConfigError("model: exactly four view taps are required");
    for (auto t : view_taps)
      if (t < 1 || t > view_blocks)
        throw ConfigError("model: view tap " + std::to_string(t) + " outside 1.." + std::to_string(view_blocks));
    if (stft.num_bins() < 32) throw ConfigError("model: fft_size too small for five halvings of the frequency axis");
    if (!(leaky_slope >= 0)) throw ConfigError("model: leaky_slope must be nonnegative");
  }
};

inline const char* to_string(DecoderMode m) { return m == DecoderMode::kTriple ? "triple" : "single"; }

/// Model keys accepted in key=value config text.
inline bool is_model_key(const std::string& key) {
  static const std::vector<std::string> keys = {"base_width",   "image_height", "image_width", "patch_size",
                                                "view_embed",   "view_blocks",  "view_taps",   "decoder_mode",
                                                "use_image",    "use_depth",    "leaky_slope", "fft_size",
                                                "hop",          "init_seed",    "mask_activation"};
  for (const auto& k : keys)
    if (k == key) return true;
  return false;
}

namespace detail {

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: '" + key + "' expects true/false, got '" + v + "'");
}

inline std::size_t parse_count(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const unsigned long long n = std::stoull(v, &pos);
    if (pos != v.size() || v.front() == '-') throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects a nonnegative integer, got '" + v + "'");
  }
}

inline double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

}  // namespace detail

/// Applies one key=value setting; returns false if the key is not a model key.
inline bool apply_model_key(ModelConfig& cfg, const std::string& key, const std::string& value) {
  using detail::parse_bool;
  using detail::parse_count;
  if (key == "base_width") cfg.base_width = parse_count(key, value);
  else if (key == "image_height") cfg.image_height = parse_count(key, value);
  else if (key == "image_width") cfg.image_width = parse_count(key, value);
  else if (key == "patch_size") cfg.patch_size = parse_count(key, value);
  else if (key == "view_embed") cfg.view_embed = parse_count(key, value);
  else if (key == "view_blocks") cfg.view_blocks = parse_count(key, value);
  else if (key == "view_taps") {
    cfg.view_taps.clear();
    std::stringstream ss(value);
    std::string item;
    while (std::getline(ss, item, ',')) cfg.view_taps.push_back(parse_count(key, item));
  } else if (key == "decoder_mode") {
    if (value == "triple") cfg.decoder_mode = DecoderMode::kTriple;
    else if (value == "single") cfg.decoder_mode = DecoderMode::kSingle;
    else throw ConfigError("config: decoder_mode must be 'triple' or 'single', got '" + value + "'");
  } else if (key == "use_image") cfg.use_image = parse_bool(key, value);
  else if (key == "use_depth") cfg.use_depth = parse_bool(key, value);
  else if (key == "leaky_slope") cfg.leaky_slope = detail::parse_real(key, value);
  else if (key == "fft_size") cfg.stft.fft_size = parse_count(key, value);
  else if (key == "hop") cfg.stft.hop = parse_count(key, value);
  else if (key == "init_seed") cfg.init_seed = parse_count(key, value);
  else if (key == "mask_activation") {
    if (value != "tanh") throw ConfigError("config: only mask_activation=tanh is supported");
  } else return false;
  return true;
}

inline std::string to_text(const ModelConfig& cfg) {
  std::ostringstream s;
  s << "base_width=" << cfg.base_width << "\n"
    << "image_height=" << cfg.image_height << "\n"
    << "image_width=" << cfg.image_width << "\n"
    << "patch_size=" << cfg.patch_size << "\n"
    << "view_embed=" << cfg.view_embed << "\n"
    << "view_blocks=" << cfg.view_blocks << "\n"
    << "view_taps=";
  for (std::size_t i = 0; i < cfg.view_taps.size(); ++i) s << (i ? "," : "") << cfg.view_taps[i];
  s << "\n"
    << "decoder_mode=" << to_string(cfg.decoder_mode) << "\n"
    << "use_image=" << (cfg.use_image ? "true" : "false") << "\n"
    << "use_depth=" << (cfg.use_depth ? "true" : "false") << "\n"
    << "leaky_slope=" << io::format_double(cfg.leaky_slope) << "\n"
    << "fft_size=" << cfg.stft.fft_size << "\n"
    << "hop=" << cfg.stft.hop << "\n"
    << "init_seed=" << cfg.init_seed << "\n"
    << "mask_activation=tanh\n";
  return s.str();
}

inline ModelConfig model_config_from_text(const std::string& text) {
  std::istringstream in(text);
  ModelConfig cfg;
  for (const auto& [k, v] : io::parse_key_values(in, "model config"))
    if (!apply_model_key(cfg, k, v)) throw ConfigError("model config: unknown key '" + k + "'");
  cfg.validate();
  return cfg;
}

}  // namespace binaural::net
