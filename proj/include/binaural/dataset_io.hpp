#pragma once

// On-disk dataset layout: one directory per sample holding binaural.wav,
// mono.wav, image.ppm (P6, 8-bit), depth.pgm (P5, 16-bit millimetres) and
// scene.txt (key=value geometry record).

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "binaural/dsp.hpp"
#include "binaural/errors.hpp"
#include "binaural/grad/tensor.hpp"
#include "binaural/scene.hpp"
#include "binaural/wav.hpp"

namespace binaural::io {

namespace fs = std::filesystem;

namespace detail {

/// Reads a netpbm header "<magic> <w> <h> <maxval>" followed by one whitespace byte.
inline void read_pnm_header(std::istream& in, const std::string& magic, std::size_t& w, std::size_t& h,
                            unsigned& maxval, const std::string& origin) {
  auto next_token = [&]() {
    std::string tok;
    while (in) {
      int c = in.peek();
      if (c == '#') {
        std::string comment;
        std::getline(in, comment);
      } else if (std::isspace(c)) {
        in.get();
      } else {
        break;
      }
    }
    in >> tok;
    return tok;
  };
  if (next_token() != magic) throw InputError(origin + ": expected netpbm " + magic + " file");
  try {
    w = std::stoul(next_token());
    h = std::stoul(next_token());
    maxval = static_cast<unsigned>(std::stoul(next_token()));
  } catch (const std::exception&) {
    throw InputError(origin + ": malformed netpbm header");
  }
  in.get();
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) throw InputError(origin + ": invalid netpbm dimensions");
}

}  // namespace detail

inline void write_ppm(const fs::path& path, const grad::Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("write_ppm: expected [3,H,W] image");
  const std::size_t h = image.dim(1), w = image.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << "P6\n" << w << " " << h << "\n255\n";
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double v = std::clamp(image[(ch * h + r) * w + c], 0.0, 1.0);
        out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
      }
}

inline grad::Tensor read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::size_t w = 0, h = 0;
  unsigned maxval = 0;
  detail::read_pnm_header(in, "P6", w, h, maxval, path.string());
  if (maxval != 255) throw InputError(path.string() + ": only 8-bit PPM is supported");
  std::vector<unsigned char> bytes(w * h * 3);
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
    throw InputError(path.string() + ": truncated pixel data");
  grad::Tensor image({3, h, w});
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c)
      for (std::size_t ch = 0; ch < 3; ++ch) image[(ch * h + r) * w + c] = bytes[(r * w + c) * 3 + ch] / 255.0;
  return image;
}

/// 16-bit PGM; `scale` converts tensor values to stored integers (1000 for metres -> mm).
inline constexpr double kDepthPgmScale = 1000.0;  // metres -> millimetres

inline void write_pgm16(const fs::path& path, const grad::Tensor& plane, double scale) {
  if (plane.rank() != 3 || plane.dim(0) != 1) throw ShapeError("write_pgm16: expected [1,H,W] plane");
  const std::size_t h = plane.dim(1), w = plane.dim(2);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << "P5\n" << w << " " << h << "\n65535\n";
  for (double v : plane.data) {
    const auto q = static_cast<std::uint16_t>(std::clamp(std::lround(v * scale), 0L, 65535L));
    out.put(static_cast<char>(q >> 8));  // netpbm is big-endian
    out.put(static_cast<char>(q & 0xFF));
  }
}

/// Reads 8- or 16-bit PGM into [1,H,W], dividing stored values by `scale`.
inline grad::Tensor read_pgm(const fs::path& path, double scale) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::size_t w = 0, h = 0;
  unsigned maxval = 0;
  detail::read_pnm_header(in, "P5", w, h, maxval, path.string());
  const std::size_t width = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> bytes(w * h * width);
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
    throw InputError(path.string() + ": truncated pixel data");
  grad::Tensor plane({1, h, w});
  for (std::size_t i = 0; i < w * h; ++i) {
    const unsigned v = width == 2 ? (bytes[2 * i] << 8) | bytes[2 * i + 1] : bytes[i];
    plane[i] = v / scale;
  }
  return plane;
}

/// 8-bit grayscale PGM from values in [0, 1].
inline void write_pgm8(const fs::path& path, const std::vector<double>& pixels, std::size_t h, std::size_t w) {
  if (pixels.size() != h * w) throw ShapeError("write_pgm8: pixel count does not match size");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << "P5\n" << w << " " << h << "\n255\n";
  for (double v : pixels) out.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
}

// ---------------------------------------------------------------- key=value records

using KeyValues = std::map<std::string, std::string>;

inline KeyValues parse_key_values(std::istream& in, const std::string& origin) {
  KeyValues kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (kv.count(key)) throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string scene_record(const SceneSpec& scene) {
  std::ostringstream s;
  s << "seed=" << scene.seed << "\n"
    << "sample_rate=" << scene.sample_rate << "\n"
    << "clip_length=" << scene.clip_length << "\n"
    << "image_height=" << scene.image_height << "\n"
    << "image_width=" << scene.image_width << "\n"
    << "ear_separation=" << format_double(scene.listener.ear_separation) << "\n"
    << "speed_of_sound=" << format_double(scene.listener.speed_of_sound) << "\n"
    << "max_azimuth=" << format_double(scene.max_azimuth) << "\n"
    << "reference_gain=" << format_double(scene.reference_gain) << "\n"
    << "num_sources=" << scene.sources.size() << "\n";
  for (std::size_t k = 0; k < scene.sources.size(); ++k) {
    s << "source" << k << ".azimuth=" << format_double(scene.sources[k].azimuth) << "\n";
    s << "source" << k << ".depth=" << format_double(scene.sources[k].depth) << "\n";
  }
  return s.str();
}

inline SceneSpec parse_scene_record(const KeyValues& kv, const std::string& origin) {
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw InputError(origin + ": missing key '" + key + "'");
    return it->second;
  };
  SceneSpec scene;
  try {
    scene.seed = std::stoull(get("seed"));
    scene.sample_rate = std::stoi(get("sample_rate"));
    scene.clip_length = std::stoul(get("clip_length"));
    scene.image_height = std::stoul(get("image_height"));
    scene.image_width = std::stoul(get("image_width"));
    scene.listener.ear_separation = std::stod(get("ear_separation"));
    scene.listener.speed_of_sound = std::stod(get("speed_of_sound"));
    scene.max_azimuth = std::stod(get("max_azimuth"));
    scene.reference_gain = std::stod(get("reference_gain"));
    const std::size_t n = std::stoul(get("num_sources"));
    for (std::size_t k = 0; k < n; ++k) {
      SoundSource s;
      s.azimuth = std::stod(get("source" + std::to_string(k) + ".azimuth"));
      s.depth = std::stod(get("source" + std::to_string(k) + ".depth"));
      scene.sources.push_back(std::move(s));
    }
  } catch (const InputError&) {
    throw;
  } catch (const std::exception&) {
    throw InputError(origin + ": malformed scene record");
  }
  return scene;
}

// ---------------------------------------------------------------- samples

inline void write_sample(const fs::path& dir, const RenderedSample& sample) {
  fs::create_directories(dir);
  wav::write(dir / "binaural.wav", sample.binaural);
  Waveform mono{{sample.mono_mix}, sample.binaural.sample_rate};
  wav::write(dir / "mono.wav", mono);
  write_ppm(dir / "image.ppm", sample.image);
  write_pgm16(dir / "depth.pgm", sample.depth_map, kDepthPgmScale);
  std::ofstream(dir / "scene.txt") << scene_record(sample.scene);
}

/// Loads a sample directory. mono_mix is rebuilt from the binaural channels so
/// mono == left + right holds exactly after the round trip.
inline RenderedSample read_sample(const fs::path& dir) {
  RenderedSample s;
  s.binaural = wav::read(dir / "binaural.wav");
  if (s.binaural.num_channels() != 2) throw InputError(dir.string() + "/binaural.wav: expected two channels");
  s.mono_mix.resize(s.binaural.num_samples());
  for (std::size_t n = 0; n < s.mono_mix.size(); ++n) s.mono_mix[n] = s.binaural.left()[n] + s.binaural.right()[n];
  s.image = read_ppm(dir / "image.ppm");
  s.depth_map = read_pgm(dir / "depth.pgm", kDepthPgmScale);
  if (s.image.dim(1) != s.depth_map.dim(1) || s.image.dim(2) != s.depth_map.dim(2))
    throw InputError(dir.string() + ": image and depth map sizes differ");
  std::ifstream rec(dir / "scene.txt");
  if (!rec) throw InputError("cannot open " + (dir / "scene.txt").string());
  s.scene = parse_scene_record(parse_key_values(rec, (dir / "scene.txt").string()), (dir / "scene.txt").string());
  return s;
}

/// Sample subdirectories of `root` (those holding a binaural.wav), sorted by name.
inline std::vector<fs::path> list_samples(const fs::path& root) {
  if (!fs::is_directory(root)) throw InputError("not a directory: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "binaural.wav")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

inline std::string sample_dir_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%05zu", index);
  return buf;
}

}  // namespace binaural::io
