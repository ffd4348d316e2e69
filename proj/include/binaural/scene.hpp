#pragma once

// Free-field binaural renderer: per-ear propagation delay d/v_s and 1/d
// attenuation, no reflections. Also draws the schematic image and depth map
// that stand in for the camera frame, and synthesizes seeded datasets.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <future>
#include <numbers>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "binaural/dsp.hpp"
#include "binaural/errors.hpp"
#include "binaural/grad/tensor.hpp"

namespace binaural {

struct SoundSource {
  Channel signal;
  double azimuth = 0.0;  // radians, 0 straight ahead, positive to the right
  double depth = 1.0;    // metres from the head centre
};

struct ListenerSpec {
  double ear_separation = 0.18;
  double speed_of_sound = 343.0;
};

inline constexpr double kMaxDepth = 10.0;

struct SceneSpec {
  std::vector<SoundSource> sources;
  ListenerSpec listener;
  std::size_t image_height = 32;
  std::size_t image_width = 32;
  int sample_rate = 16000;
  std::size_t clip_length = 10080;
  std::uint64_t seed = 0;
  double max_azimuth = std::numbers::pi / 3;  // maps to the image edges
  double reference_gain = 0.5;                // attenuation is reference_gain / distance
};

struct RenderedSample {
  Waveform binaural;
  Channel mono_mix;
  grad::Tensor image;      // [3, H, W] in [0, 1]
  grad::Tensor depth_map;  // [1, H, W] metres in (0, kMaxDepth]
  SceneSpec scene;         // geometry record; source signals are not retained
};

/// Per-ear geometry of one source.
struct EarPath {
  double distance_left, distance_right;
  double delay_left, delay_right;  // samples
  double gain_left, gain_right;
};

inline EarPath ear_paths(const SoundSource& src, const ListenerSpec& listener, int sample_rate,
                         double reference_gain) {
  const double x = src.depth * std::sin(src.azimuth);
  const double y = src.depth * std::cos(src.azimuth);
  const double half = listener.ear_separation / 2;
  EarPath p{};
  p.distance_left = std::hypot(x + half, y);
  p.distance_right = std::hypot(x - half, y);
  p.delay_left = p.distance_left / listener.speed_of_sound * sample_rate;
  p.delay_right = p.distance_right / listener.speed_of_sound * sample_rate;
  p.gain_left = reference_gain / p.distance_left;
  p.gain_right = reference_gain / p.distance_right;
  return p;
}

namespace detail {

inline void validate_scene(const SceneSpec& scene) {
  if (!(scene.listener.ear_separation > 0) || !(scene.listener.speed_of_sound > 0))
    throw DomainError("scene: ear separation and speed of sound must be positive");
  if (scene.sample_rate <= 0) throw InputError("scene: sample rate must be positive");
  if (scene.image_height < 16 || scene.image_width < 16) throw InputError("scene: image must be at least 16x16");
  if (!(scene.max_azimuth > 0)) throw DomainError("scene: max_azimuth must be positive");
  for (const auto& s : scene.sources) {
    if (!(s.depth > scene.listener.ear_separation / 2))
      throw DomainError("scene: source at depth " + std::to_string(s.depth) +
                        " m is inside the listener's head (minimum " +
                        std::to_string(scene.listener.ear_separation / 2) + " m)");
    if (!std::isfinite(s.azimuth)) throw DomainError("scene: non-finite azimuth");
  }
}

/// x[pos] with linear interpolation; pos is within [0, len-1].
inline double sample_at(const Channel& x, double pos) {
  const auto i = static_cast<std::size_t>(std::floor(pos));
  const double frac = pos - static_cast<double>(i);
  if (frac == 0.0 || i + 1 >= x.size()) return x[std::min(i, x.size() - 1)];
  return (1.0 - frac) * x[i] + frac * x[i + 1];
}

}  // namespace detail

/// Each source signal carries a pre-roll: output sample n of ear e reads
/// x[n + (len - clip_length) - delay_e], so signals must be at least
/// clip_length + max delay + 1 samples long.
inline Waveform render_binaural(const SceneSpec& scene) {
  detail::validate_scene(scene);
  Waveform out;
  out.sample_rate = scene.sample_rate;
  out.channels.assign(2, Channel(scene.clip_length, 0.0));
  for (const auto& src : scene.sources) {
    const EarPath p = ear_paths(src, scene.listener, scene.sample_rate, scene.reference_gain);
    const double max_delay = std::max(p.delay_left, p.delay_right);
    if (static_cast<double>(src.signal.size()) < static_cast<double>(scene.clip_length) + std::ceil(max_delay) + 1)
      throw InputError("render_binaural: source signal of " + std::to_string(src.signal.size()) +
                       " samples is too short for clip_length " + std::to_string(scene.clip_length) + " plus " +
                       std::to_string(max_delay) + " samples of delay");
    for (double v : src.signal)
      if (!std::isfinite(v)) throw InputError("render_binaural: non-finite source sample");
    const double pre_roll = static_cast<double>(src.signal.size() - scene.clip_length);
    for (std::size_t n = 0; n < scene.clip_length; ++n) {
      const double base = static_cast<double>(n) + pre_roll;
      out.channels[0][n] += p.gain_left * detail::sample_at(src.signal, base - p.delay_left);
      out.channels[1][n] += p.gain_right * detail::sample_at(src.signal, base - p.delay_right);
    }
  }
  return out;
}

struct Views {
  grad::Tensor image;
  grad::Tensor depth_map;
};

/// Azimuth maps linearly onto image columns (edges at +-max_azimuth); each
/// source is a Gaussian blob (sigma = W/32) in colour channel index % 3.
inline Views render_views(const SceneSpec& scene) {
  detail::validate_scene(scene);
  const std::size_t h = scene.image_height, w = scene.image_width;
  Views v{grad::Tensor({3, h, w}, 0.0), grad::Tensor({1, h, w}, kMaxDepth)};
  const double sigma = static_cast<double>(w) / 32.0;
  const double cy = (static_cast<double>(h) - 1) / 2;
  const double cx = (static_cast<double>(w) - 1) / 2;
  for (std::size_t k = 0; k < scene.sources.size(); ++k) {
    const auto& src = scene.sources[k];
    const double u = std::clamp(src.azimuth / scene.max_azimuth, -1.0, 1.0);
    const double shift = u * static_cast<double>(w) / 2;
    const double depth = std::min(src.depth, kMaxDepth);
    double* plane = v.image.data.data() + (k % 3) * h * w;
    for (std::size_t r = 0; r < h; ++r) {
      const double dy = static_cast<double>(r) - cy;
      for (std::size_t c = 0; c < w; ++c) {
        const double dx = (static_cast<double>(c) - cx) - shift;
        const double r2 = dx * dx + dy * dy;
        plane[r * w + c] += std::exp(-r2 / (2 * sigma * sigma));
        if (r2 <= 4 * sigma * sigma) {
          double& d = v.depth_map.data[r * w + c];
          d = std::min(d, depth);
        }
      }
    }
  }
  for (auto& p : v.image.data) p = std::min(p, 1.0);
  return v;
}

inline double mean_abs_channel_difference(const Waveform& clip) {
  if (clip.num_channels() != 2) throw InputError("expected a stereo clip, got " + std::to_string(clip.num_channels()) +
                                                 " channel(s)");
  clip.validate();
  const std::size_t n = clip.num_samples();
  if (n == 0) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(clip.left()[i] - clip.right()[i]);
  return acc / static_cast<double>(n);
}

/// Mean absolute inter-channel difference strictly above `threshold`.
inline bool is_binaural_clip(const Waveform& clip, double threshold = 0.001) {
  return mean_abs_channel_difference(clip) > threshold;
}

// ---------------------------------------------------------------- synthesis

struct GeneratorConfig {
  std::size_t min_sources = 1;
  std::size_t max_sources = 3;
  double min_depth = 0.5;
  double max_depth = 5.0;
  double source_rms = 0.1;
  double tonal_probability = 0.5;
  ListenerSpec listener;
  std::size_t image_height = 32;
  std::size_t image_width = 32;
  int sample_rate = 16000;
  std::size_t clip_length = 10080;
  double max_azimuth = std::numbers::pi / 3;
  double reference_gain = 0.5;
};

/// SplitMix64 finalizer.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Counter-based split: scene i's seed depends only on (master, i).
inline std::uint64_t scene_seed(std::uint64_t master_seed, std::uint64_t index) {
  return mix64(master_seed ^ mix64(index));
}

/// Uniform [0, 1) from the top 53 bits, independent of the standard library's distributions.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
inline double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

enum class SourceKind { kTonal, kNoise };

/// Harmonic tone (f0 log-uniform in [150, 1000] Hz) or a band of random-phase
/// partials (centre 300..3000 Hz, about one octave wide), scaled to `rms`.
inline Channel synth_source_signal(std::mt19937_64& rng, SourceKind kind, std::size_t length, int sample_rate,
                                   double rms) {
  Channel x(length, 0.0);
  const double fs = static_cast<double>(sample_rate);
  const double two_pi = 2 * std::numbers::pi;
  if (kind == SourceKind::kTonal) {
    const double f0 = std::exp(uniform(rng, std::log(150.0), std::log(1000.0)));
    for (int h = 1; h <= 4; ++h) {
      const double f = f0 * h;
      const double phase = uniform(rng, 0.0, two_pi);
      if (f > 0.45 * fs) break;
      for (std::size_t n = 0; n < length; ++n) x[n] += std::sin(two_pi * f * static_cast<double>(n) / fs + phase) / h;
    }
  } else {
    const double fc = std::exp(uniform(rng, std::log(300.0), std::log(3000.0)));
    const double lo = fc / std::numbers::sqrt2, hi = std::min(fc * std::numbers::sqrt2, 0.45 * fs);
    for (int k = 0; k < 48; ++k) {
      const double f = uniform(rng, lo, hi);
      const double phase = uniform(rng, 0.0, two_pi);
      for (std::size_t n = 0; n < length; ++n) x[n] += std::sin(two_pi * f * static_cast<double>(n) / fs + phase);
    }
  }
  double energy = 0.0;
  for (double v : x) energy += v * v;
  const double scale = energy > 0 ? rms / std::sqrt(energy / static_cast<double>(length)) : 0.0;
  for (double& v : x) v *= scale;
  return x;
}

/// Random scene for one seed. Signals include enough pre-roll for the farthest ear.
inline SceneSpec random_scene(std::uint64_t seed, const GeneratorConfig& cfg) {
  std::mt19937_64 rng(seed);
  SceneSpec scene;
  scene.listener = cfg.listener;
  scene.image_height = cfg.image_height;
  scene.image_width = cfg.image_width;
  scene.sample_rate = cfg.sample_rate;
  scene.clip_length = cfg.clip_length;
  scene.seed = seed;
  scene.max_azimuth = cfg.max_azimuth;
  scene.reference_gain = cfg.reference_gain;
  const double reach = cfg.max_depth + cfg.listener.ear_separation;
  const auto pre_roll = static_cast<std::size_t>(std::ceil(reach / cfg.listener.speed_of_sound * cfg.sample_rate)) + 2;
  const std::size_t count = cfg.min_sources + rng() % (cfg.max_sources - cfg.min_sources + 1);
  for (std::size_t k = 0; k < count; ++k) {
    SoundSource s;
    s.azimuth = uniform(rng, -cfg.max_azimuth, cfg.max_azimuth);
    s.depth = uniform(rng, cfg.min_depth, cfg.max_depth);
    const auto kind = uniform01(rng) < cfg.tonal_probability ? SourceKind::kTonal : SourceKind::kNoise;
    s.signal = synth_source_signal(rng, kind, cfg.clip_length + pre_roll, cfg.sample_rate, cfg.source_rms);
    scene.sources.push_back(std::move(s));
  }
  return scene;
}

/// Renders audio and views. Binaural samples are rounded to float32 so the
/// sample survives a float WAV round trip unchanged; mono_mix = left + right.
inline RenderedSample render_sample(const SceneSpec& scene) {
  RenderedSample out;
  out.binaural = render_binaural(scene);
  for (auto& c : out.binaural.channels)
    for (double& v : c) v = static_cast<double>(static_cast<float>(v));
  out.mono_mix.resize(scene.clip_length);
  for (std::size_t n = 0; n < scene.clip_length; ++n)
    out.mono_mix[n] = out.binaural.channels[0][n] + out.binaural.channels[1][n];
  auto views = render_views(scene);
  out.image = std::move(views.image);
  out.depth_map = std::move(views.depth_map);
  out.scene = scene;
  for (auto& s : out.scene.sources) s.signal.clear();
  return out;
}

/// Scenes are rendered independently (optionally on `workers` threads) and
/// returned in index order, so the result does not depend on the worker count.
inline std::vector<RenderedSample> make_dataset(std::size_t n_scenes, std::uint64_t master_seed,
                                                const GeneratorConfig& cfg = {}, unsigned workers = 1) {
  if (n_scenes == 0) throw UsageError("make_dataset: need at least one scene");
  if (cfg.min_sources == 0 || cfg.max_sources < cfg.min_sources)
    throw ConfigError("make_dataset: invalid source count range");
  std::vector<RenderedSample> out(n_scenes);
  auto render_range = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < n_scenes; i += stride) out[i] = render_sample(random_scene(scene_seed(master_seed, i), cfg));
  };
  workers = std::max(1u, workers);
  if (workers == 1) {
    render_range(0, 1);
  } else {
    std::vector<std::future<void>> jobs;
    for (unsigned w = 0; w < workers; ++w) jobs.push_back(std::async(std::launch::async, render_range, w, workers));
    for (auto& j : jobs) j.get();
  }
  return out;
}

}  // namespace binaural
