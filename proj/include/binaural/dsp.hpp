#pragma once

// Channel algebra, STFT analysis/synthesis, polar decomposition and the
// Hilbert envelope. Complex planes are stored as two real F x T planes,
// row-major with frequency as the slow axis.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "binaural/errors.hpp"
#include "binaural/fft.hpp"

namespace binaural {

using Channel = std::vector<double>;

struct Waveform {
  std::vector<Channel> channels;
  int sample_rate = 16000;

  std::size_t num_samples() const { return channels.empty() ? 0 : channels.front().size(); }
  std::size_t num_channels() const { return channels.size(); }
  const Channel& left() const { return channels.at(0); }
  const Channel& right() const { return channels.at(1); }

  void validate() const {
    if (sample_rate <= 0) throw InputError("waveform: sample rate must be positive");
    if (channels.empty() || channels.size() > 2)
      throw InputError("waveform: expected 1 or 2 channels, got " + std::to_string(channels.size()));
    for (const auto& c : channels) {
      if (c.size() != channels.front().size()) throw ShapeError("waveform: channels differ in length");
      for (double v : c)
        if (!std::isfinite(v)) throw InputError("waveform: non-finite sample");
    }
  }
};

struct StftConfig {
  std::size_t fft_size = 512;
  std::size_t hop = 160;

  std::size_t num_bins() const { return fft_size / 2 + 1; }

  std::size_t num_frames(std::size_t signal_length) const {
    if (signal_length < fft_size) return 0;
    return (signal_length - fft_size) / hop + 1;
  }

  void validate() const {
    if (fft_size < 8 || (fft_size & (fft_size - 1)) != 0)
      throw ConfigError("stft: fft_size must be a power of two >= 8, got " + std::to_string(fft_size));
    if (hop == 0 || hop > fft_size / 2)
      throw ConfigError("stft: hop must satisfy 0 < hop <= fft_size/2, got " + std::to_string(hop));
  }
};

/// Periodic Hann window.
inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

struct Spectrogram {
  std::size_t bins = 0;
  std::size_t frames = 0;
  std::vector<double> real_plane;
  std::vector<double> imag_plane;
  StftConfig config;

  Spectrogram() = default;
  Spectrogram(std::size_t f, std::size_t t, StftConfig cfg)
      : bins(f), frames(t), real_plane(f * t, 0.0), imag_plane(f * t, 0.0), config(cfg) {}

  double& re(std::size_t f, std::size_t t) { return real_plane[f * frames + t]; }
  double& im(std::size_t f, std::size_t t) { return imag_plane[f * frames + t]; }
  double re(std::size_t f, std::size_t t) const { return real_plane[f * frames + t]; }
  double im(std::size_t f, std::size_t t) const { return imag_plane[f * frames + t]; }

  void validate() const {
    if (bins != config.num_bins()) throw ShapeError("spectrogram: bin count does not match fft_size");
    if (real_plane.size() != bins * frames || imag_plane.size() != bins * frames)
      throw ShapeError("spectrogram: plane sizes do not match F x T");
  }
};

struct MagPhase {
  std::size_t bins = 0;
  std::size_t frames = 0;
  std::vector<double> mag;
  std::vector<double> phase;
  StftConfig config;
};

inline std::pair<Channel, Channel> mix_and_diff(std::span<const double> left, std::span<const double> right) {
  if (left.size() != right.size())
    throw ShapeError("mix_and_diff: channel lengths differ (" + std::to_string(left.size()) + " vs " +
                     std::to_string(right.size()) + ")");
  Channel mix(left.size()), diff(left.size());
  for (std::size_t i = 0; i < left.size(); ++i) {
    mix[i] = left[i] + right[i];
    diff[i] = left[i] - right[i];
  }
  return {std::move(mix), std::move(diff)};
}

inline std::pair<Channel, Channel> recover_channels(std::span<const double> mix, std::span<const double> diff) {
  if (mix.size() != diff.size())
    throw ShapeError("recover_channels: lengths differ (" + std::to_string(mix.size()) + " vs " +
                     std::to_string(diff.size()) + ")");
  Channel left(mix.size()), right(mix.size());
  for (std::size_t i = 0; i < mix.size(); ++i) {
    left[i] = (mix[i] + diff[i]) / 2;
    right[i] = (mix[i] - diff[i]) / 2;
  }
  return {std::move(left), std::move(right)};
}

inline Spectrogram stft(std::span<const double> signal, const StftConfig& cfg) {
  cfg.validate();
  if (signal.size() < cfg.fft_size)
    throw InputError("stft: signal of " + std::to_string(signal.size()) + " samples is shorter than one frame (" +
                     std::to_string(cfg.fft_size) + ")");
  const std::size_t n = cfg.fft_size;
  const std::size_t frames = cfg.num_frames(signal.size());
  const auto window = hann_window(n);
  Spectrogram spec(cfg.num_bins(), frames, cfg);
  std::vector<double> frame(n);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = 0; i < n; ++i) frame[i] = window[i] * signal[t * cfg.hop + i];
    const auto bins = fft::rfft(frame);
    for (std::size_t f = 0; f < spec.bins; ++f) {
      spec.re(f, t) = bins[f].real();
      spec.im(f, t) = bins[f].imag();
    }
  }
  return spec;
}

/// Relative floor of the overlap-add normalizer, as a fraction of its peak.
inline constexpr double kIstftNormFloor = 0.1;

/// Weighted overlap-add with squared-window normalization. Near the edges,
/// where the normalizer drops below kIstftNormFloor of its peak, it is clamped
/// to that floor; anywhere else this is a configuration error.
inline Channel istft(const Spectrogram& spec) {
  spec.validate();
  const std::size_t n = spec.config.fft_size;
  const std::size_t hop = spec.config.hop;
  if (hop == 0) throw ConfigError("istft: hop must be positive");
  if (spec.frames == 0) return {};
  const std::size_t length = (spec.frames - 1) * hop + n;
  const auto window = hann_window(n);
  Channel out(length, 0.0);
  std::vector<double> norm(length, 0.0);
  std::vector<std::complex<double>> bins(spec.bins);
  for (std::size_t t = 0; t < spec.frames; ++t) {
    for (std::size_t f = 0; f < spec.bins; ++f) bins[f] = {spec.re(f, t), spec.im(f, t)};
    // c2r ignores the imaginary parts of the DC and Nyquist bins.
    const auto frame = fft::irfft_unscaled(bins, n);
    for (std::size_t i = 0; i < n; ++i) {
      out[t * hop + i] += window[i] * frame[i] / static_cast<double>(n);
      norm[t * hop + i] += window[i] * window[i];
    }
  }
  const double floor = kIstftNormFloor * *std::max_element(norm.begin(), norm.end());
  for (std::size_t i = 0; i < length; ++i) {
    if (norm[i] < floor && i >= n && i + n < length)
      throw ConfigError("istft: overlap-add normalizer collapses at interior sample " + std::to_string(i) +
                        " (hop too large for the window)");
    out[i] /= std::max(norm[i], floor);
  }
  return out;
}

inline MagPhase mag_phase(const Spectrogram& spec) {
  spec.validate();
  MagPhase mp{spec.bins, spec.frames, std::vector<double>(spec.real_plane.size()),
              std::vector<double>(spec.real_plane.size()), spec.config};
  for (std::size_t i = 0; i < spec.real_plane.size(); ++i) {
    const double re = spec.real_plane[i];
    const double im = spec.imag_plane[i];
    mp.mag[i] = std::hypot(re, im);
    // +0 and -0 imaginary parts both give phase pi on the negative real axis.
    mp.phase[i] = (re == 0.0 && im == 0.0) ? 0.0 : std::atan2(im == 0.0 ? 0.0 : im, re);
  }
  return mp;
}

inline Spectrogram polar_to_complex(const MagPhase& mp) {
  Spectrogram spec(mp.bins, mp.frames, mp.config);
  if (mp.mag.size() != mp.bins * mp.frames || mp.phase.size() != mp.mag.size())
    throw ShapeError("polar_to_complex: plane sizes do not match F x T");
  for (std::size_t i = 0; i < mp.mag.size(); ++i) {
    spec.real_plane[i] = mp.mag[i] * std::cos(mp.phase[i]);
    spec.imag_plane[i] = mp.mag[i] * std::sin(mp.phase[i]);
  }
  return spec;
}

/// Magnitude of the analytic signal, via the one-sided spectrum.
inline Channel hilbert_envelope(std::span<const double> signal) {
  const std::size_t n = signal.size();
  if (n < 16) throw InputError("hilbert_envelope: need at least 16 samples, got " + std::to_string(n));
  std::vector<std::complex<double>> x(signal.begin(), signal.end());
  auto spectrum = fft::dft(x, false);
  // Keep DC (and Nyquist for even n), double positive frequencies, zero the rest.
  const std::size_t half = n / 2;
  for (std::size_t k = 1; k < n; ++k) {
    if (k < (n + 1) / 2) {
      spectrum[k] *= 2.0;
    } else if (!(n % 2 == 0 && k == half)) {
      spectrum[k] = 0.0;
    }
  }
  const auto analytic = fft::dft(spectrum, true);
  Channel env(n);
  for (std::size_t i = 0; i < n; ++i) env[i] = std::abs(analytic[i]) / static_cast<double>(n);
  return env;
}

}  // namespace binaural
