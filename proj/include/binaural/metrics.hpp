#pragma once

// Evaluation distances between ground-truth and predicted binaural clips.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "binaural/dsp.hpp"
#include "binaural/errors.hpp"

namespace binaural {

inline constexpr double kSnrCapDb = 100.0;

struct MetricReport {
  double stft_d = 0.0;  // squared L2 of STFT planes, summed over channels
  double env_d = 0.0;   // L2 of Hilbert envelopes, summed over channels
  double mag_d = 0.0;   // squared L2 of STFT magnitudes, summed over channels
  double phs_d = 0.0;   // mean |phase difference| of the left-right difference signals
  double snr_db = 0.0;  // capped at +-kSnrCapDb
};

namespace detail {

inline void require_comparable(const Waveform& gt, const Waveform& pred) {
  if (gt.num_channels() != 2 || pred.num_channels() != 2) throw InputError("metrics: expected stereo clips");
  if (gt.sample_rate != pred.sample_rate) throw InputError("metrics: sample rates differ");
  if (gt.num_samples() != pred.num_samples())
    throw InputError("metrics: clip lengths differ (" + std::to_string(gt.num_samples()) + " vs " +
                     std::to_string(pred.num_samples()) + ")");
  gt.validate();
  pred.validate();
}

inline Channel difference(const Waveform& w) {
  Channel d(w.num_samples());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = w.left()[i] - w.right()[i];
  return d;
}

}  // namespace detail

inline MetricReport compute_metrics(const Waveform& gt, const Waveform& pred, const StftConfig& cfg = {}) {
  detail::require_comparable(gt, pred);
  MetricReport r;
  for (std::size_t c = 0; c < 2; ++c) {
    const auto sg = stft(gt.channels[c], cfg);
    const auto sp = stft(pred.channels[c], cfg);
    for (std::size_t i = 0; i < sg.real_plane.size(); ++i) {
      const double dr = sg.real_plane[i] - sp.real_plane[i];
      const double di = sg.imag_plane[i] - sp.imag_plane[i];
      r.stft_d += dr * dr + di * di;
      const double dm = std::hypot(sg.real_plane[i], sg.imag_plane[i]) - std::hypot(sp.real_plane[i], sp.imag_plane[i]);
      r.mag_d += dm * dm;
    }
    const auto eg = hilbert_envelope(gt.channels[c]);
    const auto ep = hilbert_envelope(pred.channels[c]);
    double e2 = 0.0;
    for (std::size_t i = 0; i < eg.size(); ++i) e2 += (eg[i] - ep[i]) * (eg[i] - ep[i]);
    r.env_d += std::sqrt(e2);
  }

  const auto pg = mag_phase(stft(detail::difference(gt), cfg));
  const auto pp = mag_phase(stft(detail::difference(pred), cfg));
  double acc = 0.0;
  for (std::size_t i = 0; i < pg.phase.size(); ++i) acc += std::abs(pg.phase[i] - pp.phase[i]);
  r.phs_d = acc / static_cast<double>(pg.phase.size());

  double signal = 0.0, noise = 0.0;
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < gt.num_samples(); ++i) {
      signal += gt.channels[c][i] * gt.channels[c][i];
      const double e = gt.channels[c][i] - pred.channels[c][i];
      noise += e * e;
    }
  if (noise <= 1e-12 * signal) {
    r.snr_db = kSnrCapDb;
  } else if (signal == 0.0) {
    r.snr_db = -kSnrCapDb;
  } else {
    r.snr_db = std::clamp(10.0 * std::log10(signal / noise), -kSnrCapDb, kSnrCapDb);
  }
  return r;
}

/// Zero predicted difference: both channels carry half the mix.
inline Waveform mono_mono_baseline(std::span<const double> mono_mix, int sample_rate = 16000) {
  Channel half(mono_mix.begin(), mono_mix.end());
  for (double& v : half) v /= 2;
  return Waveform{{half, half}, sample_rate};
}

/// Unweighted mean over clips, accumulated in index order.
inline MetricReport mean_report(const std::vector<MetricReport>& reports) {
  MetricReport m;
  if (reports.empty()) return m;
  for (const auto& r : reports) {
    m.stft_d += r.stft_d;
    m.env_d += r.env_d;
    m.mag_d += r.mag_d;
    m.phs_d += r.phs_d;
    m.snr_db += r.snr_db;
  }
  const double n = static_cast<double>(reports.size());
  m.stft_d /= n;
  m.env_d /= n;
  m.mag_d /= n;
  m.phs_d /= n;
  m.snr_db /= n;
  return m;
}

}  // namespace binaural
