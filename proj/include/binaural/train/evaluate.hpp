#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <future>
#include <string>
#include <vector>

#include "binaural/dataset_io.hpp"
#include "binaural/metrics.hpp"
#include "binaural/net/model.hpp"
#include "binaural/train/trainer.hpp"

namespace binaural::train {

struct ClipMetrics {
  std::string id;
  MetricReport model;
  MetricReport baseline;  // Mono-Mono: both channels = mix / 2
};

struct EvalReport {
  std::size_t clips = 0;
  MetricReport model;
  MetricReport baseline;
  std::vector<ClipMetrics> per_clip;
};

/// Per-clip metrics fan out over `workers` threads; results are merged in clip order.
inline EvalReport evaluate_dataset(const std::vector<Example>& data, const BinauralNet& net, unsigned workers = 1) {
  EvalReport report;
  report.clips = data.size();
  report.per_clip.resize(data.size());
  const auto& cfg = net.config.stft;
  auto run = [&](std::size_t begin, std::size_t stride) {
    for (std::size_t i = begin; i < data.size(); i += stride) {
      const Example& ex = data[i];
      const int rate = ex.binaural.sample_rate;
      const auto pred = net::predict_binaural(ex.mono, ex.image, ex.depth, net, rate);
      report.per_clip[i] = {ex.id, compute_metrics(ex.binaural, pred, cfg),
                            compute_metrics(ex.binaural, mono_mono_baseline(ex.mono, rate), cfg)};
    }
  };
  workers = std::max(1u, workers);
  if (workers == 1) {
    run(0, 1);
  } else {
    std::vector<std::future<void>> jobs;
    for (unsigned w = 0; w < workers; ++w) jobs.push_back(std::async(std::launch::async, run, w, workers));
    for (auto& j : jobs) j.get();
  }
  std::vector<MetricReport> m, b;
  for (const auto& c : report.per_clip) {
    m.push_back(c.model);
    b.push_back(c.baseline);
  }
  report.model = mean_report(m);
  report.baseline = mean_report(b);
  return report;
}

/// Flat JSON object: clip count, the five model metrics, and the baseline's five.
inline std::string report_json(const EvalReport& r) {
  auto fields = [](const std::string& prefix, const MetricReport& m) {
    return "\"" + prefix + "stft\": " + io::format_double(m.stft_d) + ", \"" + prefix +
           "env\": " + io::format_double(m.env_d) + ", \"" + prefix + "mag\": " + io::format_double(m.mag_d) +
           ", \"" + prefix + "phs\": " + io::format_double(m.phs_d) + ", \"" + prefix +
           "snr\": " + io::format_double(m.snr_db);
  };
  return "{\"clips\": " + std::to_string(r.clips) + ", " + fields("", r.model) + ", " +
         fields("baseline_", r.baseline) + "}\n";
}

inline std::string report_csv(const EvalReport& r) {
  std::string s = "clip_id,stft,env,mag,phs,snr\n";
  for (const auto& c : r.per_clip)
    s += c.id + "," + io::format_double(c.model.stft_d) + "," + io::format_double(c.model.env_d) + "," +
         io::format_double(c.model.mag_d) + "," + io::format_double(c.model.phs_d) + "," +
         io::format_double(c.model.snr_db) + "\n";
  return s;
}

}  // namespace binaural::train
