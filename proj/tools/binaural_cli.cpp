// Command-line front end: dataset synthesis, filtering, training, evaluation,
// inference, attention export and gradient checks.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "binaural/binaural.hpp"

namespace fs = std::filesystem;
using namespace binaural;

namespace {

enum Exit : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

unsigned default_workers() { return std::max(1u, std::thread::hardware_concurrency()); }

std::vector<train::Example> load_examples(const fs::path& root, const net::ModelConfig& cfg) {
  const auto dirs = io::list_samples(root);
  if (dirs.empty()) throw InputError(root.string() + ": no sample directories found");
  std::vector<train::Example> out;
  out.reserve(dirs.size());
  for (const auto& d : dirs) {
    const auto s = io::read_sample(d);
    if (s.image.dim(1) != cfg.image_height || s.image.dim(2) != cfg.image_width)
      throw InputError(d.string() + ": image is " + std::to_string(s.image.dim(1)) + "x" +
                       std::to_string(s.image.dim(2)) + ", model expects " + std::to_string(cfg.image_height) + "x" +
                       std::to_string(cfg.image_width));
    out.push_back(train::make_example(s, cfg.stft, d.filename().string()));
  }
  return out;
}

/// Checkpoint/data incompatibilities are load errors.
std::vector<train::Example> load_examples_for(const fs::path& root, const train::Checkpoint& ck) {
  try {
    return load_examples(root, ck.model);
  } catch (const InputError& e) {
    if (std::string(e.what()).find("model expects") == std::string::npos) throw;
    throw LoadError(std::string("checkpoint does not match data: ") + e.what());
  }
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

int cmd_synth(std::size_t scenes, std::uint64_t seed, const fs::path& out, unsigned workers) {
  GeneratorConfig gen;
  const auto data = make_dataset(scenes, seed, gen, workers);
  fs::create_directories(out);
  for (std::size_t i = 0; i < data.size(); ++i) io::write_sample(out / io::sample_dir_name(i), data[i]);
  std::cout << "wrote " << data.size() << " scenes to " << out.string() << "\n";
  return kOk;
}

int cmd_filter(const fs::path& in, double threshold) {
  std::size_t kept = 0, total = 0;
  for (const auto& d : io::list_samples(in)) {
    const auto clip = wav::read(d / "binaural.wav");
    const double diff = mean_abs_channel_difference(clip);
    const bool binaural = diff > threshold;
    kept += binaural;
    ++total;
    std::cout << d.filename().string() << "\t" << (binaural ? "binaural" : "mono") << "\t" << fmt(diff) << "\n";
  }
  std::cout << "# " << kept << " of " << total << " clips exceed threshold " << fmt(threshold) << "\n";
  return kOk;
}

int cmd_train(const fs::path& data_dir, const fs::path& config_path, const fs::path& out) {
  std::ifstream cfg_in(config_path);
  if (!cfg_in) throw UsageError("cannot open config file " + config_path.string());
  const auto rc = train::parse_run_config(cfg_in, config_path.string());
  const auto data = load_examples(data_dir, rc.model);
  std::cout << "training on " << data.size() << " clips for " << rc.train.steps << " steps\n";
  const auto ck = train::train_loop(data, rc.model, rc.train, [](const train::LoopLog& log) {
    std::cout << "step " << log.step << " loss " << fmt(log.loss.total) << " stft " << fmt(log.loss.stft) << " mag "
              << fmt(log.loss.mag) << " phs " << fmt(log.loss.phs) << " rec " << fmt(log.loss.rec) << "\n";
    if (log.eval)
      std::cout << "eval " << log.step << " stft " << fmt(log.eval->model.stft_d) << " baseline_stft "
                << fmt(log.eval->baseline.stft_d) << " snr " << fmt(log.eval->model.snr_db) << "\n";
  });
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  train::save_checkpoint(ck, out);
  std::cout << "saved " << out.string() << "\n";
  return kOk;
}

int cmd_eval(const fs::path& ckpt, const fs::path& data_dir, const fs::path& report, const std::string& csv,
             unsigned workers) {
  const auto ck = train::load_checkpoint(ckpt);
  const auto data = load_examples_for(data_dir, ck);
  const net::BinauralNet net{ck.model, ck.params};
  const auto r = train::evaluate_dataset(data, net, workers);
  if (report.has_parent_path()) fs::create_directories(report.parent_path());
  std::ofstream(report) << train::report_json(r);
  if (!csv.empty()) std::ofstream(csv) << train::report_csv(r);
  std::cout << "model    stft " << fmt(r.model.stft_d) << " env " << fmt(r.model.env_d) << " mag " << fmt(r.model.mag_d)
            << " phs " << fmt(r.model.phs_d) << " snr " << fmt(r.model.snr_db) << "\n"
            << "baseline stft " << fmt(r.baseline.stft_d) << " env " << fmt(r.baseline.env_d) << " mag "
            << fmt(r.baseline.mag_d) << " phs " << fmt(r.baseline.phs_d) << " snr " << fmt(r.baseline.snr_db) << "\n";
  return kOk;
}

int cmd_binauralize(const fs::path& ckpt, const fs::path& mono_path, const fs::path& image_path,
                    const fs::path& depth_path, const fs::path& out) {
  const auto ck = train::load_checkpoint(ckpt);
  const net::BinauralNet net{ck.model, ck.params};
  const auto mono = wav::read(mono_path);
  if (mono.num_channels() != 1)
    throw InputError(mono_path.string() + ": expected a single-channel mix, got " +
                     std::to_string(mono.num_channels()) + " channels");
  const auto image = io::read_ppm(image_path);
  const auto depth = io::read_pgm(depth_path, io::kDepthPgmScale);
  const auto stereo = net::predict_binaural(mono.channels[0], image, depth, net, mono.sample_rate);
  wav::write(out, stereo);
  std::cout << "wrote " << out.string() << " (" << stereo.num_samples() << " samples)\n";
  return kOk;
}

int cmd_attn(const fs::path& ckpt, const fs::path& sample_dir, const fs::path& out) {
  const auto ck = train::load_checkpoint(ckpt);
  const net::BinauralNet net{ck.model, ck.params};
  const auto s = io::read_sample(sample_dir);
  const auto images = net::export_attention(s.mono_mix, s.image, s.depth_map, net);
  if (images.empty()) throw UsageError("model has no view modality enabled; nothing to export");
  fs::create_directories(out);
  for (const auto& img : images) {
    const auto path = out / ("layer" + std::to_string(img.layer) + "_" + img.modality + ".pgm");
    io::write_pgm8(path, img.pixels, img.height, img.width);
    std::cout << path.string() << "\n";
  }
  return kOk;
}

int cmd_gradcheck(bool full_model) {
  grad::GradCheckOptions opt;
  constexpr double kTolerance = 1e-6;
  bool ok = true;
  auto report = [&](const grad::GradCaseResult& r) {
    const bool pass = r.check.max_relative_error <= kTolerance;
    ok = ok && pass;
    std::printf("%-26s %s  max_rel %.3e over %zu coords", r.name.c_str(), pass ? "ok  " : "FAIL",
                r.check.max_relative_error, r.check.coordinates);
    if (r.check.kink_skipped) std::printf(" (%zu kink stencils skipped)", r.check.kink_skipped);
    if (!pass)
      std::printf("  worst %s[%zu] analytic %.9g numeric %.9g", r.check.worst_parameter.c_str(), r.check.worst_index,
                  r.check.worst_analytic, r.check.worst_numeric);
    std::printf("\n");
  };
  for (const auto& c : grad::primitive_cases()) report(grad::run_case(c, opt));
  if (full_model) report(grad::run_case(grad::full_model_case(), opt));
  return ok ? kOk : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mono-to-binaural audio from a mono mix plus image and depth views"};
  app.require_subcommand(1);

  std::size_t scenes = 0;
  std::uint64_t seed = 0;
  std::string out, in, data, config, ckpt, report, csv, mono, image, depth, sample;
  double threshold = 0.001;
  unsigned workers = default_workers();
  bool full_model = false;

  auto* synth = app.add_subcommand("synth", "Render a seeded synthetic scene dataset");
  synth->add_option("--scenes", scenes, "Number of scenes")->required()->check(CLI::PositiveNumber);
  synth->add_option("--seed", seed, "Master seed")->required();
  synth->add_option("--out", out, "Output directory")->required();
  synth->add_option("--workers", workers, "Rendering threads")->check(CLI::PositiveNumber);

  auto* filter = app.add_subcommand("filter", "Report which clips carry a usable channel difference");
  filter->add_option("--in", in, "Dataset directory")->required();
  filter->add_option("--threshold", threshold, "Mean absolute channel difference threshold")->check(
      CLI::NonNegativeNumber);

  auto* train_cmd = app.add_subcommand("train", "Train a model and write a checkpoint");
  train_cmd->add_option("--data", data, "Dataset directory")->required();
  train_cmd->add_option("--config", config, "key=value config file")->required();
  train_cmd->add_option("--out", out, "Checkpoint path")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint against the Mono-Mono baseline");
  eval->add_option("--ckpt", ckpt, "Checkpoint")->required();
  eval->add_option("--data", data, "Dataset directory")->required();
  eval->add_option("--report", report, "JSON report path")->required();
  eval->add_option("--csv", csv, "Optional per-clip CSV path");
  eval->add_option("--workers", workers, "Evaluation threads")->check(CLI::PositiveNumber);

  auto* binauralize = app.add_subcommand("binauralize", "Predict a binaural clip from a mono mix and views");
  binauralize->add_option("--ckpt", ckpt, "Checkpoint")->required();
  binauralize->add_option("--mono", mono, "Single-channel WAV mix")->required();
  binauralize->add_option("--image", image, "PPM image")->required();
  binauralize->add_option("--depth", depth, "16-bit PGM depth map in millimetres")->required();
  binauralize->add_option("--out", out, "Output stereo WAV")->required();

  auto* attn = app.add_subcommand("attn", "Export per-layer attention maps of one sample");
  attn->add_option("--ckpt", ckpt, "Checkpoint")->required();
  attn->add_option("--sample", sample, "Sample directory")->required();
  attn->add_option("--out", out, "Output directory")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every primitive");
  gradcheck->add_flag("--full-model", full_model, "Also check the full four-term training loss");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) return cmd_synth(scenes, seed, out, workers);
    if (*filter) return cmd_filter(in, threshold);
    if (*train_cmd) return cmd_train(data, config, out);
    if (*eval) return cmd_eval(ckpt, data, report, csv, workers);
    if (*binauralize) return cmd_binauralize(ckpt, mono, image, depth, out);
    if (*attn) return cmd_attn(ckpt, sample, out);
    if (*gradcheck) return cmd_gradcheck(full_model);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
