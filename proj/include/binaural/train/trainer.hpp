#pragma once

// Sequential, seeded training: per-sample forward/backward accumulated over a
// batch, then one adaptive-moment update.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "binaural/dataset_io.hpp"
#include "binaural/dsp.hpp"
#include "binaural/errors.hpp"
#include "binaural/grad/params.hpp"
#include "binaural/net/config.hpp"
#include "binaural/net/model.hpp"
#include "binaural/scene.hpp"

namespace binaural::train {

using grad::ParameterSet;
using grad::Tensor;
using net::BinauralNet;
using net::LossWeights;
using net::ModelConfig;

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t batch_size = 4;
  std::size_t steps = 500;
  std::uint64_t seed = 1;
  LossWeights weights;
  std::size_t eval_every = 0;  // 0 disables periodic metric evaluation
  std::string precision = "float64";

  void validate() const {
    if (!(learning_rate >= 0)) throw ConfigError("train: learning_rate must be nonnegative");
    if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1)) throw ConfigError("train: betas must lie in (0, 1)");
    if (!(eps > 0)) throw ConfigError("train: eps must be positive");
    if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
    if (!(weights.mag >= 0 && weights.phs >= 0 && weights.rec >= 0))
      throw ConfigError("train: loss weights must be nonnegative");
    if (precision != "float64")
      throw ConfigError("train: precision '" + precision + "' is not supported (only float64)");
  }
};

inline bool apply_train_key(TrainConfig& cfg, const std::string& key, const std::string& value) {
  using net::detail::parse_count;
  using net::detail::parse_real;
  if (key == "learning_rate") cfg.learning_rate = parse_real(key, value);
  else if (key == "beta1") cfg.beta1 = parse_real(key, value);
  else if (key == "beta2") cfg.beta2 = parse_real(key, value);
  else if (key == "eps") cfg.eps = parse_real(key, value);
  else if (key == "batch_size") cfg.batch_size = parse_count(key, value);
  else if (key == "steps") cfg.steps = parse_count(key, value);
  else if (key == "seed") cfg.seed = parse_count(key, value);
  else if (key == "alpha_mag") cfg.weights.mag = parse_real(key, value);
  else if (key == "alpha_phs") cfg.weights.phs = parse_real(key, value);
  else if (key == "alpha_rec") cfg.weights.rec = parse_real(key, value);
  else if (key == "eval_every") cfg.eval_every = parse_count(key, value);
  else if (key == "precision") cfg.precision = value;
  else return false;
  return true;
}

inline std::string to_text(const TrainConfig& cfg) {
  using io::format_double;
  std::ostringstream s;
  s << "learning_rate=" << format_double(cfg.learning_rate) << "\n"
    << "beta1=" << format_double(cfg.beta1) << "\n"
    << "beta2=" << format_double(cfg.beta2) << "\n"
    << "eps=" << format_double(cfg.eps) << "\n"
    << "batch_size=" << cfg.batch_size << "\n"
    << "steps=" << cfg.steps << "\n"
    << "seed=" << cfg.seed << "\n"
    << "alpha_mag=" << format_double(cfg.weights.mag) << "\n"
    << "alpha_phs=" << format_double(cfg.weights.phs) << "\n"
    << "alpha_rec=" << format_double(cfg.weights.rec) << "\n"
    << "eval_every=" << cfg.eval_every << "\n"
    << "precision=" << cfg.precision << "\n";
  return s.str();
}

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

/// Parses key=value text holding model and training keys; unknown keys are errors.
inline RunConfig parse_run_config(std::istream& in, const std::string& origin) {
  RunConfig rc;
  for (const auto& [k, v] : io::parse_key_values(in, origin))
    if (!net::apply_model_key(rc.model, k, v) && !apply_train_key(rc.train, k, v))
      throw ConfigError(origin + ": unknown key '" + k + "'");
  rc.model.validate();
  rc.train.validate();
  return rc;
}

inline TrainConfig train_config_from_text(const std::string& text) {
  std::istringstream in(text);
  TrainConfig cfg;
  for (const auto& [k, v] : io::parse_key_values(in, "train config"))
    if (!apply_train_key(cfg, k, v)) throw ConfigError("train config: unknown key '" + k + "'");
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------- examples

/// A rendered sample with its network inputs and targets precomputed.
struct Example {
  std::string id;
  Tensor mix;  // STFT of left+right, [2,F,T]
  Tensor image;
  Tensor depth;
  net::Target target;  // STFT of left-right
  Waveform binaural;
  Channel mono;
};

inline Example make_example(const RenderedSample& s, const StftConfig& cfg, std::string id) {
  auto [mix, diff] = mix_and_diff(s.binaural.left(), s.binaural.right());
  Example e;
  e.id = std::move(id);
  e.mix = net::spectrogram_tensor(stft(mix, cfg));
  e.target = net::make_target(net::spectrogram_tensor(stft(diff, cfg)));
  e.image = s.image;
  e.depth = s.depth_map;
  e.binaural = s.binaural;
  e.mono = std::move(mix);
  return e;
}

inline std::vector<Example> make_examples(const std::vector<RenderedSample>& samples, const StftConfig& cfg) {
  std::vector<Example> out;
  out.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) out.push_back(make_example(samples[i], cfg, io::sample_dir_name(i)));
  return out;
}

// ---------------------------------------------------------------- optimizer

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::uint64_t t = 0;

  static AdamState zeros_like(const ParameterSet& p) {
    AdamState s;
    for (std::size_t i = 0; i < p.size(); ++i) {
      s.m.emplace_back(p.tensor(i).shape, 0.0);
      s.v.emplace_back(p.tensor(i).shape, 0.0);
    }
    return s;
  }
};

inline void adam_update(ParameterSet& params, AdamState& state, const std::vector<Tensor>& grads, const TrainConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size())
    throw UsageError("adam_update: gradient/state count does not match parameters");
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& w = params.tensor(p);
    Tensor& m = state.m[p];
    Tensor& v = state.v[p];
    const Tensor& g = grads[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      w[i] -= cfg.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
  }
}

// ---------------------------------------------------------------- sampling

/// Endless stream of example indices, reshuffled at every epoch boundary.
class Sampler {
 public:
  Sampler() = default;
  Sampler(std::size_t n, std::uint64_t seed) : rng_(seed), n_(n) {}

  std::vector<std::size_t> next_batch(std::size_t batch) {
    if (n_ == 0) throw UsageError("sampler: empty dataset");
    std::vector<std::size_t> out;
    while (out.size() < batch) {
      if (cursor_ >= order_.size()) reshuffle();
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

  std::size_t dataset_size() const { return n_; }

  /// Text form: n, cursor, order, then the engine state.
  std::string state() const {
    std::ostringstream s;
    s << n_ << " " << cursor_ << " " << order_.size();
    for (auto i : order_) s << " " << i;
    s << " " << rng_;
    return s.str();
  }

  static Sampler from_state(const std::string& text) {
    std::istringstream s(text);
    Sampler sm;
    std::size_t count = 0;
    s >> sm.n_ >> sm.cursor_ >> count;
    sm.order_.resize(count);
    for (auto& i : sm.order_) s >> i;
    s >> sm.rng_;
    if (!s || sm.cursor_ > sm.order_.size()) throw LoadError("sampler: malformed state");
    for (auto i : sm.order_)
      if (i >= sm.n_) throw LoadError("sampler: index out of range in state");
    return sm;
  }

 private:
  void reshuffle() {
    order_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
    // Fisher-Yates with our own bounded draw so the order is stdlib-independent.
    for (std::size_t i = n_; i > 1; --i) std::swap(order_[i - 1], order_[rng_() % i]);
    cursor_ = 0;
  }

  std::mt19937_64 rng_;
  std::size_t n_ = 0;
  std::size_t cursor_ = 0;
  std::vector<std::size_t> order_;
};

// ---------------------------------------------------------------- steps

struct StepResult {
  double total = 0, stft = 0, mag = 0, phs = 0, rec = 0;
};

/// Loss terms for one example without gradient bookkeeping.
inline StepResult evaluate_losses(const BinauralNet& net, const Example& ex, const LossWeights& w) {
  grad::Tape tape;
  grad::BoundParameters p(tape, net.params, false);
  const auto out = net::forward(tape, p, ex.mix, ex.image, ex.depth, net.config);
  const auto l = net::compute_losses(tape, out, ex.target, w);
  return {l.total.value().item(), l.stft.value().item(), l.mag.value().item(), l.phs.value().item(),
          l.rec.value().item()};
}

/// Mean L_tot over a batch; gradients are averaged across the batch before the update.
inline StepResult train_step(BinauralNet& net, AdamState& opt, const std::vector<const Example*>& batch,
                             const TrainConfig& cfg) {
  if (batch.empty()) throw UsageError("train_step: empty batch");
  std::vector<Tensor> grads;
  StepResult r;
  for (const Example* ex : batch) {
    grad::Tape tape;
    grad::BoundParameters p(tape, net.params);
    net::Losses l;
    try {
      const auto out = net::forward(tape, p, ex->mix, ex->image, ex->depth, net.config);
      l = net::compute_losses(tape, out, ex->target, cfg.weights);
      tape.backward(l.total);
    } catch (const NumericalError& e) {
      throw NumericalError("train_step on " + ex->id + ": " + e.what());
    }
    auto g = p.gradients();
    if (grads.empty()) {
      grads = std::move(g);
    } else {
      for (std::size_t i = 0; i < grads.size(); ++i)
        for (std::size_t j = 0; j < grads[i].size(); ++j) grads[i][j] += g[i][j];
    }
    r.total += l.total.value().item();
    r.stft += l.stft.value().item();
    r.mag += l.mag.value().item();
    r.phs += l.phs.value().item();
    r.rec += l.rec.value().item();
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (auto& g : grads)
    for (auto& v : g.data) v *= inv;
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!grads[i].all_finite())
      throw NumericalError("train_step: non-finite gradient for parameter '" + net.params.name(i) + "'");
  adam_update(net.params, opt, grads, cfg);
  r.total *= inv;
  r.stft *= inv;
  r.mag *= inv;
  r.phs *= inv;
  r.rec *= inv;
  return r;
}

// ---------------------------------------------------------------- checkpoints & loop

struct Checkpoint {
  ModelConfig model;
  TrainConfig train;
  ParameterSet params;
  AdamState optimizer;
  std::string sampler_state;
  std::uint64_t step = 0;
};

struct StepLog {
  std::uint64_t step;
  StepResult loss;
};

/// Owns the model, optimizer and sampler; resumable from a Checkpoint.
class Trainer {
 public:
  Trainer(const ModelConfig& model, const TrainConfig& cfg, std::size_t dataset_size)
      : net_(BinauralNet::create(model)),
        opt_(AdamState::zeros_like(net_.params)),
        sampler_(dataset_size, cfg.seed),
        cfg_(cfg) {
    cfg_.validate();
    if (dataset_size == 0) throw UsageError("trainer: empty dataset");
  }

  explicit Trainer(const Checkpoint& ck)
      : net_{ck.model, ck.params},
        opt_(ck.optimizer),
        sampler_(Sampler::from_state(ck.sampler_state)),
        cfg_(ck.train),
        step_(ck.step) {
    cfg_.validate();
  }

  StepResult step(const std::vector<Example>& data) {
    if (data.size() != sampler_.dataset_size())
      throw UsageError("trainer: dataset size changed from " + std::to_string(sampler_.dataset_size()) + " to " +
                       std::to_string(data.size()));
    std::vector<const Example*> batch;
    for (auto i : sampler_.next_batch(cfg_.batch_size)) batch.push_back(&data[i]);
    auto r = train_step(net_, opt_, batch, cfg_);
    ++step_;
    return r;
  }

  /// Trains until `until_step` total steps have been taken.
  void run(const std::vector<Example>& data, std::uint64_t until_step,
           const std::function<void(const StepLog&)>& on_step = {}) {
    while (step_ < until_step) {
      auto r = step(data);
      if (on_step) on_step({step_, r});
    }
  }

  Checkpoint checkpoint() const { return {net_.config, cfg_, net_.params, opt_, sampler_.state(), step_}; }

  const BinauralNet& net() const { return net_; }
  BinauralNet& net() { return net_; }
  std::uint64_t steps_taken() const { return step_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  BinauralNet net_;
  AdamState opt_;
  Sampler sampler_;
  TrainConfig cfg_;
  std::uint64_t step_ = 0;
};

}  // namespace binaural::train
