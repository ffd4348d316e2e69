#pragma once

// Finite-difference checks for every tape primitive and for the full
// four-term training loss on a small network.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "binaural/grad/check.hpp"
#include "binaural/grad/ops.hpp"
#include "binaural/dsp.hpp"
#include "binaural/net/model.hpp"
#include "binaural/scene.hpp"

namespace binaural::grad {

struct GradCase {
  std::string name;
  ParameterSet inputs;
  Program program;
};

struct GradCaseResult {
  std::string name;
  GradCheckResult check;
};

namespace detail {

class CaseBuilder {
 public:
  explicit CaseBuilder(std::uint64_t seed) : rng_(seed) {}

  /// Uniform in [lo, hi], optionally pushed at least `gap` away from zero.
  Tensor uniform(Shape shape, double lo, double hi, double gap = 0.0) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& v : t.data) {
      do v = u(rng_);
      while (std::abs(v) < gap);
    }
    return t;
  }

 private:
  std::mt19937_64 rng_;
};

/// sum(op(x) * w) with a fixed random weight so every output element matters.
inline Var contract(Tape& tape, Var y, std::uint64_t seed) {
  CaseBuilder b(seed);
  return sum(mul(y, tape.constant(b.uniform(y.shape(), -1.0, 1.0))));
}

}  // namespace detail

inline std::vector<GradCase> primitive_cases(std::uint64_t seed = 11) {
  detail::CaseBuilder b(seed);
  std::vector<GradCase> cases;
  auto unary = [&](std::string name, double lo, double hi, double gap, std::function<Var(Var)> op) {
    ParameterSet p;
    p.add("x", b.uniform({3, 5}, lo, hi, gap));
    cases.push_back({std::move(name), std::move(p), [op](Tape& t, const BoundParameters& q) {
                       return detail::contract(t, op(q["x"]), 101);
                     }});
  };
  auto binary = [&](std::string name, double lo, double hi, double gap, std::function<Var(Var, Var)> op) {
    ParameterSet p;
    p.add("a", b.uniform({4, 3}, -1.5, 1.5));
    p.add("b", b.uniform({4, 3}, lo, hi, gap));
    cases.push_back({std::move(name), std::move(p), [op](Tape& t, const BoundParameters& q) {
                       return detail::contract(t, op(q["a"], q["b"]), 102);
                     }});
  };

  binary("add", -1.5, 1.5, 0.0, [](Var a, Var c) { return add(a, c); });
  binary("sub", -1.5, 1.5, 0.0, [](Var a, Var c) { return sub(a, c); });
  binary("mul", -1.5, 1.5, 0.0, [](Var a, Var c) { return mul(a, c); });
  binary("div", -2.0, 2.0, 0.5, [](Var a, Var c) { return div(a, c); });
  binary("atan2", -2.0, 2.0, 0.3, [](Var y, Var x) { return atan2(y, x); });
  unary("mul_scalar", -2, 2, 0, [](Var x) { return mul_scalar(x, -1.7); });
  unary("add_scalar", -2, 2, 0, [](Var x) { return add_scalar(x, 0.3); });
  unary("square", -2, 2, 0, [](Var x) { return square(x); });
  unary("sqrt", 0.2, 3, 0, [](Var x) { return sqrt(x); });
  unary("cos", -4, 4, 0, [](Var x) { return cos(x); });
  unary("sin", -4, 4, 0, [](Var x) { return sin(x); });
  unary("tanh", -3, 3, 0, [](Var x) { return tanh(x); });
  unary("sigmoid", -4, 4, 0, [](Var x) { return sigmoid(x); });
  unary("relu", -2, 2, 0.05, [](Var x) { return relu(x); });
  unary("leaky_relu", -2, 2, 0.05, [](Var x) { return leaky_relu(x, 0.2); });
  unary("gelu", -3, 3, 0, [](Var x) { return gelu(x); });
  unary("sum", -2, 2, 0, [](Var x) { return mul(sum(x), sum(x)); });
  unary("mean", -2, 2, 0, [](Var x) { return square(mean(x)); });
  unary("reshape", -2, 2, 0, [](Var x) { return reshape(x, {5, 3}); });
  unary("transpose", -2, 2, 0, [](Var x) { return transpose(x); });
  unary("slice", -2, 2, 0, [](Var x) { return slice(x, 1, 1, 3); });
  unary("softmax_rows", -2, 2, 0, [](Var x) { return softmax(x, 1); });
  unary("softmax_cols", -2, 2, 0, [](Var x) { return softmax(x, 0); });
  unary("l2_normalize", -2, 2, 0, [](Var x) { return l2_normalize(x); });

  {
    ParameterSet p;
    p.add("a", b.uniform({2, 3}, -1, 1));
    p.add("b", b.uniform({4, 3}, -1, 1));
    cases.push_back({"concat", std::move(p), [](Tape& t, const BoundParameters& q) {
                       Var c0 = concat({q["a"], q["b"]}, 0);
                       Var c1 = concat({transpose(q["a"]), transpose(q["b"]), transpose(q["a"])}, 1);
                       return add(detail::contract(t, c0, 103), detail::contract(t, c1, 104));
                     }});
  }
  {
    ParameterSet p;
    p.add("v", b.uniform({5}, -1, 1));
    cases.push_back({"expand_rows", std::move(p), [](Tape& t, const BoundParameters& q) {
                       return detail::contract(t, expand_rows(q["v"], 3), 105);
                     }});
  }
  {
    ParameterSet p;
    p.add("a", b.uniform({3, 4}, -1, 1));
    p.add("b", b.uniform({4, 5}, -1, 1));
    cases.push_back({"matmul", std::move(p), [](Tape& t, const BoundParameters& q) {
                       return detail::contract(t, matmul(q["a"], q["b"]), 106);
                     }});
  }
  for (std::size_t stride : {1, 2}) {
    ParameterSet p;
    p.add("x", b.uniform({2, 6, 5}, -1, 1));
    p.add("w", b.uniform({3, 2, 3, 3}, -0.5, 0.5));
    p.add("b", b.uniform({3}, -0.5, 0.5));
    cases.push_back({"conv2d_s" + std::to_string(stride), std::move(p), [stride](Tape& t, const BoundParameters& q) {
                       return detail::contract(t, conv2d(q["x"], q["w"], q["b"], stride, 1), 107);
                     }});
  }
  {
    ParameterSet p;
    p.add("x", b.uniform({3, 3, 4}, -1, 1));
    p.add("w", b.uniform({3, 2, 4, 4}, -0.5, 0.5));
    p.add("b", b.uniform({2}, -0.5, 0.5));
    cases.push_back({"conv_transpose2d", std::move(p), [](Tape& t, const BoundParameters& q) {
                       return detail::contract(t, conv_transpose2d(q["x"], q["w"], q["b"], 2, 1), 108);
                     }});
  }
  for (auto [oh, ow] : {std::pair<std::size_t, std::size_t>{7, 9}, {2, 3}}) {
    ParameterSet p;
    p.add("x", b.uniform({2, 4, 5}, -1, 1));
    cases.push_back({"resize_bilinear_" + std::to_string(oh) + "x" + std::to_string(ow), std::move(p),
                     [oh, ow](Tape& t, const BoundParameters& q) {
                       return detail::contract(t, resize_bilinear(q["x"], oh, ow), 109);
                     }});
  }
  {
    ParameterSet p;
    p.add("x", b.uniform({3, 6}, -2, 2));
    p.add("gamma", b.uniform({6}, 0.5, 1.5));
    p.add("beta", b.uniform({6}, -0.5, 0.5));
    cases.push_back({"layer_norm", std::move(p), [](Tape& t, const BoundParameters& q) {
                       return detail::contract(t, layer_norm(q["x"], q["gamma"], q["beta"]), 110);
                     }});
  }
  return cases;
}

/// Small network whose shapes still exercise every layer type.
inline net::ModelConfig gradcheck_model_config() {
  net::ModelConfig cfg;
  cfg.base_width = 2;
  cfg.image_height = 16;
  cfg.image_width = 16;
  cfg.patch_size = 8;
  cfg.view_embed = 4;
  cfg.view_blocks = 4;
  cfg.stft.fft_size = 64;
  cfg.stft.hop = 16;
  cfg.init_seed = 5;
  return cfg;
}

/// The four-term loss of the full network on one rendered scene, as a program
/// of its parameters.
inline GradCase full_model_case(const net::ModelConfig& cfg = gradcheck_model_config(), std::uint64_t seed = 13) {
  GeneratorConfig gen;
  gen.image_height = cfg.image_height;
  gen.image_width = cfg.image_width;
  gen.clip_length = cfg.stft.hop * 19 + cfg.stft.fft_size;
  const RenderedSample s = render_sample(random_scene(seed, gen));
  auto [mix_wave, diff_wave] = mix_and_diff(s.binaural.left(), s.binaural.right());
  const Tensor mix = net::spectrogram_tensor(stft(mix_wave, cfg.stft));
  const net::Target target = net::make_target(net::spectrogram_tensor(stft(diff_wave, cfg.stft)));

  detail::CaseBuilder b(seed);
  GradCase c{"full_model_loss", net::init_parameters(cfg), {}};
  // Zero-initialized biases put LeakyReLU exactly on its kink over padded frames.
  for (std::size_t i = 0; i < c.inputs.size(); ++i) {
    Tensor& w = c.inputs.tensor(i);
    const Tensor jitter = b.uniform(w.shape, -0.05, 0.05);
    for (std::size_t j = 0; j < w.size(); ++j) w[j] += jitter[j];
  }
  c.program = [=, image = s.image, depth = s.depth_map](Tape& tape, const BoundParameters& p) {
    const auto out = net::forward(tape, p, mix, image, depth, cfg);
    return net::compute_losses(tape, out, target, {}).total;
  };
  return c;
}

inline GradCaseResult run_case(const GradCase& c, const GradCheckOptions& opt = {}) {
  return {c.name, check_gradients(c.program, c.inputs, opt)};
}

}  // namespace binaural::grad
