#pragma once

// Central finite-difference verification of tape gradients.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "binaural/grad/params.hpp"
#include "binaural/grad/tape.hpp"

namespace binaural::grad {

/// A scalar-valued program of the parameters, rebuilt on a fresh tape per call.
using Program = std::function<Var(Tape&, const BoundParameters&)>;

struct GradCheckOptions {
  double step = 1e-5;
  std::size_t min_coordinates = 100;
  std::size_t per_tensor = 4;  // coordinates guaranteed per parameter tensor
  /// Denominator floor for the relative error, so coordinates whose true
  /// derivative is ~0 are compared absolutely at this scale.
  double floor = 1e-4;
  std::uint64_t seed = 7;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;  // compared coordinates
  std::size_t kink_skipped = 0;  // stencils that crossed a ReLU-family kink
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline double evaluate(const Program& f, const ParameterSet& params) {
  Tape tape;
  BoundParameters bound(tape, params, /*trainable=*/false);
  return f(tape, bound).value().item();
}

struct Evaluation {
  double value;
  std::uint64_t kink_signature;  // hash of the on/off pattern of every relu/leaky_relu unit
};

inline Evaluation evaluate_with_signature(const Program& f, const ParameterSet& params) {
  Tape tape;
  BoundParameters bound(tape, params, false);
  const double v = f(tape, bound).value().item();
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < tape.size(); ++i) {
    const std::string_view op = tape.op_name(i);
    if (op != "relu" && op != "leaky_relu") continue;
    for (double y : tape.value(i).data) h = (h ^ (y > 0.0 ? 0x9dU : 0x3bU)) * 1099511628211ULL;
  }
  return {v, h};
}

/// Compares backward() against (f(θ+h e) - f(θ-h e)) / 2h on sampled coordinates.
/// Stencils that flip any relu/leaky_relu unit are skipped and counted.
inline GradCheckResult check_gradients(const Program& f, ParameterSet params, const GradCheckOptions& opt = {}) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    BoundParameters bound(tape, params);
    Var loss = f(tape, bound);
    tape.backward(loss);
    analytic = bound.gradients();
  }

  std::mt19937_64 rng(opt.seed);
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  std::size_t total = 0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const std::size_t n = params.tensor(p).size();
    total += n;
    for (std::size_t k = 0; k < std::min(n, opt.per_tensor); ++k) coords.emplace_back(p, rng() % n);
  }
  const std::size_t target = std::min(total, std::max(opt.min_coordinates, coords.size()));
  while (coords.size() < target) {
    std::size_t flat = rng() % total;
    std::size_t p = 0;
    while (flat >= params.tensor(p).size()) flat -= params.tensor(p++).size();
    coords.emplace_back(p, flat);
  }

  GradCheckResult result;
  const std::uint64_t base = evaluate_with_signature(f, params).kink_signature;
  for (auto [p, i] : coords) {
    double& theta = params.tensor(p)[i];
    const double saved = theta;
    theta = saved + opt.step;
    const Evaluation plus = evaluate_with_signature(f, params);
    theta = saved - opt.step;
    const Evaluation minus = evaluate_with_signature(f, params);
    theta = saved;
    if (plus.kink_signature != base || minus.kink_signature != base) {
      ++result.kink_skipped;
      continue;
    }
    ++result.coordinates;
    const double numeric = (plus.value - minus.value) / (2.0 * opt.step);
    const double a = analytic[p][i];
    const double err = relative_error(a, numeric, opt.floor);
    if (err >= result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_parameter = params.name(p);
      result.worst_index = i;
      result.worst_analytic = a;
      result.worst_numeric = numeric;
    }
  }
  return result;
}

}  // namespace binaural::grad
