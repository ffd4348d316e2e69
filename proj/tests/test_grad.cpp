#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "binaural/grad/check.hpp"
#include "binaural/grad/ops.hpp"
#include "binaural/grad/suite.hpp"

using namespace binaural;
using namespace binaural::grad;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = u(rng);
  return t;
}

void expect_close(const Tensor& got, const Tensor& want, double rel = 1e-10) {
  ASSERT_EQ(got.shape, want.shape);
  double scale = 0;
  for (double v : want.data) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], rel * std::max(scale, 1.0)) << "at " << i;
}

// Nested-loop oracles.

Tensor conv_oracle(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t s, std::size_t p) {
  const std::size_t c = x.dim(0), h = x.dim(1), wd = x.dim(2), o = w.dim(0), k = w.dim(2);
  const std::size_t oh = (h + 2 * p - k) / s + 1, ow = (wd + 2 * p - k) / s + 1;
  Tensor y({o, oh, ow});
  for (std::size_t oc = 0; oc < o; ++oc)
    for (std::size_t r = 0; r < oh; ++r)
      for (std::size_t q = 0; q < ow; ++q) {
        double acc = b[oc];
        for (std::size_t ic = 0; ic < c; ++ic)
          for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j) {
              const long yy = long(r * s + i) - long(p), xx = long(q * s + j) - long(p);
              if (yy < 0 || xx < 0 || yy >= long(h) || xx >= long(wd)) continue;
              acc += w[((oc * c + ic) * k + i) * k + j] * x[(ic * h + yy) * wd + xx];
            }
        y[(oc * oh + r) * ow + q] = acc;
      }
  return y;
}

/// Scatter form: every input pixel paints a kernel-sized patch of the output.
Tensor conv_transpose_oracle(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t s, std::size_t p) {
  const std::size_t ci = x.dim(0), h = x.dim(1), wd = x.dim(2), co = w.dim(1), k = w.dim(2);
  const std::size_t oh = (h - 1) * s + k - 2 * p, ow = (wd - 1) * s + k - 2 * p;
  Tensor y({co, oh, ow});
  for (std::size_t oc = 0; oc < co; ++oc)
    for (std::size_t i = 0; i < oh * ow; ++i) y[oc * oh * ow + i] = b[oc];
  for (std::size_t ic = 0; ic < ci; ++ic)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t q = 0; q < wd; ++q)
        for (std::size_t oc = 0; oc < co; ++oc)
          for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j) {
              const long yy = long(r * s + i) - long(p), xx = long(q * s + j) - long(p);
              if (yy < 0 || xx < 0 || yy >= long(oh) || xx >= long(ow)) continue;
              y[(oc * oh + yy) * ow + xx] += x[(ic * h + r) * wd + q] * w[((ic * co + oc) * k + i) * k + j];
            }
  return y;
}

double source_coord(std::size_t i, std::size_t in, std::size_t out) {
  return std::clamp((i + 0.5) * double(in) / double(out) - 0.5, 0.0, double(in - 1));
}

Tensor resize_oracle(const Tensor& x, std::size_t oh, std::size_t ow) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor y({c, oh, ow});
  auto at = [&](std::size_t ch, long r, long q) {
    r = std::clamp(r, 0L, long(h) - 1);
    q = std::clamp(q, 0L, long(w) - 1);
    return x[(ch * h + r) * w + q];
  };
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t r = 0; r < oh; ++r)
      for (std::size_t q = 0; q < ow; ++q) {
        const double sy = source_coord(r, h, oh), sx = source_coord(q, w, ow);
        const long y0 = long(std::floor(sy)), x0 = long(std::floor(sx));
        const double fy = sy - y0, fx = sx - x0;
        y[(ch * oh + r) * ow + q] = (1 - fy) * ((1 - fx) * at(ch, y0, x0) + fx * at(ch, y0, x0 + 1)) +
                                    fy * ((1 - fx) * at(ch, y0 + 1, x0) + fx * at(ch, y0 + 1, x0 + 1));
      }
  return y;
}

template <typename Op>
Tensor run(const std::vector<Tensor>& inputs, Op op) {
  Tape tape;
  std::vector<Var> vars;
  for (const auto& t : inputs) vars.push_back(tape.constant(t));
  return op(vars).value();
}

}  // namespace

TEST(Forward, ElementwiseMatchesScalarFormulas) {
  const auto a = random_tensor({3, 4}, 1), b = random_tensor({3, 4}, 2, 0.5, 2.0);
  struct Case {
    const char* name;
    std::function<Var(std::vector<Var>&)> op;
    std::function<double(double, double)> f;
  };
  const std::vector<Case> cases{
      {"add", [](auto& v) { return add(v[0], v[1]); }, [](double x, double y) { return x + y; }},
      {"sub", [](auto& v) { return sub(v[0], v[1]); }, [](double x, double y) { return x - y; }},
      {"mul", [](auto& v) { return mul(v[0], v[1]); }, [](double x, double y) { return x * y; }},
      {"div", [](auto& v) { return div(v[0], v[1]); }, [](double x, double y) { return x / y; }},
      {"atan2", [](auto& v) { return atan2(v[0], v[1]); }, [](double x, double y) { return std::atan2(x, y); }},
      {"tanh", [](auto& v) { return tanh(v[0]); }, [](double x, double) { return std::tanh(x); }},
      {"sigmoid", [](auto& v) { return sigmoid(v[0]); }, [](double x, double) { return 1 / (1 + std::exp(-x)); }},
      {"relu", [](auto& v) { return relu(v[0]); }, [](double x, double) { return x > 0 ? x : 0.0; }},
      {"leaky", [](auto& v) { return leaky_relu(v[0], 0.2); }, [](double x, double) { return x > 0 ? x : 0.2 * x; }},
      {"gelu", [](auto& v) { return gelu(v[0]); },
       [](double x, double) { return 0.5 * x * (1 + std::erf(x / std::numbers::sqrt2)); }},
      {"sqrt", [](auto& v) { return grad::sqrt(v[1]); }, [](double, double y) { return std::sqrt(y); }},
      {"square", [](auto& v) { return square(v[0]); }, [](double x, double) { return x * x; }},
      {"cos", [](auto& v) { return grad::cos(v[0]); }, [](double x, double) { return std::cos(x); }},
      {"sin", [](auto& v) { return grad::sin(v[0]); }, [](double x, double) { return std::sin(x); }},
      {"mul_scalar", [](auto& v) { return mul_scalar(v[0], -2.5); }, [](double x, double) { return -2.5 * x; }},
      {"add_scalar", [](auto& v) { return add_scalar(v[0], 0.75); }, [](double x, double) { return x + 0.75; }},
  };
  for (const auto& c : cases) {
    const auto y = run({a, b}, c.op);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(y[i], c.f(a[i], b[i]), 1e-12) << c.name;
  }
}

TEST(Forward, GeluKeepsRelativeAccuracyInTheFarTail) {
  Tape tape;
  const auto y = gelu(tape.constant(Tensor({3}, std::vector<double>{-10, -20, -30}))).value();
  // x * Phi(x) with Phi from the asymptotic Mills ratio series.
  for (std::size_t i = 0; i < 3; ++i) {
    const double x = -10.0 * double(i + 1);
    const double pdf = std::exp(-x * x / 2) / std::sqrt(2 * std::numbers::pi);
    const double phi = pdf / -x * (1 - 1 / (x * x) + 3 / std::pow(x, 4) - 15 / std::pow(x, 6));
    EXPECT_NEAR(y[i] / (x * phi), 1.0, 1e-6);
  }
}

TEST(Forward, MatmulTransposeReductions) {
  const auto a = random_tensor({3, 5}, 3), b = random_tensor({5, 4}, 4);
  const auto y = run({a, b}, [](auto& v) { return matmul(v[0], v[1]); });
  Tensor want({3, 4});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t k = 0; k < 5; ++k) want[i * 4 + j] += a[i * 5 + k] * b[k * 4 + j];
  expect_close(y, want);
  const auto t = run({a}, [](auto& v) { return transpose(v[0]); });
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(t[j * 3 + i], a[i * 5 + j]);
  double s = 0;
  for (double v : a.data) s += v;
  EXPECT_NEAR(run({a}, [](auto& v) { return sum(v[0]); }).item(), s, 1e-12);
  EXPECT_NEAR(run({a}, [](auto& v) { return mean(v[0]); }).item(), s / 15, 1e-12);
}

TEST(Forward, ConvolutionMatchesLoopOracle) {
  for (auto [c, h, w, o, k, s, p] : {std::tuple{1, 6, 6, 2, 3, 1, 1}, {2, 6, 5, 3, 4, 2, 1}, {3, 5, 6, 1, 2, 2, 0},
                                     {2, 4, 4, 2, 1, 1, 0}}) {
    const auto x = random_tensor({std::size_t(c), std::size_t(h), std::size_t(w)}, 10 + k);
    const auto wt = random_tensor({std::size_t(o), std::size_t(c), std::size_t(k), std::size_t(k)}, 20 + k);
    const auto b = random_tensor({std::size_t(o)}, 30 + k);
    const auto y = run({x, wt, b}, [s = s, p = p](auto& v) { return conv2d(v[0], v[1], v[2], s, p); });
    expect_close(y, conv_oracle(x, wt, b, s, p));
  }
}

TEST(Forward, IdentityOneByOneConvolution) {
  const auto x = random_tensor({3, 5, 4}, 5);
  Tensor w({3, 3, 1, 1});
  for (std::size_t i = 0; i < 3; ++i) w[i * 3 + i] = 1.0;
  const auto y = run({x, w, Tensor({3}, 0.0)}, [](auto& v) { return conv2d(v[0], v[1], v[2], 1, 0); });
  EXPECT_EQ(y.data, x.data);
}

TEST(Forward, TransposedConvolutionMatchesScatterOracle) {
  for (auto [ci, h, w, co, k, s, p] : {std::tuple{2, 4, 4, 3, 4, 2, 1}, {1, 3, 5, 2, 3, 1, 1}, {3, 2, 3, 2, 4, 2, 1},
                                       {2, 3, 3, 1, 2, 2, 0}}) {
    const auto x = random_tensor({std::size_t(ci), std::size_t(h), std::size_t(w)}, 40 + k);
    const auto wt = random_tensor({std::size_t(ci), std::size_t(co), std::size_t(k), std::size_t(k)}, 50 + k);
    const auto b = random_tensor({std::size_t(co)}, 60 + k);
    const auto y = run({x, wt, b}, [s = s, p = p](auto& v) { return conv_transpose2d(v[0], v[1], v[2], s, p); });
    expect_close(y, conv_transpose_oracle(x, wt, b, s, p));
  }
  const auto y = run({Tensor({1, 4, 4}, 1.0), Tensor({1, 1, 4, 4}, 1.0), Tensor({1}, 0.0)},
                     [](auto& v) { return conv_transpose2d(v[0], v[1], v[2], 2, 1); });
  EXPECT_EQ(y.shape, (Shape{1, 8, 8}));
}

TEST(Forward, BilinearResize) {
  for (auto [h, w, oh, ow] : {std::tuple{3, 4, 6, 5}, {6, 6, 2, 3}, {1, 5, 3, 2}, {4, 4, 4, 4}}) {
    const auto x = random_tensor({2, std::size_t(h), std::size_t(w)}, h * 10 + w);
    const auto y = run({x}, [oh = oh, ow = ow](auto& v) { return resize_bilinear(v[0], oh, ow); });
    expect_close(y, resize_oracle(x, oh, ow));
    const auto [lo, hi] = std::minmax_element(x.data.begin(), x.data.end());
    for (double v : y.data) {
      EXPECT_GE(v, *lo - 1e-15);
      EXPECT_LE(v, *hi + 1e-15);
    }
  }
  const auto c = run({Tensor({1, 3, 3}, 0.37)}, [](auto& v) { return resize_bilinear(v[0], 7, 2); });
  for (double v : c.data) EXPECT_NEAR(v, 0.37, 1e-15);
}

TEST(Forward, SoftmaxLayerNormL2Normalize) {
  const auto x = random_tensor({3, 4}, 70, -3, 3);
  for (std::size_t axis : {0u, 1u}) {
    const auto y = run({x}, [axis](auto& v) { return softmax(v[0], axis); });
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        double z = 0;
        for (std::size_t l = 0; l < (axis ? 4 : 3); ++l) z += std::exp(axis ? x[i * 4 + l] : x[l * 4 + j]);
        EXPECT_NEAR(y[i * 4 + j], std::exp(x[i * 4 + j]) / z, 1e-12);
      }
  }
  const auto g = random_tensor({4}, 71), b = random_tensor({4}, 72);
  const auto ln = run({x, g, b}, [](auto& v) { return layer_norm(v[0], v[1], v[2]); });
  for (std::size_t i = 0; i < 3; ++i) {
    double mu = 0, var = 0;
    for (std::size_t j = 0; j < 4; ++j) mu += x[i * 4 + j] / 4;
    for (std::size_t j = 0; j < 4; ++j) var += std::pow(x[i * 4 + j] - mu, 2) / 4;
    for (std::size_t j = 0; j < 4; ++j)
      EXPECT_NEAR(ln[i * 4 + j], (x[i * 4 + j] - mu) / std::sqrt(var + 1e-5) * g[j] + b[j], 1e-12);
  }
  const auto x3 = random_tensor({3, 2, 2}, 73);
  const auto n = run({x3}, [](auto& v) { return l2_normalize(v[0]); });
  for (std::size_t j = 0; j < 4; ++j) {
    const double norm = std::sqrt(x3[j] * x3[j] + x3[4 + j] * x3[4 + j] + x3[8 + j] * x3[8 + j] + 1e-12);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(n[c * 4 + j], x3[c * 4 + j] / norm, 1e-12);
  }
}

TEST(Forward, ConcatSliceReshapeExpand) {
  const auto a = random_tensor({2, 3, 2}, 80), b = random_tensor({2, 1, 2}, 81);
  const auto c = run({a, b}, [](auto& v) { return concat({v[0], v[1]}, 1); });
  ASSERT_EQ(c.shape, (Shape{2, 4, 2}));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      for (std::size_t k = 0; k < 2; ++k)
        EXPECT_EQ(c[(i * 4 + j) * 2 + k], j < 3 ? a[(i * 3 + j) * 2 + k] : b[i * 2 + k]);
  const auto s = run({a}, [](auto& v) { return slice(v[0], 1, 1, 2); });
  ASSERT_EQ(s.shape, (Shape{2, 2, 2}));
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      for (std::size_t k = 0; k < 2; ++k) EXPECT_EQ(s[(i * 2 + j) * 2 + k], a[(i * 3 + j + 1) * 2 + k]);
  const auto r = run({a}, [](auto& v) { return reshape(v[0], {3, 4}); });
  EXPECT_EQ(r.data, a.data);
  const auto e = run({Tensor({3}, std::vector<double>{1, 2, 3})}, [](auto& v) { return expand_rows(v[0], 2); });
  EXPECT_EQ(e.data, (std::vector<double>{1, 2, 3, 1, 2, 3}));
}

TEST(Forward, ShapeErrorsNameBothShapes) {
  Tape tape;
  Var a = tape.constant(Tensor({2, 3})), b = tape.constant(Tensor({3, 2}));
  try {
    add(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("[3x2]"), std::string::npos) << msg;
  }
  EXPECT_THROW(matmul(a, a), ShapeError);
  EXPECT_THROW(reshape(a, {4}), ShapeError);
  EXPECT_THROW(concat({a, b}, 0), ShapeError);
  Tape other;
  EXPECT_THROW(add(a, other.constant(Tensor({2, 3}))), UsageError);
}

TEST(Backward, LinearMapGivesOuterProduct) {
  Tape tape;
  const auto w0 = random_tensor({3, 4}, 90), x0 = random_tensor({4, 1}, 91);
  Var w = tape.variable(w0), x = tape.variable(x0);
  tape.backward(sum(matmul(w, x)));
  const auto& gw = tape.grad(w);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(gw[i * 4 + j], x0[j], 1e-15);
  const auto& gx = tape.grad(x);
  for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(gx[j], w0[j] + w0[4 + j] + w0[8 + j], 1e-14);
}

TEST(Backward, ConstantLossAndDeadParameters) {
  ParameterSet ps;
  ps.add("used", random_tensor({3}, 1));
  ps.add("dead", random_tensor({2}, 2));
  Tape tape;
  BoundParameters p(tape, ps);
  tape.backward(sum(tape.constant(Tensor({2}, 1.0))));
  for (const auto& g : p.gradients())
    for (double v : g.data) EXPECT_EQ(v, 0.0);

  Program f = [](Tape&, const BoundParameters& q) { return sum(square(q["used"])); };
  Tape t2;
  BoundParameters p2(t2, ps);
  t2.backward(f(t2, p2));
  const auto grads = p2.gradients();
  for (double v : grads[1].data) EXPECT_EQ(v, 0.0);
  const auto r = check_gradients(f, ps);
  EXPECT_LE(r.max_relative_error, 1e-6);
}

TEST(Backward, NonScalarLossIsUsageError) {
  Tape tape;
  Var x = tape.variable(Tensor({2}, 1.0));
  EXPECT_THROW(tape.backward(x), UsageError);
}

TEST(GradCheck, LinearProgramIsExact) {
  ParameterSet ps;
  ps.add("w", random_tensor({5, 6}, 3));
  const auto c = random_tensor({5, 6}, 4);
  const auto r = check_gradients([&](Tape& t, const BoundParameters& p) { return sum(mul(p["w"], t.constant(c))); },
                                 ps);
  EXPECT_EQ(r.coordinates, 30u);
  // No truncation error for a linear map; what remains is rounding, about eps * |f| / h.
  EXPECT_LE(r.max_relative_error, 1e-8);
}

TEST(GradCheck, EveryPrimitiveWithinTolerance) {
  for (const auto& c : primitive_cases()) {
    const auto r = run_case(c);
    EXPECT_LE(r.check.max_relative_error, 1e-6) << c.name;
    EXPECT_GE(r.check.coordinates, 1u) << c.name;
  }
}

TEST(GradCheck, ThreeLayerNetwork) {
  ParameterSet ps;
  ps.add("w1", random_tensor({8, 5}, 5, -0.8, 0.8));
  ps.add("w2", random_tensor({6, 8}, 6, -0.8, 0.8));
  ps.add("w3", random_tensor({1, 6}, 7, -0.8, 0.8));
  const auto x = random_tensor({5, 4}, 8);
  Program f = [&](Tape& t, const BoundParameters& p) {
    Var h = tanh(matmul(p["w1"], t.constant(x)));
    h = gelu(matmul(p["w2"], h));
    return mean(square(matmul(p["w3"], h)));
  };
  const auto r = check_gradients(f, ps);
  EXPECT_EQ(r.coordinates, 94u);  // fewer than the minimum sample, so every coordinate
  EXPECT_LE(r.max_relative_error, 1e-6);
}

TEST(GradCheck, KinkCrossingsAreSkippedNotCompared) {
  ParameterSet ps;
  ps.add("x", Tensor({4}, std::vector<double>{0.0, 1e-7, -1e-7, 0.5}));
  const auto r = check_gradients([](Tape&, const BoundParameters& p) { return sum(relu(p["x"])); }, ps);
  EXPECT_EQ(r.kink_skipped + r.coordinates, 4u);
  EXPECT_GE(r.kink_skipped, 3u);
  EXPECT_LE(r.max_relative_error, 1e-10);
}

TEST(Determinism, IdenticalInputsGiveBitIdenticalGradients) {
  const auto c = full_model_case();
  auto grads = [&] {
    Tape t;
    BoundParameters p(t, c.inputs);
    t.backward(c.program(t, p));
    return p.gradients();
  };
  const auto a = grads(), b = grads();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].data, b[i].data);
}
