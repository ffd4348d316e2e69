#pragma once

// Differentiable primitives. Each op computes its forward value eagerly,
// records it on the operands' tape, and registers a closure that pushes the
// upstream gradient to its inputs. Shapes must match exactly; the only
// broadcasting is scalar-tensor (mul_scalar/add_scalar) and expand_rows.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "binaural/errors.hpp"
#include "binaural/grad/kernels.hpp"
#include "binaural/grad/tape.hpp"
#include "binaural/grad/tensor.hpp"

namespace binaural::grad {

namespace detail {

inline Tape& tape_of(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) throw UsageError("operands live on different tapes");
  return *a.tape;
}

inline void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape)
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape) + " vs " + to_string(b.shape));
}

inline void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + to_string(a.shape));
}

/// Splits a shape around `axis` into outer * len * inner.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape));
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename F, typename D>
Var unary(const char* name, Var a, F f, D dfdx) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  Tensor y(x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return t.record(name, std::move(y), t.needs_grad(a), [ia = a.id, dfdx](Tape& tp, std::size_t self) {
    const Tensor& xv = tp.value(ia);
    const Tensor& yv = tp.value(self);
    const Tensor& g = tp.grad(self);
    Tensor& gx = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * dfdx(xv[i], yv[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

inline Var add(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  detail::require_same_shape("add", x, y);
  Tensor z(x.shape);
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] + y[i];
  return t.record("add", std::move(z), t.needs_grad(a) || t.needs_grad(b),
                  [ia = a.id, ib = b.id](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    for (std::size_t id : {ia, ib}) {
                      if (!tp.needs_grad(id)) continue;
                      Tensor& gi = tp.grad(id);
                      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
                    }
                  });
}

inline Var sub(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  detail::require_same_shape("sub", x, y);
  Tensor z(x.shape);
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] - y[i];
  return t.record("sub", std::move(z), t.needs_grad(a) || t.needs_grad(b),
                  [ia = a.id, ib = b.id](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    if (tp.needs_grad(ia)) {
                      Tensor& ga = tp.grad(ia);
                      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                    }
                    if (tp.needs_grad(ib)) {
                      Tensor& gb = tp.grad(ib);
                      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                    }
                  });
}

inline Var mul(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  detail::require_same_shape("mul", x, y);
  Tensor z(x.shape);
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] * y[i];
  return t.record("mul", std::move(z), t.needs_grad(a) || t.needs_grad(b),
                  [ia = a.id, ib = b.id](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    const Tensor& xv = tp.value(ia);
                    const Tensor& yv = tp.value(ib);
                    if (tp.needs_grad(ia)) {
                      Tensor& ga = tp.grad(ia);
                      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * yv[i];
                    }
                    if (tp.needs_grad(ib)) {
                      Tensor& gb = tp.grad(ib);
                      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * xv[i];
                    }
                  });
}

inline Var div(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  detail::require_same_shape("div", x, y);
  Tensor z(x.shape);
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = x[i] / y[i];
  return t.record("div", std::move(z), t.needs_grad(a) || t.needs_grad(b),
                  [ia = a.id, ib = b.id](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    const Tensor& yv = tp.value(ib);
                    const Tensor& zv = tp.value(self);
                    if (tp.needs_grad(ia)) {
                      Tensor& ga = tp.grad(ia);
                      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / yv[i];
                    }
                    if (tp.needs_grad(ib)) {
                      Tensor& gb = tp.grad(ib);
                      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * zv[i] / yv[i];
                    }
                  });
}

inline Var mul_scalar(Var a, double s) {
  return detail::unary("mul_scalar", a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

inline Var add_scalar(Var a, double s) {
  return detail::unary("add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

inline Var square(Var a) {
  return detail::unary("square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

/// Caller keeps the argument strictly positive.
inline Var sqrt(Var a) {
  return detail::unary("sqrt", a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

inline Var cos(Var a) {
  return detail::unary("cos", a, [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); });
}

inline Var sin(Var a) {
  return detail::unary("sin", a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

inline Var tanh(Var a) {
  return detail::unary("tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(Var a) {
  return detail::unary(
      "sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var relu(Var a) {
  return detail::unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
                       [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var leaky_relu(Var a, double slope = 0.2) {
  return detail::unary("leaky_relu", a, [slope](double x) { return x > 0.0 ? x : slope * x; },
                       [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

/// Exact GELU, x * Phi(x), with Phi written via erfc to keep relative accuracy for x << 0.
inline Var gelu(Var a) {
  return detail::unary(
      "gelu", a, [](double x) { return 0.5 * x * std::erfc(-x / std::numbers::sqrt2); },
      [](double x, double) {
        const double cdf = 0.5 * std::erfc(-x / std::numbers::sqrt2);
        const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + x * pdf;
      });
}

/// Four-quadrant arctangent of (y, x); the (0, 0) point has value and gradient 0.
inline Var atan2(Var y, Var x) {
  Tape& t = detail::tape_of(y, x);
  const Tensor& yv = t.value(y);
  const Tensor& xv = t.value(x);
  detail::require_same_shape("atan2", yv, xv);
  Tensor z(yv.shape);
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = (yv[i] == 0.0 && xv[i] == 0.0) ? 0.0 : std::atan2(yv[i], xv[i]);
  return t.record("atan2", std::move(z), t.needs_grad(y) || t.needs_grad(x),
                  [iy = y.id, ix = x.id](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    const Tensor& yv = tp.value(iy);
                    const Tensor& xv = tp.value(ix);
                    const bool gy = tp.needs_grad(iy), gx = tp.needs_grad(ix);
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      const double r2 = xv[i] * xv[i] + yv[i] * yv[i];
                      if (r2 == 0.0) continue;
                      if (gy) tp.grad(iy)[i] += g[i] * xv[i] / r2;
                      if (gx) tp.grad(ix)[i] -= g[i] * yv[i] / r2;
                    }
                  });
}

// ---------------------------------------------------------------- reductions

inline Var sum(Var a) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  double s = 0.0;
  for (double v : x.data) s += v;
  return t.record("sum", Tensor::scalar(s), t.needs_grad(a), [ia = a.id](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)[0];
    Tensor& gx = tp.grad(ia);
    for (auto& v : gx.data) v += g;
  });
}

inline Var mean(Var a) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  double s = 0.0;
  for (double v : x.data) s += v;
  const double n = static_cast<double>(x.size());
  return t.record("mean", Tensor::scalar(s / n), t.needs_grad(a), [ia = a.id, n](Tape& tp, std::size_t self) {
    const double g = tp.grad(self)[0] / n;
    Tensor& gx = tp.grad(ia);
    for (auto& v : gx.data) v += g;
  });
}

// ---------------------------------------------------------------- layout

inline Var reshape(Var a, Shape shape) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  if (element_count(shape) != x.size())
    throw ShapeError("reshape: cannot view " + to_string(x.shape) + " as " + to_string(shape));
  Tensor y(std::move(shape), x.data);
  return t.record("reshape", std::move(y), t.needs_grad(a), [ia = a.id](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    Tensor& gx = tp.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

/// 2-D transpose.
inline Var transpose(Var a) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  detail::require_rank("transpose", x, 2);
  const std::size_t m = x.dim(0), n = x.dim(1);
  Tensor y({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) y[j * m + i] = x[i * n + j];
  return t.record("transpose", std::move(y), t.needs_grad(a), [ia = a.id, m, n](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    Tensor& gx = tp.grad(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) gx[i * n + j] += g[j * m + i];
  });
}

inline Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  Tape& t = *parts.front().tape;
  const Shape& first = t.value(parts.front()).shape;
  Shape out_shape = first;
  out_shape.at(axis) = 0;
  bool needs = false;
  for (Var p : parts) {
    if (p.tape != &t) throw UsageError("concat: operands live on different tapes");
    const Shape& s = t.value(p).shape;
    if (s.size() != first.size()) throw ShapeError("concat: rank mismatch " + to_string(first) + " vs " + to_string(s));
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != first[d])
        throw ShapeError("concat: shape mismatch " + to_string(first) + " vs " + to_string(s) + " along axis " +
                         std::to_string(axis));
    out_shape[axis] += s[axis];
    needs = needs || t.needs_grad(p);
  }
  const auto split = detail::split_at(out_shape, axis);
  Tensor y(out_shape);
  std::vector<std::size_t> ids, offsets;
  std::size_t offset = 0;
  for (Var p : parts) {
    const Tensor& x = t.value(p);
    const std::size_t len = x.dim(axis);
    for (std::size_t o = 0; o < split.outer; ++o)
      std::copy_n(x.data.begin() + static_cast<long>(o * len * split.inner), len * split.inner,
                  y.data.begin() + static_cast<long>((o * split.len + offset) * split.inner));
    ids.push_back(p.id);
    offsets.push_back(offset);
    offset += len;
  }
  return t.record("concat", std::move(y), needs,
                  [ids, offsets, axis, split](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      if (!tp.needs_grad(ids[k])) continue;
                      Tensor& gx = tp.grad(ids[k]);
                      const std::size_t len = gx.dim(axis);
                      for (std::size_t o = 0; o < split.outer; ++o) {
                        const double* src = g.data.data() + (o * split.len + offsets[k]) * split.inner;
                        double* dst = gx.data.data() + o * len * split.inner;
                        for (std::size_t i = 0; i < len * split.inner; ++i) dst[i] += src[i];
                      }
                    }
                  });
}

/// Contiguous range [begin, begin+length) along `axis`.
inline Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t length) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  const auto split = detail::split_at(x.shape, axis);
  if (length == 0 || begin + length > split.len)
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(begin + length) +
                     ") exceeds axis " + std::to_string(axis) + " of " + to_string(x.shape));
  Shape out_shape = x.shape;
  out_shape[axis] = length;
  Tensor y(out_shape);
  for (std::size_t o = 0; o < split.outer; ++o)
    std::copy_n(x.data.begin() + static_cast<long>((o * split.len + begin) * split.inner), length * split.inner,
                y.data.begin() + static_cast<long>(o * length * split.inner));
  return t.record("slice", std::move(y), t.needs_grad(a),
                  [ia = a.id, split, begin, length](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    Tensor& gx = tp.grad(ia);
                    for (std::size_t o = 0; o < split.outer; ++o) {
                      const double* src = g.data.data() + o * length * split.inner;
                      double* dst = gx.data.data() + (o * split.len + begin) * split.inner;
                      for (std::size_t i = 0; i < length * split.inner; ++i) dst[i] += src[i];
                    }
                  });
}

/// Repeats a length-m vector as the n rows of an [n, m] matrix.
inline Var expand_rows(Var a, std::size_t n) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  detail::require_rank("expand_rows", x, 1);
  const std::size_t m = x.dim(0);
  Tensor y({n, m});
  for (std::size_t i = 0; i < n; ++i) std::copy(x.data.begin(), x.data.end(), y.data.begin() + static_cast<long>(i * m));
  return t.record("expand_rows", std::move(y), t.needs_grad(a), [ia = a.id, n, m](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    Tensor& gx = tp.grad(ia);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) gx[j] += g[i * m + j];
  });
}

// ---------------------------------------------------------------- linear algebra

inline Var matmul(Var a, Var b) {
  Tape& t = detail::tape_of(a, b);
  const Tensor& x = t.value(a);
  const Tensor& y = t.value(b);
  detail::require_rank("matmul", x, 2);
  detail::require_rank("matmul", y, 2);
  if (x.dim(1) != y.dim(0))
    throw ShapeError("matmul: inner extents differ " + to_string(x.shape) + " vs " + to_string(y.shape));
  const std::size_t m = x.dim(0), k = x.dim(1), n = y.dim(1);
  Tensor z({m, n});
  kernels::gemm_nn(m, k, n, x.data.data(), y.data.data(), z.data.data());
  return t.record("matmul", std::move(z), t.needs_grad(a) || t.needs_grad(b),
                  [ia = a.id, ib = b.id, m, k, n](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    if (tp.needs_grad(ia))  // dA = G B^T
                      kernels::gemm_nt(m, n, k, g.data.data(), tp.value(ib).data.data(), tp.grad(ia).data.data());
                    if (tp.needs_grad(ib))  // dB = A^T G
                      kernels::gemm_tn(k, m, n, tp.value(ia).data.data(), g.data.data(), tp.grad(ib).data.data());
                  });
}

/// 2-D convolution of x [C,H,W] with weight [O,C,k,k] and bias [O].
inline Var conv2d(Var x, Var weight, Var bias, std::size_t stride, std::size_t pad) {
  Tape& t = detail::tape_of(x, weight);
  if (bias.tape != &t) throw UsageError("conv2d: bias lives on a different tape");
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(weight);
  const Tensor& bv = t.value(bias);
  detail::require_rank("conv2d input", xv, 3);
  detail::require_rank("conv2d weight", wv, 4);
  if (wv.dim(1) != xv.dim(0) || wv.dim(2) != wv.dim(3))
    throw ShapeError("conv2d: weight " + to_string(wv.shape) + " incompatible with input " + to_string(xv.shape));
  if (bv.shape != Shape{wv.dim(0)})
    throw ShapeError("conv2d: bias " + to_string(bv.shape) + " does not match weight " + to_string(wv.shape));
  const std::size_t k = wv.dim(2);
  if (stride == 0 || xv.dim(1) + 2 * pad < k || xv.dim(2) + 2 * pad < k)
    throw ShapeError("conv2d: kernel " + std::to_string(k) + " larger than padded input " + to_string(xv.shape));
  kernels::ConvGeometry geo{xv.dim(0), xv.dim(1), xv.dim(2), k, stride, pad,
                            (xv.dim(1) + 2 * pad - k) / stride + 1, (xv.dim(2) + 2 * pad - k) / stride + 1};
  const std::size_t out_ch = wv.dim(0);
  std::vector<double> col(geo.rows() * geo.cols());
  kernels::im2col(geo, xv.data.data(), col.data());
  Tensor y({out_ch, geo.out_height, geo.out_width});
  for (std::size_t o = 0; o < out_ch; ++o)
    std::fill_n(y.data.begin() + static_cast<long>(o * geo.cols()), geo.cols(), bv[o]);
  kernels::gemm_nn(out_ch, geo.rows(), geo.cols(), wv.data.data(), col.data(), y.data.data());
  const bool needs = t.needs_grad(x) || t.needs_grad(weight) || t.needs_grad(bias);
  if (!t.needs_grad(weight)) col.clear();
  return t.record("conv2d", std::move(y), needs,
                  [ix = x.id, iw = weight.id, ib = bias.id, geo, out_ch, col = std::move(col)](Tape& tp,
                                                                                              std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    const std::size_t hw = geo.cols();
                    if (tp.needs_grad(ib)) {
                      Tensor& gb = tp.grad(ib);
                      for (std::size_t o = 0; o < out_ch; ++o) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < hw; ++j) s += g[o * hw + j];
                        gb[o] += s;
                      }
                    }
                    if (tp.needs_grad(iw))
                      kernels::gemm_nt(out_ch, hw, geo.rows(), g.data.data(), col.data(), tp.grad(iw).data.data());
                    if (tp.needs_grad(ix)) {
                      std::vector<double> dcol(geo.rows() * hw, 0.0);
                      kernels::gemm_tn(geo.rows(), out_ch, hw, tp.value(iw).data.data(), g.data.data(), dcol.data());
                      kernels::col2im(geo, dcol.data(), tp.grad(ix).data.data());
                    }
                  });
}

/// Transposed ("fractionally strided") convolution of x [Ci,H,W] with weight
/// [Ci,Co,k,k] and bias [Co]. Output extent (in-1)*stride - 2*pad + k.
inline Var conv_transpose2d(Var x, Var weight, Var bias, std::size_t stride, std::size_t pad) {
  Tape& t = detail::tape_of(x, weight);
  if (bias.tape != &t) throw UsageError("conv_transpose2d: bias lives on a different tape");
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(weight);
  const Tensor& bv = t.value(bias);
  detail::require_rank("conv_transpose2d input", xv, 3);
  detail::require_rank("conv_transpose2d weight", wv, 4);
  if (wv.dim(0) != xv.dim(0) || wv.dim(2) != wv.dim(3))
    throw ShapeError("conv_transpose2d: weight " + to_string(wv.shape) + " incompatible with input " +
                     to_string(xv.shape));
  if (bv.shape != Shape{wv.dim(1)})
    throw ShapeError("conv_transpose2d: bias " + to_string(bv.shape) + " does not match weight " + to_string(wv.shape));
  const std::size_t k = wv.dim(2);
  const std::size_t in_ch = xv.dim(0), out_ch = wv.dim(1);
  const long oh = static_cast<long>((xv.dim(1) - 1) * stride + k) - 2 * static_cast<long>(pad);
  const long ow = static_cast<long>((xv.dim(2) - 1) * stride + k) - 2 * static_cast<long>(pad);
  if (stride == 0 || oh <= 0 || ow <= 0)
    throw ShapeError("conv_transpose2d: empty output for input " + to_string(xv.shape));
  // The image side of the geometry is the output; the column side is the input grid.
  kernels::ConvGeometry geo{out_ch, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow), k, stride, pad,
                            xv.dim(1), xv.dim(2)};
  std::vector<double> col(geo.rows() * geo.cols(), 0.0);
  kernels::gemm_tn(geo.rows(), in_ch, geo.cols(), wv.data.data(), xv.data.data(), col.data());
  Tensor y({out_ch, geo.height, geo.width});
  const std::size_t plane = geo.height * geo.width;
  for (std::size_t o = 0; o < out_ch; ++o) std::fill_n(y.data.begin() + static_cast<long>(o * plane), plane, bv[o]);
  kernels::col2im(geo, col.data(), y.data.data());
  const bool needs = t.needs_grad(x) || t.needs_grad(weight) || t.needs_grad(bias);
  return t.record("conv_transpose2d", std::move(y), needs,
                  [ix = x.id, iw = weight.id, ib = bias.id, geo, in_ch, out_ch](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    const std::size_t plane = geo.height * geo.width;
                    if (tp.needs_grad(ib)) {
                      Tensor& gb = tp.grad(ib);
                      for (std::size_t o = 0; o < out_ch; ++o) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < plane; ++j) s += g[o * plane + j];
                        gb[o] += s;
                      }
                    }
                    if (!tp.needs_grad(ix) && !tp.needs_grad(iw)) return;
                    std::vector<double> dcol(geo.rows() * geo.cols());
                    kernels::im2col(geo, g.data.data(), dcol.data());
                    if (tp.needs_grad(ix))
                      kernels::gemm_nn(in_ch, geo.rows(), geo.cols(), tp.value(iw).data.data(), dcol.data(),
                                       tp.grad(ix).data.data());
                    if (tp.needs_grad(iw))
                      kernels::gemm_nt(in_ch, geo.cols(), geo.rows(), tp.value(ix).data.data(), dcol.data(),
                                       tp.grad(iw).data.data());
                  });
}

// ---------------------------------------------------------------- resampling

namespace detail {

struct LerpTap {
  std::size_t lo, hi;
  double w;  // weight of hi
};

/// Half-pixel-centre source coordinates, clamped to the input range.
inline std::vector<LerpTap> lerp_taps(std::size_t in, std::size_t out) {
  std::vector<LerpTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    const std::size_t hi = std::min(lo + 1, in - 1);
    taps[i] = {lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace detail

/// Bilinear resize of the two trailing axes of x [C,H,W] to [C,out_h,out_w].
inline Var resize_bilinear(Var a, std::size_t out_h, std::size_t out_w) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  detail::require_rank("resize_bilinear", x, 3);
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (out_h == 0 || out_w == 0) throw ShapeError("resize_bilinear: empty target size");
  const auto ty = detail::lerp_taps(h, out_h);
  const auto tx = detail::lerp_taps(w, out_w);
  Tensor y({c, out_h, out_w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = x.data.data() + ch * h * w;
    double* dst = y.data.data() + ch * out_h * out_w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const auto& a_ = ty[i];
      for (std::size_t j = 0; j < out_w; ++j) {
        const auto& b_ = tx[j];
        const double top = (1.0 - b_.w) * src[a_.lo * w + b_.lo] + b_.w * src[a_.lo * w + b_.hi];
        const double bot = (1.0 - b_.w) * src[a_.hi * w + b_.lo] + b_.w * src[a_.hi * w + b_.hi];
        dst[i * out_w + j] = (1.0 - a_.w) * top + a_.w * bot;
      }
    }
  }
  return t.record("resize_bilinear", std::move(y), t.needs_grad(a),
                  [ia = a.id, c, h, w, out_h, out_w, ty, tx](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    Tensor& gx = tp.grad(ia);
                    for (std::size_t ch = 0; ch < c; ++ch) {
                      const double* src = g.data.data() + ch * out_h * out_w;
                      double* dst = gx.data.data() + ch * h * w;
                      for (std::size_t i = 0; i < out_h; ++i) {
                        const auto& a_ = ty[i];
                        for (std::size_t j = 0; j < out_w; ++j) {
                          const auto& b_ = tx[j];
                          const double v = src[i * out_w + j];
                          dst[a_.lo * w + b_.lo] += (1.0 - a_.w) * (1.0 - b_.w) * v;
                          dst[a_.lo * w + b_.hi] += (1.0 - a_.w) * b_.w * v;
                          dst[a_.hi * w + b_.lo] += a_.w * (1.0 - b_.w) * v;
                          dst[a_.hi * w + b_.hi] += a_.w * b_.w * v;
                        }
                      }
                    }
                  });
}

// ---------------------------------------------------------------- normalization

inline Var softmax(Var a, std::size_t axis) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  const auto s = detail::split_at(x.shape, axis);
  Tensor y(x.shape);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mx = x[base];
      for (std::size_t l = 1; l < s.len; ++l) mx = std::max(mx, x[base + l * s.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < s.len; ++l) {
        const double e = std::exp(x[base + l * s.inner] - mx);
        y[base + l * s.inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < s.len; ++l) y[base + l * s.inner] /= z;
    }
  }
  return t.record("softmax", std::move(y), t.needs_grad(a), [ia = a.id, s](Tape& tp, std::size_t self) {
    const Tensor& g = tp.grad(self);
    const Tensor& yv = tp.value(self);
    Tensor& gx = tp.grad(ia);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.len * s.inner + in;
        double dot = 0.0;
        for (std::size_t l = 0; l < s.len; ++l) dot += g[base + l * s.inner] * yv[base + l * s.inner];
        for (std::size_t l = 0; l < s.len; ++l) {
          const std::size_t i = base + l * s.inner;
          gx[i] += yv[i] * (g[i] - dot);
        }
      }
    }
  });
}

/// Normalizes each row of x [n, e] to zero mean and unit variance, then applies gamma/beta [e].
inline Var layer_norm(Var a, Var gamma, Var beta, double eps = 1e-5) {
  Tape& t = detail::tape_of(a, gamma);
  if (beta.tape != &t) throw UsageError("layer_norm: beta lives on a different tape");
  const Tensor& x = t.value(a);
  detail::require_rank("layer_norm", x, 2);
  const std::size_t n = x.dim(0), e = x.dim(1);
  if (t.value(gamma).shape != Shape{e} || t.value(beta).shape != Shape{e})
    throw ShapeError("layer_norm: affine parameters must have shape [" + std::to_string(e) + "]");
  const Tensor& gv = t.value(gamma);
  const Tensor& bv = t.value(beta);
  Tensor y(x.shape);
  std::vector<double> xhat(x.size()), inv_std(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = x.data.data() + r * e;
    double mu = 0.0;
    for (std::size_t j = 0; j < e; ++j) mu += row[j];
    mu /= static_cast<double>(e);
    double var = 0.0;
    for (std::size_t j = 0; j < e; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(e);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < e; ++j) {
      xhat[r * e + j] = (row[j] - mu) * inv_std[r];
      y[r * e + j] = gv[j] * xhat[r * e + j] + bv[j];
    }
  }
  const bool needs = t.needs_grad(a) || t.needs_grad(gamma) || t.needs_grad(beta);
  return t.record("layer_norm", std::move(y), needs,
                  [ia = a.id, ig = gamma.id, ib = beta.id, n, e, xhat = std::move(xhat),
                   inv_std = std::move(inv_std)](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    const Tensor& gv = tp.value(ig);
                    if (tp.needs_grad(ig)) {
                      Tensor& gg = tp.grad(ig);
                      for (std::size_t i = 0; i < g.size(); ++i) gg[i % e] += g[i] * xhat[i];
                    }
                    if (tp.needs_grad(ib)) {
                      Tensor& gb = tp.grad(ib);
                      for (std::size_t i = 0; i < g.size(); ++i) gb[i % e] += g[i];
                    }
                    if (!tp.needs_grad(ia)) return;
                    Tensor& gx = tp.grad(ia);
                    const double inv_e = 1.0 / static_cast<double>(e);
                    for (std::size_t r = 0; r < n; ++r) {
                      double m1 = 0.0, m2 = 0.0;
                      for (std::size_t j = 0; j < e; ++j) {
                        const double dxh = g[r * e + j] * gv[j];
                        m1 += dxh;
                        m2 += dxh * xhat[r * e + j];
                      }
                      m1 *= inv_e;
                      m2 *= inv_e;
                      for (std::size_t j = 0; j < e; ++j) {
                        const double dxh = g[r * e + j] * gv[j];
                        gx[r * e + j] += inv_std[r] * (dxh - m1 - xhat[r * e + j] * m2);
                      }
                    }
                  });
}

/// Scales every column x(:, j) of x [C, ...] to unit L2 norm: x / sqrt(|x|^2 + eps).
inline Var l2_normalize(Var a, double eps = 1e-12) {
  Tape& t = *a.tape;
  const Tensor& x = t.value(a);
  if (x.rank() < 2) throw ShapeError("l2_normalize: expected [C, ...], got " + to_string(x.shape));
  const std::size_t c = x.dim(0), cols = x.size() / c;
  std::vector<double> inv_norm(cols, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t j = 0; j < cols; ++j) inv_norm[j] += x[ch * cols + j] * x[ch * cols + j];
  for (auto& v : inv_norm) v = 1.0 / std::sqrt(v + eps);
  Tensor y(x.shape);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t j = 0; j < cols; ++j) y[ch * cols + j] = x[ch * cols + j] * inv_norm[j];
  return t.record("l2_normalize", std::move(y), t.needs_grad(a),
                  [ia = a.id, c, cols, inv_norm = std::move(inv_norm)](Tape& tp, std::size_t self) {
                    const Tensor& g = tp.grad(self);
                    const Tensor& yv = tp.value(self);
                    Tensor& gx = tp.grad(ia);
                    std::vector<double> dot(cols, 0.0);
                    for (std::size_t ch = 0; ch < c; ++ch)
                      for (std::size_t j = 0; j < cols; ++j) dot[j] += g[ch * cols + j] * yv[ch * cols + j];
                    for (std::size_t ch = 0; ch < c; ++ch)
                      for (std::size_t j = 0; j < cols; ++j) {
                        const std::size_t i = ch * cols + j;
                        gx[i] += (g[i] - yv[i] * dot[j]) * inv_norm[j];
                      }
                  });
}

}  // namespace binaural::grad
