#pragma once

// Thin wrapper over FFTW. Plans are created once per (size, kind) and cached;
// execution goes through the new-array interface so concurrent callers never
// share buffers.

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <map>
#include <mutex>
#include <span>
#include <utility>
#include <vector>

#include "binaural/errors.hpp"

namespace binaural::fft {

namespace detail {

enum class Kind { kR2C, kC2R, kForward, kBackward };

class PlanCache {
 public:
  static PlanCache& instance() {
    static PlanCache cache;
    return cache;
  }

  fftw_plan get(Kind kind, int n) {
    std::lock_guard<std::mutex> lock(mutex_);
    auto key = std::make_pair(static_cast<int>(kind), n);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    // FFTW_UNALIGNED keeps codelet choice independent of buffer alignment,
    // which keeps results bit-reproducible across calls.
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    std::vector<std::complex<double>> cbuf(static_cast<std::size_t>(n) + 1);
    std::vector<std::complex<double>> cbuf2(static_cast<std::size_t>(n) + 1);
    std::vector<double> rbuf(static_cast<std::size_t>(n) + 2);
    auto* c = reinterpret_cast<fftw_complex*>(cbuf.data());
    auto* c2 = reinterpret_cast<fftw_complex*>(cbuf2.data());
    fftw_plan plan = nullptr;
    switch (kind) {
      case Kind::kR2C:
        plan = fftw_plan_dft_r2c_1d(n, rbuf.data(), c, flags);
        break;
      case Kind::kC2R:
        plan = fftw_plan_dft_c2r_1d(n, c, rbuf.data(), flags);
        break;
      case Kind::kForward:
        plan = fftw_plan_dft_1d(n, c, c2, FFTW_FORWARD, flags);
        break;
      case Kind::kBackward:
        plan = fftw_plan_dft_1d(n, c, c2, FFTW_BACKWARD, flags);
        break;
    }
    if (plan == nullptr) throw ConfigError("fftw: could not create plan");
    plans_.emplace(key, plan);
    return plan;
  }

  PlanCache(const PlanCache&) = delete;
  PlanCache& operator=(const PlanCache&) = delete;

 private:
  PlanCache() = default;
  ~PlanCache() {
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

  std::mutex mutex_;
  std::map<std::pair<int, int>, fftw_plan> plans_;
};

}  // namespace detail

/// Real-input DFT, unnormalized: out[k] = sum_n in[n] e^{-2 pi i k n / N}, k = 0..N/2.
inline std::vector<std::complex<double>> rfft(std::span<const double> in) {
  const int n = static_cast<int>(in.size());
  auto plan = detail::PlanCache::instance().get(detail::Kind::kR2C, n);
  std::vector<double> input(in.begin(), in.end());
  std::vector<std::complex<double>> out(in.size() / 2 + 1);
  fftw_execute_dft_r2c(plan, input.data(), reinterpret_cast<fftw_complex*>(out.data()));
  return out;
}

/// Inverse of rfft without the 1/N factor. `bins` must hold n/2+1 values.
inline std::vector<double> irfft_unscaled(std::span<const std::complex<double>> bins, std::size_t n) {
  if (bins.size() != n / 2 + 1) throw ShapeError("irfft: bin count does not match transform size");
  auto plan = detail::PlanCache::instance().get(detail::Kind::kC2R, static_cast<int>(n));
  std::vector<std::complex<double>> input(bins.begin(), bins.end());  // c2r clobbers its input
  std::vector<double> out(n);
  fftw_execute_dft_c2r(plan, reinterpret_cast<fftw_complex*>(input.data()), out.data());
  return out;
}

/// Complex DFT of any length, unnormalized. `inverse` flips the exponent sign.
inline std::vector<std::complex<double>> dft(std::span<const std::complex<double>> in, bool inverse) {
  const int n = static_cast<int>(in.size());
  auto plan = detail::PlanCache::instance().get(inverse ? detail::Kind::kBackward : detail::Kind::kForward, n);
  std::vector<std::complex<double>> input(in.begin(), in.end());
  std::vector<std::complex<double>> out(in.size());
  fftw_execute_dft(plan, reinterpret_cast<fftw_complex*>(input.data()), reinterpret_cast<fftw_complex*>(out.data()));
  return out;
}

}  // namespace binaural::fft
