#pragma once

#include <fftw3.h>

#include <complex>
#include <cstddef>
#include <mutex>
#include <vector>

#include "error.hpp"

namespace cwf {

using cplx = std::complex<double>;

namespace detail {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

/// In-place batched 1-D DFT along one axis of a row-major array.
/// The plan is created once and may be executed on any buffer with the same layout.
class FftPlan {
 public:
  FftPlan() = default;

  FftPlan(std::size_t n, std::size_t howmany, std::size_t stride, std::size_t dist, int sign)
      : n_(n), howmany_(howmany), stride_(stride), dist_(dist) {
    const std::size_t span = (howmany - 1) * dist + (n - 1) * stride + 1;
    std::vector<cplx> scratch(span);
    auto* buf = reinterpret_cast<fftw_complex*>(scratch.data());
    int nn = static_cast<int>(n);
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    plan_ = fftw_plan_many_dft(1, &nn, static_cast<int>(howmany), buf, nullptr,
                               static_cast<int>(stride), static_cast<int>(dist), buf, nullptr,
                               static_cast<int>(stride), static_cast<int>(dist), sign,
                               FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (plan_ == nullptr) throw NumericalError("fftw: plan creation failed");
  }

  FftPlan(const FftPlan&) = delete;
  FftPlan& operator=(const FftPlan&) = delete;
  FftPlan(FftPlan&& o) noexcept { swap(o); }
  FftPlan& operator=(FftPlan&& o) noexcept {
    swap(o);
    return *this;
  }
  ~FftPlan() {
    if (plan_ != nullptr) {
      std::lock_guard<std::mutex> lock(fftw_planner_mutex());
      fftw_destroy_plan(plan_);
    }
  }

  // fftw_execute_dft is thread-safe for distinct buffers.
  void execute(cplx* data) const {
    auto* p = reinterpret_cast<fftw_complex*>(data);
    fftw_execute_dft(plan_, p, p);
  }

  std::size_t size() const { return n_; }

 private:
  void swap(FftPlan& o) noexcept {
    std::swap(plan_, o.plan_);
    std::swap(n_, o.n_);
    std::swap(howmany_, o.howmany_);
    std::swap(stride_, o.stride_);
    std::swap(dist_, o.dist_);
  }

  fftw_plan plan_ = nullptr;
  std::size_t n_ = 0, howmany_ = 0, stride_ = 0, dist_ = 0;
};

/// Forward/backward pair for one axis of an (n_rows x n_cols) row-major array.
struct AxisFft {
  FftPlan forward;
  FftPlan backward;

  static AxisFft rows(std::size_t n_rows, std::size_t n_cols) {
    // transform along the contiguous (second) axis
    return {FftPlan(n_cols, n_rows, 1, n_cols, FFTW_FORWARD),
            FftPlan(n_cols, n_rows, 1, n_cols, FFTW_BACKWARD)};
  }
  static AxisFft columns(std::size_t n_rows, std::size_t n_cols) {
    return {FftPlan(n_rows, n_cols, n_cols, 1, FFTW_FORWARD),
            FftPlan(n_rows, n_cols, n_cols, 1, FFTW_BACKWARD)};
  }
};

/// Angular wavenumbers in FFT order for n points with spacing dx.
inline std::vector<double> fft_wavenumbers(std::size_t n, double dx) {
  std::vector<double> k(n);
  const double dk = 2.0 * 3.14159265358979323846 / (static_cast<double>(n) * dx);
  for (std::size_t i = 0; i < n; ++i) {
    const auto si = static_cast<long long>(i);
    const auto sn = static_cast<long long>(n);
    k[i] = dk * static_cast<double>(si < sn / 2 ? si : si - sn);
  }
  return k;
}

}  // namespace detail
}  // namespace cwf
