#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "fft.hpp"

namespace cwf {

inline constexpr double kNormTolerance = 1e-10;

enum class NormTag { normalized, unnormalized };

inline const char* to_string(NormTag t) { return t == NormTag::normalized ? "normalized" : "unnormalized"; }

/// Uniform periodic grid: points x_i = x_min + i*dx, i = 0..n-1 (x_max itself is excluded).
class Grid1D {
 public:
  Grid1D(double x_min, double x_max, std::size_t n_points) : x_min_(x_min), x_max_(x_max), n_(n_points) {
    if (!std::isfinite(x_min) || !std::isfinite(x_max) || !(x_max > x_min)) {
      throw ValidationError("grid: need finite x_max > x_min");
    }
    if (n_points < 8 || (n_points & (n_points - 1)) != 0) {
      throw ValidationError("grid: n_points must be a power of two >= 8, got " + std::to_string(n_points));
    }
    dx_ = (x_max - x_min) / static_cast<double>(n_points);
    if (!(dx_ > 0.0)) throw ValidationError("grid: spacing underflow");
  }

  double min() const { return x_min_; }
  double max() const { return x_max_; }
  std::size_t size() const { return n_; }
  double spacing() const { return dx_; }
  double length() const { return x_max_ - x_min_; }
  double point(std::size_t i) const { return x_min_ + static_cast<double>(i) * dx_; }

  bool contains(double x) const { return x >= x_min_ && x < x_max_; }

  /// Index of the nearest grid point, periodic wrap at the upper edge.
  std::size_t nearest_index(double x) const {
    if (!contains(x)) {
      throw ValidationError("grid: position " + std::to_string(x) + " outside [" + std::to_string(x_min_) +
                            ", " + std::to_string(x_max_) + ")");
    }
    auto i = static_cast<std::size_t>(std::llround((x - x_min_) / dx_));
    return i >= n_ ? i - n_ : i;
  }

  /// Conjugate momentum grid p_m = (m - n/2) dp, dp = 2 pi hbar / (n dx).
  Grid1D conjugate(double hbar = 1.0) const {
    const double dp = 2.0 * std::numbers::pi * hbar / (static_cast<double>(n_) * dx_);
    const double half = 0.5 * static_cast<double>(n_) * dp;
    return Grid1D(-half, half, n_);
  }

  friend bool operator==(const Grid1D& a, const Grid1D& b) {
    return a.n_ == b.n_ && a.x_min_ == b.x_min_ && a.x_max_ == b.x_max_;
  }

 private:
  double x_min_, x_max_;
  std::size_t n_;
  double dx_;
};

namespace detail {

inline void check_finite(std::span<const cplx> a) {
  for (const auto& z : a) {
    if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) {
      throw ValidationError("wave function: non-finite amplitude");
    }
  }
}

inline double sum_sq(std::span<const cplx> a) {
  double s = 0.0;
  for (const auto& z : a) s += std::norm(z);
  return s;
}

inline void check_norm(double norm2, NormTag tag) {
  if (tag == NormTag::normalized && std::abs(norm2 - 1.0) > kNormTolerance) {
    throw ValidationError("wave function tagged normalized has norm^2 = " + std::to_string(norm2));
  }
}

}  // namespace detail

class WaveFunction1D {
 public:
  WaveFunction1D(Grid1D grid, std::vector<cplx> amplitudes, NormTag tag = NormTag::unnormalized)
      : grid_(std::move(grid)), amps_(std::move(amplitudes)), tag_(tag) {
    if (amps_.size() != grid_.size()) throw ValidationError("wave function: amplitude count != grid size");
    detail::check_finite(amps_);
    detail::check_norm(norm_squared(), tag_);
  }

  static WaveFunction1D from_function(const Grid1D& grid, const std::function<cplx(double)>& f,
                                      NormTag tag = NormTag::unnormalized) {
    std::vector<cplx> a(grid.size());
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = f(grid.point(i));
    return WaveFunction1D(grid, std::move(a), tag);
  }

  const Grid1D& grid() const { return grid_; }
  std::span<const cplx> amplitudes() const { return amps_; }
  const cplx& operator[](std::size_t i) const { return amps_[i]; }
  std::size_t size() const { return amps_.size(); }
  NormTag norm_tag() const { return tag_; }

  double norm_squared() const { return detail::sum_sq(amps_) * grid_.spacing(); }

 private:
  Grid1D grid_;
  std::vector<cplx> amps_;
  NormTag tag_;
};

/// Amplitudes stored row-major with x as the slow index: a[ix * n_y + iy].
class WaveFunction2D {
 public:
  WaveFunction2D(Grid1D grid_x, Grid1D grid_y, std::vector<cplx> amplitudes,
                 NormTag tag = NormTag::unnormalized)
      : gx_(std::move(grid_x)), gy_(std::move(grid_y)), amps_(std::move(amplitudes)), tag_(tag) {
    if (amps_.size() != gx_.size() * gy_.size()) {
      throw ValidationError("wave function: amplitude count != n_x * n_y");
    }
    detail::check_finite(amps_);
    detail::check_norm(norm_squared(), tag_);
  }

  static WaveFunction2D from_function(const Grid1D& gx, const Grid1D& gy,
                                      const std::function<cplx(double, double)>& f,
                                      NormTag tag = NormTag::unnormalized) {
    std::vector<cplx> a(gx.size() * gy.size());
    for (std::size_t i = 0; i < gx.size(); ++i) {
      for (std::size_t j = 0; j < gy.size(); ++j) a[i * gy.size() + j] = f(gx.point(i), gy.point(j));
    }
    return WaveFunction2D(gx, gy, std::move(a), tag);
  }

  static WaveFunction2D product(const WaveFunction1D& psi, const WaveFunction1D& phi) {
    std::vector<cplx> a(psi.size() * phi.size());
    for (std::size_t i = 0; i < psi.size(); ++i) {
      for (std::size_t j = 0; j < phi.size(); ++j) a[i * phi.size() + j] = psi[i] * phi[j];
    }
    const bool normed = psi.norm_tag() == NormTag::normalized && phi.norm_tag() == NormTag::normalized;
    return WaveFunction2D(psi.grid(), phi.grid(), std::move(a),
                          normed ? NormTag::normalized : NormTag::unnormalized);
  }

  const Grid1D& grid_x() const { return gx_; }
  const Grid1D& grid_y() const { return gy_; }
  std::span<const cplx> amplitudes() const { return amps_; }
  const cplx& at(std::size_t ix, std::size_t iy) const { return amps_[ix * gy_.size() + iy]; }
  std::size_t size() const { return amps_.size(); }
  NormTag norm_tag() const { return tag_; }

  double norm_squared() const { return detail::sum_sq(amps_) * gx_.spacing() * gy_.spacing(); }

 private:
  Grid1D gx_, gy_;
  std::vector<cplx> amps_;
  NormTag tag_;
};

inline void require_same_grid(const Grid1D& a, const Grid1D& b) {
  if (!(a == b)) throw ValidationError("grid mismatch");
}

inline cplx inner_product(const WaveFunction1D& a, const WaveFunction1D& b) {
  require_same_grid(a.grid(), b.grid());
  cplx s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(a[i]) * b[i];
  return s * a.grid().spacing();
}

inline cplx inner_product(const WaveFunction2D& a, const WaveFunction2D& b) {
  require_same_grid(a.grid_x(), b.grid_x());
  require_same_grid(a.grid_y(), b.grid_y());
  cplx s = 0.0;
  const auto pa = a.amplitudes(), pb = b.amplitudes();
  for (std::size_t i = 0; i < pa.size(); ++i) s += std::conj(pa[i]) * pb[i];
  return s * a.grid_x().spacing() * a.grid_y().spacing();
}

inline double norm(const WaveFunction1D& a) { return std::sqrt(a.norm_squared()); }
inline double norm(const WaveFunction2D& a) { return std::sqrt(a.norm_squared()); }

inline WaveFunction1D normalize(const WaveFunction1D& psi) {
  const double n = norm(psi);
  if (!(n > 0.0)) throw ValidationError("normalize: zero wave function");
  std::vector<cplx> a(psi.amplitudes().begin(), psi.amplitudes().end());
  for (auto& z : a) z /= n;
  return WaveFunction1D(psi.grid(), std::move(a), NormTag::normalized);
}

inline WaveFunction2D normalize(const WaveFunction2D& psi) {
  const double n = norm(psi);
  if (!(n > 0.0)) throw ValidationError("normalize: zero wave function");
  std::vector<cplx> a(psi.amplitudes().begin(), psi.amplitudes().end());
  for (auto& z : a) z /= n;
  return WaveFunction2D(psi.grid_x(), psi.grid_y(), std::move(a), NormTag::normalized);
}

/// L2 norm of a - b.
inline double l2_distance(const WaveFunction1D& a, const WaveFunction1D& b) {
  require_same_grid(a.grid(), b.grid());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::norm(a[i] - b[i]);
  return std::sqrt(s * a.grid().spacing());
}

inline double l2_distance(const WaveFunction2D& a, const WaveFunction2D& b) {
  require_same_grid(a.grid_x(), b.grid_x());
  require_same_grid(a.grid_y(), b.grid_y());
  double s = 0.0;
  const auto pa = a.amplitudes(), pb = b.amplitudes();
  for (std::size_t i = 0; i < pa.size(); ++i) s += std::norm(pa[i] - pb[i]);
  return std::sqrt(s * a.grid_x().spacing() * a.grid_y().spacing());
}

/// |<a|b>|^2 / (<a|a><b|b>).
inline double fidelity(const WaveFunction1D& a, const WaveFunction1D& b) {
  const double na = a.norm_squared(), nb = b.norm_squared();
  if (!(na > 0.0) || !(nb > 0.0)) return 0.0;
  return std::norm(inner_product(a, b)) / (na * nb);
}

namespace detail {

// psi~_m = dx/sqrt(2 pi hbar) e^{-i p_m x_min/hbar} FFT[(-1)^j psi_j]_m
inline void forward_momentum_phases(const Grid1D& g, double hbar, std::vector<cplx>& pre,
                                    std::vector<cplx>& post) {
  const std::size_t n = g.size();
  const Grid1D pg = g.conjugate(hbar);
  const double scale = g.spacing() / std::sqrt(2.0 * std::numbers::pi * hbar);
  pre.resize(n);
  post.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    pre[j] = (j % 2 == 0) ? 1.0 : -1.0;
    post[j] = scale * std::polar(1.0, -pg.point(j) * g.min() / hbar);
  }
}

}  // namespace detail

inline WaveFunction1D to_momentum(const WaveFunction1D& psi, double hbar = 1.0) {
  const auto& g = psi.grid();
  std::vector<cplx> pre, post;
  detail::forward_momentum_phases(g, hbar, pre, post);
  std::vector<cplx> a(psi.amplitudes().begin(), psi.amplitudes().end());
  for (std::size_t j = 0; j < a.size(); ++j) a[j] *= pre[j];
  detail::FftPlan(a.size(), 1, 1, a.size(), FFTW_FORWARD).execute(a.data());
  for (std::size_t m = 0; m < a.size(); ++m) a[m] *= post[m];
  return WaveFunction1D(g.conjugate(hbar), std::move(a), psi.norm_tag());
}

/// Inverse of to_momentum; position_grid supplies the origin lost in the momentum representation.
inline WaveFunction1D to_position(const WaveFunction1D& phi, const Grid1D& position_grid, double hbar = 1.0) {
  const Grid1D pg = position_grid.conjugate(hbar);
  if (phi.grid().size() != pg.size() ||
      std::abs(phi.grid().spacing() - pg.spacing()) > 1e-12 * pg.spacing()) {
    throw ValidationError("to_position: momentum grid is not conjugate to the target grid");
  }
  std::vector<cplx> pre, post;
  detail::forward_momentum_phases(position_grid, hbar, pre, post);
  const std::size_t n = phi.size();
  const double scale = pg.spacing() / std::sqrt(2.0 * std::numbers::pi * hbar);
  const double fwd = position_grid.spacing() / std::sqrt(2.0 * std::numbers::pi * hbar);
  std::vector<cplx> a(phi.amplitudes().begin(), phi.amplitudes().end());
  for (std::size_t m = 0; m < n; ++m) a[m] *= std::conj(post[m]) / fwd;
  detail::FftPlan(n, 1, 1, n, FFTW_BACKWARD).execute(a.data());
  for (std::size_t j = 0; j < n; ++j) a[j] *= pre[j] * scale;
  return WaveFunction1D(position_grid, std::move(a), phi.norm_tag());
}

/// Momentum transform along x for every y column; result lives on (p-grid, y-grid).
inline WaveFunction2D to_momentum_x(const WaveFunction2D& psi, double hbar = 1.0) {
  const auto& gx = psi.grid_x();
  const std::size_t nx = gx.size(), ny = psi.grid_y().size();
  std::vector<cplx> pre, post;
  detail::forward_momentum_phases(gx, hbar, pre, post);
  std::vector<cplx> a(psi.amplitudes().begin(), psi.amplitudes().end());
  for (std::size_t i = 0; i < nx; ++i) {
    for (std::size_t j = 0; j < ny; ++j) a[i * ny + j] *= pre[i];
  }
  detail::FftPlan(nx, ny, ny, 1, FFTW_FORWARD).execute(a.data());
  for (std::size_t i = 0; i < nx; ++i) {
    for (std::size_t j = 0; j < ny; ++j) a[i * ny + j] *= post[i];
  }
  return WaveFunction2D(gx.conjugate(hbar), psi.grid_y(), std::move(a), psi.norm_tag());
}

/// Row Psi(x, y_nearest), unnormalized.
inline WaveFunction1D conditional_slice(const WaveFunction2D& psi, double y) {
  const std::size_t j = psi.grid_y().nearest_index(y);
  const std::size_t nx = psi.grid_x().size(), ny = psi.grid_y().size();
  std::vector<cplx> a(nx);
  for (std::size_t i = 0; i < nx; ++i) a[i] = psi.amplitudes()[i * ny + j];
  return WaveFunction1D(psi.grid_x(), std::move(a), NormTag::unnormalized);
}

/// Normalized Gaussian with |psi|^2 standard deviation sigma, centre x0 and momentum p0.
inline WaveFunction1D gaussian(const Grid1D& g, double x0, double sigma, double p0 = 0.0, double hbar = 1.0) {
  const double c = std::pow(2.0 * std::numbers::pi * sigma * sigma, -0.25);
  return normalize(WaveFunction1D::from_function(g, [&](double x) {
    const double d = x - x0;
    return c * std::exp(-d * d / (4.0 * sigma * sigma)) * std::polar(1.0, p0 * x / hbar);
  }));
}

}  // namespace cwf
