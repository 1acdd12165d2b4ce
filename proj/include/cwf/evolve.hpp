#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "error.hpp"
#include "fft.hpp"
#include "qgrid.hpp"

namespace cwf {

/// Kinetic masses per axis (infinity freezes that axis), potential on the grid, and hbar.
struct Hamiltonian {
  std::vector<double> masses;
  std::vector<double> potential;
  double hbar = 1.0;

  void validate(std::size_t n_axes, std::size_t n_points) const {
    if (masses.size() != n_axes) throw ValidationError("hamiltonian: need one mass per axis");
    for (double m : masses) {
      if (!(m > 0.0)) throw ValidationError("hamiltonian: masses must be positive");
    }
    if (potential.size() != n_points) throw ValidationError("hamiltonian: potential shape does not match grid");
    if (!(hbar > 0.0)) throw ValidationError("hamiltonian: hbar must be positive");
    for (double v : potential) {
      if (!std::isfinite(v)) throw ValidationError("hamiltonian: non-finite potential");
    }
  }
};

enum class PotentialKind { free, box, harmonic };

struct PotentialSpec {
  PotentialKind kind = PotentialKind::free;
  double box_length = 1.0;  // walls at 0 and L
  double barrier = 1e6;
  double omega = 1.0;
  double mass = 1.0;  // enters 1/2 m omega^2 x^2
};

inline std::vector<double> make_potential(const PotentialSpec& s, const Grid1D& g) {
  std::vector<double> v(g.size(), 0.0);
  const double eps = 1e-9 * g.spacing();
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double x = g.point(i);
    switch (s.kind) {
      case PotentialKind::free:
        break;
      case PotentialKind::box:
        if (!(s.box_length > 0.0)) throw ValidationError("box potential: L must be positive");
        v[i] = (x < -eps || x > s.box_length + eps) ? s.barrier : 0.0;
        break;
      case PotentialKind::harmonic:
        v[i] = 0.5 * s.mass * s.omega * s.omega * x * x;
        break;
    }
  }
  return v;
}

/// V(x, y) = V(x) on the row-major (x, y) layout.
inline std::vector<double> extend_along_y(const std::vector<double>& vx, std::size_t n_y) {
  std::vector<double> v(vx.size() * n_y);
  for (std::size_t i = 0; i < vx.size(); ++i) {
    for (std::size_t j = 0; j < n_y; ++j) v[i * n_y + j] = vx[i];
  }
  return v;
}

inline double default_time_step(const Grid1D& g, double mass, double hbar = 1.0) {
  return 0.25 * g.spacing() * g.spacing() * mass / hbar;
}

inline double default_time_step(const Grid1D& gx, const Grid1D& gy, const Hamiltonian& h) {
  double dt = std::numeric_limits<double>::infinity();
  if (std::isfinite(h.masses.at(0))) dt = std::min(dt, default_time_step(gx, h.masses[0], h.hbar));
  if (std::isfinite(h.masses.at(1))) dt = std::min(dt, default_time_step(gy, h.masses[1], h.hbar));
  if (!std::isfinite(dt)) throw ValidationError("default_time_step: both axes frozen");
  return dt;
}

namespace detail {

inline std::vector<cplx> potential_half_phases(const std::vector<double>& v, double dt, double hbar) {
  std::vector<cplx> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::polar(1.0, -0.5 * v[i] * dt / hbar);
  return out;
}

inline void check_norm_drift(double before, double after, std::size_t steps) {
  const double allowed = 1e-9 * std::max(1.0, static_cast<double>(steps) / 1000.0) * std::max(1.0, before);
  if (std::abs(after - before) > allowed) {
    throw NumericalError("propagate: norm drift " + std::to_string(after - before) + " over " +
                         std::to_string(steps) + " steps");
  }
}

}  // namespace detail

/// Strang splitting exp(-iV dt/2) exp(-iT dt) exp(-iV dt/2) with a spectral kinetic factor.
class SplitOperator1D {
 public:
  SplitOperator1D(const Grid1D& g, const Hamiltonian& h, double dt) : grid_(g), dt_(dt) {
    if (!(dt > 0.0)) throw ValidationError("propagate: dt must be positive");
    h.validate(1, g.size());
    const std::size_t n = g.size();
    vhalf_ = detail::potential_half_phases(h.potential, dt, h.hbar);
    const auto k = detail::fft_wavenumbers(n, g.spacing());
    kin_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      kin_[i] = std::polar(1.0 / static_cast<double>(n), -h.hbar * k[i] * k[i] * dt / (2.0 * h.masses[0]));
    }
    fft_ = detail::AxisFft::rows(1, n);
  }

  void step(std::vector<cplx>& a) const {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] *= vhalf_[i];
    fft_.forward.execute(a.data());
    for (std::size_t i = 0; i < a.size(); ++i) a[i] *= kin_[i];
    fft_.backward.execute(a.data());
    for (std::size_t i = 0; i < a.size(); ++i) a[i] *= vhalf_[i];
  }

  WaveFunction1D advance(const WaveFunction1D& psi, std::size_t steps) const {
    require_same_grid(psi.grid(), grid_);
    std::vector<cplx> a(psi.amplitudes().begin(), psi.amplitudes().end());
    for (std::size_t s = 0; s < steps; ++s) step(a);
    const double before = psi.norm_squared();
    WaveFunction1D out(grid_, std::move(a), NormTag::unnormalized);
    detail::check_norm_drift(before, out.norm_squared(), steps);
    return WaveFunction1D(grid_, {out.amplitudes().begin(), out.amplitudes().end()}, psi.norm_tag());
  }

  double time_step() const { return dt_; }
  const Grid1D& grid() const { return grid_; }

 private:
  Grid1D grid_;
  double dt_;
  std::vector<cplx> vhalf_, kin_;
  detail::AxisFft fft_;
};

/// 2-D version; an axis with infinite mass is not transformed.
class SplitOperator2D {
 public:
  SplitOperator2D(const Grid1D& gx, const Grid1D& gy, const Hamiltonian& h, double dt)
      : gx_(gx), gy_(gy), dt_(dt) {
    if (!(dt > 0.0)) throw ValidationError("propagate: dt must be positive");
    h.validate(2, gx.size() * gy.size());
    const std::size_t nx = gx.size(), ny = gy.size();
    move_x_ = std::isfinite(h.masses[0]);
    move_y_ = std::isfinite(h.masses[1]);
    vhalf_ = detail::potential_half_phases(h.potential, dt, h.hbar);
    const auto kx = detail::fft_wavenumbers(nx, gx.spacing());
    const auto ky = detail::fft_wavenumbers(ny, gy.spacing());
    double scale = 1.0;
    if (move_x_) scale /= static_cast<double>(nx);
    if (move_y_) scale /= static_cast<double>(ny);
    kin_.resize(nx * ny);
    for (std::size_t i = 0; i < nx; ++i) {
      for (std::size_t j = 0; j < ny; ++j) {
        double e = 0.0;
        if (move_x_) e += h.hbar * kx[i] * kx[i] / (2.0 * h.masses[0]);
        if (move_y_) e += h.hbar * ky[j] * ky[j] / (2.0 * h.masses[1]);
        kin_[i * ny + j] = std::polar(scale, -e * dt);
      }
    }
    if (move_x_) fx_ = detail::AxisFft::columns(nx, ny);
    if (move_y_) fy_ = detail::AxisFft::rows(nx, ny);
  }

  void step(std::vector<cplx>& a) const {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] *= vhalf_[i];
    if (move_x_ || move_y_) {
      if (move_x_) fx_.forward.execute(a.data());
      if (move_y_) fy_.forward.execute(a.data());
      for (std::size_t i = 0; i < a.size(); ++i) a[i] *= kin_[i];
      if (move_y_) fy_.backward.execute(a.data());
      if (move_x_) fx_.backward.execute(a.data());
    }
    for (std::size_t i = 0; i < a.size(); ++i) a[i] *= vhalf_[i];
  }

  WaveFunction2D advance(const WaveFunction2D& psi, std::size_t steps) const {
    require_same_grid(psi.grid_x(), gx_);
    require_same_grid(psi.grid_y(), gy_);
    std::vector<cplx> a(psi.amplitudes().begin(), psi.amplitudes().end());
    for (std::size_t s = 0; s < steps; ++s) step(a);
    const double before = psi.norm_squared();
    WaveFunction2D out(gx_, gy_, std::move(a), NormTag::unnormalized);
    detail::check_norm_drift(before, out.norm_squared(), steps);
    return WaveFunction2D(gx_, gy_, {out.amplitudes().begin(), out.amplitudes().end()}, psi.norm_tag());
  }

  double time_step() const { return dt_; }

 private:
  Grid1D gx_, gy_;
  double dt_;
  bool move_x_ = true, move_y_ = true;
  std::vector<cplx> vhalf_, kin_;
  detail::AxisFft fx_, fy_;
};

inline WaveFunction1D propagate(const WaveFunction1D& psi, const Hamiltonian& h, double dt, std::size_t steps) {
  return SplitOperator1D(psi.grid(), h, dt).advance(psi, steps);
}

inline WaveFunction2D propagate(const WaveFunction2D& psi, const Hamiltonian& h, double dt, std::size_t steps) {
  return SplitOperator2D(psi.grid_x(), psi.grid_y(), h, dt).advance(psi, steps);
}

/// Eigenbasis {psi_n} with eigenvalues {a_n} of an observable acting on x.
struct ObservableSpec {
  std::vector<WaveFunction1D> eigenfunctions;
  std::vector<double> eigenvalues;

  void validate(double tol = 1e-8) const {
    if (eigenfunctions.empty() || eigenfunctions.size() != eigenvalues.size()) {
      throw ValidationError("observable: need matching non-empty eigenfunction/eigenvalue lists");
    }
    for (std::size_t a = 0; a < eigenfunctions.size(); ++a) {
      for (std::size_t b = a; b < eigenfunctions.size(); ++b) {
        const cplx ov = inner_product(eigenfunctions[a], eigenfunctions[b]);
        const double want = a == b ? 1.0 : 0.0;
        if (std::abs(ov - want) > tol) {
          throw ValidationError("observable: eigenfunctions not orthonormal (<" + std::to_string(a) + "|" +
                                std::to_string(b) + "> off by " + std::to_string(std::abs(ov - want)) + ")");
        }
      }
    }
  }

  double min_gap() const {
    std::vector<double> a = eigenvalues;
    std::sort(a.begin(), a.end());
    double g = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i < a.size(); ++i) g = std::min(g, a[i] - a[i - 1]);
    return g;
  }
};

/// sqrt(2/L) sin(n pi x / L) on [0, L], n = 1..count; eigenvalue n (index) or the box energy.
inline ObservableSpec box_observable(const Grid1D& g, double L, std::size_t count, bool energy_eigenvalues = false,
                                     double mass = 1.0, double hbar = 1.0) {
  ObservableSpec spec;
  const double c = std::sqrt(2.0 / L);
  const double pi = std::numbers::pi;
  for (std::size_t n = 1; n <= count; ++n) {
    const double k = static_cast<double>(n) * pi / L;
    spec.eigenfunctions.push_back(WaveFunction1D::from_function(
        g, [&](double x) { return cplx(x >= 0.0 && x <= L ? c * std::sin(k * x) : 0.0, 0.0); }));
    spec.eigenvalues.push_back(energy_eigenvalues ? hbar * hbar * k * k / (2.0 * mass) : static_cast<double>(n));
  }
  // grid sampling makes these exactly orthonormal only when the walls sit on grid points
  std::vector<WaveFunction1D> normed;
  for (auto& f : spec.eigenfunctions) normed.push_back(normalize(f));
  spec.eigenfunctions = std::move(normed);
  spec.validate();
  return spec;
}

/// Cell indicators 1/sqrt(dx) with eigenvalue x_i: the position operator on the grid.
inline ObservableSpec position_observable(const Grid1D& g) {
  ObservableSpec spec;
  const double a = 1.0 / std::sqrt(g.spacing());
  for (std::size_t i = 0; i < g.size(); ++i) {
    std::vector<cplx> v(g.size(), 0.0);
    v[i] = a;
    spec.eigenfunctions.emplace_back(g, std::move(v), NormTag::normalized);
    spec.eigenvalues.push_back(g.point(i));
  }
  return spec;
}

/// Lowest eigenpairs of the grid Hamiltonian (spectral kinetic + diagonal potential).
inline ObservableSpec numerical_eigenstates(const Grid1D& g, const Hamiltonian& h, std::size_t count) {
  h.validate(1, g.size());
  const std::size_t n = g.size();
  if (count == 0 || count > n) throw ValidationError("numerical_eigenstates: bad count");
  const auto k = detail::fft_wavenumbers(n, g.spacing());
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t d = 0; d < n; ++d) {
    double t = 0.0;
    for (std::size_t m = 0; m < n; ++m) {
      t += h.hbar * h.hbar * k[m] * k[m] / (2.0 * h.masses[0]) *
           std::cos(k[m] * g.spacing() * static_cast<double>(d));
    }
    t /= static_cast<double>(n);
    for (std::size_t j = 0; j < n; ++j) H(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>((j + d) % n)) = t;
  }
  for (std::size_t j = 0; j < n; ++j) H(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j)) += h.potential[j];
  H = 0.5 * (H + H.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
  if (es.info() != Eigen::Success) throw NumericalError("numerical_eigenstates: diagonalization failed");
  ObservableSpec spec;
  const double scale = 1.0 / std::sqrt(g.spacing());
  for (std::size_t c = 0; c < count; ++c) {
    auto v = es.eigenvectors().col(static_cast<Eigen::Index>(c));
    Eigen::Index imax = 0;
    v.cwiseAbs().maxCoeff(&imax);
    const double sign = v(imax) < 0.0 ? -1.0 : 1.0;
    std::vector<cplx> a(n);
    for (std::size_t j = 0; j < n; ++j) a[j] = sign * scale * v(static_cast<Eigen::Index>(j));
    spec.eigenfunctions.push_back(normalize(WaveFunction1D(g, std::move(a))));
    spec.eigenvalues.push_back(es.eigenvalues()(static_cast<Eigen::Index>(c)));
  }
  return spec;
}

/// exp(-i lambda A p_y / hbar) as an instantaneous unitary acting on (x, y).
struct ImpulsiveCoupling {
  ObservableSpec observable;
  double strength = 0.0;  // lambda
};

namespace detail {

/// g(y) -> g(y - shift) by a momentum-space phase; exact for periodic band-limited data.
class Translator {
 public:
  explicit Translator(const Grid1D& gy) : gy_(gy), k_(fft_wavenumbers(gy.size(), gy.spacing())) {
    fft_ = AxisFft::rows(1, gy.size());
  }

  void apply(std::vector<cplx>& row, double shift) const {
    if (shift == 0.0) return;
    const double inv_n = 1.0 / static_cast<double>(row.size());
    fft_.forward.execute(row.data());
    for (std::size_t m = 0; m < row.size(); ++m) row[m] *= std::polar(inv_n, -k_[m] * shift);
    fft_.backward.execute(row.data());
  }

 private:
  Grid1D gy_;
  std::vector<double> k_;
  AxisFft fft_;
};

}  // namespace detail

inline WaveFunction2D apply_impulse(const WaveFunction2D& psi, const ImpulsiveCoupling& c,
                                    double completeness_tolerance = 1e-6) {
  const auto& ob = c.observable;
  if (ob.eigenfunctions.empty() || ob.eigenfunctions.size() != ob.eigenvalues.size()) {
    throw ValidationError("apply_impulse: empty or inconsistent observable");
  }
  const Grid1D& gx = psi.grid_x();
  const Grid1D& gy = psi.grid_y();
  for (const auto& f : ob.eigenfunctions) require_same_grid(f.grid(), gx);
  const std::size_t nx = gx.size(), ny = gy.size(), nm = ob.eigenfunctions.size();
  const double dx = gx.spacing();
  const auto in = psi.amplitudes();

  std::vector<cplx> residual(in.begin(), in.end());
  std::vector<cplx> out(nx * ny, 0.0);
  std::vector<cplx> g(ny);
  detail::Translator shift(gy);
  for (std::size_t n = 0; n < nm; ++n) {
    const auto f = ob.eigenfunctions[n].amplitudes();
    std::fill(g.begin(), g.end(), cplx(0.0));
    for (std::size_t i = 0; i < nx; ++i) {
      if (f[i] == 0.0) continue;
      const cplx w = std::conj(f[i]) * dx;
      for (std::size_t j = 0; j < ny; ++j) g[j] += w * in[i * ny + j];
    }
    for (std::size_t i = 0; i < nx; ++i) {
      if (f[i] == 0.0) continue;
      for (std::size_t j = 0; j < ny; ++j) residual[i * ny + j] -= f[i] * g[j];
    }
    shift.apply(g, c.strength * ob.eigenvalues[n]);
    for (std::size_t i = 0; i < nx; ++i) {
      if (f[i] == 0.0) continue;
      for (std::size_t j = 0; j < ny; ++j) out[i * ny + j] += f[i] * g[j];
    }
  }
  const double res = std::sqrt(detail::sum_sq(residual) * dx * gy.spacing());
  const double scale = std::max(norm(psi), std::numeric_limits<double>::min());
  if (res / scale > completeness_tolerance) {
    throw NumericalError("apply_impulse: eigenbasis incomplete, residual " + std::to_string(res / scale));
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += residual[i];
  return WaveFunction2D(gx, gy, std::move(out), psi.norm_tag());
}

}  // namespace cwf
