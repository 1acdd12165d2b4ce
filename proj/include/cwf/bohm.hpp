#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <memory>
#include <ostream>
#include <utility>
#include <vector>

#include "error.hpp"
#include "evolve.hpp"
#include "parallel.hpp"
#include "qgrid.hpp"
#include "rng.hpp"
#include "stats.hpp"
#include "wf_io.hpp"

namespace cwf {

inline constexpr double kNodeFloorFraction = 1e-12;

struct BohmConfig {
  double X = 0.0;
  double Y = 0.0;
};

struct Velocity {
  double vx = 0.0;
  double vy = 0.0;
};

class Trajectory {
 public:
  void append(double t, const BohmConfig& q) {
    if (!times_.empty() && !(t > times_.back())) throw ValidationError("trajectory: times must increase");
    times_.push_back(t);
    configs_.push_back(q);
  }
  const std::vector<double>& times() const { return times_; }
  const std::vector<BohmConfig>& configs() const { return configs_; }
  std::size_t size() const { return times_.size(); }

 private:
  std::vector<double> times_;
  std::vector<BohmConfig> configs_;
};

namespace detail {

/// Periodic 8-point Lagrange stencil; collapses to a single weight on grid points.
struct Stencil {
  std::array<std::size_t, 8> idx{};
  std::array<double, 8> w{};
  int count = 0;
};

inline Stencil lagrange_stencil(const Grid1D& g, double x) {
  if (!g.contains(x)) {
    throw ValidationError("position " + std::to_string(x) + " outside grid [" + std::to_string(g.min()) + ", " +
                          std::to_string(g.max()) + ")");
  }
  const auto n = static_cast<long long>(g.size());
  const double u = (x - g.min()) / g.spacing();
  const double fl = std::floor(u);
  const double t = u - fl;
  const auto i0 = static_cast<long long>(fl);
  auto wrap = [n](long long i) { return static_cast<std::size_t>(((i % n) + n) % n); };
  Stencil s;
  constexpr double snap = 1e-9;
  if (t < snap || t > 1.0 - snap) {
    s.count = 1;
    s.idx[0] = wrap(t < snap ? i0 : i0 + 1);
    s.w[0] = 1.0;
    return s;
  }
  s.count = 8;
  for (int m = -3; m <= 4; ++m) {
    double w = 1.0;
    for (int l = -3; l <= 4; ++l) {
      if (l != m) w *= (t - l) / static_cast<double>(m - l);
    }
    s.idx[static_cast<std::size_t>(m + 3)] = wrap(i0 + m);
    s.w[static_cast<std::size_t>(m + 3)] = w;
  }
  return s;
}

/// Spectral derivative along one axis of a row-major (n_rows x n_cols) array.
inline std::vector<cplx> spectral_derivative(std::span<const cplx> a, std::size_t n_rows, std::size_t n_cols,
                                             bool along_rows_axis, double spacing) {
  std::vector<cplx> d(a.begin(), a.end());
  const std::size_t n = along_rows_axis ? n_rows : n_cols;
  auto fft = along_rows_axis ? AxisFft::columns(n_rows, n_cols) : AxisFft::rows(n_rows, n_cols);
  auto k = fft_wavenumbers(n, spacing);
  k[n / 2] = 0.0;  // Nyquist mode has no well-defined derivative
  fft.forward.execute(d.data());
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n_rows; ++i) {
    for (std::size_t j = 0; j < n_cols; ++j) d[i * n_cols + j] *= cplx(0.0, k[along_rows_axis ? i : j] * inv);
  }
  fft.backward.execute(d.data());
  return d;
}

inline double max_density(std::span<const cplx> a) {
  double m = 0.0;
  for (const auto& z : a) m = std::max(m, std::norm(z));
  return m;
}

}  // namespace detail

/// Guidance velocity v = (hbar/m) Im(grad Psi / Psi) with spectral derivatives,
/// evaluated off-grid by local Lagrange interpolation of Psi and its gradient.
class VelocityField2D {
 public:
  VelocityField2D(const WaveFunction2D& psi, std::array<double, 2> masses, double hbar = 1.0)
      : gx_(psi.grid_x()), gy_(psi.grid_y()), masses_(masses), hbar_(hbar),
        psi_(psi.amplitudes().begin(), psi.amplitudes().end()) {
    if (!(masses[0] > 0.0) || !(masses[1] > 0.0)) throw ValidationError("velocity: masses must be positive");
    const std::size_t nx = gx_.size(), ny = gy_.size();
    if (std::isfinite(masses[0])) dx_ = detail::spectral_derivative(psi_, nx, ny, true, gx_.spacing());
    if (std::isfinite(masses[1])) dy_ = detail::spectral_derivative(psi_, nx, ny, false, gy_.spacing());
    floor_ = kNodeFloorFraction * detail::max_density(psi_);
  }

  Velocity at(const BohmConfig& q) const {
    const auto sx = detail::lagrange_stencil(gx_, q.X);
    const auto sy = detail::lagrange_stencil(gy_, q.Y);
    const std::size_t ny = gy_.size();
    cplx p = 0.0, px = 0.0, py = 0.0;
    for (int a = 0; a < sx.count; ++a) {
      for (int b = 0; b < sy.count; ++b) {
        const double w = sx.w[static_cast<std::size_t>(a)] * sy.w[static_cast<std::size_t>(b)];
        const std::size_t k = sx.idx[static_cast<std::size_t>(a)] * ny + sy.idx[static_cast<std::size_t>(b)];
        p += w * psi_[k];
        if (!dx_.empty()) px += w * dx_[k];
        if (!dy_.empty()) py += w * dy_[k];
      }
    }
    const double rho = std::norm(p);
    if (!(rho >= floor_) || rho == 0.0) throw NodeError(rho, floor_);
    Velocity v;
    if (!dx_.empty()) v.vx = hbar_ / masses_[0] * (px / p).imag();
    if (!dy_.empty()) v.vy = hbar_ / masses_[1] * (py / p).imag();
    return v;
  }

  double density_at(const BohmConfig& q) const {
    const auto sx = detail::lagrange_stencil(gx_, q.X);
    const auto sy = detail::lagrange_stencil(gy_, q.Y);
    cplx p = 0.0;
    for (int a = 0; a < sx.count; ++a) {
      for (int b = 0; b < sy.count; ++b) {
        p += sx.w[static_cast<std::size_t>(a)] * sy.w[static_cast<std::size_t>(b)] *
             psi_[sx.idx[static_cast<std::size_t>(a)] * gy_.size() + sy.idx[static_cast<std::size_t>(b)]];
      }
    }
    return std::norm(p);
  }

  double node_floor() const { return floor_; }
  const Grid1D& grid_x() const { return gx_; }
  const Grid1D& grid_y() const { return gy_; }

 private:
  Grid1D gx_, gy_;
  std::array<double, 2> masses_;
  double hbar_;
  std::vector<cplx> psi_, dx_, dy_;
  double floor_ = 0.0;
};

class VelocityField1D {
 public:
  VelocityField1D(const WaveFunction1D& psi, double mass, double hbar = 1.0)
      : g_(psi.grid()), mass_(mass), hbar_(hbar), psi_(psi.amplitudes().begin(), psi.amplitudes().end()) {
    if (!(mass > 0.0)) throw ValidationError("velocity: mass must be positive");
    d_ = detail::spectral_derivative(psi_, 1, g_.size(), false, g_.spacing());
    floor_ = kNodeFloorFraction * detail::max_density(psi_);
  }

  double at(double x) const {
    const auto s = detail::lagrange_stencil(g_, x);
    cplx p = 0.0, dp = 0.0;
    for (int a = 0; a < s.count; ++a) {
      p += s.w[static_cast<std::size_t>(a)] * psi_[s.idx[static_cast<std::size_t>(a)]];
      dp += s.w[static_cast<std::size_t>(a)] * d_[s.idx[static_cast<std::size_t>(a)]];
    }
    const double rho = std::norm(p);
    if (!(rho >= floor_) || rho == 0.0) throw NodeError(rho, floor_);
    return hbar_ / mass_ * (dp / p).imag();
  }

  double node_floor() const { return floor_; }
  const Grid1D& grid() const { return g_; }

 private:
  Grid1D g_;
  double mass_, hbar_;
  std::vector<cplx> psi_, d_;
  double floor_ = 0.0;
};

inline Velocity velocity(const WaveFunction2D& psi, const BohmConfig& q, std::array<double, 2> masses,
                         double hbar = 1.0) {
  return VelocityField2D(psi, masses, hbar).at(q);
}

/// x-velocity from the conditional wave function chi(x) = Psi(x, Y).
inline double velocity_from_cwf(const WaveFunction1D& chi, double X, double mass, double hbar = 1.0) {
  return VelocityField1D(chi, mass, hbar).at(X);
}

inline WaveFunction1D conditional_wavefunction(const WaveFunction2D& psi, const BohmConfig& q) {
  return conditional_slice(psi, q.Y);
}

/// Rejects configurations outside the grid or on a node.
inline BohmConfig make_config(const VelocityField2D& field, double X, double Y) {
  BohmConfig q{X, Y};
  const double rho = field.density_at(q);
  if (!(rho >= field.node_floor()) || rho == 0.0) throw NodeError(rho, field.node_floor());
  return q;
}

/// Psi at multiples of dt/2, produced by half-step propagation and cached.
/// Not thread-safe; fetch the fields first, then share them read-only.
class FieldSequence2D {
 public:
  FieldSequence2D(const WaveFunction2D& psi0, const Hamiltonian& h, double dt)
      : half_(psi0.grid_x(), psi0.grid_y(), h, 0.5 * dt), masses_{h.masses.at(0), h.masses.at(1)}, hbar_(h.hbar),
        dt_(dt), state_(psi0.amplitudes().begin(), psi0.amplitudes().end()), gx_(psi0.grid_x()),
        gy_(psi0.grid_y()) {}

  std::shared_ptr<const VelocityField2D> at_half_step(std::size_t k) {
    for (auto& [idx, f] : cache_) {
      if (idx == k) return f;
    }
    if (k < state_index_) throw ValidationError("field sequence: requested field no longer cached");
    while (state_index_ < k) {
      half_.step(state_);
      ++state_index_;
    }
    auto f = std::make_shared<const VelocityField2D>(WaveFunction2D(gx_, gy_, state_), masses_, hbar_);
    cache_.emplace_back(k, f);
    if (cache_.size() > 3) cache_.pop_front();
    return f;
  }

  WaveFunction2D state_at_half_step(std::size_t k) {
    at_half_step(k);
    return WaveFunction2D(gx_, gy_, state_);
  }

  double time_step() const { return dt_; }

 private:
  SplitOperator2D half_;
  std::array<double, 2> masses_;
  double hbar_;
  double dt_;
  std::vector<cplx> state_;
  std::size_t state_index_ = 0;
  Grid1D gx_, gy_;
  std::deque<std::pair<std::size_t, std::shared_ptr<const VelocityField2D>>> cache_;
};

class FieldSequence1D {
 public:
  FieldSequence1D(const WaveFunction1D& psi0, const Hamiltonian& h, double dt)
      : half_(psi0.grid(), h, 0.5 * dt), mass_(h.masses.at(0)), hbar_(h.hbar), dt_(dt),
        state_(psi0.amplitudes().begin(), psi0.amplitudes().end()), g_(psi0.grid()) {}

  std::shared_ptr<const VelocityField1D> at_half_step(std::size_t k) {
    for (auto& [idx, f] : cache_) {
      if (idx == k) return f;
    }
    if (k < state_index_) throw ValidationError("field sequence: requested field no longer cached");
    while (state_index_ < k) {
      half_.step(state_);
      ++state_index_;
    }
    auto f = std::make_shared<const VelocityField1D>(WaveFunction1D(g_, state_), mass_, hbar_);
    cache_.emplace_back(k, f);
    if (cache_.size() > 3) cache_.pop_front();
    return f;
  }

  double time_step() const { return dt_; }

 private:
  SplitOperator1D half_;
  double mass_, hbar_, dt_;
  std::vector<cplx> state_;
  std::size_t state_index_ = 0;
  Grid1D g_;
  std::deque<std::pair<std::size_t, std::shared_ptr<const VelocityField1D>>> cache_;
};

/// Classical RK4 step with the field at t, t + dt/2 and t + dt.
inline BohmConfig step_trajectory(const VelocityField2D& f0, const VelocityField2D& fh, const VelocityField2D& f1,
                                  const BohmConfig& q, double dt) {
  if (!(dt > 0.0)) throw ValidationError("step_trajectory: dt must be positive");
  auto inside = [&](const BohmConfig& c) {
    if (!f1.grid_x().contains(c.X) || !f1.grid_y().contains(c.Y)) {
      throw NumericalError("step_trajectory: configuration left the grid");
    }
    return c;
  };
  const Velocity k1 = f0.at(q);
  const Velocity k2 = fh.at(inside({q.X + 0.5 * dt * k1.vx, q.Y + 0.5 * dt * k1.vy}));
  const Velocity k3 = fh.at(inside({q.X + 0.5 * dt * k2.vx, q.Y + 0.5 * dt * k2.vy}));
  const Velocity k4 = f1.at(inside({q.X + dt * k3.vx, q.Y + dt * k3.vy}));
  return inside({q.X + dt / 6.0 * (k1.vx + 2.0 * k2.vx + 2.0 * k3.vx + k4.vx),
                 q.Y + dt / 6.0 * (k1.vy + 2.0 * k2.vy + 2.0 * k3.vy + k4.vy)});
}

inline double step_trajectory(const VelocityField1D& f0, const VelocityField1D& fh, const VelocityField1D& f1,
                              double x, double dt) {
  if (!(dt > 0.0)) throw ValidationError("step_trajectory: dt must be positive");
  auto inside = [&](double c) {
    if (!f1.grid().contains(c)) throw NumericalError("step_trajectory: configuration left the grid");
    return c;
  };
  const double k1 = f0.at(x);
  const double k2 = fh.at(inside(x + 0.5 * dt * k1));
  const double k3 = fh.at(inside(x + 0.5 * dt * k2));
  const double k4 = f1.at(inside(x + dt * k3));
  return inside(x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
}

/// Step `step` (from t = step*dt to t + dt) through a time-indexed provider.
inline BohmConfig step_trajectory(FieldSequence2D& psi_t, std::size_t step, const BohmConfig& q) {
  auto f0 = psi_t.at_half_step(2 * step);
  auto fh = psi_t.at_half_step(2 * step + 1);
  auto f1 = psi_t.at_half_step(2 * step + 2);
  return step_trajectory(*f0, *fh, *f1, q, psi_t.time_step());
}

/// Ensemble state: positions plus a failure flag per trajectory.
struct Ensemble2D {
  std::vector<BohmConfig> configs;
  std::vector<std::uint8_t> failed;

  std::size_t n_failed() const { return static_cast<std::size_t>(std::count(failed.begin(), failed.end(), 1)); }
};

struct Ensemble1D {
  std::vector<double> positions;
  std::vector<std::uint8_t> failed;

  std::size_t n_failed() const { return static_cast<std::size_t>(std::count(failed.begin(), failed.end(), 1)); }
};

/// Co-evolves the ensemble for `steps` steps; node hits and grid exits mark the trajectory failed.
/// `observer(step_done, ensemble)` is called after each step when provided.
template <class Observer>
void evolve_ensemble(FieldSequence2D& seq, Ensemble2D& ens, std::size_t steps, Observer&& observer) {
  ens.failed.resize(ens.configs.size(), 0);
  for (std::size_t s = 0; s < steps; ++s) {
    auto f0 = seq.at_half_step(2 * s);
    auto fh = seq.at_half_step(2 * s + 1);
    auto f1 = seq.at_half_step(2 * s + 2);
    parallel_for(ens.configs.size(), [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        if (ens.failed[i]) continue;
        try {
          ens.configs[i] = step_trajectory(*f0, *fh, *f1, ens.configs[i], seq.time_step());
        } catch (const NumericalError&) {
          ens.failed[i] = 1;
        } catch (const ValidationError&) {
          ens.failed[i] = 1;
        }
      }
    });
    observer(s + 1, ens);
  }
}

inline void evolve_ensemble(FieldSequence2D& seq, Ensemble2D& ens, std::size_t steps) {
  evolve_ensemble(seq, ens, steps, [](std::size_t, const Ensemble2D&) {});
}

template <class Observer>
void evolve_ensemble(FieldSequence1D& seq, Ensemble1D& ens, std::size_t steps, Observer&& observer) {
  ens.failed.resize(ens.positions.size(), 0);
  for (std::size_t s = 0; s < steps; ++s) {
    auto f0 = seq.at_half_step(2 * s);
    auto fh = seq.at_half_step(2 * s + 1);
    auto f1 = seq.at_half_step(2 * s + 2);
    parallel_for(ens.positions.size(), [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        if (ens.failed[i]) continue;
        try {
          ens.positions[i] = step_trajectory(*f0, *fh, *f1, ens.positions[i], seq.time_step());
        } catch (const NumericalError&) {
          ens.failed[i] = 1;
        } catch (const ValidationError&) {
          ens.failed[i] = 1;
        }
      }
    });
    observer(s + 1, ens);
  }
}

inline void evolve_ensemble(FieldSequence1D& seq, Ensemble1D& ens, std::size_t steps) {
  evolve_ensemble(seq, ens, steps, [](std::size_t, const Ensemble1D&) {});
}

namespace detail {

inline double wrap_into(const Grid1D& g, double x) {
  const double L = g.length();
  double y = std::fmod(x - g.min(), L);
  if (y < 0.0) y += L;
  y += g.min();
  return y < g.max() ? y : g.min();
}

}  // namespace detail

/// QEH draws by inverse CDF on the flattened grid. With jitter the point is spread
/// uniformly over its cell (a piecewise-constant density with the same cell masses).
inline std::vector<BohmConfig> sample_qeh(const WaveFunction2D& psi, std::size_t n, std::uint64_t seed,
                                          bool jitter = false) {
  std::vector<double> w(psi.size());
  for (std::size_t k = 0; k < w.size(); ++k) w[k] = std::norm(psi.amplitudes()[k]);
  const auto c = detail::cumulative(w);
  const double total = c.back();
  if (!(total > 0.0)) throw ValidationError("sample_qeh: zero density");
  const auto& gx = psi.grid_x();
  const auto& gy = psi.grid_y();
  std::vector<BohmConfig> out(n);
  for (std::size_t t = 0; t < n; ++t) {
    CounterRng rng(seed, stream_key("qeh"), t);
    const std::size_t k = detail::invert_cdf(c, rng.uniform() * total);
    double X = gx.point(k / gy.size());
    double Y = gy.point(k % gy.size());
    if (jitter) {
      X = detail::wrap_into(gx, X + (rng.uniform() - 0.5) * gx.spacing());
      Y = detail::wrap_into(gy, Y + (rng.uniform() - 0.5) * gy.spacing());
    }
    out[t] = {X, Y};
  }
  return out;
}

inline std::vector<double> sample_qeh(const WaveFunction1D& psi, std::size_t n, std::uint64_t seed,
                                      bool jitter = false) {
  std::vector<double> w(psi.size());
  for (std::size_t k = 0; k < w.size(); ++k) w[k] = std::norm(psi[k]);
  const auto c = detail::cumulative(w);
  const double total = c.back();
  if (!(total > 0.0)) throw ValidationError("sample_qeh: zero density");
  std::vector<double> out(n);
  for (std::size_t t = 0; t < n; ++t) {
    CounterRng rng(seed, stream_key("qeh"), t);
    const std::size_t k = detail::invert_cdf(c, rng.uniform() * total);
    double X = psi.grid().point(k);
    if (jitter) X = detail::wrap_into(psi.grid(), X + (rng.uniform() - 0.5) * psi.grid().spacing());
    out[t] = X;
  }
  return out;
}

/// Coarse blocks of grid cells; bins_y = 1 gives the x marginal, bins_x = 1 the y marginal.
struct BinSpec {
  std::size_t bins_x = 16;
  std::size_t bins_y = 16;
};

struct EquivarianceReport {
  double chi2 = 0.0;
  std::size_t dof = 0;
  double p_value = 1.0;
  std::size_t n_failed = 0;
  std::size_t n_total = 0;

  bool failures_ok() const { return static_cast<double>(n_failed) < 1e-3 * static_cast<double>(n_total); }
  bool passed(double alpha = 1e-3) const { return p_value > alpha && failures_ok(); }
};

inline EquivarianceReport chi2_against_density(const std::vector<BohmConfig>& configs,
                                               const std::vector<std::uint8_t>& failed, const WaveFunction2D& psi,
                                               BinSpec bins = {}) {
  const auto& gx = psi.grid_x();
  const auto& gy = psi.grid_y();
  if (bins.bins_x == 0 || bins.bins_y == 0 || gx.size() % bins.bins_x != 0 || gy.size() % bins.bins_y != 0) {
    throw ValidationError("equivariance: bin counts must divide the grid sizes");
  }
  const std::size_t bx = gx.size() / bins.bins_x, by = gy.size() / bins.bins_y;
  std::vector<double> expected(bins.bins_x * bins.bins_y, 0.0), observed(expected.size(), 0.0);
  for (std::size_t i = 0; i < gx.size(); ++i) {
    for (std::size_t j = 0; j < gy.size(); ++j) {
      expected[(i / bx) * bins.bins_y + j / by] += std::norm(psi.at(i, j));
    }
  }
  EquivarianceReport r;
  r.n_total = configs.size();
  for (std::size_t t = 0; t < configs.size(); ++t) {
    if (!failed.empty() && failed[t]) {
      ++r.n_failed;
      continue;
    }
    const std::size_t i = gx.nearest_index(configs[t].X), j = gy.nearest_index(configs[t].Y);
    observed[(i / bx) * bins.bins_y + j / by] += 1.0;
  }
  const auto gof = chi2_goodness_of_fit(observed, expected);
  r.chi2 = gof.chi2;
  r.dof = gof.dof;
  r.p_value = gof.p_value;
  return r;
}

inline EquivarianceReport chi2_against_density(const std::vector<double>& positions,
                                               const std::vector<std::uint8_t>& failed, const WaveFunction1D& psi,
                                               std::size_t n_bins = 16) {
  const auto& g = psi.grid();
  if (n_bins == 0 || g.size() % n_bins != 0) throw ValidationError("equivariance: bin count must divide grid size");
  const std::size_t b = g.size() / n_bins;
  std::vector<double> expected(n_bins, 0.0), observed(n_bins, 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) expected[i / b] += std::norm(psi[i]);
  EquivarianceReport r;
  r.n_total = positions.size();
  for (std::size_t t = 0; t < positions.size(); ++t) {
    if (!failed.empty() && failed[t]) {
      ++r.n_failed;
      continue;
    }
    observed[g.nearest_index(positions[t]) / b] += 1.0;
  }
  const auto gof = chi2_goodness_of_fit(observed, expected);
  r.chi2 = gof.chi2;
  r.dof = gof.dof;
  r.p_value = gof.p_value;
  return r;
}

/// Samples n configurations from |Psi0|^2, co-evolves them with Psi and compares the final
/// ensemble with |Psi_final|^2 on the given coarse binning.
inline EquivarianceReport equivariance_check(const WaveFunction2D& psi0, const Hamiltonian& h, double dt,
                                             std::size_t steps, std::size_t n, std::uint64_t seed,
                                             BinSpec bins = {}) {
  FieldSequence2D seq(psi0, h, dt);
  Ensemble2D ens{sample_qeh(psi0, n, seed, true), {}};
  ens.failed.assign(n, 0);
  evolve_ensemble(seq, ens, steps);
  return chi2_against_density(ens.configs, ens.failed, seq.state_at_half_step(2 * steps), bins);
}

inline EquivarianceReport equivariance_check(const WaveFunction1D& psi0, const Hamiltonian& h, double dt,
                                             std::size_t steps, std::size_t n, std::uint64_t seed,
                                             std::size_t n_bins = 16) {
  FieldSequence1D seq(psi0, h, dt);
  Ensemble1D ens{sample_qeh(psi0, n, seed, true), {}};
  ens.failed.assign(n, 0);
  evolve_ensemble(seq, ens, steps);
  const auto psi_t = SplitOperator1D(psi0.grid(), h, dt).advance(psi0, steps);
  return chi2_against_density(ens.positions, ens.failed, psi_t, n_bins);
}

/// Carries configurations across an instantaneous unitary by the monotone rearrangement
/// that maps the cell-wise piecewise-constant density of `before` onto that of `after`:
/// Y by its marginal quantile, then X by its quantile conditional on the Y cell.
inline std::vector<BohmConfig> transport_configurations(const std::vector<BohmConfig>& configs,
                                                        const WaveFunction2D& before, const WaveFunction2D& after) {
  require_same_grid(before.grid_x(), after.grid_x());
  require_same_grid(before.grid_y(), after.grid_y());
  const auto& gx = before.grid_x();
  const auto& gy = before.grid_y();
  const std::size_t nx = gx.size(), ny = gy.size();
  auto marginal_y = [&](const WaveFunction2D& p) {
    std::vector<double> m(ny, 0.0);
    for (std::size_t i = 0; i < nx; ++i) {
      for (std::size_t j = 0; j < ny; ++j) m[j] += std::norm(p.at(i, j));
    }
    return m;
  };
  auto column = [&](const WaveFunction2D& p, std::size_t j) {
    std::vector<double> m(nx);
    for (std::size_t i = 0; i < nx; ++i) m[i] = std::norm(p.at(i, j));
    return detail::cumulative(m);
  };
  const auto cb = detail::cumulative(marginal_y(before));
  const auto ca = detail::cumulative(marginal_y(after));
  // fractional position within the cell, measured from its lower edge x_i - dx/2
  auto cell_fraction = [](const Grid1D& g, double x, std::size_t i) {
    double f = (x - g.point(i)) / g.spacing() + 0.5;
    if (f < 0.0) f += static_cast<double>(g.size());
    if (f >= static_cast<double>(g.size())) f -= static_cast<double>(g.size());
    return std::clamp(f, 0.0, 1.0);
  };
  auto map_quantile = [](const std::vector<double>& c_from, std::size_t cell, double frac,
                         const std::vector<double>& c_to, const Grid1D& g) {
    const double sf = c_from.back(), st = c_to.back();
    const double u = (c_from[cell] + frac * (c_from[cell + 1] - c_from[cell])) / sf * st;
    const std::size_t k = detail::invert_cdf(c_to, u);
    const double width = c_to[k + 1] - c_to[k];
    const double f = width > 0.0 ? std::clamp((u - c_to[k]) / width, 0.0, 1.0) : 0.5;
    return std::pair<std::size_t, double>{k, detail::wrap_into(g, g.point(k) + (f - 0.5) * g.spacing())};
  };
  std::vector<BohmConfig> out(configs.size());
  std::vector<std::vector<double>> col_before(ny), col_after(ny);
  for (std::size_t t = 0; t < configs.size(); ++t) {
    const std::size_t j = gy.nearest_index(configs[t].Y);
    const std::size_t i = gx.nearest_index(configs[t].X);
    const auto [j2, Y2] = map_quantile(cb, j, cell_fraction(gy, configs[t].Y, j), ca, gy);
    if (col_before[j].empty()) col_before[j] = column(before, j);
    if (col_after[j2].empty()) col_after[j2] = column(after, j2);
    if (!(col_before[j].back() > 0.0) || !(col_after[j2].back() > 0.0)) {
      throw NumericalError("transport: configuration in an empty cell");
    }
    const auto [i2, X2] = map_quantile(col_before[j], i, cell_fraction(gx, configs[t].X, i), col_after[j2], gx);
    (void)i2;
    out[t] = {X2, Y2};
  }
  return out;
}

inline void write_trajectories_csv(std::ostream& out, const std::vector<Trajectory>& trajectories) {
  out << "trial,t,X,Y\n";
  for (std::size_t k = 0; k < trajectories.size(); ++k) {
    const auto& tr = trajectories[k];
    for (std::size_t s = 0; s < tr.size(); ++s) {
      out << k << ',' << detail::fmt_double(tr.times()[s]) << ',' << detail::fmt_double(tr.configs()[s].X) << ','
          << detail::fmt_double(tr.configs()[s].Y) << '\n';
    }
  }
}

}  // namespace cwf
