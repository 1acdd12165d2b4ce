#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "parallel.hpp"
#include "qgrid.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace cwf {

inline constexpr double kOverlapFloor = 1e-12;

struct WeakValue {
  cplx value;
  std::string postselection;
  std::string observable;
};

/// Dense operator on the amplitudes of a 1-D grid, (A psi)_i = sum_j A_ij psi_j.
class GridOperator {
 public:
  GridOperator(Grid1D g, Eigen::MatrixXcd m, std::string label = "A")
      : grid_(std::move(g)), m_(std::move(m)), label_(std::move(label)) {
    const auto n = static_cast<Eigen::Index>(grid_.size());
    if (m_.rows() != n || m_.cols() != n) throw ValidationError("grid operator: matrix shape != grid size");
  }

  static GridOperator identity(const Grid1D& g) {
    const auto n = static_cast<Eigen::Index>(g.size());
    return GridOperator(g, Eigen::MatrixXcd::Identity(n, n), "1");
  }

  /// |x_s><x_s| regularized as the indicator of cell s divided by dx.
  static GridOperator projector_density(const Grid1D& g, std::size_t site) {
    if (site >= g.size()) throw ValidationError("projector_density: site outside grid");
    const auto n = static_cast<Eigen::Index>(g.size());
    Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(n, n);
    m(static_cast<Eigen::Index>(site), static_cast<Eigen::Index>(site)) = 1.0 / g.spacing();
    return GridOperator(g, std::move(m), "pi_x(" + std::to_string(g.point(site)) + ")");
  }

  static GridOperator multiplication(const Grid1D& g, const std::function<cplx(double)>& f) {
    const auto n = static_cast<Eigen::Index>(g.size());
    Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i) m(i, i) = f(g.point(static_cast<std::size_t>(i)));
    return GridOperator(g, std::move(m), "f(x)");
  }

  const Grid1D& grid() const { return grid_; }
  const Eigen::MatrixXcd& matrix() const { return m_; }
  const std::string& label() const { return label_; }

  WaveFunction1D apply(const WaveFunction1D& psi) const {
    require_same_grid(psi.grid(), grid_);
    Eigen::Map<const Eigen::VectorXcd> v(psi.amplitudes().data(), static_cast<Eigen::Index>(psi.size()));
    Eigen::VectorXcd r = m_ * v;
    return WaveFunction1D(grid_, std::vector<cplx>(r.data(), r.data() + r.size()));
  }

  friend GridOperator operator+(const GridOperator& a, const GridOperator& b) {
    require_same_grid(a.grid_, b.grid_);
    return GridOperator(a.grid_, a.m_ + b.m_, a.label_ + "+" + b.label_);
  }
  friend GridOperator operator*(cplx s, const GridOperator& a) { return GridOperator(a.grid_, s * a.m_, a.label_); }

 private:
  Grid1D grid_;
  Eigen::MatrixXcd m_;
  std::string label_;
};

/// Normalized plane wave e^{ipx/hbar}/sqrt(L) on the grid.
inline WaveFunction1D plane_wave(const Grid1D& g, double p, double hbar = 1.0) {
  const double a = 1.0 / std::sqrt(g.length());
  return WaveFunction1D::from_function(g, [&](double x) { return std::polar(a, p * x / hbar); }, NormTag::normalized);
}

inline WeakValue weak_value(const GridOperator& A, const WaveFunction1D& psi, const WaveFunction1D& b,
                            const std::string& postselection = "b") {
  const cplx den = inner_product(b, psi);
  const double scale = norm(b) * norm(psi);
  if (!(scale > 0.0) || std::abs(den) <= kOverlapFloor * scale) throw OverlapError(scale > 0.0 ? std::abs(den) / scale : 0.0);
  return {inner_product(b, A.apply(psi)) / den, postselection, A.label()};
}

namespace detail {

// sum_i e^{-i p x_i / hbar} chi_i dx: the unnormalized Fourier amplitude at p.
inline cplx fourier_amplitude(std::span<const cplx> chi, const Grid1D& g, double p, double hbar) {
  cplx s = 0.0;
  for (std::size_t i = 0; i < chi.size(); ++i) s += std::polar(1.0, -p * g.point(i) / hbar) * chi[i];
  return s * g.spacing();
}

inline void check_overlap(cplx den, double chi_norm, const Grid1D& g) {
  // |<p|chi>| for the normalized plane wave is |den| / sqrt(L)
  const double ov = chi_norm > 0.0 ? std::abs(den) / (std::sqrt(g.length()) * chi_norm) : 0.0;
  if (!(ov > kOverlapFloor)) throw OverlapError(ov);
}

inline std::string fmt_pvalue(double p) { return "p_x=" + std::to_string(p); }

}  // namespace detail

/// e^{-i p x/hbar} psi(x) / psi_F(p), psi_F(p) = sum_x' e^{-i p x'/hbar} psi(x') dx
/// (the Fourier amplitude without the 1/sqrt(2 pi hbar) factor).
inline WeakValue weak_value_pi_x(const WaveFunction1D& psi, double x, double p, double hbar = 1.0) {
  const auto& g = psi.grid();
  const std::size_t s = g.nearest_index(x);
  const cplx den = detail::fourier_amplitude(psi.amplitudes(), g, p, hbar);
  detail::check_overlap(den, norm(psi), g);
  return {std::polar(1.0, -p * g.point(s) / hbar) * psi[s] / den, detail::fmt_pvalue(p),
          "pi_x(" + std::to_string(g.point(s)) + ")"};
}

/// weak_value_pi_x at every grid point.
inline std::vector<cplx> weak_value_scan(const WaveFunction1D& psi, double p, double hbar = 1.0) {
  const auto& g = psi.grid();
  const cplx den = detail::fourier_amplitude(psi.amplitudes(), g, p, hbar);
  detail::check_overlap(den, norm(psi), g);
  std::vector<cplx> out(psi.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::polar(1.0, -p * g.point(i) / hbar) * psi[i] / den;
  return out;
}

inline WeakValue weak_value_entangled(const WaveFunction2D& psi, double x, double p, double Y, double hbar = 1.0) {
  const WaveFunction1D chi = conditional_slice(psi, Y);
  const auto& g = chi.grid();
  const std::size_t s = g.nearest_index(x);
  const cplx den = detail::fourier_amplitude(chi.amplitudes(), g, p, hbar);
  detail::check_overlap(den, norm(chi), g);
  return {std::polar(1.0, -p * g.point(s) / hbar) * chi[s] / den,
          detail::fmt_pvalue(p) + ",Y=" + std::to_string(psi.grid_y().point(psi.grid_y().nearest_index(Y))),
          "pi_x(" + std::to_string(g.point(s)) + ")"};
}

/// Particle 2 carries an unobserved label (e.g. its polarization): components Psi_sigma(x, y)
/// add incoherently, W = sum_s conj(D_s) N_s / sum_s |D_s|^2 with D_s the Fourier amplitude
/// and N_s the numerator of the single-component formula, summed over the grid rows in [y_lo, y_hi).
inline WeakValue weak_value_entangled_bin(std::span<const WaveFunction2D> components, double x, double p,
                                          double y_lo, double y_hi, double hbar = 1.0) {
  if (components.empty()) throw ValidationError("weak value: no components");
  const auto& gx = components[0].grid_x();
  const auto& gy = components[0].grid_y();
  const std::size_t s = gx.nearest_index(x);
  const cplx ph = std::polar(1.0, -p * gx.point(s) / hbar);
  cplx num = 0.0;
  double den = 0.0, chi2 = 0.0;
  std::vector<cplx> row(gx.size());
  for (const auto& c : components) {
    require_same_grid(c.grid_x(), gx);
    require_same_grid(c.grid_y(), gy);
    for (std::size_t j = 0; j < gy.size(); ++j) {
      const double y = gy.point(j);
      if (y < y_lo || y >= y_hi) continue;
      for (std::size_t i = 0; i < gx.size(); ++i) row[i] = c.at(i, j);
      const cplx d = detail::fourier_amplitude(row, gx, p, hbar);
      num += std::conj(d) * ph * c.at(s, j);
      den += std::norm(d);
      chi2 += detail::sum_sq(row) * gx.spacing();
    }
  }
  detail::check_overlap(std::sqrt(den), std::sqrt(chi2), gx);
  return {num / den,
          detail::fmt_pvalue(p) + ",Y in [" + std::to_string(y_lo) + "," + std::to_string(y_hi) + ")",
          "pi_x(" + std::to_string(gx.point(s)) + ")"};
}

inline WeakValue weak_value_entangled(std::span<const WaveFunction2D> components, double x, double p, double Y,
                                      double hbar = 1.0) {
  if (components.empty()) throw ValidationError("weak value: no components");
  const auto& gy = components[0].grid_y();
  const double y = gy.point(gy.nearest_index(Y));
  return weak_value_entangled_bin(components, x, p, y - 0.5 * gy.spacing(), y + 0.5 * gy.spacing(), hbar);
}

// ---------------------------------------------------------------------------------------------
// Pointer protocol

enum class PointerModel { qubit, gaussian };

inline const char* to_string(PointerModel m) { return m == PointerModel::qubit ? "qubit" : "gaussian"; }

// Calibration, derived in docs/estimators.md. Qubit pointer rotated by theta = g/dx on the site:
//   <sigma_x> = kQubitContrast * sin(theta) * dx * Re W + O(theta^2), same for sigma_y / Im W.
// Gaussian pointer shifted by delta = g/dx:
//   <q> = g Re W,   <P> = kGaussianMomentumGain * hbar * g * Im W / sigma_p^2.
inline constexpr double kQubitContrast = 2.0;
inline constexpr double kGaussianMomentumGain = 0.5;
inline constexpr double kDefaultMomentumWindowCells = 1.5;
inline constexpr std::size_t kDefaultYBins = 16;

struct PointerProtocol {
  PointerModel model = PointerModel::qubit;
  double coupling = 0.02;          // g
  double pointer_width = 1.0;      // sigma_p, Gaussian pointer
  std::size_t n_trials = 100000;   // per coupling site
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;        // independent arms use different streams
  double p_x_bin = 0.0;            // half-width; <= 0 means 1.5 momentum cells
  std::vector<double> y_edges;     // increasing; empty means 16 cell-aligned bins over the y grid
  std::vector<std::size_t> sites;  // empty means every x with marginal density >= site_threshold * max
  double site_threshold = 0.0025;
  double hbar = 1.0;
  std::size_t max_records = 0;

  void validate() const {
    if (!(coupling > 0.0)) throw ValidationError("pointer protocol: g must be positive");
    if (!(pointer_width > 0.0)) throw ValidationError("pointer protocol: sigma_p must be positive");
    if (n_trials == 0) throw ValidationError("pointer protocol: n_trials must be positive");
    if (!(hbar > 0.0)) throw ValidationError("pointer protocol: hbar must be positive");
    for (std::size_t i = 1; i < y_edges.size(); ++i) {
      if (!(y_edges[i] > y_edges[i - 1])) throw ValidationError("pointer protocol: y_edges must increase");
    }
    if (y_edges.size() == 1) throw ValidationError("pointer protocol: need at least two y edges");
  }
};

/// One simulated trial. y and y_bin are only set for accepted trials.
struct RunRecord {
  std::size_t trial = 0;
  std::size_t site = 0;
  double x = 0.0;
  bool accepted = false;
  double p_x = 0.0;
  double y = std::numeric_limits<double>::quiet_NaN();
  int y_bin = -1;
  const char* basis = "";
  double outcome = 0.0;
};

struct BinEstimate {
  std::size_t site = 0;
  double x = 0.0;
  std::size_t y_bin = 0;
  double re = 0.0, im = 0.0;
  double se_re = 0.0, se_im = 0.0;
  std::size_t n_accepted = 0;
  bool empty = true;
  // qubit: (+, -) counts for the D/A and L/R bases; Gaussian: trial counts for q and P readouts
  std::array<std::size_t, 4> counts{};
};

struct SiteSummary {
  std::size_t site = 0;
  double x = 0.0;
  std::size_t n_trials = 0;
  std::size_t n_accepted = 0;
  std::size_t n_unbinned = 0;
  double acceptance_exact = 0.0;
};

struct ProtocolResult {
  PointerModel model = PointerModel::qubit;
  double coupling = 0.0;
  double pointer_width = 0.0;
  double weakness_ratio = 0.0;
  double p_x_bin = 0.0;
  std::vector<double> y_edges;
  std::vector<SiteSummary> sites;
  std::vector<BinEstimate> bins;  // site-major, n_bins per site
  std::vector<RunRecord> records;

  std::size_t n_bins() const { return y_edges.size() - 1; }
  const BinEstimate& at(std::size_t site_pos, std::size_t bin) const { return bins[site_pos * n_bins() + bin]; }
};

/// Joint amplitudes at one coupling site, indexed ((label * n_k) + k) * n_y + j:
///   a: amplitude of (p_k, y_j, label) without coupling,
///   b: the part routed through the coupled cell, c_k * Psi(x_s, y_j), c_k = e^{-i p_k x_s/hbar} dx/sqrt(2 pi hbar).
struct SiteAmplitudes {
  std::size_t site = 0;
  std::size_t n_labels = 0, n_k = 0, n_y = 0;
  std::vector<cplx> a, b;

  std::size_t index(std::size_t label, std::size_t k, std::size_t j) const { return (label * n_k + k) * n_y + j; }
};

/// State of the measured system: particle 1 on an x grid, particle 2 on a y grid (or absent),
/// and optionally an unobserved label of particle 2.
class PointerExperiment {
 public:
  using Hook = std::function<void(SiteAmplitudes&)>;

  explicit PointerExperiment(const WaveFunction1D& psi, double hbar = 1.0)
      : gx_(psi.grid()), hbar_(hbar), n_y_(1), dy_(1.0), y_points_{0.0} {
    comps_.emplace_back(psi.amplitudes().begin(), psi.amplitudes().end());
    const auto m = to_momentum(psi, hbar);
    momentum_.emplace_back(m.amplitudes().begin(), m.amplitudes().end());
  }

  explicit PointerExperiment(std::span<const WaveFunction2D> components, double hbar = 1.0)
      : gx_(first(components).grid_x()), hbar_(hbar), gy_(components[0].grid_y()),
        n_y_(components[0].grid_y().size()), dy_(components[0].grid_y().spacing()) {
    for (std::size_t j = 0; j < n_y_; ++j) y_points_.push_back(gy_->point(j));
    for (const auto& c : components) {
      require_same_grid(c.grid_x(), gx_);
      require_same_grid(c.grid_y(), *gy_);
      comps_.emplace_back(c.amplitudes().begin(), c.amplitudes().end());
      const auto m = to_momentum_x(c, hbar);
      momentum_.emplace_back(m.amplitudes().begin(), m.amplitudes().end());
    }
  }

  /// Applied to the amplitudes of every site after the coupling, before any readout.
  void set_post_coupling(Hook h) { hook_ = std::move(h); }

  const Grid1D& grid_x() const { return gx_; }
  bool has_particle2() const { return gy_.has_value(); }
  std::size_t n_labels() const { return comps_.size(); }
  double momentum_spacing() const { return gx_.conjugate(hbar_).spacing(); }

  std::vector<double> default_y_edges() const {
    if (!gy_) return {-1.0, 1.0};
    std::vector<double> e;
    const double w = gy_->length() / static_cast<double>(kDefaultYBins);
    for (std::size_t b = 0; b <= kDefaultYBins; ++b) e.push_back(gy_->min() - 0.5 * dy_ + w * static_cast<double>(b));
    return e;
  }

  std::vector<std::size_t> default_sites(double threshold) const {
    std::vector<double> m(gx_.size(), 0.0);
    for (const auto& c : comps_) {
      for (std::size_t i = 0; i < gx_.size(); ++i) {
        for (std::size_t j = 0; j < n_y_; ++j) m[i] += std::norm(c[i * n_y_ + j]);
      }
    }
    const double mx = *std::max_element(m.begin(), m.end());
    std::vector<std::size_t> s;
    for (std::size_t i = 0; i < m.size(); ++i) {
      if (m[i] >= threshold * mx) s.push_back(i);
    }
    return s;
  }

  SiteAmplitudes amplitudes(std::size_t site) const {
    if (site >= gx_.size()) throw ValidationError("pointer protocol: site outside grid");
    const Grid1D pg = gx_.conjugate(hbar_);
    const double pref = gx_.spacing() / std::sqrt(2.0 * std::numbers::pi * hbar_);
    SiteAmplitudes s;
    s.site = site;
    s.n_labels = comps_.size();
    s.n_k = gx_.size();
    s.n_y = n_y_;
    s.a.resize(s.n_labels * s.n_k * s.n_y);
    s.b.resize(s.a.size());
    for (std::size_t l = 0; l < s.n_labels; ++l) {
      for (std::size_t k = 0; k < s.n_k; ++k) {
        const cplx c = std::polar(pref, -pg.point(k) * gx_.point(site) / hbar_);
        for (std::size_t j = 0; j < n_y_; ++j) {
          s.a[s.index(l, k, j)] = momentum_[l][k * n_y_ + j];
          s.b[s.index(l, k, j)] = c * comps_[l][site * n_y_ + j];
        }
      }
    }
    if (hook_) hook_(s);
    return s;
  }

  const std::vector<double>& y_points() const { return y_points_; }
  double y_spacing() const { return dy_; }
  const std::optional<Grid1D>& grid_y() const { return gy_; }
  double hbar() const { return hbar_; }

 private:
  static const WaveFunction2D& first(std::span<const WaveFunction2D> c) {
    if (c.empty()) throw ValidationError("pointer protocol: no state components");
    return c[0];
  }

  Grid1D gx_;
  double hbar_;
  std::optional<Grid1D> gy_;
  std::size_t n_y_;
  double dy_;
  std::vector<double> y_points_;
  std::vector<std::vector<cplx>> comps_, momentum_;
  Hook hook_;
};

namespace detail {

struct PointerKernel {
  PointerModel model;
  double theta = 0.0;    // qubit rotation angle g/dx
  double delta = 0.0;    // Gaussian pointer shift g/dx
  double sigma = 1.0;    // Gaussian |phi(q)|^2 std
  double overlap = 1.0;  // <phi|phi_delta>
  double hbar = 1.0;

  // amplitudes (alpha, beta) multiplying the unshifted and shifted pointer states
  // (qubit: |H> and |V> components)
  std::pair<cplx, cplx> split(cplx a, cplx b) const {
    if (model == PointerModel::qubit) return {a - (1.0 - std::cos(theta)) * b, std::sin(theta) * b};
    return {a - b, b};
  }

  double weight(cplx al, cplx be) const {
    if (model == PointerModel::qubit) return std::norm(al) + std::norm(be);
    return std::norm(al) + std::norm(be) + 2.0 * overlap * (std::conj(al) * be).real();
  }

  // qubit: <sigma_x> and <sigma_y> numerators; Gaussian: <q> and <P> numerators
  std::pair<double, double> first_moments(cplx al, cplx be) const {
    const cplx m = std::conj(al) * be;
    if (model == PointerModel::qubit) return {2.0 * m.real(), 2.0 * m.imag()};
    const double s2p = hbar * hbar / (4.0 * sigma * sigma);
    return {std::norm(be) * delta + m.real() * delta * overlap, 2.0 * delta * s2p / hbar * overlap * m.imag()};
  }
};

inline PointerKernel make_kernel(const PointerProtocol& p, double dx) {
  PointerKernel k{p.model};
  k.theta = p.coupling / dx;
  k.delta = p.coupling / dx;
  k.sigma = p.pointer_width;
  k.overlap = std::exp(-k.delta * k.delta / (8.0 * p.pointer_width * p.pointer_width));
  k.hbar = p.hbar;
  return k;
}

inline int bin_of(const std::vector<double>& edges, double y) {
  if (y < edges.front() || y >= edges.back()) return -1;
  return static_cast<int>(std::upper_bound(edges.begin(), edges.end(), y) - edges.begin()) - 1;
}

// Estimator: readout means -> (Re W, Im W).
inline std::pair<double, double> estimator_scale(const PointerProtocol& p, double dx) {
  if (p.model == PointerModel::qubit) {
    const double s = 1.0 / (kQubitContrast * std::sin(p.coupling / dx) * dx);
    return {s, s};
  }
  return {1.0 / p.coupling,
          p.pointer_width * p.pointer_width / (kGaussianMomentumGain * p.hbar * p.coupling)};
}

/// Per-site sampling tables.
struct SiteTables {
  std::vector<double> row_weight;             // per k, summed over j and labels
  std::vector<double> k_cdf;                  // cumulative row_weight
  std::vector<std::size_t> accepted_k;        // k inside the momentum window
  std::vector<std::vector<double>> j_cdf;     // per accepted k: cumulative over j (labels summed)
  std::vector<std::vector<double>> label_cdf; // per accepted k: per j cumulative over labels (Gaussian only)
  std::vector<std::vector<std::array<double, 2>>> p_plus;  // per accepted k, per j: P(D), P(L) (qubit)
};

}  // namespace detail

inline ProtocolResult protocol_skeleton(const PointerExperiment& ex, const PointerProtocol& proto,
                                        std::vector<std::size_t>& sites) {
  proto.validate();
  ProtocolResult r;
  r.model = proto.model;
  r.coupling = proto.coupling;
  r.pointer_width = proto.pointer_width;
  const double dx = ex.grid_x().spacing();
  r.weakness_ratio =
      proto.coupling / dx / (proto.model == PointerModel::qubit ? 1.0 : proto.pointer_width);
  r.p_x_bin = proto.p_x_bin > 0.0 ? proto.p_x_bin : kDefaultMomentumWindowCells * ex.momentum_spacing();
  r.y_edges = proto.y_edges.empty() ? ex.default_y_edges() : proto.y_edges;
  if (!ex.has_particle2()) r.y_edges = {-1.0, 1.0};
  sites = proto.sites.empty() ? ex.default_sites(proto.site_threshold) : proto.sites;
  for (auto s : sites) {
    if (s >= ex.grid_x().size()) throw ValidationError("pointer protocol: site outside grid");
  }
  return r;
}

namespace detail {

inline SiteTables build_tables(const SiteAmplitudes& amp, const PointerKernel& ker, const Grid1D& pg,
                               double p_window) {
  SiteTables t;
  t.row_weight.assign(amp.n_k, 0.0);
  for (std::size_t l = 0; l < amp.n_labels; ++l) {
    for (std::size_t k = 0; k < amp.n_k; ++k) {
      for (std::size_t j = 0; j < amp.n_y; ++j) {
        const auto [al, be] = ker.split(amp.a[amp.index(l, k, j)], amp.b[amp.index(l, k, j)]);
        t.row_weight[k] += ker.weight(al, be);
      }
    }
  }
  t.k_cdf = cumulative(t.row_weight);
  for (std::size_t k = 0; k < amp.n_k; ++k) {
    if (std::abs(pg.point(k)) >= p_window) continue;
    t.accepted_k.push_back(k);
    std::vector<double> wj(amp.n_y, 0.0);
    std::vector<std::array<double, 2>> pp(amp.n_y);
    std::vector<double> lc;
    for (std::size_t j = 0; j < amp.n_y; ++j) {
      double d = 0.0, lft = 0.0;
      double acc = 0.0;
      for (std::size_t l = 0; l < amp.n_labels; ++l) {
        const auto [al, be] = ker.split(amp.a[amp.index(l, k, j)], amp.b[amp.index(l, k, j)]);
        const double w = ker.weight(al, be);
        wj[j] += w;
        d += 0.5 * std::norm(al + be);
        lft += 0.5 * std::norm(al - cplx(0.0, 1.0) * be);
        acc += w;
        lc.push_back(acc);
      }
      pp[j] = {wj[j] > 0.0 ? d / wj[j] : 0.5, wj[j] > 0.0 ? lft / wj[j] : 0.5};
    }
    t.j_cdf.push_back(cumulative(wj));
    t.p_plus.push_back(std::move(pp));
    t.label_cdf.push_back(std::move(lc));
  }
  return t;
}

inline std::size_t sample_cdf(const std::vector<double>& c, double u) { return invert_cdf(c, u * c.back()); }

// Rejection sampling of the pointer reading for amplitude alpha*phi(q) + beta*phi(q - delta).
inline double sample_position_reading(CounterRng& rng, const PointerKernel& ker, cplx al, cplx be) {
  const double wa = std::norm(al), wb = std::norm(be);
  const double s = ker.sigma;
  auto phi = [s](double q) { return std::exp(-q * q / (4.0 * s * s)); };
  for (int it = 0; it < 1000; ++it) {
    const bool shifted = rng.uniform() * (wa + wb) >= wa;
    const double q = (shifted ? ker.delta : 0.0) + s * rng.normal();
    const double f0 = phi(q), f1 = phi(q - ker.delta);
    const double target = std::norm(al * f0 + be * f1);
    const double bound = 2.0 * (wa * f0 * f0 + wb * f1 * f1);
    if (rng.uniform() * bound <= target) return q;
  }
  throw NumericalError("pointer: position rejection sampler did not converge");
}

inline double sample_momentum_reading(CounterRng& rng, const PointerKernel& ker, cplx al, cplx be) {
  const double sp = ker.hbar / (2.0 * ker.sigma);
  const double bound = std::pow(std::abs(al) + std::abs(be), 2);
  for (int it = 0; it < 1000; ++it) {
    const double P = sp * rng.normal();
    const double target = std::norm(al + be * std::polar(1.0, -P * ker.delta / ker.hbar));
    if (rng.uniform() * bound <= target) return P;
  }
  throw NumericalError("pointer: momentum rejection sampler did not converge");
}

}  // namespace detail

/// Monte-Carlo simulation of the weak pointer coupling at each site followed by the strong
/// p_x and Y measurements and a pointer readout in one of two conjugate bases (alternating trials).
inline ProtocolResult run_pointer_protocol(const PointerExperiment& ex, const PointerProtocol& proto) {
  std::vector<std::size_t> sites;
  ProtocolResult r = protocol_skeleton(ex, proto, sites);
  const std::size_t nb = r.n_bins();
  const double dx = ex.grid_x().spacing();
  const Grid1D pg = ex.grid_x().conjugate(proto.hbar);
  const auto ker = detail::make_kernel(proto, dx);
  const auto [scale_re, scale_im] = detail::estimator_scale(proto, dx);
  const auto& ys = ex.y_points();
  std::vector<int> y_bin(ys.size());
  for (std::size_t j = 0; j < ys.size(); ++j) y_bin[j] = ex.has_particle2() ? detail::bin_of(r.y_edges, ys[j]) : 0;

  r.sites.resize(sites.size());
  r.bins.resize(sites.size() * nb);
  std::vector<std::vector<RunRecord>> recs(sites.size());

  parallel_for(sites.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t si = b; si < e; ++si) {
      const std::size_t site = sites[si];
      const auto amp = ex.amplitudes(site);
      const auto tab = detail::build_tables(amp, ker, pg, r.p_x_bin);
      SiteSummary& sum = r.sites[si];
      sum.site = site;
      sum.x = ex.grid_x().point(site);
      sum.n_trials = proto.n_trials;
      double acc_w = 0.0;
      for (auto k : tab.accepted_k) acc_w += tab.row_weight[k];
      sum.acceptance_exact = acc_w / tab.k_cdf.back();
      std::vector<RunningStats> st_re(nb), st_im(nb);
      std::vector<std::array<std::size_t, 4>> counts(nb, std::array<std::size_t, 4>{});
      const std::uint64_t key = splitmix64(proto.stream) ^ (static_cast<std::uint64_t>(site) * 0x9e3779b97f4a7c15ULL);
      for (std::size_t t = 0; t < proto.n_trials; ++t) {
        CounterRng rng(proto.seed, key, t);
        RunRecord rec;
        rec.trial = t;
        rec.site = site;
        rec.x = sum.x;
        const std::size_t k = detail::sample_cdf(tab.k_cdf, rng.uniform());
        rec.p_x = pg.point(k);
        const auto it = std::find(tab.accepted_k.begin(), tab.accepted_k.end(), k);
        if (it != tab.accepted_k.end()) {
          rec.accepted = true;
          ++sum.n_accepted;
          const auto ak = static_cast<std::size_t>(it - tab.accepted_k.begin());
          const std::size_t j = detail::sample_cdf(tab.j_cdf[ak], rng.uniform());
          if (ex.has_particle2()) rec.y = ys[j];
          rec.y_bin = y_bin[j];
          const bool real_basis = t % 2 == 0;
          if (proto.model == PointerModel::qubit) {
            rec.basis = real_basis ? "DA" : "LR";
            const double pplus = tab.p_plus[ak][j][real_basis ? 0 : 1];
            rec.outcome = rng.uniform() < pplus ? 1.0 : -1.0;
          } else {
            rec.basis = real_basis ? "q" : "P";
            const auto& lc = tab.label_cdf[ak];
            const std::size_t base = j * amp.n_labels;
            std::vector<double> c(amp.n_labels + 1, 0.0);
            for (std::size_t l = 0; l < amp.n_labels; ++l) c[l + 1] = lc[base + l];
            const std::size_t l = detail::sample_cdf(c, rng.uniform());
            const auto [al, be] = ker.split(amp.a[amp.index(l, k, j)], amp.b[amp.index(l, k, j)]);
            rec.outcome = real_basis ? detail::sample_position_reading(rng, ker, al, be)
                                     : detail::sample_momentum_reading(rng, ker, al, be);
          }
          if (rec.y_bin < 0) {
            ++sum.n_unbinned;
          } else {
            const auto yb = static_cast<std::size_t>(rec.y_bin);
            (real_basis ? st_re : st_im)[yb].add(rec.outcome);
            if (proto.model == PointerModel::qubit) {
              ++counts[yb][(real_basis ? 0 : 2) + (rec.outcome > 0 ? 0 : 1)];
            } else {
              ++counts[yb][real_basis ? 0 : 2];
            }
          }
        }
        if (recs[si].size() < proto.max_records) recs[si].push_back(rec);
      }
      for (std::size_t yb = 0; yb < nb; ++yb) {
        BinEstimate& be = r.bins[si * nb + yb];
        be.site = site;
        be.x = sum.x;
        be.y_bin = yb;
        be.counts = counts[yb];
        be.n_accepted = st_re[yb].count() + st_im[yb].count();
        be.empty = st_re[yb].count() == 0 || st_im[yb].count() == 0;
        if (be.empty) {
          be.re = be.im = be.se_re = be.se_im = std::numeric_limits<double>::quiet_NaN();
          continue;
        }
        be.re = st_re[yb].mean() * scale_re;
        be.im = st_im[yb].mean() * scale_im;
        be.se_re = st_re[yb].standard_error() * scale_re;
        be.se_im = st_im[yb].standard_error() * scale_im;
      }
    }
  });
  for (auto& v : recs) {
    for (auto& rec : v) {
      if (r.records.size() >= proto.max_records) break;
      r.records.push_back(rec);
    }
  }
  return r;
}

/// Infinite-statistics value of the same estimators, from the exact post-coupling state.
inline ProtocolResult expected_protocol(const PointerExperiment& ex, const PointerProtocol& proto) {
  std::vector<std::size_t> sites;
  ProtocolResult r = protocol_skeleton(ex, proto, sites);
  const std::size_t nb = r.n_bins();
  const double dx = ex.grid_x().spacing();
  const Grid1D pg = ex.grid_x().conjugate(proto.hbar);
  const auto ker = detail::make_kernel(proto, dx);
  const auto [scale_re, scale_im] = detail::estimator_scale(proto, dx);
  const auto& ys = ex.y_points();
  r.sites.resize(sites.size());
  r.bins.resize(sites.size() * nb);
  parallel_for(sites.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t si = b; si < e; ++si) {
      const auto amp = ex.amplitudes(sites[si]);
      std::vector<double> w(nb, 0.0), mr(nb, 0.0), mi(nb, 0.0);
      double total = 0.0, acc = 0.0;
      for (std::size_t l = 0; l < amp.n_labels; ++l) {
        for (std::size_t k = 0; k < amp.n_k; ++k) {
          const bool in = std::abs(pg.point(k)) < r.p_x_bin;
          for (std::size_t j = 0; j < amp.n_y; ++j) {
            const auto [al, be] = ker.split(amp.a[amp.index(l, k, j)], amp.b[amp.index(l, k, j)]);
            const double wt = ker.weight(al, be);
            total += wt;
            if (!in) continue;
            acc += wt;
            const int yb = ex.has_particle2() ? detail::bin_of(r.y_edges, ys[j]) : 0;
            if (yb < 0) continue;
            const auto [m1, m2] = ker.first_moments(al, be);
            w[static_cast<std::size_t>(yb)] += wt;
            mr[static_cast<std::size_t>(yb)] += m1;
            mi[static_cast<std::size_t>(yb)] += m2;
          }
        }
      }
      SiteSummary& sum = r.sites[si];
      sum.site = sites[si];
      sum.x = ex.grid_x().point(sites[si]);
      sum.acceptance_exact = acc / total;
      for (std::size_t yb = 0; yb < nb; ++yb) {
        BinEstimate& be = r.bins[si * nb + yb];
        be.site = sum.site;
        be.x = sum.x;
        be.y_bin = yb;
        be.empty = !(w[yb] > 0.0);
        be.re = be.empty ? std::numeric_limits<double>::quiet_NaN() : mr[yb] / w[yb] * scale_re;
        be.im = be.empty ? std::numeric_limits<double>::quiet_NaN() : mi[yb] / w[yb] * scale_im;
      }
    }
  });
  return r;
}

}  // namespace cwf
