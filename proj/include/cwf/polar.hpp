#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "error.hpp"
#include "evolve.hpp"
#include "qgrid.hpp"
#include "rng.hpp"

namespace cwf {

enum class Pol : int { H = 0, V = 1 };

/// pol1 (x) pol2 (x) y-grid; composite index (i1 * 2 + i2) * n_y + y.
class HilbertSpec {
 public:
  explicit HilbertSpec(Grid1D pos2) : pos2_(std::move(pos2)) {}

  const Grid1D& pos2() const { return pos2_; }
  std::size_t n_y() const { return pos2_.size(); }
  std::size_t dimension() const { return 4 * pos2_.size(); }
  std::size_t index(std::size_t i1, std::size_t i2, std::size_t y) const { return (i1 * 2 + i2) * n_y() + y; }

  friend bool operator==(const HilbertSpec& a, const HilbertSpec& b) { return a.pos2_ == b.pos2_; }

 private:
  Grid1D pos2_;
};

/// Default particle-2 grid: 64 points on [-12, 12); wide enough for +/-4 shifts without wrap.
inline HilbertSpec default_hilbert_spec(std::size_t n_y = 64, double half_width = 12.0) {
  return HilbertSpec(Grid1D(-half_width, half_width, n_y));
}

class PolarizationState {
 public:
  explicit PolarizationState(Eigen::Vector2cd v) : v_(std::move(v)) {
    if (std::abs(v_.norm() - 1.0) > 1e-12) throw ValidationError("polarization state must have unit norm");
  }
  static PolarizationState H() { return PolarizationState(Eigen::Vector2cd(1.0, 0.0)); }
  static PolarizationState V() { return PolarizationState(Eigen::Vector2cd(0.0, 1.0)); }
  static PolarizationState D() { return PolarizationState(Eigen::Vector2cd(1.0, 1.0) / std::sqrt(2.0)); }
  static PolarizationState A() { return PolarizationState(Eigen::Vector2cd(1.0, -1.0) / std::sqrt(2.0)); }
  static PolarizationState L() { return PolarizationState(Eigen::Vector2cd(1.0, cplx(0.0, 1.0)) / std::sqrt(2.0)); }
  static PolarizationState R() { return PolarizationState(Eigen::Vector2cd(1.0, cplx(0.0, -1.0)) / std::sqrt(2.0)); }

  const Eigen::Vector2cd& vector() const { return v_; }
  Eigen::Matrix2cd projector() const { return v_ * v_.adjoint(); }

 private:
  Eigen::Vector2cd v_;
};

/// pi_ij = |i><j| on one polarization.
inline Eigen::Matrix2cd pi_op(Pol i, Pol j) {
  Eigen::Matrix2cd m = Eigen::Matrix2cd::Zero();
  m(static_cast<int>(i), static_cast<int>(j)) = 1.0;
  return m;
}

enum class TraceTag { trace_one, unnormalized };

inline const char* to_string(TraceTag t) { return t == TraceTag::trace_one ? "trace-one" : "unnormalized"; }

class DensityOperator {
 public:
  /// spec absent: a 2x2 operator on pol1 alone.
  DensityOperator(std::optional<HilbertSpec> spec, Eigen::MatrixXcd m, TraceTag tag)
      : spec_(std::move(spec)), m_(std::move(m)), tag_(tag) {
    const auto dim = static_cast<Eigen::Index>(spec_ ? spec_->dimension() : 2);
    if (m_.rows() != dim || m_.cols() != dim) throw ValidationError("density operator: wrong matrix shape");
    const double scale = std::max(1.0, m_.cwiseAbs().maxCoeff());
    if ((m_ - m_.adjoint()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
      throw ValidationError("density operator: not Hermitian");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(m_, Eigen::EigenvaluesOnly);
    if (es.eigenvalues().minCoeff() < -1e-10) throw ValidationError("density operator: not positive semidefinite");
    if (tag_ == TraceTag::trace_one && std::abs(m_.trace() - 1.0) > 1e-12) {
      throw ValidationError("density operator: trace " + std::to_string(m_.trace().real()) + " != 1");
    }
  }

  static DensityOperator pure(const HilbertSpec& spec, const Eigen::VectorXcd& psi) {
    if (psi.size() != static_cast<Eigen::Index>(spec.dimension())) {
      throw ValidationError("density operator: state size != composite dimension");
    }
    const double n2 = psi.squaredNorm();
    if (std::abs(n2 - 1.0) > 1e-12) throw ValidationError("density operator: pure state not normalized");
    Eigen::MatrixXcd m = psi * psi.adjoint();
    m = 0.5 * (m + m.adjoint()).eval();
    return DensityOperator(spec, std::move(m), TraceTag::trace_one);
  }

  const std::optional<HilbertSpec>& spec() const { return spec_; }
  const Eigen::MatrixXcd& matrix() const { return m_; }
  TraceTag tag() const { return tag_; }
  cplx trace() const { return m_.trace(); }

 private:
  std::optional<HilbertSpec> spec_;
  Eigen::MatrixXcd m_;
  TraceTag tag_;
};

inline DensityOperator normalize(const DensityOperator& rho) {
  const double tr = rho.trace().real();
  if (!(tr > 0.0)) throw NumericalError("normalize: density operator with zero trace");
  return DensityOperator(rho.spec(), rho.matrix() / tr, TraceTag::trace_one);
}

/// Discrete Gaussian profile on the y grid (unit Euclidean norm), |amplitude|^2 std = width.
inline Eigen::VectorXcd gaussian_profile(const HilbertSpec& spec, double center, double width) {
  const auto& g = spec.pos2();
  Eigen::VectorXcd v(static_cast<Eigen::Index>(g.size()));
  for (std::size_t j = 0; j < g.size(); ++j) {
    const double d = g.point(j) - center;
    v(static_cast<Eigen::Index>(j)) = std::exp(-d * d / (4.0 * width * width));
  }
  const double n = v.norm();
  if (!(n > 0.0)) throw ValidationError("gaussian profile vanishes on the grid");
  return v / n;
}

inline bool well_separated(double shift, double width) { return shift > 2.0 * width; }

/// (phi_plus |HH> + phi_minus |VV>) / sqrt(2) as a state vector.
inline Eigen::VectorXcd bell_state_vector(const HilbertSpec& spec, const Eigen::VectorXcd& phi_h,
                                          const Eigen::VectorXcd& phi_v) {
  Eigen::VectorXcd psi = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(spec.dimension()));
  const double r = 1.0 / std::sqrt(2.0);
  for (std::size_t y = 0; y < spec.n_y(); ++y) {
    psi(static_cast<Eigen::Index>(spec.index(0, 0, y))) = r * phi_h(static_cast<Eigen::Index>(y));
    psi(static_cast<Eigen::Index>(spec.index(1, 1, y))) = r * phi_v(static_cast<Eigen::Index>(y));
  }
  return psi / psi.norm();
}

inline DensityOperator make_state_psi1(const HilbertSpec& spec, double width = 1.0) {
  const auto phi = gaussian_profile(spec, 0.0, width);
  return DensityOperator::pure(spec, bell_state_vector(spec, phi, phi));
}

inline DensityOperator make_state_psi2(const HilbertSpec& spec, double shift, double width = 1.0) {
  return DensityOperator::pure(spec, bell_state_vector(spec, gaussian_profile(spec, shift, width),
                                                       gaussian_profile(spec, -shift, width)));
}

/// |H><H| (x) T_plus + |V><V| (x) T_minus acting on pol2 and y, as a dense unitary.
inline Eigen::MatrixXcd beam_splitter(const HilbertSpec& spec, double shift) {
  const std::size_t ny = spec.n_y();
  const auto& g = spec.pos2();
  detail::Translator tr(g);
  // columns of T_shift: translated unit vectors
  auto translation = [&](double s) {
    Eigen::MatrixXcd t(static_cast<Eigen::Index>(ny), static_cast<Eigen::Index>(ny));
    std::vector<cplx> col(ny);
    for (std::size_t c = 0; c < ny; ++c) {
      std::fill(col.begin(), col.end(), cplx(0.0));
      col[c] = 1.0;
      tr.apply(col, s);
      for (std::size_t r = 0; r < ny; ++r) t(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = col[r];
    }
    return t;
  };
  const Eigen::MatrixXcd tp = translation(shift), tm = translation(-shift);
  Eigen::MatrixXcd u = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(spec.dimension()),
                                              static_cast<Eigen::Index>(spec.dimension()));
  const auto n = static_cast<Eigen::Index>(ny);
  for (std::size_t i1 = 0; i1 < 2; ++i1) {
    u.block(static_cast<Eigen::Index>(spec.index(i1, 0, 0)), static_cast<Eigen::Index>(spec.index(i1, 0, 0)), n, n) = tp;
    u.block(static_cast<Eigen::Index>(spec.index(i1, 1, 0)), static_cast<Eigen::Index>(spec.index(i1, 1, 0)), n, n) = tm;
  }
  return u;
}

inline DensityOperator apply_unitary(const DensityOperator& rho, const Eigen::MatrixXcd& u) {
  Eigen::MatrixXcd m = u * rho.matrix() * u.adjoint();
  m = 0.5 * (m + m.adjoint()).eval();
  const double tr = m.trace().real();
  if (rho.tag() == TraceTag::trace_one) m /= tr;
  return DensityOperator(rho.spec(), std::move(m), rho.tag());
}

namespace detail {

inline const HilbertSpec& require_composite(const DensityOperator& rho) {
  if (!rho.spec()) throw ValidationError("density operator: composite space required");
  return *rho.spec();
}

inline Eigen::Matrix2cd hermitize(const Eigen::Matrix2cd& m) { return 0.5 * (m + m.adjoint()); }

}  // namespace detail

/// Partial trace over pol2 and y.
inline DensityOperator reduced_dm(const DensityOperator& rho) {
  const auto& spec = detail::require_composite(rho);
  Eigen::Matrix2cd r = Eigen::Matrix2cd::Zero();
  const auto& m = rho.matrix();
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      cplx s = 0.0;
      for (std::size_t i2 = 0; i2 < 2; ++i2) {
        for (std::size_t y = 0; y < spec.n_y(); ++y) {
          s += m(static_cast<Eigen::Index>(spec.index(static_cast<std::size_t>(a), i2, y)),
                 static_cast<Eigen::Index>(spec.index(static_cast<std::size_t>(b), i2, y)));
        }
      }
      r(a, b) = s;
    }
  }
  return DensityOperator(std::nullopt, detail::hermitize(r), rho.tag());
}

/// Tr_pol2 <Y|rho|Y> with Y the nearest grid point; unnormalized.
inline DensityOperator conditional_dm(const DensityOperator& rho, double Y) {
  const auto& spec = detail::require_composite(rho);
  const std::size_t y = spec.pos2().nearest_index(Y);
  Eigen::Matrix2cd r = Eigen::Matrix2cd::Zero();
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      cplx s = 0.0;
      for (std::size_t i2 = 0; i2 < 2; ++i2) {
        s += rho.matrix()(static_cast<Eigen::Index>(spec.index(static_cast<std::size_t>(a), i2, y)),
                          static_cast<Eigen::Index>(spec.index(static_cast<std::size_t>(b), i2, y)));
      }
      r(a, b) = s;
    }
  }
  return DensityOperator(std::nullopt, detail::hermitize(r), TraceTag::unnormalized);
}

/// Post-selection onto the span of orthonormal vectors (a pure state is a single vector);
/// `none` disables post-selection.
class PostSelection {
 public:
  static PostSelection none() { return PostSelection(); }
  static PostSelection state(Eigen::VectorXcd b, std::string label = "b") {
    PostSelection p;
    p.basis_.push_back(std::move(b));
    p.label_ = std::move(label);
    return p;
  }
  static PostSelection subspace(std::vector<Eigen::VectorXcd> orthonormal, std::string label) {
    PostSelection p;
    p.basis_ = std::move(orthonormal);
    p.label_ = std::move(label);
    return p;
  }

  /// pol1 state b (x) identity on pol2, with optional y restriction to one grid row.
  static PostSelection composite(const HilbertSpec& spec, const std::optional<PolarizationState>& b,
                                 std::optional<std::size_t> y_index) {
    std::vector<Eigen::VectorXcd> vs;
    const auto dim = static_cast<Eigen::Index>(spec.dimension());
    std::vector<Eigen::Vector2cd> pol1;
    if (b) {
      pol1.push_back(b->vector());
    } else {
      pol1 = {Eigen::Vector2cd(1.0, 0.0), Eigen::Vector2cd(0.0, 1.0)};
    }
    for (const auto& p1 : pol1) {
      for (std::size_t i2 = 0; i2 < 2; ++i2) {
        for (std::size_t y = 0; y < spec.n_y(); ++y) {
          if (y_index && *y_index != y) continue;
          Eigen::VectorXcd v = Eigen::VectorXcd::Zero(dim);
          for (std::size_t i1 = 0; i1 < 2; ++i1) {
            v(static_cast<Eigen::Index>(spec.index(i1, i2, y))) = p1(static_cast<Eigen::Index>(i1));
          }
          vs.push_back(std::move(v));
        }
      }
    }
    std::string label = b ? "pol1" : "any";
    if (y_index) label += ",Y=" + std::to_string(spec.pos2().point(*y_index));
    return subspace(std::move(vs), label);
  }

  bool enabled() const { return !basis_.empty(); }
  const std::vector<Eigen::VectorXcd>& basis() const { return basis_; }
  const std::string& label() const { return label_; }

 private:
  std::vector<Eigen::VectorXcd> basis_;
  std::string label_ = "none";
};

inline constexpr double kMixedOverlapFloor = 1e-14;

/// Tr[P A rho] / Tr[P rho] with P the post-selection projector; Tr[A rho] without post-selection.
inline cplx weak_value_mixed(const Eigen::MatrixXcd& A, const DensityOperator& rho, const PostSelection& b) {
  const auto& m = rho.matrix();
  if (A.rows() != m.rows() || A.cols() != m.cols()) throw ValidationError("weak value: operator shape mismatch");
  if (!b.enabled()) return (A * m).trace();
  cplx num = 0.0, den = 0.0;
  const Eigen::MatrixXcd Ad = A.adjoint();
  for (const auto& e : b.basis()) {
    if (e.size() != m.rows()) throw ValidationError("weak value: post-selection vector size mismatch");
    const Eigen::VectorXcd re = m * e;
    den += e.dot(re);
    num += (Ad * e).dot(re);
  }
  if (!(std::abs(den) > kMixedOverlapFloor)) throw OverlapError(std::abs(den));
  return num / den;
}

/// One-polarization operator lifted to the composite space: op (x) 1_pol2 (x) 1_y.
inline Eigen::MatrixXcd lift_pol1(const HilbertSpec& spec, const Eigen::Matrix2cd& op) {
  const auto rest = static_cast<Eigen::Index>(2 * spec.n_y());
  Eigen::MatrixXcd out = Eigen::MatrixXcd::Zero(2 * rest, 2 * rest);
  for (int a = 0; a < 2; ++a) {
    for (int b = 0; b < 2; ++b) {
      if (op(a, b) == 0.0) continue;
      out.block(a * rest, b * rest, rest, rest) = op(a, b) * Eigen::MatrixXcd::Identity(rest, rest);
    }
  }
  return out;
}

enum class OffDiagonalRoute { two_term, four_phase };

/// Finite-statistics emulation: post-selection rates replaced by binomial frequencies.
struct RateResampling {
  std::size_t n_trials = 0;
  std::uint64_t seed = 0;
};

namespace detail {

inline double binomial_frequency(double p, const RateResampling& rs, std::uint64_t stream) {
  CounterRng rng(rs.seed, stream);
  std::size_t k = 0;
  for (std::size_t t = 0; t < rs.n_trials; ++t) k += rng.uniform() < p ? 1 : 0;
  return static_cast<double>(k) / static_cast<double>(rs.n_trials);
}

}  // namespace detail

/// Entrywise reconstruction of the pol1 density matrix from weak values of pi_ij.
/// Entry (a, b) is <a|rho|b>. Diagonal: <pi_HH>, <pi_VV>. Off-diagonal:
/// <H|rho|V> = P(D) <pi_HH>_W^D - P(A) <pi_HH>_W^A and its conjugate.
/// With Y_postselect every quantity is conditioned on that y row.
inline Eigen::Matrix2cd direct_dm_measurement(const DensityOperator& rho, std::optional<double> Y_postselect = {},
                                              OffDiagonalRoute route = OffDiagonalRoute::two_term,
                                              std::optional<RateResampling> resample = {}) {
  const auto& spec = detail::require_composite(rho);
  std::optional<std::size_t> y;
  if (Y_postselect) y = spec.pos2().nearest_index(*Y_postselect);
  const PostSelection base = y ? PostSelection::composite(spec, std::nullopt, y) : PostSelection::none();

  auto captured = [&](const PostSelection& sel) {
    double p = 0.0;
    for (const auto& e : sel.basis()) p += e.dot(rho.matrix() * e).real();
    return p;
  };
  const double p_base = base.enabled() ? captured(base) : rho.trace().real();
  // rate of passing `sel` among trials that passed the Y post-selection
  auto rate = [&](const PostSelection& sel, std::uint64_t stream) {
    const double p = captured(sel) / p_base;
    return resample ? detail::binomial_frequency(p, *resample, stream) : p;
  };
  auto conditioned = [&](const Eigen::MatrixXcd& A, const std::optional<PolarizationState>& b) {
    const PostSelection sel = (b || y) ? PostSelection::composite(spec, b, y) : PostSelection::none();
    return std::pair<cplx, PostSelection>{weak_value_mixed(A, rho, sel), sel};
  };
  auto two_term = [&](const Eigen::MatrixXcd& A, const PolarizationState& plus, const PolarizationState& minus,
                      std::uint64_t stream) {
    const auto [wp, sp] = conditioned(A, plus);
    const auto [wm, sm] = conditioned(A, minus);
    return rate(sp, stream) * wp - rate(sm, stream + 1) * wm;
  };

  const Eigen::MatrixXcd pHH = lift_pol1(spec, pi_op(Pol::H, Pol::H));
  const Eigen::MatrixXcd pVV = lift_pol1(spec, pi_op(Pol::V, Pol::V));
  Eigen::Matrix2cd out;
  out(0, 0) = conditioned(pHH, std::nullopt).first;
  out(1, 1) = conditioned(pVV, std::nullopt).first;

  // P(D) <pi_HH>^D - P(A) <pi_HH>^A = <H|rho|V>
  cplx hv = two_term(pHH, PolarizationState::D(), PolarizationState::A(), stream_key("DA-HH"));
  if (route == OffDiagonalRoute::four_phase) {
    // L/R on pi_HH gives i<H|rho|V>; D/A and L/R on pi_VV give <V|rho|H> and -i<V|rho|H>
    const cplx hv_lr = cplx(0.0, -1.0) * two_term(pHH, PolarizationState::L(), PolarizationState::R(), stream_key("LR-HH"));
    const cplx vh_da = two_term(pVV, PolarizationState::D(), PolarizationState::A(), stream_key("DA-VV"));
    const cplx vh_lr = cplx(0.0, 1.0) * two_term(pVV, PolarizationState::L(), PolarizationState::R(), stream_key("LR-VV"));
    hv = 0.25 * (hv + hv_lr + std::conj(vh_da) + std::conj(vh_lr));
  }
  out(0, 1) = hv;
  out(1, 0) = std::conj(hv);
  return out;
}

}  // namespace cwf
