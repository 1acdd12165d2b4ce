#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "scenarios.hpp"
#include "wf_io.hpp"

namespace cwf {

/// Fast invariant suite over every module; each entry is one named pass/fail check.
inline std::vector<Check> run_selftest(std::uint64_t seed = 1) {
  std::vector<Check> out;
  auto guard = [&](const std::string& name, const std::function<Check()>& f) {
    try {
      out.push_back(f());
    } catch (const std::exception& e) {
      out.push_back({name + " (" + e.what() + ")", false, std::numeric_limits<double>::quiet_NaN(), 0.0, "throws"});
    }
  };
  const Grid1D g(-10.0, 10.0, 256);
  const WaveFunction1D psi = gaussian(g, -1.0, 0.7, 1.5);

  guard("qgrid_fft_round_trip", [&] {
    return check_le("qgrid_fft_round_trip", l2_distance(to_position(to_momentum(psi), g), psi), 1e-12);
  });
  guard("evolve_norm_1000_steps", [&] {
    Hamiltonian h{{1.0}, std::vector<double>(g.size(), 0.0), 1.0};
    return check_le("evolve_norm_1000_steps", std::abs(norm(propagate(psi, h, 1e-3, 1000)) - 1.0), 1e-10);
  });
  guard("evolve_free_gaussian_width", [&] {
    const double s0 = 0.7, t = 1.0;
    Hamiltonian h{{1.0}, std::vector<double>(g.size(), 0.0), 1.0};
    const auto pt = propagate(gaussian(g, 0.0, s0), h, 1e-3, 1000);
    double m2 = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) m2 += std::norm(pt[i]) * g.point(i) * g.point(i) * g.spacing();
    const double st = s0 * std::sqrt(1.0 + std::pow(t / (2.0 * s0 * s0), 2));
    return check_le("evolve_free_gaussian_width", std::abs(std::sqrt(m2) - st), 1e-6);
  });
  guard("bohm_velocity_cwf_consistency", [&] {
    const Grid1D gy(-6.0, 6.0, 64);
    const auto Psi = WaveFunction2D::product(psi, gaussian(gy, 0.5, 1.0, -0.3));
    const BohmConfig q{-0.8, 0.4};
    const double v2 = velocity(Psi, q, {1.0, 1.0}).vx;
    const double v1 = velocity_from_cwf(conditional_wavefunction(Psi, q), q.X, 1.0);
    return check_le("bohm_velocity_cwf_consistency", std::abs(v2 - v1), 1e-12);
  });
  guard("bohm_equivariance_free_1d", [&] {
    const Grid1D gb(-16.0, 16.0, 256);
    Hamiltonian h{{1.0}, std::vector<double>(gb.size(), 0.0), 1.0};
    const auto r = equivariance_check(gaussian(gb, 0.0, 1.0, 0.5), h, 5e-3, 200, 20000, seed);
    return check_gt("bohm_equivariance_free_1d", r.passed() ? r.p_value : 0.0, 1e-3);
  });
  guard("weakmeas_pi_x_reconstructs_psi", [&] {
    const auto w = weak_value_scan(psi, 0.0);
    return check_ge("weakmeas_pi_x_reconstructs_psi", fidelity(WaveFunction1D(g, w, NormTag::unnormalized), psi),
                    1.0 - 1e-12);
  });
  guard("polar_rdm_half_identity", [&] {
    const HilbertSpec spec = default_hilbert_spec(32);
    const auto rho = make_state_psi1(spec);
    return check_le("polar_rdm_half_identity",
                    (reduced_dm(rho).matrix() - 0.5 * Eigen::MatrixXcd::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-12);
  });
  guard("polar_direct_measurement_conditioned", [&] {
    const HilbertSpec spec = default_hilbert_spec(64);
    const auto rho = apply_unitary(make_state_psi1(spec), beam_splitter(spec, 4.0));
    const Eigen::Matrix2cd m = direct_dm_measurement(rho, 4.0);
    Eigen::Matrix2cd e = Eigen::Matrix2cd::Zero();
    e(0, 0) = 1.0;
    return check_le("polar_direct_measurement_conditioned", (m - e).cwiseAbs().maxCoeff(), 1e-10);
  });
  guard("impulse_preserves_norm", [&] {
    ScenarioConfig c;
    c.fig1.n_x = 128;
    c.fig1.n_y = 128;
    const auto s = build_fig1(c);
    const auto after = apply_impulse(s.state, ImpulsiveCoupling{s.observable, c.fig1.lambda});
    return check_le("impulse_preserves_norm", std::abs(norm(after) - 1.0), 1e-10);
  });
  guard("order_invariance_exact", [&] {
    ScenarioConfig c;
    c.scenario = ScenarioKind::order_invariance;
    c.pointer.g = 0.0;
    const auto r = run_order_invariance(c);
    return check_le("order_invariance_exact", r.checks.front().value, 1e-12);
  });
  guard("wf_io_binary_round_trip", [&] {
    std::stringstream ss;
    write_binary(ss, psi);
    const auto back = read_binary_1d(ss);
    double d = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) d = std::max(d, std::abs(back[i] - psi[i]));
    return check_le("wf_io_binary_round_trip", d, 0.0);
  });
  return out;
}

}  // namespace cwf
