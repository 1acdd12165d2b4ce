#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <sstream>

#include "cwf/bohm.hpp"
#include "cwf/evolve.hpp"

using namespace cwf;

namespace {

Hamiltonian free_h1(const Grid1D& g) { return {{1.0}, std::vector<double>(g.size(), 0.0), 1.0}; }

WaveFunction2D random_entangled(const Grid1D& gx, const Grid1D& gy, std::uint64_t seed) {
  CounterRng rng(seed, 21);
  std::vector<cplx> a(gx.size() * gy.size(), 0.0);
  for (int k = 0; k < 3; ++k) {
    const cplx c(rng.normal(), rng.normal());
    const auto f = gaussian(gx, rng.normal(), 0.8 + rng.uniform(), rng.normal());
    const auto h = gaussian(gy, rng.normal(), 0.8 + rng.uniform(), rng.normal());
    for (std::size_t i = 0; i < gx.size(); ++i) {
      for (std::size_t j = 0; j < gy.size(); ++j) a[i * gy.size() + j] += c * f[i] * h[j];
    }
  }
  return normalize(WaveFunction2D(gx, gy, std::move(a), NormTag::unnormalized));
}

}  // namespace

TEST(Velocity, RealWaveFunctionHasNoCurrent) {
  const Grid1D gx(-0.5, 1.5, 64), gy(-6.0, 6.0, 64);
  const auto box = normalize(WaveFunction1D::from_function(gx, [](double x) {
    return cplx(x >= 0.0 && x <= 1.0 ? std::sin(std::numbers::pi * x) : 0.0);
  }, NormTag::unnormalized));
  const auto Psi = WaveFunction2D::product(box, gaussian(gy, 0.0, 1.0));
  for (double X : {0.2, 0.5, 0.77}) {
    const auto v = velocity(Psi, {X, 0.3}, {1.0, 1.0});
    EXPECT_NEAR(v.vx, 0.0, 1e-12);
    EXPECT_NEAR(v.vy, 0.0, 1e-12);
  }
}

TEST(Velocity, PlaneWaveFactorGivesHbarKOverM) {
  const Grid1D gx(-20.0, 20.0, 256), gy(-6.0, 6.0, 32);
  const double k0 = 1.25, m1 = 2.0;
  const auto Psi = WaveFunction2D::product(gaussian(gx, 0.0, 3.0, k0), gaussian(gy, 0.0, 1.0));
  for (double X : {-3.0, 0.0, 0.4, 2.7}) {
    EXPECT_NEAR(velocity(Psi, {X, 0.1}, {m1, 1.0}).vx, k0 / m1, 1e-6);
  }
}

TEST(Velocity, SpreadingGaussianMatchesClosedForm) {
  const Grid1D g(-20.0, 20.0, 512);
  const double s0 = 1.0, v0 = 1.0, t = 1.0;
  const auto psi_t = propagate(gaussian(g, 0.0, s0, v0), free_h1(g), 1e-3, 1000);
  const double st2 = s0 * s0 * (1.0 + std::pow(t / (2.0 * s0 * s0), 2));
  for (std::size_t k : {250u, 276u, 300u}) {
    const double X = g.point(k), delta = X - v0 * t;
    const double expect = v0 + delta * t / (4.0 * s0 * s0 * st2);
    EXPECT_NEAR(VelocityField1D(psi_t, 1.0).at(X), expect, 1e-8) << "X=" << X;
  }
}

TEST(Velocity, NodeRaisesWithDensity) {
  const Grid1D g(-4.0, 4.0, 64);
  const auto odd = normalize(WaveFunction1D::from_function(g, [](double x) { return cplx(x * std::exp(-x * x)); },
                                                           NormTag::unnormalized));
  try {
    VelocityField1D(odd, 1.0).at(0.0);
    FAIL() << "expected NodeError";
  } catch (const NodeError& e) {
    EXPECT_EQ(e.density(), 0.0);
    EXPECT_GT(e.floor(), 0.0);
  }
}

TEST(Velocity, CwfFormEqualsFullFormOnRandomStates) {
  const Grid1D gx(-8.0, 8.0, 64), gy(-8.0, 8.0, 64);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto Psi = random_entangled(gx, gy, s);
    const auto qs = sample_qeh(Psi, 5, s, true);
    for (const auto& q : qs) {
      const double on_grid_y = velocity(Psi, {q.X, gy.point(gy.nearest_index(q.Y))}, {1.3, 0.7}).vx;
      const double cwf = velocity_from_cwf(conditional_wavefunction(Psi, q), q.X, 1.3);
      EXPECT_NEAR(cwf, on_grid_y, 1e-8);
    }
  }
}

TEST(Trajectory, TimesMustIncrease) {
  Trajectory t;
  t.append(0.0, {0.0, 0.0});
  t.append(0.1, {0.1, 0.0});
  EXPECT_THROW(t.append(0.1, {0.2, 0.0}), ValidationError);
  std::vector<Trajectory> ts{t};
  std::ostringstream os;
  write_trajectories_csv(os, ts);
  EXPECT_EQ(os.str(), "trial,t,X,Y\n0,0,0,0\n0,0.1,0.1,0\n");
}

TEST(StepTrajectory, StationaryStateDoesNotMove) {
  const Grid1D gx(-8.0, 8.0, 64), gy(-8.0, 8.0, 64);
  PotentialSpec ps{PotentialKind::harmonic};
  const auto vx = make_potential(ps, gx), vy = make_potential(ps, gy);
  std::vector<double> v(gx.size() * gy.size());
  for (std::size_t i = 0; i < gx.size(); ++i) {
    for (std::size_t j = 0; j < gy.size(); ++j) v[i * gy.size() + j] = vx[i] + vy[j];
  }
  const Hamiltonian h{{1.0, 1.0}, v, 1.0};
  const auto ground = WaveFunction2D::product(gaussian(gx, 0.0, std::sqrt(0.5)), gaussian(gy, 0.0, std::sqrt(0.5)));
  FieldSequence2D seq(ground, h, 1e-2);
  BohmConfig q{0.37, -0.81};
  const BohmConfig q0 = q;
  for (std::size_t s = 0; s < 50; ++s) q = step_trajectory(seq, s, q);
  // the sampled Gaussian is stationary only up to discretization error
  EXPECT_NEAR(q.X, q0.X, 1e-5);
  EXPECT_NEAR(q.Y, q0.Y, 1e-5);
}

TEST(StepTrajectory, BoostedGaussianFollowsClosedForm) {
  const Grid1D g(-20.0, 20.0, 512);
  const double s0 = 1.0, v0 = 1.0, T = 1.0;
  const double dt = 1e-2;
  const auto steps = static_cast<std::size_t>(std::llround(T / dt));
  FieldSequence1D seq(gaussian(g, 0.0, s0, v0), free_h1(g), dt);
  Ensemble1D ens{{-1.3, -0.2, 0.45, 1.7}, {}};
  const auto start = ens.positions;
  evolve_ensemble(seq, ens, steps);
  const double ratio = std::sqrt(1.0 + std::pow(T / (2.0 * s0 * s0), 2));
  for (std::size_t k = 0; k < start.size(); ++k) {
    EXPECT_EQ(ens.failed[k], 0);
    EXPECT_NEAR(ens.positions[k], v0 * T + start[k] * ratio, 1e-5);
  }
}

TEST(StepTrajectory, LeavingTheGridIsAnError) {
  const Grid1D g(-4.0, 4.0, 256);
  const auto psi = gaussian(g, 3.0, 0.5, 20.0);
  const VelocityField1D f(psi, 1.0);
  EXPECT_THROW(step_trajectory(f, f, f, 3.9, 0.02), NumericalError);
}

TEST(StepTrajectory, OneDimensionalTrajectoriesNeverCross) {
  const Grid1D g(-30.0, 30.0, 512);
  std::vector<cplx> a(g.size());
  const auto l = gaussian(g, -4.0, 1.0, 2.0), r = gaussian(g, 4.0, 1.0, -2.0);
  for (std::size_t i = 0; i < g.size(); ++i) a[i] = l[i] + r[i];
  const auto psi = normalize(WaveFunction1D(g, a, NormTag::unnormalized));
  auto start = sample_qeh(psi, 400, 3, true);
  std::sort(start.begin(), start.end());
  FieldSequence1D seq(psi, free_h1(g), 5e-3);
  Ensemble1D ens{start, {}};
  bool ordered = true;
  evolve_ensemble(seq, ens, 800, [&](std::size_t, const Ensemble1D& e) {
    for (std::size_t k = 1; k < e.positions.size(); ++k) {
      if (!e.failed[k] && !e.failed[k - 1] && e.positions[k] < e.positions[k - 1]) ordered = false;
    }
  });
  EXPECT_TRUE(ordered);
  EXPECT_LT(ens.n_failed(), 1u);
}

TEST(SampleQeh, UniformBoxMeanAtCentre) {
  const Grid1D gx(0.0, 1.0, 64), gy(0.0, 2.0, 64);
  const WaveFunction2D flat(gx, gy, std::vector<cplx>(64 * 64, cplx(1.0 / std::sqrt(2.0))));
  const std::size_t n = 100000;
  const auto q = sample_qeh(flat, n, 11, true);
  double mx = 0.0, my = 0.0;
  for (const auto& c : q) {
    mx += c.X;
    my += c.Y;
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  // jittered cells wrapped into [min, max) give a uniform density on the box
  EXPECT_NEAR(mx, 0.5, 4.0 * std::sqrt(1.0 / 12.0 / static_cast<double>(n)));
  EXPECT_NEAR(my, 1.0, 4.0 * 2.0 * std::sqrt(1.0 / 12.0 / static_cast<double>(n)));
}

TEST(SampleQeh, ChiSquareAgainstDensity) {
  const Grid1D gx(-8.0, 8.0, 64), gy(-8.0, 8.0, 64);
  const auto Psi = random_entangled(gx, gy, 4);
  const auto q = sample_qeh(Psi, 100000, 5);
  EXPECT_GT(chi2_against_density(q, {}, Psi).p_value, 1e-3);
  const auto qj = sample_qeh(Psi, 100000, 6, true);
  EXPECT_GT(chi2_against_density(qj, {}, Psi).p_value, 1e-3);
}

TEST(SampleQeh, DeterministicGivenSeed) {
  const Grid1D gx(-8.0, 8.0, 32), gy(-8.0, 8.0, 32);
  const auto Psi = random_entangled(gx, gy, 7);
  const auto a = sample_qeh(Psi, 1000, 42, true), b = sample_qeh(Psi, 1000, 42, true), c = sample_qeh(Psi, 1000, 43, true);
  bool all_same = true, any_diff = false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    all_same = all_same && a[k].X == b[k].X && a[k].Y == b[k].Y;
    any_diff = any_diff || a[k].X != c[k].X;
  }
  EXPECT_TRUE(all_same);
  EXPECT_TRUE(any_diff);
}

TEST(SampleQeh, PostImpulseOutcomeFrequencies) {
  const Grid1D gx(-0.5, 1.5, 128), gy(-2.0, 8.0, 128);
  const auto ob = box_observable(gx, 1.0, 2);
  std::vector<cplx> a(gx.size());
  for (std::size_t i = 0; i < gx.size(); ++i) a[i] = 0.6 * ob.eigenfunctions[0][i] + cplx(0.0, 0.8) * ob.eigenfunctions[1][i];
  const double lambda = 2.5;
  const auto after = apply_impulse(WaveFunction2D::product(WaveFunction1D(gx, a), gaussian(gy, 0.0, 0.25)), {ob, lambda});
  const std::size_t n = 20000;
  const auto q = sample_qeh(after, n, 8);
  double n2 = 0.0;
  for (const auto& c : q) n2 += std::abs(c.Y - 2.0 * lambda) < std::abs(c.Y - lambda) ? 1.0 : 0.0;
  const double f = n2 / static_cast<double>(n);
  EXPECT_NEAR(f, 0.64, 4.0 * std::sqrt(0.64 * 0.36 / static_cast<double>(n)));
}

TEST(ConditionalWavefunction, ProductAndPostImpulse) {
  const Grid1D gx(-0.5, 1.5, 128), gy(-2.0, 8.0, 128);
  const auto ob = box_observable(gx, 1.0, 2);
  std::vector<cplx> a(gx.size());
  for (std::size_t i = 0; i < gx.size(); ++i) a[i] = (ob.eigenfunctions[0][i] + ob.eigenfunctions[1][i]) / std::sqrt(2.0);
  const WaveFunction1D psi(gx, a);
  const auto before = WaveFunction2D::product(psi, gaussian(gy, 0.0, 0.25));
  EXPECT_GT(fidelity(conditional_wavefunction(before, {0.3, 0.1}), psi), 1.0 - 1e-12);
  const auto after = apply_impulse(before, {ob, 2.5});
  EXPECT_GE(fidelity(conditional_wavefunction(after, {0.3, 5.1}), ob.eigenfunctions[1]), 0.999);
  EXPECT_GE(fidelity(conditional_wavefunction(after, {0.3, 2.4}), ob.eigenfunctions[0]), 0.999);
}

TEST(Equivariance, StationaryState) {
  const Grid1D g(-8.0, 8.0, 128);
  PotentialSpec ps{PotentialKind::harmonic};
  const Hamiltonian h{{1.0}, make_potential(ps, g), 1.0};
  const auto r = equivariance_check(gaussian(g, 0.0, std::sqrt(0.5)), h, 1e-2, 100, 10000, 1);
  EXPECT_TRUE(r.passed()) << r.p_value;
  EXPECT_EQ(r.n_failed, 0u);
}

TEST(Equivariance, SpreadingFreeGaussian) {
  const Grid1D g(-16.0, 16.0, 256);
  const auto r = equivariance_check(gaussian(g, 0.0, 1.0, 0.5), free_h1(g), 1e-2, 100, 10000, 2);
  EXPECT_GT(r.p_value, 1e-3);
  EXPECT_TRUE(r.failures_ok());
}

TEST(Equivariance, TwoDimensionalEntangledState) {
  const Grid1D gx(-12.0, 12.0, 64), gy(-12.0, 12.0, 64);
  const Hamiltonian h{{1.0, 1.0}, std::vector<double>(64 * 64, 0.0), 1.0};
  const auto r = equivariance_check(random_entangled(gx, gy, 9), h, 2e-2, 25, 10000, 3);
  EXPECT_TRUE(r.passed()) << r.p_value << " failed=" << r.n_failed;
}

TEST(Transport, CarriesEquilibriumAcrossAUnitary) {
  const Grid1D gx(-0.5, 1.5, 64), gy(-2.0, 8.0, 64);
  const auto ob = box_observable(gx, 1.0, 2);
  std::vector<cplx> a(gx.size());
  for (std::size_t i = 0; i < gx.size(); ++i) a[i] = (ob.eigenfunctions[0][i] + ob.eigenfunctions[1][i]) / std::sqrt(2.0);
  const auto before = WaveFunction2D::product(WaveFunction1D(gx, a), gaussian(gy, 0.0, 0.25));
  const auto after = apply_impulse(before, {ob, 2.5});
  const auto q0 = sample_qeh(before, 20000, 4, true);
  const auto q1 = transport_configurations(q0, before, after);
  ASSERT_EQ(q1.size(), q0.size());
  EXPECT_GT(chi2_against_density(q1, {}, after).p_value, 1e-3);
}

TEST(Determinism, IndependentOfWorkerCount) {
  const Grid1D gx(-12.0, 12.0, 64), gy(-12.0, 12.0, 64);
  const Hamiltonian h{{1.0, 1.0}, std::vector<double>(64 * 64, 0.0), 1.0};
  const auto psi = random_entangled(gx, gy, 10);
  auto run = [&](const char* workers) {
    setenv(kWorkersEnv, workers, 1);
    FieldSequence2D seq(psi, h, 2e-2);
    Ensemble2D ens{sample_qeh(psi, 500, 5, true), {}};
    evolve_ensemble(seq, ens, 10);
    return ens.configs;
  };
  const auto a = run("1"), b = run("3");
  unsetenv(kWorkersEnv);
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].X, b[k].X);
    EXPECT_EQ(a[k].Y, b[k].Y);
  }
}
