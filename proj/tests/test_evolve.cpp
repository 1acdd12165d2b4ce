#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "cwf/evolve.hpp"
#include "cwf/rng.hpp"

using namespace cwf;

namespace {

constexpr double kPi = std::numbers::pi;

Hamiltonian free_h(const Grid1D& g, double m = 1.0) { return {{m}, std::vector<double>(g.size(), 0.0), 1.0}; }

WaveFunction1D random_smooth_state(const Grid1D& g, std::uint64_t seed) {
  CounterRng rng(seed, 5);
  std::vector<cplx> a(g.size(), 0.0);
  for (int k = 0; k < 4; ++k) {
    const double x0 = (rng.uniform() - 0.5) * 4.0, s = 0.5 + rng.uniform(), p = (rng.uniform() - 0.5) * 4.0;
    const cplx c(rng.normal(), rng.normal());
    const auto gk = gaussian(g, x0, s, p);
    for (std::size_t i = 0; i < g.size(); ++i) a[i] += c * gk[i];
  }
  return normalize(WaveFunction1D(g, std::move(a), NormTag::unnormalized));
}

/// Free Gaussian with |psi|^2 std sigma0 at rest at the origin, evolved analytically to t.
WaveFunction1D analytic_free_gaussian(const Grid1D& g, double sigma0, double t, double m = 1.0, double hbar = 1.0) {
  const cplx s(1.0, hbar * t / (2.0 * m * sigma0 * sigma0));
  const double pre = std::pow(2.0 * kPi * sigma0 * sigma0, -0.25);
  return WaveFunction1D::from_function(g, [&](double x) {
    return pre / std::sqrt(s) * std::exp(-x * x / (4.0 * sigma0 * sigma0 * s));
  });
}

}  // namespace

TEST(Hamiltonian, Validation) {
  const Grid1D g(-1.0, 1.0, 16);
  EXPECT_THROW(SplitOperator1D(g, Hamiltonian{{-1.0}, std::vector<double>(16, 0.0), 1.0}, 0.1), ValidationError);
  EXPECT_THROW(SplitOperator1D(g, Hamiltonian{{1.0}, std::vector<double>(8, 0.0), 1.0}, 0.1), ValidationError);
  EXPECT_THROW(SplitOperator1D(g, free_h(g), 0.0), ValidationError);
  EXPECT_THROW(SplitOperator1D(g, Hamiltonian{{1.0, 1.0}, std::vector<double>(16, 0.0), 1.0}, 0.1), ValidationError);
}

TEST(Potential, NamedPotentials) {
  const Grid1D g(-0.5, 1.5, 64);
  const auto box = make_potential({PotentialKind::box, 1.0, 1e6}, g);
  EXPECT_EQ(box[g.nearest_index(0.5)], 0.0);
  EXPECT_EQ(box[g.nearest_index(0.0)], 0.0);
  EXPECT_EQ(box[g.nearest_index(1.0)], 0.0);
  EXPECT_EQ(box[g.nearest_index(-0.25)], 1e6);
  EXPECT_EQ(box[g.nearest_index(1.25)], 1e6);
  PotentialSpec h{PotentialKind::harmonic};
  h.omega = 2.0;
  EXPECT_DOUBLE_EQ(make_potential(h, g)[g.nearest_index(1.0)], 2.0);
  EXPECT_DOUBLE_EQ(default_time_step(g, 2.0), 0.25 * g.spacing() * g.spacing() * 2.0);
}

TEST(Propagate, FreeGaussianMatchesClosedForm) {
  const Grid1D g(-20.0, 20.0, 256);
  const double dt = 1e-3;
  const auto out = propagate(gaussian(g, 0.0, 1.0), free_h(g), dt, 1000);
  EXPECT_LT(l2_distance(out, analytic_free_gaussian(g, 1.0, 1.0)), 1e-6);
  double m2 = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) m2 += std::norm(out[i]) * g.point(i) * g.point(i) * g.spacing();
  EXPECT_NEAR(std::sqrt(m2), std::sqrt(1.25), 1e-6);
}

TEST(Propagate, HarmonicGroundStateIsStationary) {
  const Grid1D g(-10.0, 10.0, 128);
  const double omega = 1.0, t = 1.0;
  PotentialSpec ps{PotentialKind::harmonic};
  ps.omega = omega;
  const Hamiltonian h{{1.0}, make_potential(ps, g), 1.0};
  const auto ground = gaussian(g, 0.0, std::sqrt(0.5 / omega));
  const std::size_t steps = 20000;
  const auto out = propagate(ground, h, t / static_cast<double>(steps), steps);
  std::vector<cplx> expect(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) expect[i] = std::polar(1.0, -0.5 * omega * t) * ground[i];
  EXPECT_LT(l2_distance(out, WaveFunction1D(g, expect)), 1e-8);
}

TEST(Propagate, BoxSuperpositionRevives) {
  const Grid1D g(-0.5, 1.5, 128);
  const Hamiltonian h{{1.0}, make_potential({PotentialKind::box, 1.0, 1e6}, g), 1.0};
  const auto es = numerical_eigenstates(g, h, 2);
  std::vector<cplx> a(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) a[i] = (es.eigenfunctions[0][i] + es.eigenfunctions[1][i]) / std::sqrt(2.0);
  const WaveFunction1D psi = normalize(WaveFunction1D(g, a));
  const double period = 2.0 * kPi / (es.eigenvalues[1] - es.eigenvalues[0]);
  const double dt0 = default_time_step(g, 1.0);
  const auto steps = static_cast<std::size_t>(std::ceil(period / dt0));
  const auto out = propagate(psi, h, period / static_cast<double>(steps), steps);
  // splitting error at the stiff walls limits the revival
  EXPECT_GT(fidelity(out, psi), 1.0 - 1e-3);
}

TEST(Propagate, NormConservedForRandomStates) {
  const Grid1D g(-10.0, 10.0, 128);
  PotentialSpec ps{PotentialKind::harmonic};
  ps.omega = 0.7;
  const Hamiltonian h{{1.0}, make_potential(ps, g), 1.0};
  for (std::uint64_t s = 0; s < 3; ++s) {
    const auto out = propagate(random_smooth_state(g, s), h, 1e-3, 1000);
    EXPECT_LT(std::abs(norm(out) - 1.0), 1e-9);
  }
}

TEST(Propagate, SecondOrderConvergence) {
  const Grid1D g(-10.0, 10.0, 128);
  std::vector<double> v(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double x = g.point(i);
    v[i] = 0.5 * x * x + 0.1 * x * x * x * x / (1.0 + 0.05 * x * x * x * x);
  }
  const Hamiltonian h{{1.0}, v, 1.0};
  const auto psi = gaussian(g, 1.0, 0.8, 0.5);
  const double T = 1.0, dt = 0.02;
  auto run = [&](double d) { return propagate(psi, h, d, static_cast<std::size_t>(std::llround(T / d))); };
  const auto ref = run(dt / 8.0);
  const double e1 = l2_distance(run(dt), ref), e2 = l2_distance(run(dt / 2.0), ref);
  const double ratio = e1 / e2;
  EXPECT_GE(ratio, 3.5);
  EXPECT_LE(ratio, 4.5);
}

TEST(Propagate, TwoDimensionalProductStaysProduct) {
  const Grid1D gx(-10.0, 10.0, 64), gy(-8.0, 8.0, 32);
  const auto a = gaussian(gx, 0.5, 1.0, 0.3), b = gaussian(gy, -0.5, 1.2);
  const Hamiltonian h2{{1.0, 2.0}, std::vector<double>(gx.size() * gy.size(), 0.0), 1.0};
  const auto out = propagate(WaveFunction2D::product(a, b), h2, 1e-2, 50);
  const auto ax = propagate(a, free_h(gx, 1.0), 1e-2, 50), by = propagate(b, free_h(gy, 2.0), 1e-2, 50);
  EXPECT_LT(l2_distance(out, WaveFunction2D::product(ax, by)), 1e-12);
}

TEST(Propagate, InfiniteMassAxisIsFrozen) {
  const Grid1D gx(-10.0, 10.0, 64), gy(-8.0, 8.0, 32);
  const auto a = gaussian(gx, 0.5, 1.0, 0.3), b = gaussian(gy, -0.5, 1.2, 0.7);
  const Hamiltonian h2{{1.0, std::numeric_limits<double>::infinity()},
                       std::vector<double>(gx.size() * gy.size(), 0.0), 1.0};
  const auto out = propagate(WaveFunction2D::product(a, b), h2, 1e-2, 50);
  EXPECT_LT(l2_distance(out, WaveFunction2D::product(propagate(a, free_h(gx), 1e-2, 50), b)), 1e-12);
}

TEST(Observable, BoxBasisOrthonormalAndEigenvalues) {
  const Grid1D g(-0.5, 1.5, 256);
  const auto ob = box_observable(g, 1.0, 4, true);
  EXPECT_NO_THROW(ob.validate(1e-10));
  EXPECT_NEAR(ob.eigenvalues[1], 4.0 * kPi * kPi / 2.0, 1e-12);
  EXPECT_NEAR(box_observable(g, 1.0, 3).min_gap(), 1.0, 1e-15);
}

TEST(Observable, NumericalBoxStatesMatchAnalytic) {
  const Grid1D g(-0.5, 1.5, 256);
  const Hamiltonian h{{1.0}, make_potential({PotentialKind::box, 1.0, 1e6}, g), 1.0};
  const auto num = numerical_eigenstates(g, h, 2);
  const auto ana = box_observable(g, 1.0, 2, true);
  for (int n = 0; n < 2; ++n) {
    // spectral kinetic energy widens the grid box by about two cells
    EXPECT_NEAR(num.eigenvalues[n], ana.eigenvalues[n], 0.04 * ana.eigenvalues[n]);
    EXPECT_GT(fidelity(num.eigenfunctions[n], ana.eigenfunctions[n]), 0.99);
  }
}

class Impulse : public ::testing::Test {
 protected:
  Grid1D gx{-0.5, 1.5, 128};
  Grid1D gy{-4.0, 12.0, 128};
  ObservableSpec ob = box_observable(gx, 1.0, 3);
  double w = 0.25;
  WaveFunction1D phi0 = gaussian(gy, 0.0, w);
};

TEST_F(Impulse, ProducesPointerShiftedSuperposition) {
  const std::vector<cplx> c{cplx(0.6), cplx(0.0, 0.8), cplx(0.0)};
  std::vector<cplx> a(gx.size(), 0.0);
  for (int n = 0; n < 3; ++n) {
    for (std::size_t i = 0; i < gx.size(); ++i) a[i] += c[n] * ob.eigenfunctions[n][i];
  }
  const WaveFunction1D psi(gx, a);
  const double lambda = 2.5;
  const auto out = apply_impulse(WaveFunction2D::product(psi, phi0), {ob, lambda});
  std::vector<cplx> expect(gx.size() * gy.size(), 0.0);
  for (int n = 0; n < 3; ++n) {
    const double shift = lambda * ob.eigenvalues[n];
    for (std::size_t i = 0; i < gx.size(); ++i) {
      for (std::size_t j = 0; j < gy.size(); ++j) {
        const double d = gy.point(j) - shift;
        expect[i * gy.size() + j] += c[n] * ob.eigenfunctions[n][i] * std::pow(2.0 * kPi * w * w, -0.25) *
                                     std::exp(-d * d / (4.0 * w * w));
      }
    }
  }
  EXPECT_LT(l2_distance(out, WaveFunction2D(gx, gy, expect, NormTag::unnormalized)), 1e-8);
}

TEST_F(Impulse, ZeroCouplingIsIdentity) {
  const auto in = WaveFunction2D::product(ob.eigenfunctions[1], phi0);
  const auto out = apply_impulse(in, {ob, 0.0});
  EXPECT_LT(l2_distance(out, in), 1e-14);
}

TEST_F(Impulse, SingleEigenstateCentroidShifts) {
  const double lambda = 1.7;
  const auto out = apply_impulse(WaveFunction2D::product(ob.eigenfunctions[1], phi0), {ob, lambda});
  double c = 0.0;
  for (std::size_t i = 0; i < gx.size(); ++i) {
    for (std::size_t j = 0; j < gy.size(); ++j) c += std::norm(out.at(i, j)) * gy.point(j) * gx.spacing() * gy.spacing();
  }
  EXPECT_NEAR(c, lambda * 2.0, 0.5 * gy.spacing());
}

TEST_F(Impulse, IncompleteBasisIsReported) {
  const auto psi = gaussian(gx, 0.2, 0.05);
  EXPECT_THROW(apply_impulse(WaveFunction2D::product(psi, phi0), {ob, 1.0}), NumericalError);
}

TEST(ImpulseProperties, UnitaryAndCommutesWithFunctionsOfX) {
  const Grid1D gx(-4.0, 4.0, 32), gy(-8.0, 8.0, 64);
  const ImpulsiveCoupling c{position_observable(gx), 0.7};
  auto state = [&](std::uint64_t s) {
    CounterRng rng(s, 11);
    std::vector<cplx> a(gx.size() * gy.size());
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const cplx ci(rng.normal(), rng.normal());
      const auto phi = gaussian(gy, rng.normal(), 1.0 + rng.uniform(), rng.normal());
      for (std::size_t j = 0; j < gy.size(); ++j) a[i * gy.size() + j] = ci * phi[j];
    }
    return normalize(WaveFunction2D(gx, gy, std::move(a), NormTag::unnormalized));
  };
  const auto a = state(1), b = state(2);
  const auto ua = apply_impulse(a, c), ub = apply_impulse(b, c);
  EXPECT_LT(std::abs(inner_product(ua, ub) - inner_product(a, b)), 1e-8);
  EXPECT_LT(std::abs(norm(ua) - 1.0), 1e-8);

  auto times_f = [&](const WaveFunction2D& s) {
    std::vector<cplx> v(s.amplitudes().begin(), s.amplitudes().end());
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const cplx f = std::polar(1.0 + 0.1 * gx.point(i) * gx.point(i), 0.3 * gx.point(i));
      for (std::size_t j = 0; j < gy.size(); ++j) v[i * gy.size() + j] *= f;
    }
    return WaveFunction2D(gx, gy, std::move(v), NormTag::unnormalized);
  };
  EXPECT_LT(l2_distance(apply_impulse(times_f(a), c), times_f(ua)), 1e-8);
}
