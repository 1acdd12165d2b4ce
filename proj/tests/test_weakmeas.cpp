#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <limits>
#include <numbers>
#include <vector>

#include "cwf/weakmeas.hpp"

using namespace cwf;

namespace {

constexpr double kPi = std::numbers::pi;

struct PureSetup {
  Grid1D g{-2.56, 2.56, 128};
  WaveFunction1D psi = gaussian(g, 0.0, 0.08);
};

std::vector<std::size_t> significant_sites(const WaveFunction1D& psi, double frac) {
  double mx = 0.0;
  for (std::size_t i = 0; i < psi.size(); ++i) mx = std::max(mx, std::abs(psi[i]));
  std::vector<std::size_t> s;
  for (std::size_t i = 0; i < psi.size(); ++i) {
    if (std::abs(psi[i]) > frac * mx) s.push_back(i);
  }
  return s;
}

}  // namespace

TEST(WeakValue, PostSelectingOnPsiGivesExpectation) {
  const Grid1D g(-8.0, 8.0, 128);
  const auto psi = gaussian(g, 0.5, 1.0, 0.3);
  const auto X = GridOperator::multiplication(g, [](double x) { return cplx(x); });
  EXPECT_NEAR(std::abs(weak_value(X, psi, psi).value - 0.5), 0.0, 1e-10);
}

TEST(WeakValue, ProjectorWithMomentumPostSelectionMatchesClosedForm) {
  const Grid1D g(-8.0, 8.0, 128);
  const auto psi = gaussian(g, 0.5, 1.0, 0.3);
  for (double p : {0.0, g.conjugate().point(66)}) {
    const auto b = plane_wave(g, p);
    for (std::size_t s : {40u, 64u, 70u}) {
      const auto w = weak_value(GridOperator::projector_density(g, s), psi, b).value;
      EXPECT_LT(std::abs(w - weak_value_pi_x(psi, g.point(s), p).value), 1e-12 * std::abs(w));
    }
  }
}

TEST(WeakValue, NumeratorOrthogonalGivesZero) {
  const Grid1D g(-8.0, 8.0, 128);
  const auto psi = gaussian(g, 0.3, 1.0);
  const auto P = GridOperator::multiplication(g, [](double x) { return cplx(x > 0.0 ? 1.0 : 0.0); });
  const auto b = normalize(WaveFunction1D::from_function(g, [](double x) {
    return cplx(x > 0.0 ? 0.0 : std::exp(-x * x));
  }, NormTag::unnormalized));
  EXPECT_EQ(weak_value(P, psi, b).value, cplx(0.0));
}

TEST(WeakValue, OrthogonalPostSelectionThrows) {
  const Grid1D g(0.0, 1.0, 64);
  auto box = [&](int n) {
    return normalize(WaveFunction1D::from_function(g, [&](double x) { return cplx(std::sin(n * kPi * x)); },
                                                   NormTag::unnormalized));
  };
  EXPECT_THROW(weak_value(GridOperator::identity(g), box(1), box(2)), OverlapError);
}

TEST(WeakValue, LinearInTheObservable) {
  const Grid1D g(-8.0, 8.0, 64);
  const auto psi = gaussian(g, 0.5, 1.0, 0.3), b = gaussian(g, -0.2, 1.5, -0.4);
  const auto A = GridOperator::multiplication(g, [](double x) { return cplx(x * x, 0.1 * x); });
  const auto B = GridOperator::projector_density(g, 30);
  const cplx al(0.7, -0.2), bt(-1.1, 0.4);
  const cplx lhs = weak_value(al * A + bt * B, psi, b).value;
  const cplx rhs = al * weak_value(A, psi, b).value + bt * weak_value(B, psi, b).value;
  EXPECT_LT(std::abs(lhs - rhs), 1e-10 * std::max(1.0, std::abs(lhs)));
}

TEST(WeakValuePiX, RealGaussianGivesRealPositive) {
  const Grid1D g(-8.0, 8.0, 128);
  const auto psi = gaussian(g, 0.3, 0.9);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const cplx v = weak_value_pi_x(psi, g.point(i), 0.0).value;
    EXPECT_GE(v.real(), 0.0);
    EXPECT_NEAR(v.imag(), 0.0, 1e-10 * std::max(1e-300, std::abs(v)) + 1e-300);
  }
}

TEST(WeakValuePiX, PhaseRampIsRecovered) {
  const Grid1D g(-10.0, 10.0, 256);
  const double k0 = 1.3;
  const auto psi = gaussian(g, 0.0, 1.0, k0);
  for (std::size_t i = 96; i < 160; i += 7) {
    const double x = g.point(i);
    const double d = std::remainder(std::arg(weak_value_pi_x(psi, x, 0.0).value) - k0 * x, 2.0 * kPi);
    EXPECT_NEAR(d, 0.0, 1e-8) << "x=" << x;
  }
}

TEST(WeakValuePiX, ScanReconstructsPsiUpToAConstant) {
  const Grid1D g(-8.0, 8.0, 256);
  std::vector<cplx> a(g.size());
  const auto p = gaussian(g, -1.0, 0.7, 0.8), q = gaussian(g, 1.5, 0.9, -0.3);
  for (std::size_t i = 0; i < g.size(); ++i) a[i] = p[i] + cplx(0.3, 0.6) * q[i];
  const auto psi = normalize(WaveFunction1D(g, a, NormTag::unnormalized));
  const auto v = weak_value_scan(psi, 0.0);
  cplx num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    num += std::conj(v[i]) * psi[i];
    den += std::norm(v[i]);
  }
  const cplx c = num / den;
  double dev = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) dev = std::max(dev, std::abs(c * v[i] - psi[i]));
  EXPECT_LT(dev, 1e-9);
}

TEST(WeakValuePiX, CompletenessSum) {
  const Grid1D g(-8.0, 8.0, 128);
  const auto psi = gaussian(g, 0.4, 1.0, 0.6);
  for (double p : {0.0, 0.5, -0.9}) {
    cplx s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) s += weak_value_pi_x(psi, g.point(i), p).value * g.spacing();
    EXPECT_LT(std::abs(s - 1.0), 1e-9);
  }
}

TEST(WeakValuePiX, VanishingMomentumAmplitudeThrows) {
  const Grid1D g(-8.0, 8.0, 128);
  const auto odd = normalize(WaveFunction1D::from_function(g, [](double x) { return cplx(x * std::exp(-x * x)); },
                                                           NormTag::unnormalized));
  EXPECT_THROW(weak_value_pi_x(odd, 0.5, 0.0), OverlapError);
}

TEST(WeakValueEntangled, FactorizedEqualsSingleParticle) {
  const Grid1D gx(-8.0, 8.0, 64), gy(-6.0, 6.0, 32);
  const auto psi = gaussian(gx, 0.5, 1.0, 0.3);
  const auto Psi = WaveFunction2D::product(psi, gaussian(gy, 0.0, 1.0));
  for (double Y : {-1.0, 0.0, 2.2}) {
    for (std::size_t s : {20u, 33u, 40u}) {
      const cplx a = weak_value_entangled(Psi, gx.point(s), 0.2, Y).value;
      const cplx b = weak_value_pi_x(psi, gx.point(s), 0.2).value;
      EXPECT_LT(std::abs(a - b), 1e-12 * std::abs(b));
    }
  }
}

TEST(WeakValueEntangled, PostAndPreBeamSplitter) {
  const Grid1D gx(-2.56, 2.56, 128), gy(-8.0, 8.0, 128);
  const auto p1 = gaussian(gx, 0.5, 0.08), p2 = gaussian(gx, -0.5, 0.08);
  const auto fp = gaussian(gy, 3.0, 0.5), fm = gaussian(gy, -3.0, 0.5), f0 = gaussian(gy, 0.0, 0.5);
  std::vector<cplx> post(gx.size() * gy.size()), pre(post.size());
  for (std::size_t i = 0; i < gx.size(); ++i) {
    for (std::size_t j = 0; j < gy.size(); ++j) {
      post[i * gy.size() + j] = (p1[i] * fp[j] + p2[i] * fm[j]) / std::sqrt(2.0);
      pre[i * gy.size() + j] = (p1[i] + p2[i]) * f0[j] / std::sqrt(2.0);
    }
  }
  const WaveFunction2D Post(gx, gy, post, NormTag::unnormalized), Pre(gx, gy, pre, NormTag::unnormalized);
  auto scan = [&](const WaveFunction2D& S, double Y) {
    std::vector<cplx> v(gx.size());
    for (std::size_t i = 0; i < gx.size(); ++i) v[i] = weak_value_entangled(S, gx.point(i), 0.0, Y).value;
    return WaveFunction1D(gx, v, NormTag::unnormalized);
  };
  std::vector<cplx> sum(gx.size());
  for (std::size_t i = 0; i < gx.size(); ++i) sum[i] = p1[i] + p2[i];
  EXPECT_GT(fidelity(scan(Post, 3.1), p1), 1.0 - 1e-12);
  EXPECT_GT(fidelity(scan(Post, -2.9), p2), 1.0 - 1e-12);
  EXPECT_GT(fidelity(scan(Pre, 0.4), WaveFunction1D(gx, sum, NormTag::unnormalized)), 1.0 - 1e-12);
}

TEST(WeakValueEntangled, LabelledComponentsAddIncoherently) {
  const Grid1D gx(-2.56, 2.56, 128), gy(-8.0, 8.0, 64);
  const auto p1 = gaussian(gx, 0.5, 0.08), p2 = gaussian(gx, -0.5, 0.08), f = gaussian(gy, 0.0, 0.5);
  std::vector<WaveFunction2D> comps{WaveFunction2D::product(p1, f), WaveFunction2D::product(p2, f)};
  std::vector<cplx> v(gx.size()), sum(gx.size());
  for (std::size_t i = 0; i < gx.size(); ++i) {
    v[i] = weak_value_entangled(comps, gx.point(i), 0.0, 0.3).value;
    sum[i] = p1[i] + p2[i];
  }
  EXPECT_GT(fidelity(WaveFunction1D(gx, v, NormTag::unnormalized), WaveFunction1D(gx, sum, NormTag::unnormalized)),
            1.0 - 1e-12);
}

TEST(PointerProtocol, RejectsInvalidParameters) {
  PureSetup s;
  PointerExperiment ex(s.psi);
  PointerProtocol p;
  p.coupling = 0.0;
  EXPECT_THROW(run_pointer_protocol(ex, p), ValidationError);
  p.coupling = 0.02;
  p.pointer_width = -1.0;
  EXPECT_THROW(run_pointer_protocol(ex, p), ValidationError);
  p.pointer_width = 1.0;
  p.sites = {1000};
  EXPECT_THROW(run_pointer_protocol(ex, p), ValidationError);
}

TEST(PointerProtocol, QubitEstimatesMatchExpectedWithinThreeSe) {
  PureSetup s;
  PointerExperiment ex(s.psi);
  PointerProtocol p;
  p.n_trials = 200000;
  p.seed = 3;
  p.sites = significant_sites(s.psi, 0.05);
  const auto r = run_pointer_protocol(ex, p);
  const auto e = expected_protocol(ex, p);
  EXPECT_NEAR(r.weakness_ratio, 0.5, 1e-12);
  std::size_t outside = 0;
  for (std::size_t k = 0; k < r.bins.size(); ++k) {
    ASSERT_FALSE(r.bins[k].empty);
    outside += std::abs(r.bins[k].re - e.bins[k].re) > 3.0 * r.bins[k].se_re;
    outside += std::abs(r.bins[k].im - e.bins[k].im) > 3.0 * r.bins[k].se_im;
  }
  EXPECT_LE(outside, 1u);
}

TEST(PointerProtocol, GaussianPointerAgreesInWeakLimit) {
  PureSetup s;
  PointerExperiment ex(s.psi);
  PointerProtocol p;
  p.model = PointerModel::gaussian;
  p.coupling = 0.004;
  p.pointer_width = 1.0;
  p.n_trials = 20000;
  p.sites = {64};
  const auto e = expected_protocol(ex, p);
  const cplx w = weak_value_pi_x(s.psi, s.g.point(64), 0.0).value;
  EXPECT_NEAR(e.bins[0].re, w.real(), 0.02 * std::abs(w));
  EXPECT_NEAR(e.bins[0].im, w.imag(), 0.02 * std::abs(w));
  const auto r = run_pointer_protocol(ex, p);
  EXPECT_NEAR(r.bins[0].re, e.bins[0].re, 4.0 * r.bins[0].se_re);
  EXPECT_NEAR(r.bins[0].im, e.bins[0].im, 4.0 * r.bins[0].se_im);
}

TEST(PointerProtocol, AcceptanceRateMatchesMomentumWindow) {
  PureSetup s;
  PointerExperiment ex(s.psi);
  PointerProtocol p;
  p.n_trials = 100000;
  p.sites = {60, 64, 70};
  const auto r = run_pointer_protocol(ex, p);
  for (const auto& site : r.sites) {
    const double pa = site.acceptance_exact;
    const double f = static_cast<double>(site.n_accepted) / static_cast<double>(site.n_trials);
    EXPECT_NEAR(f, pa, 4.0 * std::sqrt(pa * (1.0 - pa) / static_cast<double>(site.n_trials)));
  }
}

TEST(PointerProtocol, EmptyBinsAreFlaggedNotThrown) {
  const Grid1D gx(-2.56, 2.56, 64), gy(-8.0, 8.0, 32);
  const auto Psi = WaveFunction2D::product(gaussian(gx, 0.0, 0.16), gaussian(gy, -3.0, 0.5));
  std::vector<WaveFunction2D> comps{Psi};
  PointerExperiment ex(comps);
  PointerProtocol p;
  p.n_trials = 2000;
  p.sites = {32};
  p.y_edges = {-8.25, 0.0, 7.75};
  const auto r = run_pointer_protocol(ex, p);
  EXPECT_FALSE(r.at(0, 0).empty);
  EXPECT_TRUE(r.at(0, 1).empty);
  EXPECT_TRUE(std::isnan(r.at(0, 1).re));
}

TEST(PointerProtocol, RecordsAreConsistentAndDeterministic) {
  const Grid1D gx(-2.56, 2.56, 64), gy(-8.0, 8.0, 32);
  const auto Psi = WaveFunction2D::product(gaussian(gx, 0.0, 0.16), gaussian(gy, 0.0, 2.0));
  std::vector<WaveFunction2D> comps{Psi};
  PointerExperiment ex(comps);
  PointerProtocol p;
  p.n_trials = 5000;
  p.max_records = 3000;
  p.sites = {30, 32, 34};
  const auto r = run_pointer_protocol(ex, p);
  ASSERT_EQ(r.records.size(), 3000u);
  for (const auto& rec : r.records) {
    if (!rec.accepted) {
      EXPECT_TRUE(std::isnan(rec.y));
      EXPECT_EQ(rec.y_bin, -1);
      continue;
    }
    EXPECT_EQ(rec.y_bin, detail::bin_of(r.y_edges, rec.y));
    EXPECT_TRUE(rec.outcome == 1.0 || rec.outcome == -1.0);
  }
  setenv(kWorkersEnv, "1", 1);
  const auto r1 = run_pointer_protocol(ex, p);
  setenv(kWorkersEnv, "3", 1);
  const auto r3 = run_pointer_protocol(ex, p);
  unsetenv(kWorkersEnv);
  for (std::size_t k = 0; k < r.bins.size(); ++k) {
    EXPECT_EQ(r1.bins[k].counts, r3.bins[k].counts);
    EXPECT_EQ(r1.bins[k].empty, r3.bins[k].empty);
    if (!r1.bins[k].empty) EXPECT_EQ(r1.bins[k].re, r3.bins[k].re);
  }
}

TEST(PointerProtocol, ExpectedValuesApproachWeakValueAsGShrinks) {
  PureSetup s;
  PointerExperiment ex(s.psi);
  PointerProtocol p;
  p.sites = {62, 64, 66};
  const cplx w = weak_value_pi_x(s.psi, s.g.point(62), 0.0).value;
  double prev = std::numeric_limits<double>::infinity();
  for (double g : {0.04, 0.02, 0.01, 0.005}) {
    p.coupling = g;
    const auto e = expected_protocol(ex, p);
    const double err = std::abs(cplx(e.bins[0].re, e.bins[0].im) - w);
    EXPECT_LT(err, prev);
    prev = err;
  }
  EXPECT_LT(prev, 0.02 * std::abs(w));
}
