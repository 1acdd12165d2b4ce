#pragma once

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "error.hpp"

namespace cwf {

struct ChiSquare {
  double chi2 = 0.0;
  std::size_t dof = 0;
  double p_value = 1.0;

  ChiSquare& operator+=(const ChiSquare& other) {
    chi2 += other.chi2;
    dof += other.dof;
    p_value = chi2_survival();
    return *this;
  }

  double chi2_survival() const {
    if (dof == 0) return 1.0;
    return boost::math::gamma_q(0.5 * static_cast<double>(dof), 0.5 * chi2);
  }
};

inline double chi2_pvalue(double chi2, std::size_t dof) {
  return ChiSquare{chi2, dof, 0.0}.chi2_survival();
}

/// Pearson goodness of fit. Bins whose expected count is below min_expected are
/// merged into one pooled bin before the statistic is formed.
inline ChiSquare chi2_goodness_of_fit(const std::vector<double>& observed,
                                      const std::vector<double>& probabilities,
                                      double min_expected = 5.0) {
  if (observed.size() != probabilities.size()) {
    throw ValidationError("chi2: observed and expected bin counts differ");
  }
  double n = 0.0, ptot = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    n += observed[i];
    ptot += probabilities[i];
  }
  if (n <= 0.0 || ptot <= 0.0) throw ValidationError("chi2: empty histogram");

  ChiSquare out;
  std::size_t bins = 0;
  double pooled_obs = 0.0, pooled_exp = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const double e = n * probabilities[i] / ptot;
    if (e < min_expected) {
      pooled_obs += observed[i];
      pooled_exp += e;
      continue;
    }
    out.chi2 += (observed[i] - e) * (observed[i] - e) / e;
    ++bins;
  }
  if (pooled_exp > 0.0) {
    out.chi2 += (pooled_obs - pooled_exp) * (pooled_obs - pooled_exp) / pooled_exp;
    ++bins;
  }
  out.dof = bins > 0 ? bins - 1 : 0;
  out.p_value = out.chi2_survival();
  return out;
}

/// Two-sample (homogeneity) test for histograms with possibly different totals.
/// Bins with fewer than min_count combined entries are pooled.
inline ChiSquare chi2_two_sample(const std::vector<double>& a, const std::vector<double>& b,
                                 double min_count = 10.0) {
  if (a.size() != b.size()) throw ValidationError("chi2: histogram sizes differ");
  double na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    na += a[i];
    nb += b[i];
  }
  ChiSquare out;
  if (na <= 0.0 || nb <= 0.0) return out;
  const double ka = std::sqrt(nb / na), kb = std::sqrt(na / nb);
  std::size_t bins = 0;
  double pa = 0.0, pb = 0.0;
  auto term = [&](double x, double y) { return (ka * x - kb * y) * (ka * x - kb * y) / (x + y); };
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] + b[i] < min_count) {
      pa += a[i];
      pb += b[i];
      continue;
    }
    out.chi2 += term(a[i], b[i]);
    ++bins;
  }
  if (pa + pb > 0.0) {
    out.chi2 += term(pa, pb);
    ++bins;
  }
  out.dof = bins > 0 ? bins - 1 : 0;
  out.p_value = out.chi2_survival();
  return out;
}

namespace detail {

inline std::vector<double> cumulative(const std::vector<double>& w) {
  std::vector<double> c(w.size() + 1, 0.0);
  for (std::size_t i = 0; i < w.size(); ++i) c[i + 1] = c[i] + w[i];
  return c;
}

// Index of the cell whose cumulative interval contains u (c is increasing, c[0] = 0).
inline std::size_t invert_cdf(const std::vector<double>& c, double u) {
  auto it = std::upper_bound(c.begin() + 1, c.end(), u);
  if (it == c.end()) --it;
  auto i = static_cast<std::size_t>(it - c.begin()) - 1;
  const std::size_t n = c.size() - 1;
  while (i + 1 < n && c[i + 1] <= c[i]) ++i;  // skip empty cells
  while (i > 0 && c[i + 1] <= c[i]) --i;
  return i;
}

}  // namespace detail

/// Two-sided probability that an unbiased Gaussian estimate lies more than k standard errors out.
inline double outside_probability(double k) { return std::erfc(k / std::sqrt(2.0)); }

/// Largest number of k-SE excursions among m unbiased estimates that is still consistent
/// with chance at significance alpha (upper binomial quantile).
inline std::size_t excursion_limit(std::size_t m, double k = 3.0, double alpha = 1e-3) {
  if (m == 0) return 0;
  const boost::math::binomial_distribution<double> d(static_cast<double>(m), outside_probability(k));
  std::size_t c = 0;
  while (c < m && boost::math::cdf(boost::math::complement(d, static_cast<double>(c))) >= alpha) ++c;
  return c;
}

/// Running mean/variance (Welford).
class RunningStats {
 public:
  void add(double x) {
    ++n_;
    const double d = x - mean_;
    mean_ += d / static_cast<double>(n_);
    m2_ += d * (x - mean_);
  }
  std::size_t count() const { return n_; }
  double mean() const { return mean_; }
  double variance() const { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }
  double standard_error() const {
    return n_ > 1 ? std::sqrt(variance() / static_cast<double>(n_)) : INFINITY;
  }

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

}  // namespace cwf
