#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "ism/errors.hpp"

namespace ism::stats {

struct Moments {
  long count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double x) {
    ++count;
    const double d = x - mean;
    mean += d / static_cast<double>(count);
    m2 += d * (x - mean);
  }

  /// Chan et al. pairwise merge; used to combine per-block accumulators
  /// in a fixed order so parallel runs stay deterministic.
  void merge(const Moments& o) {
    if (o.count == 0) return;
    if (count == 0) {
      *this = o;
      return;
    }
    const double n1 = static_cast<double>(count);
    const double n2 = static_cast<double>(o.count);
    const double d = o.mean - mean;
    mean += d * n2 / (n1 + n2);
    m2 += o.m2 + d * d * n1 * n2 / (n1 + n2);
    count += o.count;
  }

  double variance() const { return count > 1 ? m2 / static_cast<double>(count - 1) : 0.0; }
  double stddev() const { return std::sqrt(variance()); }
  double stderr_mean() const {
    return count > 0 ? stddev() / std::sqrt(static_cast<double>(count)) : 0.0;
  }
};

inline double median(std::vector<double> xs) {
  if (xs.empty()) throw error("median of an empty sample");
  const std::size_t mid = xs.size() / 2;
  std::nth_element(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(mid), xs.end());
  double hi = xs[mid];
  if (xs.size() % 2 == 1) return hi;
  double lo = *std::max_element(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
  long count = 0;
};

/// Ordinary least squares of y against x with the textbook residual-based
/// standard error on the slope.
inline LineFit fit_line(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw error("fit_line needs >= 2 points");
  const double n = static_cast<double>(x.size());
  double sx = 0.0, sy = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sx += x[k];
    sy += y[k];
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxx += (x[k] - mx) * (x[k] - mx);
    sxy += (x[k] - mx) * (y[k] - my);
  }
  if (sxx <= 0.0) throw error("fit_line: degenerate abscissae");
  LineFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.count = static_cast<long>(x.size());
  if (x.size() > 2) {
    double ss_res = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double r = y[k] - (fit.intercept + fit.slope * x[k]);
      ss_res += r * r;
    }
    fit.slope_stderr = std::sqrt(ss_res / (n - 2.0) / sxx);
  } else {
    fit.slope_stderr = std::numeric_limits<double>::infinity();
  }
  return fit;
}

// --- regularized incomplete gamma, series + continued fraction ------------
// Standard Numerical-Recipes-style evaluation; accurate to ~1e-14 over the
// range the chi-square tests use.

namespace detail {

inline double gamma_p_series(double a, double x) {
  double ap = a;
  double sum = 1.0 / a;
  double del = sum;
  for (int n = 0; n < 500; ++n) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::abs(del) < std::abs(sum) * 1e-16) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

inline double gamma_q_contfrac(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 500; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-16) break;
  }
  return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

}  // namespace detail

/// Regularized lower incomplete gamma P(a, x).
inline double gamma_p(double a, double x) {
  if (!(a > 0.0) || x < 0.0) throw error("gamma_p: invalid arguments");
  if (x == 0.0) return 0.0;
  return x < a + 1.0 ? detail::gamma_p_series(a, x) : 1.0 - detail::gamma_q_contfrac(a, x);
}

inline double gamma_q(double a, double x) {
  if (!(a > 0.0) || x < 0.0) throw error("gamma_q: invalid arguments");
  if (x == 0.0) return 1.0;
  return x < a + 1.0 ? 1.0 - detail::gamma_p_series(a, x) : detail::gamma_q_contfrac(a, x);
}

inline double chi2_cdf(double dof, double x) { return gamma_p(0.5 * dof, 0.5 * x); }
inline double chi2_pvalue(double dof, double x) { return gamma_q(0.5 * dof, 0.5 * x); }

/// Upper-tail critical value: chi2_pvalue(dof, result) == significance.
inline double chi2_critical(double dof, double significance) {
  if (!(significance > 0.0 && significance < 1.0)) throw error("chi2_critical: bad significance");
  double lo = 0.0, hi = dof + 10.0;
  while (chi2_pvalue(dof, hi) > significance) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (chi2_pvalue(dof, mid) > significance)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

/// Two-sample Kolmogorov-Smirnov statistic sup_x |F_a - F_b|.
inline double ks_statistic(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw error("ks_statistic: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t ia = 0, ib = 0;
  double d = 0.0;
  while (ia < a.size() && ib < b.size()) {
    const double x = std::min(a[ia], b[ib]);
    while (ia < a.size() && a[ia] <= x) ++ia;
    while (ib < b.size() && b[ib] <= x) ++ib;
    d = std::max(d, std::abs(static_cast<double>(ia) / na - static_cast<double>(ib) / nb));
  }
  return d;
}

/// Asymptotic two-sample KS critical value at the given significance.
inline double ks_critical(std::size_t na, std::size_t nb, double significance) {
  const double c = std::sqrt(-0.5 * std::log(0.5 * significance));
  const double n = static_cast<double>(na);
  const double m = static_cast<double>(nb);
  return c * std::sqrt((n + m) / (n * m));
}

}  // namespace ism::stats
