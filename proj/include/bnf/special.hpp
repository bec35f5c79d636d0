#pragma once

// Scalar special functions shared across modules.

#include <cmath>
#include <vector>

namespace bnf {

inline constexpr double kLogSqrt2Pi = 0.9189385332046727417803297364056;

inline double norm_logpdf(double z) { return -0.5 * z * z - kLogSqrt2Pi; }
inline double norm_pdf(double z) { return std::exp(norm_logpdf(z)); }
inline double norm_cdf(double z) { return 0.5 * std::erfc(-z * M_SQRT1_2); }

// Acklam's rational approximation refined with one Halley step.
inline double norm_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) return p <= 0.0 ? -INFINITY : INFINITY;
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double e = norm_cdf(x) - p;
  const double u = e / norm_pdf(x);
  x -= u / (1.0 + 0.5 * x * u);
  return x;
}

inline double logistic_logpdf(double z) {
  const double s = std::fabs(z);
  const double l = std::log1p(std::exp(-s));
  return -s - 2.0 * l;
}
inline double logistic_cdf(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}
inline double logistic_quantile(double p) { return std::log(p / (1.0 - p)); }

// log C(n, k) for k = 0..n
inline std::vector<double> log_binom_row(int n) {
  std::vector<double> lc(n + 1);
  const double lgn = std::lgamma(n + 1.0);
  for (int k = 0; k <= n; ++k)
    lc[k] = lgn - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
  return lc;
}

// Asymptotic Kolmogorov survival function Q(lambda) = 2 sum (-1)^{k-1} e^{-2k^2 l^2}
inline double kolmogorov_q(double lambda) {
  if (lambda < 1e-8) return 1.0;
  double s = 0.0, sign = 1.0;
  for (int k = 1; k <= 100; ++k) {
    const double t = std::exp(-2.0 * k * k * lambda * lambda);
    s += sign * t;
    if (t < 1e-14) break;
    sign = -sign;
  }
  return std::min(1.0, std::max(0.0, 2.0 * s));
}

}  // namespace bnf
