#pragma once

// Bernstein polynomial bijector: monotone coefficient constraints, forward
// evaluation in the Beta-density basis, analytic derivative, linear
// extrapolation outside the domain, and a root-finding inverse.

#include <span>
#include <type_traits>
#include <vector>

#include "bnf/diffcore.hpp"
#include "bnf/rootfind.hpp"

namespace bnf {

// Basis evaluation for a fixed order M. h(z) = sum_i C(M,i) z^i (1-z)^{M-i} theta_i,
// which equals 1/(M+1) sum_i Be_i(z) theta_i with Be_i the Beta(i+1, M-i+1) density.
class BernsteinBasis {
 public:
  explicit BernsteinBasis(int order);

  int order() const { return m_; }

  // basis weights at z in [0,1]; out must have M+1 entries
  void weights(double z, std::span<double> out) const;
  // order-(M-1) basis weights used by the derivative; out has M entries
  void dweights(double z, std::span<double> out) const;

  double poly(double z, std::span<const double> theta) const;
  Var poly(double z, std::span<const Var> theta) const;
  Var poly(Var z, std::span<const Var> theta) const;

  // d/dz of poly: M * sum_i C(M-1,i) z^i (1-z)^{M-1-i} (theta_{i+1} - theta_i)
  double dpoly(double z, std::span<const double> theta) const;
  Var dpoly(double z, std::span<const Var> theta) const;
  Var dpoly(Var z, std::span<const Var> theta) const;

 private:
  int m_;
  std::vector<double> lc_;   // log C(M, i)
  std::vector<double> lcd_;  // log C(M-1, i)
};

// Monotone coefficient constraint, softmax allocation with the [-3,3]
// boundary rule: raw has M+2 entries, output M+1 strictly increasing
// coefficients with theta_0 <= -3 and theta_M >= 3.
template <class T>
std::vector<T> bernstein_constrain(std::span<const T> raw) {
  const int m = static_cast<int>(raw.size()) - 2;
  if (m < 1) throw std::invalid_argument("bernstein_constrain: need at least 3 raw values");
  for (const T& r : raw)
    if (!std::isfinite(value_of(r))) throw std::invalid_argument("bernstein_constrain: non-finite raw input");

  std::vector<T> theta(m + 1);
  theta[0] = -softplus(raw[0]) - 3.0;
  T top = softplus(raw[m + 1]) + 3.0;
  T delta = top - theta[0];

  // softmax over the M interior raw entries (shift-invariant, so the max
  // is subtracted as a plain constant)
  double mx = value_of(raw[1]);
  for (int k = 2; k <= m; ++k) mx = std::max(mx, value_of(raw[k]));
  std::vector<T> e(m);
  T denom = exp(raw[1] - mx);
  e[0] = denom;
  for (int k = 2; k <= m; ++k) {
    e[k - 1] = exp(raw[k] - mx);
    denom = denom + e[k - 1];
  }
  for (int k = 1; k < m; ++k) theta[k] = theta[k - 1] + delta * (e[k - 1] / denom);
  theta[m] = top;  // telescoping: increments sum to delta exactly
  return theta;
}

// Recursive softplus variant (no boundary rule); raw has M+1 entries.
template <class T>
std::vector<T> bernstein_constrain_softplus(std::span<const T> raw) {
  if (raw.size() < 2) throw std::invalid_argument("bernstein_constrain_softplus: need at least 2 raw values");
  std::vector<T> theta(raw.size());
  theta[0] = raw[0] + 0.0;
  for (size_t k = 1; k < raw.size(); ++k) theta[k] = theta[k - 1] + softplus(raw[k]) + 1e-8;
  return theta;
}

namespace detail {
template <class Ty, class Tth>
using bp_result_t = decltype(std::declval<Tth>() * 1.0 + std::declval<Ty>() * 1.0);
}

// Forward map on the original scale: y is normalized to [0,1] via (lo, hi),
// with linear extrapolation outside using the one-sided boundary slope.
template <class Ty, class Tth>
detail::bp_result_t<Ty, Tth> bernstein_forward(const BernsteinBasis& bb, Ty y,
                                               std::span<const Tth> theta,
                                               double lo, double hi) {
  const int m = bb.order();
  const double scale = hi - lo;
  Ty z = (y - lo) * (1.0 / scale);
  const double zv = value_of(z);
  if (zv <= 0.0) return theta[0] * 1.0 + (theta[1] - theta[0]) * (static_cast<double>(m) * z);
  if (zv >= 1.0)
    return theta[m] * 1.0 + (theta[m] - theta[m - 1]) * (static_cast<double>(m) * (z - 1.0));
  return bb.poly(z, theta) + y * 0.0;
}

// log of dh/dy; throws if the slope is not strictly positive.
template <class Ty, class Tth>
detail::bp_result_t<Ty, Tth> bernstein_log_det(const BernsteinBasis& bb, Ty y,
                                               std::span<const Tth> theta,
                                               double lo, double hi) {
  const int m = bb.order();
  const double scale = hi - lo;
  Ty z = (y - lo) * (1.0 / scale);
  const double zv = value_of(z);
  auto finish = [&](auto slope) {
    if (!(value_of(slope) > 0.0))
      throw std::runtime_error("bernstein_log_det: non-positive derivative (broken constraint)");
    return log(slope * (1.0 / scale)) + y * 0.0;
  };
  if (zv <= 0.0) return finish((theta[1] - theta[0]) * static_cast<double>(m));
  if (zv >= 1.0) return finish((theta[m] - theta[m - 1]) * static_cast<double>(m));
  return finish(bb.dpoly(z, theta));
}

// Inverse by Chandrupatla root finding; closed form in the extrapolation regions.
double bernstein_inverse(const BernsteinBasis& bb, double z, std::span<const double> theta,
                         double lo, double hi, double xtol = 1e-12);

// Plain container for a fully materialized (double) bijector.
struct BernsteinParams {
  std::vector<double> theta;
  double lo = 0.0, hi = 1.0;
};

}  // namespace bnf
