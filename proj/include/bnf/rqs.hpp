#pragma once

// Monotone rational quadratic spline bijector on [-B, B], identity outside.
// Construction follows the usual K-bin layout: K widths, K heights and K-1
// interior knot derivatives; boundary derivatives are pinned to 1 so the
// spline joins the identity tails with unit slope.

#include <span>
#include <vector>

#include "bnf/diffcore.hpp"

namespace bnf {

inline constexpr double kRqsMinBin = 1e-3;
inline constexpr double kRqsMinDeriv = 1e-3;

inline int rqs_param_count(int bins) { return 3 * bins - 1; }

template <class T>
struct RQSKnots {
  std::vector<T> x, y;  // knot coordinates, K+1 each, spanning [-B, B]
  std::vector<T> d;     // knot derivatives, K+1, ends equal 1
  double bound;
};

inline double make_const(double /*like*/, double c) { return c; }
inline Var make_const(Var like, double c) { return like.tape->leaf(c); }

// raw has 3K-1 entries: K width logits, K height logits, K-1 derivative logits.
// Zero raw input yields the identity map.
template <class T>
RQSKnots<T> rqs_constrain(std::span<const T> raw, int bins, double bound) {
  if (static_cast<int>(raw.size()) != rqs_param_count(bins))
    throw std::invalid_argument("rqs_constrain: raw size mismatch");
  RQSKnots<T> kn;
  kn.bound = bound;
  const double span_len = 2.0 * bound;
  const double free_len = span_len - bins * kRqsMinBin;

  auto alloc = [&](std::span<const T> logits, std::vector<T>& knots) {
    double mx = value_of(logits[0]);
    for (const T& l : logits) mx = std::max(mx, value_of(l));
    std::vector<T> e(bins);
    T denom = exp(logits[0] - mx);
    e[0] = denom;
    for (int k = 1; k < bins; ++k) {
      e[k] = exp(logits[k] - mx);
      denom = denom + e[k];
    }
    knots.resize(bins + 1);
    knots[0] = make_const(logits[0], -bound);
    for (int k = 0; k < bins - 1; ++k)
      knots[k + 1] = knots[k] + (e[k] / denom) * free_len + kRqsMinBin;
    knots[bins] = make_const(logits[0], bound);
  };
  alloc(raw.subspan(0, bins), kn.x);
  alloc(raw.subspan(bins, bins), kn.y);

  // softplus shifted so zero logits give derivative exactly 1
  const double shift = std::log(std::exp(1.0 - kRqsMinDeriv) - 1.0);
  kn.d.resize(bins + 1);
  kn.d[0] = make_const(raw[0], 1.0);
  for (int k = 1; k < bins; ++k)
    kn.d[k] = softplus(raw[2 * bins + k - 1] + shift) + kRqsMinDeriv;
  kn.d[bins] = make_const(raw[0], 1.0);
  return kn;
}

namespace detail {

template <class T>
int rqs_bin(const std::vector<T>& knots, double v) {
  int lo = 0, hi = static_cast<int>(knots.size()) - 1;
  while (hi - lo > 1) {
    const int mid = (lo + hi) / 2;
    if (v < value_of(knots[mid]))
      hi = mid;
    else
      lo = mid;
  }
  return lo;
}

template <class Ty, class Tk>
using rqs_result_t = decltype(std::declval<Ty>() * 1.0 + std::declval<Tk>() * 1.0);

}  // namespace detail

template <class Ty, class Tk>
detail::rqs_result_t<Ty, Tk> rqs_forward(Ty v, const RQSKnots<Tk>& kn) {
  const double vv = value_of(v);
  if (vv <= -kn.bound || vv >= kn.bound) return v * 1.0 + make_const(kn.x[0], 0.0) * 0.0;
  const int k = detail::rqs_bin(kn.x, vv);
  auto w = kn.x[k + 1] - kn.x[k];
  auto h = kn.y[k + 1] - kn.y[k];
  auto s = h / w;
  auto xi = (v - kn.x[k]) / w;
  auto xi1 = 1.0 - xi;
  auto den = s + (kn.d[k + 1] + kn.d[k] - s * 2.0) * (xi * xi1);
  return kn.y[k] + h * (s * (xi * xi) + kn.d[k] * (xi * xi1)) / den;
}

template <class Ty, class Tk>
detail::rqs_result_t<Ty, Tk> rqs_log_det(Ty v, const RQSKnots<Tk>& kn) {
  const double vv = value_of(v);
  if (vv <= -kn.bound || vv >= kn.bound) return v * 0.0 + make_const(kn.x[0], 0.0) * 0.0;
  const int k = detail::rqs_bin(kn.x, vv);
  auto w = kn.x[k + 1] - kn.x[k];
  auto h = kn.y[k + 1] - kn.y[k];
  auto s = h / w;
  auto xi = (v - kn.x[k]) / w;
  auto xi1 = 1.0 - xi;
  auto den = s + (kn.d[k + 1] + kn.d[k] - s * 2.0) * (xi * xi1);
  auto num = (s * s) * (kn.d[k + 1] * (xi * xi) + s * 2.0 * (xi * xi1) + kn.d[k] * (xi1 * xi1));
  return log(num) - log(den * den);
}

// Analytic per-bin inverse (evaluation path only).
inline double rqs_inverse(double z, const RQSKnots<double>& kn) {
  if (z <= -kn.bound || z >= kn.bound) return z;
  const int k = detail::rqs_bin(kn.y, z);
  const double w = kn.x[k + 1] - kn.x[k];
  const double h = kn.y[k + 1] - kn.y[k];
  const double s = h / w;
  const double t = z - kn.y[k];
  const double q = kn.d[k + 1] + kn.d[k] - 2.0 * s;
  const double a = h * (s - kn.d[k]) + t * q;
  const double b = h * kn.d[k] - t * q;
  const double c = -s * t;
  const double disc = b * b - 4.0 * a * c;
  const double xi = 2.0 * c / (-b - std::sqrt(std::max(disc, 0.0)));
  return kn.x[k] + xi * w;
}

}  // namespace bnf
