#pragma once

// Chandrupatla's bracketed root finder (1997): bisection safeguarded by
// inverse quadratic interpolation, taken only when the bracket geometry
// justifies it.

#include <cmath>
#include <limits>
#include <stdexcept>

namespace bnf {

template <class F>
double chandrupatla(F&& f, double x0, double x1, double f0, double f1,
                    double xtol = 1e-12, int maxit = 100) {
  if (f0 == 0.0) return x0;
  if (f1 == 0.0) return x1;
  if ((f0 > 0.0) == (f1 > 0.0))
    throw std::runtime_error("chandrupatla: endpoints do not bracket a root");

  double b = x0, a = x1, fb = f0, fa = f1;
  double c = x0, fc = f0;
  double t = 0.5;
  double xm = a, fm = fa;
  for (int it = 0; it < maxit; ++it) {
    const double xt = a + t * (b - a);
    const double ft = f(xt);
    if ((ft > 0.0) == (fa > 0.0)) {
      c = a;
      fc = fa;
    } else {
      c = b;
      b = a;
      fc = fb;
      fb = fa;
    }
    a = xt;
    fa = ft;
    if (std::fabs(fb) < std::fabs(fa)) {
      xm = b;
      fm = fb;
    } else {
      xm = a;
      fm = fa;
    }
    if (fm == 0.0) return xm;
    const double tol = 2.0 * std::numeric_limits<double>::epsilon() * std::fabs(xm) + 0.5 * xtol;
    const double tlim = tol / std::fabs(b - c);
    if (tlim > 0.5) return xm;

    const double xi = (a - b) / (c - b);
    const double phi = (fa - fb) / (fc - fb);
    double tn = 0.5;
    if (phi * phi < xi && (1.0 - phi) * (1.0 - phi) < 1.0 - xi) {
      tn = fa / (fb - fa) * fc / (fb - fc) +
           (c - a) / (b - a) * fa / (fc - fa) * fb / (fc - fb);
    }
    t = std::fmin(std::fmax(tn, tlim), 1.0 - tlim);
  }
  return xm;
}

// Expand [lo, hi] geometrically until g changes sign, then solve.
// g must be increasing; throws if no bracket is found after 200 doublings.
template <class G>
double solve_increasing(G&& g, double lo, double hi, double xtol = 1e-12) {
  double flo = g(lo), fhi = g(hi);
  double step = hi - lo;
  int guard = 0;
  while (flo > 0.0) {
    lo -= step;
    step *= 2.0;
    flo = g(lo);
    if (++guard > 200) throw std::runtime_error("root bracket expansion failed (low side)");
  }
  guard = 0;
  step = hi - lo;
  while (fhi < 0.0) {
    hi += step;
    step *= 2.0;
    fhi = g(hi);
    if (++guard > 200) throw std::runtime_error("root bracket expansion failed (high side)");
  }
  return chandrupatla(g, lo, hi, flo, fhi, xtol);
}

}  // namespace bnf
