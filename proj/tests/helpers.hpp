#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

// Central finite difference of a scalar function of one coordinate.
inline double fd_central(const std::function<double(double)>& f, double x, double h = 1e-5) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double rel_err(double got, double want) {
  const double scale = std::max(1.0, std::fabs(want));
  return std::fabs(got - want) / scale;
}
