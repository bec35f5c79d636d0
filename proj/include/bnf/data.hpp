#pragma once

// Synthetic 2D generators (moons / circles with the binary class feature),
// a higher-dimensional tabular generator for smoke runs, headered-CSV
// ingestion and per-column standardization.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace bnf {

struct Dataset {
  int J = 0, U = 0;
  size_t n = 0;
  std::vector<double> y;  // n * J row-major
  std::vector<double> x;  // n * U row-major (empty when U = 0)
  std::vector<std::string> y_names, x_names;

  std::span<const double> row_y(size_t r) const { return {y.data() + r * J, static_cast<size_t>(J)}; }
  std::span<const double> row_x(size_t r) const {
    return U == 0 ? std::span<const double>{} : std::span<const double>{x.data() + r * U, static_cast<size_t>(U)};
  }
};

// Half the rows on the outer moon (cos t, sin t), half on the inner moon
// (1 - cos t, 1/2 - sin t), t uniform on [0, pi]; isotropic Gaussian noise;
// x = 1 marks the inner (lower-right) moon.
Dataset gen_moons(size_t n, double noise_std, uint64_t seed);

// Unit outer circle and inner circle of radius inner_factor, angles uniform
// on [0, 2pi); x = 1 marks the inner circle.
Dataset gen_circles(size_t n, double noise_std, double inner_factor, uint64_t seed);

// J-dimensional tabular stand-in: correlated Gaussian core (AR(1) dependence)
// pushed through a per-dimension cubic warp, so marginals are heavy-tailed
// and dimensions are cross-dependent.
Dataset gen_tabular(size_t n, int J, double rho, uint64_t seed);

// Per-column affine standardization of the responses; invertible, recorded.
struct Standardizer {
  std::vector<double> mean, std;

  static Standardizer fit(const Dataset& ds);
  void apply(Dataset& ds) const;
  void invert(Dataset& ds) const;
  std::string to_json_string() const;
  static Standardizer from_json_string(const std::string& s);
};

// Headered CSV, '.' decimal separator. Errors carry row/column coordinates.
// Additive log-density shift that re-expresses NLL values on the reporting
// scale where each response dimension's observed range maps onto [0.05, 0.95].
// The shift is invariant to any prior per-column affine standardization.
double report_scale_shift(const Dataset& ds);

Dataset load_table(const std::string& path, const std::vector<std::string>& response_cols,
                   const std::vector<std::string>& feature_cols);

void save_table(const std::string& path, const Dataset& ds);

}  // namespace bnf
