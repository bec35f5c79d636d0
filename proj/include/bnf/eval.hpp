#pragma once

// Diagnostics: QQ data against a reference distribution, PIT, implied copula
// density, Spearman rank correlation from the triangular dependence matrix,
// NLL trial tables with spread, two-sample KS test.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bnf/flows.hpp"

namespace bnf {

struct QQPoint {
  double prob, ref_q, emp_q;
};

// Probabilities are midpoints (i - 1/2) / n_probs; empirical quantiles via
// order statistics with linear interpolation.
std::vector<QQPoint> qq_points(std::span<const double> samples,
                               const std::function<double(double)>& ref_quantile,
                               int n_probs = 200);

double max_qq_gap(const std::vector<QQPoint>& pts);
std::string qq_to_csv(const std::vector<QQPoint>& pts);  // prob,ref_q,emp_q

// Linear-interpolated empirical quantile; samples need not be sorted.
double empirical_quantile(std::vector<double> samples, double p);

// Probability integral transform under the standard normal base.
double pit(double w);

// c(u|x) = f_Y(F^-1(u)|x) / prod_j f_{Y_j}(F_j^-1(u_j)|x), marginals from
// the model's exact marginal CDF/quantile. u strictly inside (0,1)^J.
double copula_density(const FlowModel& model, std::span<const double> u,
                      std::span<const double> x);

// lambda is the J x J unit-diagonal lower-triangular matrix, row-major.
// Sigma = Lambda^-1 Lambda^-T; rho = correlation of Sigma;
// rho_s = (6/pi) asin(rho/2). Returns J x J row-major.
std::vector<double> spearman_from_lambda(std::span<const double> lambda, int J);

// Two-sample Kolmogorov-Smirnov: returns the asymptotic p-value.
double ks_two_sample(std::vector<double> a, std::vector<double> b);

struct TrialRow {
  std::string model, dataset;
  bool conditional = false;
  uint64_t seed = 0;
  double nll = 0.0;
};

struct TrialCell {
  std::string model, dataset;
  bool conditional = false;
  int n_trials = 0;
  double mean = 0.0, spread = 0.0;  // spread = 2 * std over trials
};

struct TrialTable {
  std::vector<TrialRow> rows;
  std::vector<TrialCell> aggregate() const;  // grouped by (model, dataset, conditional)
  std::string to_csv() const;                // model,dataset,conditional,n,mean,spread
};

}  // namespace bnf
