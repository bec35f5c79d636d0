#include "bnf/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>
#include <tuple>

#include "bnf/special.hpp"

namespace bnf {

double empirical_quantile(std::vector<double> samples, double p) {
  if (samples.size() < 2) throw std::invalid_argument("empirical_quantile: need >= 2 samples");
  std::sort(samples.begin(), samples.end());
  const double h = p * (static_cast<double>(samples.size()) - 1.0);
  const size_t lo = static_cast<size_t>(std::floor(h));
  const size_t hi = std::min(lo + 1, samples.size() - 1);
  const double frac = h - static_cast<double>(lo);
  return samples[lo] * (1.0 - frac) + samples[hi] * frac;
}

std::vector<QQPoint> qq_points(std::span<const double> samples,
                               const std::function<double(double)>& ref_quantile, int n_probs) {
  if (samples.size() < 2) throw std::invalid_argument("qq_points: need >= 2 samples");
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<QQPoint> out(n_probs);
  for (int i = 1; i <= n_probs; ++i) {
    const double p = (static_cast<double>(i) - 0.5) / static_cast<double>(n_probs);
    const double h = p * (static_cast<double>(sorted.size()) - 1.0);
    const size_t lo = static_cast<size_t>(std::floor(h));
    const size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = h - static_cast<double>(lo);
    out[i - 1] = {p, ref_quantile(p), sorted[lo] * (1.0 - frac) + sorted[hi] * frac};
  }
  return out;
}

double max_qq_gap(const std::vector<QQPoint>& pts) {
  double m = 0.0;
  for (const auto& q : pts) m = std::max(m, std::fabs(q.emp_q - q.ref_q));
  return m;
}

std::string qq_to_csv(const std::vector<QQPoint>& pts) {
  std::string s = "prob,ref_q,emp_q\n";
  char buf[96];
  for (const auto& q : pts) {
    std::snprintf(buf, sizeof buf, "%.10g,%.10g,%.10g\n", q.prob, q.ref_q, q.emp_q);
    s += buf;
  }
  return s;
}

double pit(double w) { return norm_cdf(w); }

double copula_density(const FlowModel& model, std::span<const double> u,
                      std::span<const double> x) {
  const int jdim = model.spec().J;
  if (static_cast<int>(u.size()) != jdim)
    throw std::invalid_argument("copula_density: u dimension mismatch");
  for (double uj : u)
    if (!(uj > 0.0 && uj < 1.0))
      throw std::domain_error("copula_density: u must lie strictly inside (0,1)");
  std::vector<double> y(jdim);
  double log_den = 0.0;
  for (int j = 0; j < jdim; ++j) {
    y[j] = model.marginal_quantile(j, u[j], x);
    log_den += model.marginal_logpdf(j, y[j], x);
  }
  return std::exp(model.log_prob(y, x) - log_den);
}

std::vector<double> spearman_from_lambda(std::span<const double> lambda, int J) {
  if (static_cast<int>(lambda.size()) != J * J)
    throw std::invalid_argument("spearman_from_lambda: matrix size mismatch");
  for (int j = 0; j < J; ++j) {
    if (lambda[static_cast<size_t>(j) * J + j] != 1.0)
      throw std::invalid_argument("spearman_from_lambda: diagonal must be 1");
    for (int i = j + 1; i < J; ++i)
      if (lambda[static_cast<size_t>(j) * J + i] != 0.0)
        throw std::invalid_argument("spearman_from_lambda: matrix must be lower triangular");
  }
  // A = Lambda^-1 by forward substitution, column by column
  std::vector<double> a(static_cast<size_t>(J) * J, 0.0);
  for (int c = 0; c < J; ++c) {
    a[static_cast<size_t>(c) * J + c] = 1.0;
    for (int r = c + 1; r < J; ++r) {
      double acc = 0.0;
      for (int k = c; k < r; ++k)
        acc -= lambda[static_cast<size_t>(r) * J + k] * a[static_cast<size_t>(k) * J + c];
      a[static_cast<size_t>(r) * J + c] = acc;
    }
  }
  std::vector<double> sigma(static_cast<size_t>(J) * J, 0.0);
  for (int i = 0; i < J; ++i)
    for (int j = 0; j < J; ++j) {
      double acc = 0.0;
      for (int k = 0; k <= std::min(i, j); ++k)
        acc += a[static_cast<size_t>(i) * J + k] * a[static_cast<size_t>(j) * J + k];
      sigma[static_cast<size_t>(i) * J + j] = acc;
    }
  std::vector<double> rs(static_cast<size_t>(J) * J);
  for (int i = 0; i < J; ++i)
    for (int j = 0; j < J; ++j) {
      const double rho = sigma[static_cast<size_t>(i) * J + j] /
                         std::sqrt(sigma[static_cast<size_t>(i) * J + i] *
                                   sigma[static_cast<size_t>(j) * J + j]);
      rs[static_cast<size_t>(i) * J + j] = 6.0 / M_PI * std::asin(0.5 * rho);
    }
  return rs;
}

double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.size() < 2 || b.size() < 2)
    throw std::invalid_argument("ks_two_sample: need >= 2 samples per side");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  size_t i = 0, k = 0;
  double d = 0.0;
  while (i < a.size() && k < b.size()) {
    const double va = a[i], vb = b[k];
    if (va <= vb) ++i;
    if (vb <= va) ++k;
    d = std::max(d, std::fabs(static_cast<double>(i) / na - static_cast<double>(k) / nb));
  }
  const double en = std::sqrt(na * nb / (na + nb));
  return kolmogorov_q((en + 0.12 + 0.11 / en) * d);
}

std::vector<TrialCell> TrialTable::aggregate() const {
  std::map<std::tuple<std::string, std::string, bool>, std::vector<double>> groups;
  for (const auto& r : rows) groups[{r.model, r.dataset, r.conditional}].push_back(r.nll);
  std::vector<TrialCell> out;
  for (const auto& [key, vals] : groups) {
    TrialCell c;
    std::tie(c.model, c.dataset, c.conditional) = key;
    c.n_trials = static_cast<int>(vals.size());
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(vals.size());
    double var = 0.0;
    if (vals.size() >= 2) {
      for (double v : vals) var += (v - mean) * (v - mean);
      var /= static_cast<double>(vals.size() - 1);
    }
    c.mean = mean;
    c.spread = 2.0 * std::sqrt(var);
    out.push_back(c);
  }
  return out;
}

std::string TrialTable::to_csv() const {
  std::string s = "model,dataset,conditional,n,mean,spread\n";
  char buf[160];
  for (const auto& c : aggregate()) {
    std::snprintf(buf, sizeof buf, "%s,%s,%d,%d,%.6f,%.6f\n", c.model.c_str(), c.dataset.c_str(),
                  c.conditional ? 1 : 0, c.n_trials, c.mean, c.spread);
    s += buf;
  }
  return s;
}

}  // namespace bnf
