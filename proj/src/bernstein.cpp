#include "bnf/bernstein.hpp"

#include "bnf/special.hpp"

namespace bnf {

BernsteinBasis::BernsteinBasis(int order) : m_(order) {
  if (order < 1) throw std::invalid_argument("BernsteinBasis: order must be >= 1");
  lc_ = log_binom_row(order);
  lcd_ = log_binom_row(order - 1);
}

namespace {

// Fills out[i] = exp(lc[i] + i*log(z) + (n-i)*log(1-z)); log-space keeps
// the terms finite up to order 300 and beyond.
void basis_weights(const std::vector<double>& lc, int n, double z, std::span<double> out) {
  if (z <= 0.0) {
    std::fill(out.begin(), out.end(), 0.0);
    out[0] = 1.0;
    return;
  }
  if (z >= 1.0) {
    std::fill(out.begin(), out.end(), 0.0);
    out[n] = 1.0;
    return;
  }
  const double lz = std::log(z), l1z = std::log1p(-z);
  for (int i = 0; i <= n; ++i) out[i] = std::exp(lc[i] + i * lz + (n - i) * l1z);
}

}  // namespace

void BernsteinBasis::weights(double z, std::span<double> out) const {
  basis_weights(lc_, m_, z, out);
}

void BernsteinBasis::dweights(double z, std::span<double> out) const {
  basis_weights(lcd_, m_ - 1, z, out);
}

double BernsteinBasis::poly(double z, std::span<const double> theta) const {
  std::vector<double> w(m_ + 1);
  basis_weights(lc_, m_, z, w);
  double s = 0.0;
  for (int i = 0; i <= m_; ++i) s += w[i] * theta[i];
  return s;
}

Var BernsteinBasis::poly(double z, std::span<const Var> theta) const {
  std::vector<double> w(m_ + 1);
  basis_weights(lc_, m_, z, w);
  return theta[0].tape->dot(w, theta);
}

Var BernsteinBasis::poly(Var z, std::span<const Var> theta) const {
  const Var lz = log(z), l1z = log(1.0 - z);
  Var s = exp(l1z * static_cast<double>(m_) + lc_[0]) * theta[0];
  for (int i = 1; i <= m_; ++i)
    s = s + exp(lz * static_cast<double>(i) + l1z * static_cast<double>(m_ - i) + lc_[i]) * theta[i];
  return s;
}

double BernsteinBasis::dpoly(double z, std::span<const double> theta) const {
  std::vector<double> w(m_);
  basis_weights(lcd_, m_ - 1, z, w);
  double s = 0.0;
  for (int i = 0; i < m_; ++i) s += w[i] * (theta[i + 1] - theta[i]);
  return m_ * s;
}

Var BernsteinBasis::dpoly(double z, std::span<const Var> theta) const {
  std::vector<double> w(m_);
  basis_weights(lcd_, m_ - 1, z, w);
  for (double& wi : w) wi *= m_;
  std::vector<double> c(m_ + 1, 0.0);
  for (int i = 0; i < m_; ++i) {
    c[i + 1] += w[i];
    c[i] -= w[i];
  }
  return theta[0].tape->dot(c, theta);
}

Var BernsteinBasis::dpoly(Var z, std::span<const Var> theta) const {
  const Var lz = log(z), l1z = log(1.0 - z);
  Var s = exp(l1z * static_cast<double>(m_ - 1) + lcd_[0]) * (theta[1] - theta[0]);
  for (int i = 1; i < m_; ++i)
    s = s + exp(lz * static_cast<double>(i) + l1z * static_cast<double>(m_ - 1 - i) + lcd_[i]) *
                (theta[i + 1] - theta[i]);
  return s * static_cast<double>(m_);
}

double bernstein_inverse(const BernsteinBasis& bb, double z, std::span<const double> theta,
                         double lo, double hi, double xtol) {
  const int m = bb.order();
  const double scale = hi - lo;
  if (z <= theta[0]) {
    const double slope = m * (theta[1] - theta[0]);
    return lo + (z - theta[0]) / slope * scale;
  }
  if (z >= theta[m]) {
    const double slope = m * (theta[m] - theta[m - 1]);
    return hi + (z - theta[m]) / slope * scale;
  }
  auto g = [&](double y) { return bernstein_forward(bb, y, theta, lo, hi) - z; };
  return chandrupatla(g, lo, hi, theta[0] - z, theta[m] - z, xtol);
}

}  // namespace bnf
