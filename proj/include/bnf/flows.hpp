#pragma once

// Model zoo: MVN, MCTM, CF, MAF, HCF, HMAF. A model is a base distribution
// plus an ordered stack of marginal / dependence stages with named
// parameter slices; log-density is exact via the change of variables.

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bnf/bernstein.hpp"
#include "bnf/conditioners.hpp"
#include "bnf/diffcore.hpp"
#include "bnf/rqs.hpp"
#include "bnf/special.hpp"

namespace bnf {

struct ModelSpec {
  std::string kind = "hcf";        // mvn | mctm | cf | maf | hcf | hmaf
  std::string family = "rqs";      // h2 transform family: rqs | bernstein
  bool conditional = false;
  int J = 2;
  int U = 0;                       // feature count (0 when unconditional)
  int marginal_order = 60;         // H1 Bernstein order
  int h2_order = 10;               // Bernstein order inside H2 layers
  int bins = 8;                    // RQS bins
  double tail_bound = 4.0;         // RQS interval half-width B
  int layers = 2;                  // stacked layers (cf/maf/hmaf); hcf uses 1
  std::vector<int> hidden = {16, 16};
  std::vector<int> feature_hidden = {8};
  std::string shift_mode = "none";     // none | linear | bernstein (H1 shift)
  int shift_order = 6;
  std::string base = "normal";         // normal | logistic
  std::string constrain = "softmax";   // softmax | softplus (marginal variant)
  std::string cond_mode = "additive";  // additive | concat (x into MADE)
  std::vector<double> y_lo, y_hi;      // per-dimension H1 domain
  double x_lo = 0.0, x_hi = 1.0;       // feature domain for basis shifts
  uint64_t init_seed = 0;

  void validate() const;
};

// Per-row cached Bernstein basis for the marginal stage (inputs are data,
// so the basis weights are constants; caching them makes the training-path
// H1 a pair of fused dot products per dimension).
struct MarginalCache {
  int stride = 0;  // (M+1) * J
  int m = 0;
  std::vector<double> w;  // rows * J * (M+1) forward-basis weights
  std::vector<double> c;  // rows * J * (M+1) slope coefficients (applied to theta)
  bool empty() const { return w.empty(); }
  std::span<const double> wrow(size_t row, int j) const {
    return {w.data() + row * stride + static_cast<size_t>(j) * (m + 1), static_cast<size_t>(m + 1)};
  }
  std::span<const double> crow(size_t row, int j) const {
    return {c.data() + row * stride + static_cast<size_t>(j) * (m + 1), static_cast<size_t>(m + 1)};
  }
};

class FlowModel {
 public:
  static FlowModel build(const ModelSpec& spec);

  const ModelSpec& spec() const { return spec_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // evaluation path (no gradients)
  double log_prob(std::span<const double> y, std::span<const double> x = {}) const {
    return log_prob_t<double>(params_.values, y, x, nullptr, 0, nullptr);
  }

  // training path: p are tape leaves aligned with params().values
  Var log_prob(std::span<const Var> p, std::span<const double> y,
               std::span<const double> x = {}, const MarginalCache* cache = nullptr,
               size_t row = 0, const std::vector<std::vector<Var>>* h1_thetas = nullptr) const {
    return log_prob_t<Var>(p, y, x, cache, row, h1_thetas);
  }

  // i.i.d. draws; deterministic given seed. Returns n*J values row-major.
  std::vector<double> sample(std::span<const double> x, int n, uint64_t seed) const;

  // H1-only helpers (marginal diagnostics; available for mctm/hcf/hmaf)
  bool has_marginal_stage() const { return marginal_; }
  double marginal_forward(int j, double yj, std::span<const double> x) const;
  double marginal_inverse(int j, double wj, std::span<const double> x) const;
  double marginal_log_det(int j, double yj, std::span<const double> x) const;

  // exact marginal CDF / quantile / log-density of Y_j implied by the model
  // (Lambda models include the base-scale variance correction; layered
  // models use the H1 marginals)
  double marginal_cdf(int j, double yj, std::span<const double> x) const;
  double marginal_quantile(int j, double u, std::span<const double> x) const;
  double marginal_logpdf(int j, double yj, std::span<const double> x) const;

  // materialized triangular matrix at features x (mctm only)
  std::vector<double> lambda_matrix(std::span<const double> x) const;

  MarginalCache make_h1_cache(std::span<const double> y_rows, size_t n_rows) const;

  // per-batch constrained H1 coefficients (unconditional marginal stages)
  std::vector<std::vector<Var>> h1_thetas(std::span<const Var> p) const;

  std::string to_json_string() const;
  static FlowModel from_json_string(const std::string& s);

  template <class T>
  T log_prob_t(std::span<const T> p, std::span<const double> y, std::span<const double> x,
               const MarginalCache* cache, size_t row,
               const std::vector<std::vector<T>>* h1_thetas) const;

  // an inert empty model; build() / from_json_string() are the real factories
  FlowModel() = default;

 private:
  ModelSpec spec_;
  ParamStore params_;

  // marginal stage
  bool marginal_ = false;
  // training-time: the marginal stage is held fixed, so its outputs are plain
  // constants in the gradient graph (set only while fitting the later stages)
  bool marginal_frozen_ = false;
  std::vector<std::vector<double>> frozen_thetas_;  // per dim, when x-independent
  std::shared_ptr<BernsteinBasis> h1_basis_;
  std::vector<size_t> h1_raw_off_;    // per dim
  std::vector<size_t> h1_delta_off_;  // per dim, class-specific coefficients (may be empty)
  FeatureShiftMap shift_;
  std::shared_ptr<BernsteinBasis> shift_basis_;
  std::vector<size_t> shift_off_;  // per dim (empty when shift_mode == none)

  // triangular stage (mctm)
  bool lambda_stage_ = false;
  size_t lambda_off_ = 0;               // unconditional strict-lower entries
  std::vector<size_t> lambda_x_off_;    // conditional: per entry basis coefficients
  std::shared_ptr<BernsteinBasis> xbasis_;

  // layered dependence stages (cf/maf/hcf/hmaf)
  struct Layer {
    enum class Kind { Coupling, MAF } kind = Kind::Coupling;
    int split = 1;       // coupling: conditioning prefix length
    int ar_dims = 0;     // maf: autoregressive width
    FCN net;             // coupling conditioner
    MaskedMLP made;      // maf conditioner
    size_t off = 0;
    bool has_feat = false;
    FCN feat;
    size_t feat_off = 0;
    bool has_y1 = false;  // hmaf: conditioning on the passthrough dimension
    FCN y1;
    size_t y1_off = 0;
    bool reverse_after = false;
  };
  std::vector<Layer> layers_;
  int passthrough_ = 0;  // hmaf: leading dims H2 leaves untouched
  std::shared_ptr<BernsteinBasis> h2_basis_;
  int per_dim_ = 0;  // transform parameters per dimension in H2

  // mvn
  bool is_mvn_ = false;
  size_t mvn_mu_off_ = 0, mvn_l_off_ = 0;
  FCN mvn_net_;
  size_t mvn_net_off_ = 0;

  // ---- internals -----------------------------------------------------------
  template <class T>
  std::vector<T> marginal_thetas_at(std::span<const T> p, int j, std::span<const double> x) const;

  template <class T>
  T base_logpdf(T z) const;

  template <class Ty, class Tp>
  void h2_apply(Ty v, std::span<const Tp> raw, detail::rqs_result_t<Ty, Tp>& out,
                detail::rqs_result_t<Ty, Tp>& ld) const;

  double h2_inverse(double z, std::span<const double> raw) const;

  template <class Tin, class T>
  std::vector<T> apply_layer(const Layer& L, const std::vector<Tin>& w,
                             std::span<const T> p, std::span<const double> x, T& logdet) const;

  template <class T>
  T mvn_log_prob(std::span<const T> p, std::span<const double> y, std::span<const double> x) const;

  std::vector<double> lambda_sigma_diag(std::span<const double> x) const;

  friend struct FlowModelAccess;
};

// ---- template implementations ---------------------------------------------

template <class T>
T FlowModel::base_logpdf(T z) const {
  if (spec_.base == "logistic") {
    if (value_of(z) >= 0.0) return -z - softplus(-z) * 2.0;
    return z - softplus(z) * 2.0;
  }
  return z * z * (-0.5) - kLogSqrt2Pi;
}

template <class T>
std::vector<T> FlowModel::marginal_thetas_at(std::span<const T> p, int j,
                                             std::span<const double> x) const {
  const int m = spec_.marginal_order;
  const size_t raw_len = spec_.constrain == "softplus" ? m + 1 : m + 2;
  std::span<const T> raw{p.data() + h1_raw_off_[j], raw_len};
  if (!h1_delta_off_.empty() && !x.empty()) {
    std::vector<T> eff(raw_len);
    std::span<const T> delta{p.data() + h1_delta_off_[j], raw_len};
    for (size_t k = 0; k < raw_len; ++k) eff[k] = raw[k] + delta[k] * x[0];
    return spec_.constrain == "softplus"
               ? bernstein_constrain_softplus(std::span<const T>{eff})
               : bernstein_constrain(std::span<const T>{eff});
  }
  return spec_.constrain == "softplus" ? bernstein_constrain_softplus(raw)
                                       : bernstein_constrain(raw);
}

template <class Ty, class Tp>
void FlowModel::h2_apply(Ty v, std::span<const Tp> raw, detail::rqs_result_t<Ty, Tp>& out,
                         detail::rqs_result_t<Ty, Tp>& ld) const {
  if (spec_.family == "rqs") {
    auto kn = rqs_constrain(raw, spec_.bins, spec_.tail_bound);
    out = rqs_forward(v, kn);
    ld = rqs_log_det(v, kn);
  } else {
    auto theta = bernstein_constrain(raw);
    const double b = spec_.tail_bound;
    out = bernstein_forward(*h2_basis_, v, std::span<const Tp>{theta}, -b, b);
    ld = bernstein_log_det(*h2_basis_, v, std::span<const Tp>{theta}, -b, b);
  }
}

template <class Tin, class T>
std::vector<T> FlowModel::apply_layer(const Layer& L, const std::vector<Tin>& w,
                                      std::span<const T> p, std::span<const double> x,
                                      T& logdet) const {
  using R = detail::rqs_result_t<Tin, T>;
  static_assert(std::is_same_v<R, T>);
  std::vector<T> out(w.size());

  std::vector<T> extra;  // additive feature conditioning, first-layer pre-activations
  if (L.has_feat) extra = L.feat.template forward<double, T>(p, L.feat_off, x);

  if (L.kind == Layer::Kind::Coupling) {
    const int d = L.split;
    const int jdim = static_cast<int>(w.size());
    std::span<const Tin> head{w.data(), static_cast<size_t>(d)};
    auto psi = L.net.template forward<Tin, T>(p, L.off, head, std::span<const T>{extra});
    for (int j = 0; j < d; ++j) out[j] = w[j] * 1.0 + p[0] * 0.0;  // promote passthrough
    for (int j = d; j < jdim; ++j) {
      std::span<const T> raw{psi.data() + static_cast<size_t>(j - d) * per_dim_,
                             static_cast<size_t>(per_dim_)};
      T ld{};
      h2_apply(w[j], raw, out[j], ld);
      logdet = logdet + ld;
    }
  } else {
    const int n = L.ar_dims;
    const int off0 = static_cast<int>(w.size()) - n;  // passthrough prefix (hmaf)
    std::span<const Tin> ar{w.data() + off0, static_cast<size_t>(n)};
    auto psi = L.made.template forward<Tin, T>(p, L.off, ar, x, std::span<const T>{extra});
    if (L.has_y1) {
      std::vector<Tin> y1in{w[0]};
      auto add = L.y1.template forward<Tin, T>(p, L.y1_off, std::span<const Tin>{y1in});
      for (size_t k = 0; k < psi.size(); ++k) psi[k] = psi[k] + add[k];
    }
    for (int j = 0; j < off0; ++j) out[j] = w[j] * 1.0 + p[0] * 0.0;
    for (int j = 0; j < n; ++j) {
      std::span<const T> raw{psi.data() + static_cast<size_t>(j) * per_dim_,
                             static_cast<size_t>(per_dim_)};
      T ld{};
      h2_apply(w[off0 + j], raw, out[off0 + j], ld);
      logdet = logdet + ld;
    }
  }
  if (L.reverse_after) std::reverse(out.begin() + passthrough_, out.end());
  return out;
}

template <class T>
T FlowModel::log_prob_t(std::span<const T> p, std::span<const double> y,
                        std::span<const double> x, const MarginalCache* cache, size_t row,
                        const std::vector<std::vector<T>>* h1_thetas) const {
  if (is_mvn_) return mvn_log_prob(p, y, x);
  const int jdim = spec_.J;
  T logdet = p[0] * 0.0;
  std::vector<T> w(jdim);

  if (marginal_ && marginal_frozen_) {
    // the stage's parameters cannot move in this phase: evaluate in doubles and
    // feed the results into the graph as constants
    std::span<const double> pv{params_.values};
    for (int j = 0; j < jdim; ++j) {
      std::vector<double> th_own;
      std::span<const double> theta;
      if (!frozen_thetas_.empty() && (h1_delta_off_.empty() || x.empty())) {
        theta = frozen_thetas_[j];
      } else {
        th_own = marginal_thetas_at<double>(pv, j, x);
        theta = th_own;
      }
      double wd, ld;
      if (cache && !cache->empty()) {
        auto wr = cache->wrow(row, j);
        auto cr = cache->crow(row, j);
        double v = 0.0, s = 0.0;
        for (size_t i = 0; i < wr.size(); ++i) {
          v += wr[i] * theta[i];
          s += cr[i] * theta[i];
        }
        wd = v;
        ld = std::log(s);
      } else {
        wd = bernstein_forward(*h1_basis_, y[j], theta, spec_.y_lo[j], spec_.y_hi[j]);
        ld = bernstein_log_det(*h1_basis_, y[j], theta, spec_.y_lo[j], spec_.y_hi[j]);
      }
      if (!shift_off_.empty()) {
        std::span<const double> sc{pv.data() + shift_off_[j], shift_.params_per_dim()};
        wd += shift_.eval(shift_basis_.get(), sc, x);
      }
      w[j] = p[0] * 0.0 + wd;
      logdet = logdet + ld;
    }
  } else if (marginal_) {
    for (int j = 0; j < jdim; ++j) {
      std::vector<T> theta_own;
      std::span<const T> theta;
      if (h1_thetas && h1_delta_off_.empty()) {
        theta = (*h1_thetas)[j];
      } else {
        theta_own = marginal_thetas_at(p, j, x);
        theta = theta_own;
      }
      T wj{}, ld{};
      if (cache && !cache->empty()) {
        if constexpr (std::is_same_v<T, double>) {
          auto wr = cache->wrow(row, j);
          auto cr = cache->crow(row, j);
          double v = 0.0, s = 0.0;
          for (size_t i = 0; i < wr.size(); ++i) {
            v += wr[i] * theta[i];
            s += cr[i] * theta[i];
          }
          wj = v;
          ld = std::log(s);
        } else {
          Tape* tape = p[0].tape;
          wj = tape->dot(cache->wrow(row, j), theta);
          Var slope = tape->dot(cache->crow(row, j), theta);
          if (!(slope.val() > 0.0))
            throw tape_error("marginal stage: non-positive derivative", slope.idx);
          ld = log(slope);
        }
      } else {
        wj = bernstein_forward(*h1_basis_, y[j], theta, spec_.y_lo[j], spec_.y_hi[j]);
        ld = bernstein_log_det(*h1_basis_, y[j], theta, spec_.y_lo[j], spec_.y_hi[j]);
      }
      if (!shift_off_.empty()) {
        std::span<const T> sc{p.data() + shift_off_[j], shift_.params_per_dim()};
        wj = wj + shift_.eval(shift_basis_.get(), sc, x);
      }
      w[j] = wj;
      logdet = logdet + ld;
    }
  } else {
    // first dependence layer consumes the raw observations directly
  }

  if (lambda_stage_) {
    std::vector<T> z(jdim);
    int e = 0;
    for (int j = 0; j < jdim; ++j) {
      T acc = w[j];
      for (int i = 0; i < j; ++i, ++e) {
        if (lambda_x_off_.empty()) {
          acc = acc + p[lambda_off_ + e] * w[i];
        } else {
          double t = (x[0] - spec_.x_lo) / (spec_.x_hi - spec_.x_lo);
          t = std::min(1.0, std::max(0.0, t));
          std::span<const T> ce{p.data() + lambda_x_off_[e],
                                static_cast<size_t>(spec_.shift_order) + 1};
          acc = acc + xbasis_->poly(t, ce) * w[i];
        }
      }
      z[j] = acc;  // unit diagonal: zero log-det contribution
    }
    w = std::move(z);
  }

  if (!layers_.empty()) {
    if (marginal_) {
      for (const auto& L : layers_) w = apply_layer<T, T>(L, w, p, x, logdet);
    } else {
      std::vector<double> yv(y.begin(), y.end());
      bool first = true;
      for (const auto& L : layers_) {
        if (first) {
          w = apply_layer<double, T>(L, yv, p, x, logdet);
          first = false;
        } else {
          w = apply_layer<T, T>(L, w, p, x, logdet);
        }
      }
    }
  }

  T lp = logdet;
  for (int j = 0; j < jdim; ++j) lp = lp + base_logpdf(w[j]);
  if (!std::isfinite(value_of(lp)))
    throw std::runtime_error("log_prob: non-finite result in " + spec_.kind);
  return lp;
}

template <class T>
T FlowModel::mvn_log_prob(std::span<const T> p, std::span<const double> y,
                          std::span<const double> x) const {
  const int jdim = spec_.J;
  std::vector<T> mu(jdim), lr(jdim * (jdim + 1) / 2);
  if (spec_.conditional) {
    auto out = mvn_net_.template forward<double, T>(p, mvn_net_off_, x);
    for (int j = 0; j < jdim; ++j) mu[j] = out[j];
    for (size_t k = 0; k < lr.size(); ++k) lr[k] = out[jdim + k];
  } else {
    for (int j = 0; j < jdim; ++j) mu[j] = p[mvn_mu_off_ + j];
    for (size_t k = 0; k < lr.size(); ++k) lr[k] = p[mvn_l_off_ + k];
  }
  // forward substitution with L lower triangular, softplus-positive diagonal
  std::vector<T> z(jdim);
  T lp = p[0] * 0.0;
  int e = 0;
  for (int j = 0; j < jdim; ++j) {
    T acc = y[j] - mu[j];
    for (int i = 0; i < j; ++i, ++e) acc = acc - lr[e] * z[i];
    T diag = softplus(lr[e]) + 1e-5;
    ++e;
    z[j] = acc / diag;
    lp = lp + z[j] * z[j] * (-0.5) - log(diag);
  }
  return lp + (-kLogSqrt2Pi * jdim);
}

}  // namespace bnf
