#include "bnf/flows.hpp"

#include <algorithm>
#include <random>
#include <set>

#include <json.hpp>

namespace bnf {

using nlohmann::json;

void ModelSpec::validate() const {
  static const std::set<std::string> kinds{"mvn", "mctm", "cf", "maf", "hcf", "hmaf"};
  std::vector<std::string> bad;
  if (!kinds.count(kind)) bad.push_back("kind");
  if (family != "rqs" && family != "bernstein") bad.push_back("family");
  if (J < 1) bad.push_back("J");
  if ((kind == "cf" || kind == "hcf" || kind == "maf" || kind == "hmaf") && J < 2)
    bad.push_back("J (dependence stages need J >= 2)");
  if (conditional && U < 1) bad.push_back("U (conditional model needs features)");
  if (marginal_order < 1) bad.push_back("marginal_order");
  if (h2_order < 1) bad.push_back("h2_order");
  if (bins < 2) bad.push_back("bins");
  if (tail_bound <= 0.0) bad.push_back("tail_bound");
  if (layers < 1) bad.push_back("layers");
  if (hidden.empty()) bad.push_back("hidden");
  if (base != "normal" && base != "logistic") bad.push_back("base");
  if (constrain != "softmax" && constrain != "softplus") bad.push_back("constrain");
  if (shift_mode != "none" && shift_mode != "linear" && shift_mode != "bernstein")
    bad.push_back("shift_mode");
  if (cond_mode != "additive" && cond_mode != "concat") bad.push_back("cond_mode");
  if (!bad.empty()) {
    std::string msg = "invalid model spec, offending fields:";
    for (auto& f : bad) msg += " " + f;
    throw std::invalid_argument(msg);
  }
}

namespace {

size_t raw_len(const ModelSpec& s) {
  return s.constrain == "softplus" ? s.marginal_order + 1 : s.marginal_order + 2;
}

int per_dim_params(const ModelSpec& s) {
  return s.family == "rqs" ? rqs_param_count(s.bins) : s.h2_order + 2;
}

}  // namespace

FlowModel FlowModel::build(const ModelSpec& spec_in) {
  ModelSpec spec = spec_in;
  spec.validate();
  if (!spec.conditional) spec.U = 0;
  if (spec.kind == "mctm" && spec.conditional && spec.shift_mode == "none")
    spec.shift_mode = "bernstein";
  if (spec.y_lo.empty()) spec.y_lo.assign(spec.J, -4.0);
  if (spec.y_hi.empty()) spec.y_hi.assign(spec.J, 4.0);
  if (static_cast<int>(spec.y_lo.size()) != spec.J || static_cast<int>(spec.y_hi.size()) != spec.J)
    throw std::invalid_argument("invalid model spec, offending fields: y_lo/y_hi length");

  FlowModel fm;
  fm.spec_ = spec;
  std::mt19937_64 rng(spec.init_seed ^ 0x9e3779b97f4a7c15ull);
  auto& ps = fm.params_;
  fm.per_dim_ = per_dim_params(spec);
  if (spec.family == "bernstein" || spec.kind == "mctm" || spec.kind == "hcf" ||
      spec.kind == "hmaf")
    fm.h2_basis_ = std::make_shared<BernsteinBasis>(spec.h2_order);

  const bool has_marginal = spec.kind == "mctm" || spec.kind == "hcf" || spec.kind == "hmaf";

  if (spec.kind == "mvn") {
    fm.is_mvn_ = true;
    const int tri = spec.J * (spec.J + 1) / 2;
    if (spec.conditional) {
      std::vector<int> sizes{spec.U};
      for (int h : spec.hidden) sizes.push_back(h);
      sizes.push_back(spec.J + tri);
      fm.mvn_net_ = FCN(sizes);
      fm.mvn_net_off_ = ps.add("mvn.net", fm.mvn_net_.param_count());
      fm.mvn_net_.init(ps.values, fm.mvn_net_off_, rng, /*zero_last=*/true);
    } else {
      fm.mvn_mu_off_ = ps.add("mvn.mu", spec.J);
      fm.mvn_l_off_ = ps.add("mvn.lraw", tri);
    }
    return fm;
  }

  if (has_marginal) {
    fm.marginal_ = true;
    fm.h1_basis_ = std::make_shared<BernsteinBasis>(spec.marginal_order);
    for (int j = 0; j < spec.J; ++j)
      fm.h1_raw_off_.push_back(ps.add("h1.raw." + std::to_string(j), raw_len(spec)));
    if (spec.kind == "hcf" && spec.conditional) {
      // class-specific coefficients: effective raw = raw + x * delta
      for (int j = 0; j < spec.J; ++j)
        fm.h1_delta_off_.push_back(ps.add("h1.delta." + std::to_string(j), raw_len(spec)));
    }
    if (spec.shift_mode != "none") {
      fm.shift_.mode = spec.shift_mode == "linear" ? FeatureShiftMap::Mode::Linear
                                                   : FeatureShiftMap::Mode::BernsteinBasis;
      fm.shift_.n_features = spec.U;
      fm.shift_.order = spec.shift_order;
      fm.shift_.x_lo = spec.x_lo;
      fm.shift_.x_hi = spec.x_hi;
      if (fm.shift_.mode == FeatureShiftMap::Mode::BernsteinBasis)
        fm.shift_basis_ = std::make_shared<BernsteinBasis>(spec.shift_order);
      for (int j = 0; j < spec.J; ++j)
        fm.shift_off_.push_back(ps.add("h1.shift." + std::to_string(j), fm.shift_.params_per_dim()));
    }
  }

  if (spec.kind == "mctm") {
    fm.lambda_stage_ = true;
    const int strict = spec.J * (spec.J - 1) / 2;
    if (spec.conditional) {
      fm.xbasis_ = std::make_shared<BernsteinBasis>(spec.shift_order);
      for (int e = 0; e < strict; ++e)
        fm.lambda_x_off_.push_back(ps.add("lambda.x." + std::to_string(e), spec.shift_order + 1));
    } else if (strict > 0) {
      fm.lambda_off_ = ps.add("lambda", strict);
    }
    return fm;
  }

  // layered dependence stages
  const int n_layers = spec.kind == "hcf" ? 1 : spec.layers;
  const int pd = fm.per_dim_;
  fm.passthrough_ = spec.kind == "hmaf" ? 1 : 0;
  for (int l = 0; l < n_layers; ++l) {
    Layer L;
    const std::string tag = "layer" + std::to_string(l);
    if (spec.kind == "cf" || spec.kind == "hcf") {
      L.kind = Layer::Kind::Coupling;
      L.split = spec.J / 2;
      std::vector<int> sizes{L.split};
      for (int h : spec.hidden) sizes.push_back(h);
      sizes.push_back((spec.J - L.split) * pd);
      L.net = FCN(sizes);
      L.off = ps.add(tag + ".net", L.net.param_count());
      L.net.init(ps.values, L.off, rng, /*zero_last=*/true);
    } else {
      L.kind = Layer::Kind::MAF;
      L.ar_dims = spec.J - fm.passthrough_;
      const int ctx = spec.conditional && spec.cond_mode == "concat" ? spec.U : 0;
      L.made = MaskedMLP(L.ar_dims, spec.hidden, pd, ctx);
      L.off = ps.add(tag + ".made", L.made.param_count());
      L.made.init(ps.values, L.off, rng);
      if (spec.kind == "hmaf") {
        L.has_y1 = true;
        std::vector<int> sizes{1};
        for (int h : spec.feature_hidden) sizes.push_back(h);
        sizes.push_back(L.ar_dims * pd);
        L.y1 = FCN(sizes);
        L.y1_off = ps.add(tag + ".y1", L.y1.param_count());
        L.y1.init(ps.values, L.y1_off, rng, /*zero_last=*/true);
      }
    }
    if (spec.conditional && spec.cond_mode == "additive") {
      L.has_feat = true;
      std::vector<int> sizes{spec.U};
      for (int h : spec.feature_hidden) sizes.push_back(h);
      sizes.push_back(spec.hidden.front());
      L.feat = FCN(sizes);
      L.feat_off = ps.add(tag + ".feat", L.feat.param_count());
      L.feat.init(ps.values, L.feat_off, rng, /*zero_last=*/true);
    }
    L.reverse_after = l + 1 < n_layers;
    fm.layers_.push_back(std::move(L));
  }
  return fm;
}

// ---- h2 inverse ------------------------------------------------------------

double FlowModel::h2_inverse(double z, std::span<const double> raw) const {
  if (spec_.family == "rqs") {
    auto kn = rqs_constrain(raw, spec_.bins, spec_.tail_bound);
    return rqs_inverse(z, kn);
  }
  auto theta = bernstein_constrain(raw);
  return bernstein_inverse(*h2_basis_, z, theta, -spec_.tail_bound, spec_.tail_bound);
}

// ---- sampling --------------------------------------------------------------

std::vector<double> FlowModel::sample(std::span<const double> x, int n, uint64_t seed) const {
  const int jdim = spec_.J;
  std::mt19937_64 rng(seed);
  std::vector<double> out(static_cast<size_t>(n) * jdim);
  std::span<const double> p = params_.values;

  std::vector<double> z(jdim);
  for (int r = 0; r < n; ++r) {
    if (spec_.base == "logistic") {
      std::uniform_real_distribution<double> u(1e-12, 1.0 - 1e-12);
      for (int j = 0; j < jdim; ++j) z[j] = logistic_quantile(u(rng));
    } else {
      std::normal_distribution<double> nd(0.0, 1.0);
      for (int j = 0; j < jdim; ++j) z[j] = nd(rng);
    }

    if (is_mvn_) {
      const int tri = jdim * (jdim + 1) / 2;
      std::vector<double> mu(jdim), lr(tri);
      if (spec_.conditional) {
        auto o = mvn_net_.forward<double, double>(p, mvn_net_off_, x);
        for (int j = 0; j < jdim; ++j) mu[j] = o[j];
        for (int k = 0; k < tri; ++k) lr[k] = o[jdim + k];
      } else {
        for (int j = 0; j < jdim; ++j) mu[j] = p[mvn_mu_off_ + j];
        for (int k = 0; k < tri; ++k) lr[k] = p[mvn_l_off_ + k];
      }
      int e = 0;
      for (int j = 0; j < jdim; ++j) {
        double acc = mu[j];
        for (int i = 0; i < j; ++i, ++e) acc += lr[e] * z[i];
        acc += (softplus(lr[e]) + 1e-5) * z[j];
        ++e;
        out[static_cast<size_t>(r) * jdim + j] = acc;
      }
      continue;
    }

    std::vector<double> w = z;
    // invert the dependence stack in reverse order
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
      const Layer& L = *it;
      if (L.reverse_after) std::reverse(w.begin() + passthrough_, w.end());
      std::vector<double> extra;
      if (L.has_feat) extra = L.feat.forward<double, double>(p, L.feat_off, x);
      if (L.kind == Layer::Kind::Coupling) {
        const int d = L.split;
        std::span<const double> head{w.data(), static_cast<size_t>(d)};
        auto psi = L.net.forward<double, double>(p, L.off, head, std::span<const double>{extra});
        for (int j = d; j < jdim; ++j) {
          std::span<const double> raw{psi.data() + static_cast<size_t>(j - d) * per_dim_,
                                      static_cast<size_t>(per_dim_)};
          w[j] = h2_inverse(w[j], raw);
        }
      } else {
        const int nar = L.ar_dims;
        const int off0 = jdim - nar;
        std::vector<double> zar(w.begin() + off0, w.end());
        std::vector<double> war(nar, 0.0);
        for (int j = 0; j < nar; ++j) {
          auto psi = L.made.forward<double, double>(p, L.off, war, x, std::span<const double>{extra});
          if (L.has_y1) {
            std::vector<double> y1in{w[0]};
            auto add = L.y1.forward<double, double>(p, L.y1_off, std::span<const double>{y1in});
            for (size_t k = 0; k < psi.size(); ++k) psi[k] += add[k];
          }
          std::span<const double> raw{psi.data() + static_cast<size_t>(j) * per_dim_,
                                      static_cast<size_t>(per_dim_)};
          war[j] = h2_inverse(zar[j], raw);
        }
        for (int j = 0; j < nar; ++j) w[off0 + j] = war[j];
      }
    }

    if (lambda_stage_) {
      auto lam = lambda_matrix(x);
      std::vector<double> wi(jdim);
      for (int j = 0; j < jdim; ++j) {
        double acc = w[j];
        for (int i = 0; i < j; ++i) acc -= lam[static_cast<size_t>(j) * jdim + i] * wi[i];
        wi[j] = acc;
      }
      w = std::move(wi);
    }

    if (marginal_) {
      for (int j = 0; j < jdim; ++j)
        out[static_cast<size_t>(r) * jdim + j] = marginal_inverse(j, w[j], x);
    } else {
      for (int j = 0; j < jdim; ++j) out[static_cast<size_t>(r) * jdim + j] = w[j];
    }
  }
  return out;
}

// ---- marginal helpers ------------------------------------------------------

double FlowModel::marginal_forward(int j, double yj, std::span<const double> x) const {
  if (!marginal_) throw std::runtime_error("model has no marginal stage");
  std::span<const double> p = params_.values;
  auto theta = marginal_thetas_at<double>(p, j, x);
  double w = bernstein_forward(*h1_basis_, yj, std::span<const double>{theta}, spec_.y_lo[j],
                               spec_.y_hi[j]);
  if (!shift_off_.empty()) {
    std::span<const double> sc{p.data() + shift_off_[j], shift_.params_per_dim()};
    w += shift_.eval(shift_basis_.get(), sc, x);
  }
  return w;
}

double FlowModel::marginal_inverse(int j, double wj, std::span<const double> x) const {
  if (!marginal_) throw std::runtime_error("model has no marginal stage");
  std::span<const double> p = params_.values;
  auto theta = marginal_thetas_at<double>(p, j, x);
  double target = wj;
  if (!shift_off_.empty()) {
    std::span<const double> sc{p.data() + shift_off_[j], shift_.params_per_dim()};
    target -= shift_.eval(shift_basis_.get(), sc, x);
  }
  return bernstein_inverse(*h1_basis_, target, theta, spec_.y_lo[j], spec_.y_hi[j]);
}

double FlowModel::marginal_log_det(int j, double yj, std::span<const double> x) const {
  if (!marginal_) throw std::runtime_error("model has no marginal stage");
  std::span<const double> p = params_.values;
  auto theta = marginal_thetas_at<double>(p, j, x);
  return bernstein_log_det(*h1_basis_, yj, std::span<const double>{theta}, spec_.y_lo[j],
                           spec_.y_hi[j]);
}

std::vector<double> FlowModel::lambda_matrix(std::span<const double> x) const {
  const int jdim = spec_.J;
  std::vector<double> lam(static_cast<size_t>(jdim) * jdim, 0.0);
  for (int j = 0; j < jdim; ++j) lam[static_cast<size_t>(j) * jdim + j] = 1.0;
  if (!lambda_stage_) return lam;
  std::span<const double> p = params_.values;
  int e = 0;
  for (int j = 0; j < jdim; ++j)
    for (int i = 0; i < j; ++i, ++e) {
      double v;
      if (lambda_x_off_.empty()) {
        v = p[lambda_off_ + e];
      } else {
        double t = (x[0] - spec_.x_lo) / (spec_.x_hi - spec_.x_lo);
        t = std::min(1.0, std::max(0.0, t));
        std::span<const double> ce{p.data() + lambda_x_off_[e],
                                   static_cast<size_t>(spec_.shift_order) + 1};
        v = xbasis_->poly(t, ce);
      }
      lam[static_cast<size_t>(j) * jdim + i] = v;
    }
  return lam;
}

std::vector<double> FlowModel::lambda_sigma_diag(std::span<const double> x) const {
  const int jdim = spec_.J;
  std::vector<double> s(jdim, 1.0);
  if (!lambda_stage_) return s;
  auto lam = lambda_matrix(x);
  // A = Lambda^{-1} (unit lower triangular), Sigma_jj = sum_k A_jk^2
  std::vector<double> a(static_cast<size_t>(jdim) * jdim, 0.0);
  for (int c = 0; c < jdim; ++c) {
    a[static_cast<size_t>(c) * jdim + c] = 1.0;
    for (int r = c + 1; r < jdim; ++r) {
      double acc = 0.0;
      for (int k = c; k < r; ++k) acc -= lam[static_cast<size_t>(r) * jdim + k] * a[static_cast<size_t>(k) * jdim + c];
      a[static_cast<size_t>(r) * jdim + c] = acc;
    }
  }
  for (int j = 0; j < jdim; ++j) {
    double acc = 0.0;
    for (int k = 0; k <= j; ++k) acc += a[static_cast<size_t>(j) * jdim + k] * a[static_cast<size_t>(j) * jdim + k];
    s[j] = acc;
  }
  return s;
}

double FlowModel::marginal_cdf(int j, double yj, std::span<const double> x) const {
  const double w = marginal_forward(j, yj, x);
  const double sj = std::sqrt(lambda_sigma_diag(x)[j]);
  return spec_.base == "logistic" ? logistic_cdf(w / sj) : norm_cdf(w / sj);
}

double FlowModel::marginal_quantile(int j, double u, std::span<const double> x) const {
  const double sj = std::sqrt(lambda_sigma_diag(x)[j]);
  const double w = sj * (spec_.base == "logistic" ? logistic_quantile(u) : norm_quantile(u));
  return marginal_inverse(j, w, x);
}

double FlowModel::marginal_logpdf(int j, double yj, std::span<const double> x) const {
  const double w = marginal_forward(j, yj, x);
  const double s2 = lambda_sigma_diag(x)[j];
  const double sj = std::sqrt(s2);
  const double lbase = spec_.base == "logistic" ? logistic_logpdf(w / sj) : norm_logpdf(w / sj);
  return lbase - std::log(sj) + marginal_log_det(j, yj, x);
}

// ---- caches ----------------------------------------------------------------

MarginalCache FlowModel::make_h1_cache(std::span<const double> y_rows, size_t n_rows) const {
  MarginalCache mc;
  if (!marginal_) return mc;
  const int m = spec_.marginal_order;
  const int jdim = spec_.J;
  mc.m = m;
  mc.stride = (m + 1) * jdim;
  mc.w.assign(n_rows * mc.stride, 0.0);
  mc.c.assign(n_rows * mc.stride, 0.0);
  std::vector<double> dw(m);
  for (size_t r = 0; r < n_rows; ++r)
    for (int j = 0; j < jdim; ++j) {
      const double lo = spec_.y_lo[j], hi = spec_.y_hi[j], scale = hi - lo;
      const double z = (y_rows[r * jdim + j] - lo) / scale;
      double* wr = mc.w.data() + r * mc.stride + static_cast<size_t>(j) * (m + 1);
      double* cr = mc.c.data() + r * mc.stride + static_cast<size_t>(j) * (m + 1);
      if (z <= 0.0) {
        wr[0] = 1.0 - m * z;
        wr[1] = m * z;
        cr[0] = -m / scale;
        cr[1] = m / scale;
      } else if (z >= 1.0) {
        wr[m] = 1.0 + m * (z - 1.0);
        wr[m - 1] = -m * (z - 1.0);
        cr[m] = m / scale;
        cr[m - 1] = -m / scale;
      } else {
        h1_basis_->weights(z, {wr, static_cast<size_t>(m + 1)});
        h1_basis_->dweights(z, dw);
        for (int i = 0; i < m; ++i) {
          const double v = dw[i] * m / scale;
          cr[i + 1] += v;
          cr[i] -= v;
        }
      }
    }
  return mc;
}

std::vector<std::vector<Var>> FlowModel::h1_thetas(std::span<const Var> p) const {
  std::vector<std::vector<Var>> out;
  if (!marginal_ || !h1_delta_off_.empty()) return out;
  for (int j = 0; j < spec_.J; ++j) out.push_back(marginal_thetas_at<Var>(p, j, {}));
  return out;
}

// ---- serialization ---------------------------------------------------------

namespace {

json spec_to_json(const ModelSpec& s) {
  return json{{"kind", s.kind},
              {"family", s.family},
              {"conditional", s.conditional},
              {"J", s.J},
              {"U", s.U},
              {"marginal_order", s.marginal_order},
              {"h2_order", s.h2_order},
              {"bins", s.bins},
              {"tail_bound", s.tail_bound},
              {"layers", s.layers},
              {"hidden", s.hidden},
              {"feature_hidden", s.feature_hidden},
              {"shift_mode", s.shift_mode},
              {"shift_order", s.shift_order},
              {"base", s.base},
              {"constrain", s.constrain},
              {"cond_mode", s.cond_mode},
              {"y_lo", s.y_lo},
              {"y_hi", s.y_hi},
              {"x_lo", s.x_lo},
              {"x_hi", s.x_hi},
              {"init_seed", s.init_seed}};
}

ModelSpec spec_from_json(const json& j) {
  ModelSpec s;
  s.kind = j.at("kind");
  s.family = j.at("family");
  s.conditional = j.at("conditional");
  s.J = j.at("J");
  s.U = j.at("U");
  s.marginal_order = j.at("marginal_order");
  s.h2_order = j.at("h2_order");
  s.bins = j.at("bins");
  s.tail_bound = j.at("tail_bound");
  s.layers = j.at("layers");
  s.hidden = j.at("hidden").get<std::vector<int>>();
  s.feature_hidden = j.at("feature_hidden").get<std::vector<int>>();
  s.shift_mode = j.at("shift_mode");
  s.shift_order = j.at("shift_order");
  s.base = j.at("base");
  s.constrain = j.at("constrain");
  s.cond_mode = j.at("cond_mode");
  s.y_lo = j.at("y_lo").get<std::vector<double>>();
  s.y_hi = j.at("y_hi").get<std::vector<double>>();
  s.x_lo = j.at("x_lo");
  s.x_hi = j.at("x_hi");
  s.init_seed = j.at("init_seed");
  return s;
}

}  // namespace

std::string FlowModel::to_json_string() const {
  json slices = json::object();
  for (const auto& [name, se] : params_.slices)
    slices[name] = json::array({se.first, se.second});
  json doc{{"spec", spec_to_json(spec_)}, {"slices", slices}, {"values", params_.values}};
  return doc.dump();
}

FlowModel FlowModel::from_json_string(const std::string& s) {
  json doc = json::parse(s);
  FlowModel fm = build(spec_from_json(doc.at("spec")));
  auto vals = doc.at("values").get<std::vector<double>>();
  if (vals.size() != fm.params_.values.size())
    throw std::runtime_error("model deserialization: parameter count mismatch");
  fm.params_.values = std::move(vals);
  return fm;
}

}  // namespace bnf
