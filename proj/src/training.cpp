#include "bnf/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <stdexcept>

#include <json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace bnf {

void TrainConfig::validate() const {
  std::vector<std::string> bad;
  if (epochs < 1) bad.push_back("epochs");
  if (marginal_epochs < 0) bad.push_back("marginal_epochs");
  if (batch < 1) bad.push_back("batch");
  if (!(lr_max > 0.0) || lr_min < 0.0 || lr_min > lr_max) bad.push_back("lr_max/lr_min");
  if (patience < 1) bad.push_back("patience");
  if (!(val_frac > 0.0 && val_frac < 1.0)) bad.push_back("val_frac");
  if (!bad.empty()) {
    std::string msg = "invalid train config, offending fields:";
    for (auto& f : bad) msg += " " + f;
    throw std::invalid_argument(msg);
  }
}

std::string TrainReport::to_csv() const {
  std::string s = "epoch,lr,train_nll,val_nll\n";
  char buf[128];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof buf, "%d,%.10g,%.10g,%.10g\n", e.epoch, e.lr, e.train_nll,
                  e.val_nll);
    s += buf;
  }
  return s;
}

std::string TrainReport::to_json_string() const {
  nlohmann::json j;
  j["best_val"] = best_val;
  j["best_epoch"] = best_epoch;
  j["early_stopped"] = early_stopped;
  j["wall_seconds"] = wall_seconds;
  auto& arr = j["epochs"] = nlohmann::json::array();
  for (const auto& e : epochs)
    arr.push_back({{"epoch", e.epoch}, {"lr", e.lr}, {"train_nll", e.train_nll},
                   {"val_nll", e.val_nll}});
  return j.dump();
}

void AdamState::step(std::span<double> values, std::span<const double> grads, double lr) {
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (size_t i = 0; i < values.size(); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * grads[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * grads[i] * grads[i];
    values[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
  }
}

double cosine_lr(int64_t step, int64_t total, double lr_max, double lr_min) {
  if (step >= total) return lr_min;
  if (step < 0) step = 0;
  const double c = std::cos(M_PI * static_cast<double>(step) / static_cast<double>(total));
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + c);
}

namespace {

constexpr int kGradBlocks = 16;  // fixed accumulation layout, thread-count invariant

double block_nll_grad(const FlowModel& model, std::span<const double> y,
                      std::span<const double> x, std::span<const size_t> idx,
                      const MarginalCache* cache, std::span<double> grad) {
  const int jdim = model.spec().J;
  const int udim = model.spec().U;
  Tape tape;
  std::span<const double> pv = model.params().values;
  auto p = tape.leaves(pv);
  std::span<const Var> ps{p.data(), p.size()};
  auto thetas = model.h1_thetas(ps);
  const auto* th = thetas.empty() ? nullptr : &thetas;

  Var loss{};
  bool have = false;
  for (size_t k = 0; k < idx.size(); ++k) {
    const size_t r = idx[k];
    std::span<const double> yr{y.data() + r * jdim, static_cast<size_t>(jdim)};
    std::span<const double> xr =
        x.empty() ? std::span<const double>{} : std::span<const double>{x.data() + r * udim,
                                                                        static_cast<size_t>(udim)};
    Var lp;
    try {
      lp = model.log_prob(ps, yr, xr, cache, r, th);
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string(e.what()) + " (row " + std::to_string(r) + ")");
    }
    loss = have ? loss - lp : -lp;
    have = true;
  }
  tape.backward(loss);
  for (size_t i = 0; i < grad.size(); ++i) grad[i] = tape.adjoint(p[i]);
  return loss.val();
}

}  // namespace

double batch_nll_grad_serial(const FlowModel& model, std::span<const double> y,
                             std::span<const double> x, std::span<const size_t> idx,
                             const MarginalCache* cache, std::span<double> grad) {
  if (idx.empty()) throw std::invalid_argument("batch_nll_grad: empty batch");
  const double sum = block_nll_grad(model, y, x, idx, cache, grad);
  const double inv = 1.0 / static_cast<double>(idx.size());
  for (double& g : grad) g *= inv;
  return sum * inv;
}

double batch_nll_grad(const FlowModel& model, std::span<const double> y,
                      std::span<const double> x, std::span<const size_t> idx,
                      const MarginalCache* cache, std::span<double> grad, bool parallel) {
  if (!parallel || idx.size() < 2 * kGradBlocks)
    return batch_nll_grad_serial(model, y, x, idx, cache, grad);

  const size_t n = idx.size();
  const size_t per = (n + kGradBlocks - 1) / kGradBlocks;
  std::vector<std::vector<double>> bg(kGradBlocks);
  std::vector<double> bsum(kGradBlocks, 0.0);
  std::vector<std::string> errs(kGradBlocks);

#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (int b = 0; b < kGradBlocks; ++b) {
    const size_t lo = std::min(n, static_cast<size_t>(b) * per);
    const size_t hi = std::min(n, lo + per);
    if (lo >= hi) continue;
    bg[b].assign(grad.size(), 0.0);
    try {
      bsum[b] = block_nll_grad(model, y, x, idx.subspan(lo, hi - lo), cache, bg[b]);
    } catch (const std::exception& e) {
      errs[b] = e.what();
    }
  }
  for (int b = 0; b < kGradBlocks; ++b)
    if (!errs[b].empty()) throw std::runtime_error(errs[b]);

  std::fill(grad.begin(), grad.end(), 0.0);
  double sum = 0.0;
  for (int b = 0; b < kGradBlocks; ++b) {
    if (bg[b].empty()) continue;
    sum += bsum[b];
    for (size_t i = 0; i < grad.size(); ++i) grad[i] += bg[b][i];
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (double& g : grad) g *= inv;
  return sum * inv;
}

double dataset_nll(const FlowModel& model, std::span<const double> y, std::span<const double> x,
                   std::span<const size_t> idx) {
  if (idx.empty()) throw std::invalid_argument("dataset_nll: empty index set");
  const int jdim = model.spec().J;
  const int udim = model.spec().U;
  double sum = 0.0;
  for (size_t r : idx) {
    std::span<const double> yr{y.data() + r * jdim, static_cast<size_t>(jdim)};
    std::span<const double> xr =
        x.empty() ? std::span<const double>{} : std::span<const double>{x.data() + r * udim,
                                                                        static_cast<size_t>(udim)};
    sum -= model.log_prob(yr, xr);
  }
  return sum / static_cast<double>(idx.size());
}

// Private-member access for the training internals (declared friend in
// FlowModel).
struct FlowModelAccess {
  static bool fast_marginal_ok(const FlowModel& m) {
    return m.marginal_ && !m.lambda_stage_ && m.shift_off_.empty() &&
           m.spec_.constrain == "softmax" && m.spec_.base == "normal";
  }
  static const std::vector<size_t>& raw_off(const FlowModel& m) { return m.h1_raw_off_; }
  static const std::vector<size_t>& delta_off(const FlowModel& m) { return m.h1_delta_off_; }
  static void set_marginal_frozen(FlowModel& m, bool on) {
    m.marginal_frozen_ = on;
    m.frozen_thetas_.clear();
    if (on && m.marginal_ && m.h1_delta_off_.empty()) {
      std::span<const double> pv{m.params_.values};
      for (int j = 0; j < m.spec_.J; ++j)
        m.frozen_thetas_.push_back(m.marginal_thetas_at<double>(pv, j, {}));
    }
  }
};

namespace detail {

// ---- closed-form marginal-phase gradient -----------------------------------
//
// While only the marginal stage trains, the later stages sit at their identity
// initialization, so the joint NLL is a sum of independent one-dimensional
// Bernstein-transform likelihoods over the cached basis rows. Their gradient
// has a closed form, which avoids building a gradient tape for what is by far
// the longest phase of staged training.

struct ConstrainWork {
  std::vector<double> theta;  // m+1 constrained coefficients
  std::vector<double> sm;     // m softmax weights
  double sig0 = 0.0, sigt = 0.0, delta = 0.0;
  std::vector<double> gtheta;  // accumulator, m+1
};

// Mirrors bernstein_constrain (softmax variant) on doubles.
void constrain_forward(std::span<const double> raw, ConstrainWork& w) {
  const int m = static_cast<int>(raw.size()) - 2;
  w.theta.assign(m + 1, 0.0);
  w.sm.assign(m, 0.0);
  w.gtheta.assign(m + 1, 0.0);
  w.theta[0] = -softplus(raw[0]) - 3.0;
  const double top = softplus(raw[m + 1]) + 3.0;
  w.delta = top - w.theta[0];
  double mx = raw[1];
  for (int k = 2; k <= m; ++k) mx = std::max(mx, raw[k]);
  double denom = 0.0;
  for (int k = 1; k <= m; ++k) {
    w.sm[k - 1] = std::exp(raw[k] - mx);
    denom += w.sm[k - 1];
  }
  for (double& v : w.sm) v /= denom;
  for (int k = 1; k < m; ++k) w.theta[k] = w.theta[k - 1] + w.delta * w.sm[k - 1];
  w.theta[m] = top;
  w.sig0 = 1.0 / (1.0 + std::exp(-raw[0]));
  w.sigt = 1.0 / (1.0 + std::exp(-raw[m + 1]));
}

// Adds d(loss)/d(raw) to graw given d(loss)/d(theta) accumulated in w.gtheta.
void constrain_backward(const ConstrainWork& w, std::span<double> graw) {
  const int m = static_cast<int>(w.theta.size()) - 1;
  double gtop = w.gtheta[m];
  double gth0 = w.gtheta[0];
  double sk = 0.0;
  for (int k = 1; k < m; ++k) {
    sk += w.sm[k - 1];
    gtop += w.gtheta[k] * sk;
    gth0 += w.gtheta[k] * (1.0 - sk);
  }
  // theta_k (k = 1..m-1) depends on softmax weights 1..k; theta_m is pinned to
  // the top anchor by the exact telescoping, so weight m only enters through
  // the softmax normalization
  std::vector<double> gsm(m, 0.0);
  double suf = 0.0;
  for (int i = m - 1; i >= 1; --i) {
    suf += w.gtheta[i];
    gsm[i - 1] = w.delta * suf;
  }
  double dot = 0.0;
  for (int i = 0; i < m; ++i) dot += gsm[i] * w.sm[i];
  graw[0] += -w.sig0 * gth0;
  for (int i = 0; i < m; ++i) graw[1 + i] += w.sm[i] * (gsm[i] - dot);
  graw[m + 1] += w.sigt * gtop;
}

// Mean marginal NLL over idx; when want_grad, adds the gradient into grad
// (which must be pre-zeroed). Requires fast_marginal_ok and a cache.
double marginal_nll_grad(const FlowModel& model, const MarginalCache& cache,
                         std::span<const double> x, std::span<const size_t> idx,
                         std::span<double> grad, bool want_grad) {
  const auto& spec = model.spec();
  const int jdim = spec.J;
  const int udim = spec.U;
  const auto& roff = FlowModelAccess::raw_off(model);
  const auto& doff = FlowModelAccess::delta_off(model);
  const size_t raw_len = static_cast<size_t>(spec.marginal_order) + 2;
  std::span<const double> pv{model.params().values};

  // class-specific coefficients make the constrained thetas depend on x[0];
  // group rows by that value so each group constrains once
  std::vector<std::pair<double, std::vector<size_t>>> groups;
  if (doff.empty() || x.empty()) {
    groups.emplace_back(0.0, std::vector<size_t>(idx.begin(), idx.end()));
  } else {
    for (size_t r : idx) {
      const double v = x[r * udim];
      auto it = std::find_if(groups.begin(), groups.end(),
                             [&](const auto& g) { return g.first == v; });
      if (it == groups.end())
        groups.emplace_back(v, std::vector<size_t>{r});
      else
        it->second.push_back(r);
    }
  }

  double nll = 0.0;
  ConstrainWork cw;
  std::vector<double> eff(raw_len), geff(raw_len);
  for (const auto& [xv, rows] : groups) {
    for (int j = 0; j < jdim; ++j) {
      std::span<const double> raw{pv.data() + roff[j], raw_len};
      if (doff.empty() || x.empty()) {
        constrain_forward(raw, cw);
      } else {
        std::span<const double> del{pv.data() + doff[j], raw_len};
        for (size_t k = 0; k < raw_len; ++k) eff[k] = raw[k] + del[k] * xv;
        constrain_forward(eff, cw);
      }
      const auto& th = cw.theta;
      for (size_t r : rows) {
        auto wr = cache.wrow(r, j);
        auto cr = cache.crow(r, j);
        double w = 0.0, s = 0.0;
        for (size_t i = 0; i < wr.size(); ++i) {
          w += wr[i] * th[i];
          s += cr[i] * th[i];
        }
        if (!(s > 0.0))
          throw std::runtime_error("marginal stage: non-positive derivative (row " +
                                   std::to_string(r) + ")");
        nll += 0.5 * w * w + kLogSqrt2Pi - std::log(s);
        if (want_grad) {
          const double invs = 1.0 / s;
          for (size_t i = 0; i < wr.size(); ++i) cw.gtheta[i] += w * wr[i] - cr[i] * invs;
        }
      }
      if (want_grad) {
        std::fill(geff.begin(), geff.end(), 0.0);
        constrain_backward(cw, geff);
        for (size_t k = 0; k < raw_len; ++k) grad[roff[j] + k] += geff[k];
        if (!doff.empty() && !x.empty())
          for (size_t k = 0; k < raw_len; ++k) grad[doff[j] + k] += geff[k] * xv;
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(idx.size());
  if (want_grad)
    for (double& g : grad) g *= inv;
  if (!std::isfinite(nll)) throw std::runtime_error("marginal phase: non-finite loss");
  return nll * inv;
}

}  // namespace detail

using detail::marginal_nll_grad;

namespace {

// parameters of the marginal stage (h1.* slices: coefficients, feature
// deltas, shifts)
std::vector<bool> marginal_mask(const FlowModel& model) {
  std::vector<bool> mask(model.params().size(), false);
  for (const auto& [name, sl] : model.params().slices)
    if (name.rfind("h1.", 0) == 0)
      for (size_t i = sl.first; i < sl.first + sl.second; ++i) mask[i] = true;
  return mask;
}

// Single optimization phase; when trainable is non-empty, gradients of the
// other parameters are zeroed so only the listed ones move.
TrainReport fit_phase(FlowModel& model, std::span<const double> y, std::span<const double> x,
                      size_t n_rows, const TrainConfig& cfg,
                      const std::vector<bool>& trainable, bool marginal_only = false) {
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<size_t> idx(n_rows);
  for (size_t i = 0; i < n_rows; ++i) idx[i] = i;
  std::mt19937_64 rng(cfg.seed ^ 0xda3e39cb94b95bdbull);
  std::shuffle(idx.begin(), idx.end(), rng);
  size_t n_val = static_cast<size_t>(std::llround(cfg.val_frac * static_cast<double>(n_rows)));
  n_val = std::max<size_t>(1, std::min(n_val, n_rows - 1));
  const size_t n_train = n_rows - n_val;
  std::vector<size_t> train_idx(idx.begin(), idx.begin() + n_train);
  std::vector<size_t> val_idx(idx.begin() + n_train, idx.end());

  MarginalCache cache;
  if (cfg.use_cache && model.has_marginal_stage()) cache = model.make_h1_cache(y, n_rows);
  const MarginalCache* cp = cache.empty() ? nullptr : &cache;
  const bool fast = marginal_only && cp && FlowModelAccess::fast_marginal_ok(model);

  const int64_t steps_per_epoch =
      static_cast<int64_t>((n_train + cfg.batch - 1) / cfg.batch);
  const int64_t total_steps = steps_per_epoch * cfg.epochs;

  AdamState adam(model.params().size());
  std::vector<double> grad(model.params().size());
  std::vector<double> best_params = model.params().values;

  TrainReport rep;
  int64_t step = 0;
  int bad_epochs = 0;
  for (int ep = 1; ep <= cfg.epochs; ++ep) {
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    double ep_loss = 0.0;
    size_t ep_rows = 0;
    double lr_first = cosine_lr(step, total_steps, cfg.lr_max, cfg.lr_min);
    for (size_t off = 0; off < n_train; off += cfg.batch, ++step) {
      const size_t len = std::min<size_t>(cfg.batch, n_train - off);
      std::span<const size_t> bidx{train_idx.data() + off, len};
      const double lr = cosine_lr(step, total_steps, cfg.lr_max, cfg.lr_min);
      double nll;
      if (fast) {
        std::fill(grad.begin(), grad.end(), 0.0);
        nll = marginal_nll_grad(model, cache, x, bidx, grad, /*want_grad=*/true);
      } else {
        nll = batch_nll_grad(model, y, x, bidx, cp, grad, cfg.parallel);
      }
      ep_loss += nll * static_cast<double>(len);
      ep_rows += len;
      if (!trainable.empty())
        for (size_t i = 0; i < grad.size(); ++i)
          if (!trainable[i]) grad[i] = 0.0;
      if (cfg.clip_norm > 0.0) {
        double sq = 0.0;
        for (double g : grad) sq += g * g;
        const double nrm = std::sqrt(sq);
        if (nrm > cfg.clip_norm) {
          const double s = cfg.clip_norm / nrm;
          for (double& g : grad) g *= s;
        }
      }
      adam.step(model.params().values, grad, lr);
    }
    const double train_nll = ep_loss / static_cast<double>(ep_rows);
    const double val_nll = fast ? marginal_nll_grad(model, cache, x, val_idx, {}, false)
                                : dataset_nll(model, y, x, val_idx);
    rep.epochs.push_back({ep, lr_first, train_nll, val_nll});
    if (cfg.verbose)
      std::fprintf(stderr, "epoch %4d  lr %.3e  train %.4f  val %.4f\n", ep, lr_first, train_nll,
                   val_nll);
    if (val_nll < rep.best_val) {
      rep.best_val = val_nll;
      rep.best_epoch = ep;
      best_params = model.params().values;
      bad_epochs = 0;
    } else {
      ++bad_epochs;
      if (bad_epochs >= cfg.patience) {
        rep.early_stopped = true;
        break;
      }
    }
  }
  model.params().values = best_params;
  rep.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace

TrainReport fit(FlowModel& model, std::span<const double> y, std::span<const double> x,
                size_t n_rows, const TrainConfig& cfg) {
  cfg.validate();

  // Hybrid models train in two phases so the dependence stage cannot absorb
  // marginal shape: first the marginal stage alone (the dependence stage stays
  // at its identity initialization, making the joint NLL equal the marginal
  // NLL), then the dependence stage with the fitted marginals frozen.
  const bool staged = model.spec().kind == "hcf" || model.spec().kind == "hmaf";
  if (!staged) return fit_phase(model, y, x, n_rows, cfg, {});

  std::vector<bool> h1 = marginal_mask(model);
  std::vector<bool> h2(h1.size());
  for (size_t i = 0; i < h1.size(); ++i) h2[i] = !h1[i];

  TrainConfig cfg1 = cfg;
  if (cfg.marginal_epochs > 0) cfg1.epochs = cfg.marginal_epochs;
  TrainReport rep = fit_phase(model, y, x, n_rows, cfg1, h1, /*marginal_only=*/true);

  // the fitted marginal stage is constant in the second phase, so its outputs
  // enter the gradient graph as per-row constants
  struct FrozenGuard {
    FlowModel& m;
    explicit FrozenGuard(FlowModel& fm) : m(fm) { FlowModelAccess::set_marginal_frozen(m, true); }
    ~FrozenGuard() { FlowModelAccess::set_marginal_frozen(m, false); }
  } guard(model);
  TrainReport rep2 = fit_phase(model, y, x, n_rows, cfg, h2);
  const int offset = static_cast<int>(rep.epochs.size());
  for (auto& e : rep2.epochs) {
    e.epoch += offset;
    rep.epochs.push_back(e);
  }
  rep.best_val = rep2.best_val;
  rep.best_epoch = rep2.best_epoch + offset;
  rep.early_stopped = rep.early_stopped || rep2.early_stopped;
  rep.wall_seconds += rep2.wall_seconds;
  return rep;
}

}  // namespace bnf
