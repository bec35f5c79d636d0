#pragma once

// Parameter-producing networks: fully connected conditioners, MADE-style
// masked networks, and Bernstein-basis feature shift maps.

#include <cstdint>
#include <cstdio>
#include <random>
#include <span>
#include <vector>

#include "bnf/bernstein.hpp"
#include "bnf/diffcore.hpp"

namespace bnf {

// ---- fully connected network ----------------------------------------------

// Plain MLP, ReLU hidden activations, linear output. Weights live in an
// external flat parameter vector at a fixed offset.
class FCN {
 public:
  FCN() = default;
  FCN(std::vector<int> sizes);  // {in, hidden..., out}

  size_t param_count() const { return n_params_; }
  int in_dim() const { return sizes_.front(); }
  int out_dim() const { return sizes_.back(); }
  int first_width() const { return sizes_[1]; }

  // Glorot-uniform hidden layers; final layer zeroed when zero_last is set
  // so the network starts as a constant (identity-parameter) map.
  void init(std::span<double> p, size_t off, std::mt19937_64& rng, bool zero_last = true) const;

  // extra, when non-empty, is added to the first layer's pre-activations.
  template <class Tin, class Tp>
  std::vector<Tp> forward(std::span<const Tp> p, size_t off, std::span<const Tin> in,
                          std::span<const Tp> extra = {}) const;

 private:
  std::vector<int> sizes_;
  size_t n_params_ = 0;
};

// ---- MADE masks and masked MLP --------------------------------------------

// Binary masks enforcing the autoregressive property: output block j is a
// function of autoregressive inputs with index < j only. Degrees are
// assigned deterministically (inputs 1..J, hidden units cycling 1..J-1).
struct MadeMasks {
  std::vector<std::vector<uint8_t>> m;  // one mask per weight matrix, row-major [out][in]
};

MadeMasks build_masks(int n_dims, const std::vector<int>& hidden, int params_per_dim);

// Masked network: n_dims autoregressive inputs, ctx_dim unmasked context
// inputs feeding the first layer, n_dims * params_per_dim outputs.
class MaskedMLP {
 public:
  MaskedMLP() = default;
  MaskedMLP(int n_dims, std::vector<int> hidden, int params_per_dim, int ctx_dim = 0);

  size_t param_count() const { return n_params_; }
  int n_dims() const { return n_dims_; }
  int params_per_dim() const { return per_dim_; }
  int ctx_dim() const { return ctx_dim_; }
  int first_width() const { return hidden_.front(); }
  const MadeMasks& masks() const { return masks_; }

  void init(std::span<double> p, size_t off, std::mt19937_64& rng) const;

  // Returns the flat parameter matrix (n_dims x params_per_dim, row-major).
  // extra, when non-empty, is added to the first layer's pre-activations.
  template <class Tin, class Tp>
  std::vector<Tp> forward(std::span<const Tp> p, size_t off, std::span<const Tin> w,
                          std::span<const double> ctx = {},
                          std::span<const Tp> extra = {}) const;

 private:
  int n_dims_ = 0, per_dim_ = 0, ctx_dim_ = 0;
  std::vector<int> hidden_;
  MadeMasks masks_;
  size_t n_params_ = 0;
  // per-layer offsets relative to the block start
  std::vector<size_t> w_off_, b_off_;
  size_t ctx_off_ = 0;
};

// ---- feature shift --------------------------------------------------------

// Per-dimension marginal shift beta_j(x): either linear in the features or
// a Bernstein-basis polynomial in a single scalar feature (unconstrained
// coefficients; the shift need not be monotone in x).
struct FeatureShiftMap {
  enum class Mode { Linear, BernsteinBasis };
  Mode mode = Mode::Linear;
  int n_features = 1;
  int order = 6;
  double x_lo = 0.0, x_hi = 1.0;

  // linear: intercept + slopes (1 + U); basis: order + 1 coefficients
  size_t params_per_dim() const {
    return mode == Mode::Linear ? 1 + static_cast<size_t>(n_features)
                                : static_cast<size_t>(order) + 1;
  }

  template <class Tp>
  Tp eval(const BernsteinBasis* basis, std::span<const Tp> coeff,
          std::span<const double> x) const;
};

// ---- template implementations ---------------------------------------------

template <class Tin, class Tp>
std::vector<Tp> FCN::forward(std::span<const Tp> p, size_t off, std::span<const Tin> in,
                             std::span<const Tp> extra) const {
  const int n_layers = static_cast<int>(sizes_.size()) - 1;
  std::vector<Tp> cur;
  std::vector<Tp> vin;  // promoted input for Var paths
  size_t o = off;
  for (int l = 0; l < n_layers; ++l) {
    const int fin = sizes_[l], fout = sizes_[l + 1];
    std::vector<Tp> next(fout);
    for (int u = 0; u < fout; ++u) {
      std::span<const Tp> wrow{p.data() + o + static_cast<size_t>(u) * fin, static_cast<size_t>(fin)};
      const Tp& bias = p[o + static_cast<size_t>(fout) * fin + u];
      if constexpr (std::is_same_v<Tp, double>) {
        double s = bias;
        if (l == 0)
          for (int i = 0; i < fin; ++i) s += wrow[i] * value_of(in[i]);
        else
          for (int i = 0; i < fin; ++i) s += wrow[i] * cur[i];
        next[u] = s;
      } else {
        Tape* tape = bias.tape;
        if (l == 0) {
          if constexpr (std::is_same_v<Tin, double>) {
            // data inputs act as constant coefficients on the weights
            std::vector<double> c(in.begin(), in.end());
            next[u] = tape->dot(c, wrow, 0.0) + bias;
          } else {
            next[u] = tape->affine(wrow, in, bias);
          }
        } else {
          next[u] = tape->affine(wrow, std::span<const Tp>{cur.data(), cur.size()}, bias);
        }
      }
      if (l == 0 && !extra.empty()) next[u] = next[u] + extra[u];
      if (l < n_layers - 1) next[u] = relu(next[u]);
    }
    o += static_cast<size_t>(fout) * fin + fout;
    cur = std::move(next);
  }
  return cur;
}

template <class Tin, class Tp>
std::vector<Tp> MaskedMLP::forward(std::span<const Tp> p, size_t off, std::span<const Tin> w,
                                   std::span<const double> ctx,
                                   std::span<const Tp> extra) const {
  const int n_layers = static_cast<int>(hidden_.size()) + 1;
  std::vector<int> widths;
  widths.push_back(n_dims_);
  for (int h : hidden_) widths.push_back(h);
  widths.push_back(n_dims_ * per_dim_);

  std::vector<Tp> cur;
  for (int l = 0; l < n_layers; ++l) {
    const int fin = widths[l], fout = widths[l + 1];
    const auto& mask = masks_.m[l];
    std::vector<Tp> next(fout);
    for (int u = 0; u < fout; ++u) {
      const Tp* wrow = p.data() + off + w_off_[l] + static_cast<size_t>(u) * fin;
      const Tp& bias = p[off + b_off_[l] + u];
      const uint8_t* mrow = mask.data() + static_cast<size_t>(u) * fin;
      if constexpr (std::is_same_v<Tp, double>) {
        double s = bias;
        if (l == 0) {
          for (int i = 0; i < fin; ++i)
            if (mrow[i]) s += wrow[i] * value_of(w[i]);
          for (int i = 0; i < ctx_dim_; ++i)
            s += p[off + ctx_off_ + static_cast<size_t>(u) * ctx_dim_ + i] * ctx[i];
        } else {
          for (int i = 0; i < fin; ++i)
            if (mrow[i]) s += wrow[i] * cur[i];
        }
        next[u] = s;
      } else {
        Tape* tape = bias.tape;
        Var acc = bias;
        if (l == 0) {
          if constexpr (std::is_same_v<Tin, double>) {
            std::vector<double> c;
            std::vector<Var> vs;
            for (int i = 0; i < fin; ++i)
              if (mrow[i]) {
                c.push_back(w[i]);
                vs.push_back(wrow[i]);
              }
            for (int i = 0; i < ctx_dim_; ++i) {
              c.push_back(ctx[i]);
              vs.push_back(p[off + ctx_off_ + static_cast<size_t>(u) * ctx_dim_ + i]);
            }
            if (!c.empty()) acc = acc + tape->dot(c, vs, 0.0);
          } else {
            for (int i = 0; i < fin; ++i)
              if (mrow[i]) acc = acc + wrow[i] * w[i];
            if (ctx_dim_ > 0) {
              std::vector<double> c(ctx.begin(), ctx.end());
              std::span<const Var> cw{p.data() + off + ctx_off_ + static_cast<size_t>(u) * ctx_dim_,
                                      static_cast<size_t>(ctx_dim_)};
              acc = acc + tape->dot(c, cw, 0.0);
            }
          }
        } else {
          std::vector<Var> vw, vx;
          for (int i = 0; i < fin; ++i)
            if (mrow[i]) {
              vw.push_back(wrow[i]);
              vx.push_back(cur[i]);
            }
          if (!vw.empty()) acc = tape->affine(vw, vx, acc);
        }
        next[u] = acc;
      }
      if (l == 0 && !extra.empty()) next[u] = next[u] + extra[u];
      if (l < n_layers - 1) next[u] = relu(next[u]);
    }
    cur = std::move(next);
  }
  return cur;
}

template <class Tp>
Tp FeatureShiftMap::eval(const BernsteinBasis* basis, std::span<const Tp> coeff,
                         std::span<const double> x) const {
  if (mode == Mode::Linear) {
    Tp s = coeff[0] + 0.0;
    for (int u = 0; u < n_features; ++u) s = s + coeff[1 + u] * x[u];
    return s;
  }
  double t = (x[0] - x_lo) / (x_hi - x_lo);
  if (t < 0.0 || t > 1.0) {
    static bool warned = false;
    if (!warned) {
      std::fprintf(stderr, "feature_shift: feature outside declared domain, clamping\n");
      warned = true;
    }
    t = std::min(1.0, std::max(0.0, t));
  }
  return basis->poly(t, coeff);
}

}  // namespace bnf
