#include "bnf/conditioners.hpp"

#include <stdexcept>

namespace bnf {

namespace {

double glorot_bound(int fin, int fout) { return std::sqrt(6.0 / (fin + fout)); }

void init_dense(std::span<double> p, size_t off, int fin, int fout, std::mt19937_64& rng,
                bool zero) {
  if (zero) {
    for (size_t k = 0; k < static_cast<size_t>(fin) * fout + fout; ++k) p[off + k] = 0.0;
    return;
  }
  const double a = glorot_bound(fin, fout);
  std::uniform_real_distribution<double> u(-a, a);
  for (size_t k = 0; k < static_cast<size_t>(fin) * fout; ++k) p[off + k] = u(rng);
  for (int k = 0; k < fout; ++k) p[off + static_cast<size_t>(fin) * fout + k] = 0.0;
}

}  // namespace

FCN::FCN(std::vector<int> sizes) : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2) throw std::invalid_argument("FCN: need at least input and output sizes");
  n_params_ = 0;
  for (size_t l = 0; l + 1 < sizes_.size(); ++l)
    n_params_ += static_cast<size_t>(sizes_[l]) * sizes_[l + 1] + sizes_[l + 1];
}

void FCN::init(std::span<double> p, size_t off, std::mt19937_64& rng, bool zero_last) const {
  size_t o = off;
  const int n_layers = static_cast<int>(sizes_.size()) - 1;
  for (int l = 0; l < n_layers; ++l) {
    const bool zero = zero_last && l == n_layers - 1;
    init_dense(p, o, sizes_[l], sizes_[l + 1], rng, zero);
    o += static_cast<size_t>(sizes_[l]) * sizes_[l + 1] + sizes_[l + 1];
  }
}

MadeMasks build_masks(int n_dims, const std::vector<int>& hidden, int params_per_dim) {
  if (n_dims < 1) throw std::invalid_argument("build_masks: need at least one dimension");
  if (hidden.empty()) throw std::invalid_argument("build_masks: need at least one hidden layer");
  const int max_deg = std::max(1, n_dims - 1);
  for (int h : hidden)
    if (n_dims > 1 && h < n_dims - 1)
      throw std::invalid_argument("build_masks: hidden layer narrower than J-1 cannot satisfy connectivity");

  auto degrees = [&](int width) {
    std::vector<int> d(width);
    for (int u = 0; u < width; ++u) d[u] = 1 + u % max_deg;
    return d;
  };

  std::vector<int> in_deg(n_dims);
  for (int i = 0; i < n_dims; ++i) in_deg[i] = i + 1;

  MadeMasks mm;
  std::vector<int> prev = in_deg;
  for (size_t l = 0; l < hidden.size(); ++l) {
    std::vector<int> cur = degrees(hidden[l]);
    std::vector<uint8_t> mask(static_cast<size_t>(hidden[l]) * prev.size());
    for (int u = 0; u < hidden[l]; ++u)
      for (size_t i = 0; i < prev.size(); ++i)
        mask[static_cast<size_t>(u) * prev.size() + i] = cur[u] >= prev[i] ? 1 : 0;
    mm.m.push_back(std::move(mask));
    prev = std::move(cur);
  }
  // output block for dimension j sees only hidden degrees < j
  std::vector<uint8_t> out(static_cast<size_t>(n_dims) * params_per_dim * prev.size());
  for (int j = 1; j <= n_dims; ++j)
    for (int pkt = 0; pkt < params_per_dim; ++pkt) {
      const size_t row = (static_cast<size_t>(j - 1) * params_per_dim + pkt) * prev.size();
      for (size_t i = 0; i < prev.size(); ++i) out[row + i] = prev[i] < j ? 1 : 0;
    }
  mm.m.push_back(std::move(out));
  return mm;
}

MaskedMLP::MaskedMLP(int n_dims, std::vector<int> hidden, int params_per_dim, int ctx_dim)
    : n_dims_(n_dims), per_dim_(params_per_dim), ctx_dim_(ctx_dim), hidden_(std::move(hidden)) {
  masks_ = build_masks(n_dims_, hidden_, per_dim_);
  std::vector<int> widths;
  widths.push_back(n_dims_);
  for (int h : hidden_) widths.push_back(h);
  widths.push_back(n_dims_ * per_dim_);

  size_t o = 0;
  for (size_t l = 0; l + 1 < widths.size(); ++l) {
    w_off_.push_back(o);
    o += static_cast<size_t>(widths[l]) * widths[l + 1];
    b_off_.push_back(o);
    o += widths[l + 1];
    if (l == 0) {
      ctx_off_ = o;
      o += static_cast<size_t>(widths[1]) * ctx_dim_;
    }
  }
  n_params_ = o;
}

void MaskedMLP::init(std::span<double> p, size_t off, std::mt19937_64& rng) const {
  std::vector<int> widths;
  widths.push_back(n_dims_);
  for (int h : hidden_) widths.push_back(h);
  widths.push_back(n_dims_ * per_dim_);
  const int n_layers = static_cast<int>(widths.size()) - 1;
  for (int l = 0; l < n_layers; ++l) {
    const int fin = widths[l], fout = widths[l + 1];
    const bool zero = l == n_layers - 1;  // identity start
    const double a = glorot_bound(fin, fout);
    std::uniform_real_distribution<double> u(-a, a);
    for (size_t k = 0; k < static_cast<size_t>(fin) * fout; ++k)
      p[off + w_off_[l] + k] = zero ? 0.0 : u(rng);
    for (int k = 0; k < fout; ++k) p[off + b_off_[l] + k] = 0.0;
    if (l == 0 && ctx_dim_ > 0) {
      const double ac = glorot_bound(ctx_dim_, fout);
      std::uniform_real_distribution<double> uc(-ac, ac);
      for (size_t k = 0; k < static_cast<size_t>(fout) * ctx_dim_; ++k)
        p[off + ctx_off_ + k] = uc(rng);
    }
  }
}

}  // namespace bnf
