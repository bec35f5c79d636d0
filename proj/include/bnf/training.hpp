#pragma once

// Maximum-likelihood training: Adam with cosine learning-rate decay, early
// stopping on a held-out validation split, seeded end-to-end determinism.
// The batch gradient has a serial reference kernel (one tape over the whole
// batch) and a blocked OpenMP kernel whose result is independent of the
// thread count.

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "bnf/flows.hpp"

namespace bnf {

struct TrainConfig {
  int epochs = 200;
  int marginal_epochs = 0;  // staged models: marginal-phase epochs (0 = same as epochs)
  int batch = 512;
  double lr_max = 1e-3;
  double lr_min = 1e-5;
  int patience = 50;       // epochs without validation improvement
  double val_frac = 0.25;  // trailing fraction after a seeded shuffle
  double clip_norm = 10.0; // global gradient norm; <= 0 disables
  uint64_t seed = 0;
  bool parallel = true;
  bool use_cache = true;   // per-row marginal basis cache
  bool verbose = false;

  void validate() const;
};

struct EpochRow {
  int epoch;
  double lr, train_nll, val_nll;
};

struct TrainReport {
  std::vector<EpochRow> epochs;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  bool early_stopped = false;
  double wall_seconds = 0.0;

  std::string to_csv() const;  // epoch,lr,train_nll,val_nll
  std::string to_json_string() const;
};

struct AdamState {
  std::vector<double> m, v;
  int64_t t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-7;

  explicit AdamState(size_t n) : m(n, 0.0), v(n, 0.0) {}
  void step(std::span<double> values, std::span<const double> grads, double lr);
};

// lr_min + (lr_max - lr_min) * (1 + cos(pi * step / total)) / 2; clamps past total.
double cosine_lr(int64_t step, int64_t total, double lr_max, double lr_min);

// Mean NLL over idx and its gradient (written to grad, overwriting).
// y is n*J row-major; x is n*U row-major or empty; cache rows are indexed by
// the absolute row numbers in idx.
double batch_nll_grad_serial(const FlowModel& model, std::span<const double> y,
                             std::span<const double> x, std::span<const size_t> idx,
                             const MarginalCache* cache, std::span<double> grad);

// Blocked version: rows are split into a fixed number of contiguous blocks
// accumulated in fixed order, so the result does not depend on the number of
// OpenMP threads. parallel=false falls back to the serial reference.
double batch_nll_grad(const FlowModel& model, std::span<const double> y,
                      std::span<const double> x, std::span<const size_t> idx,
                      const MarginalCache* cache, std::span<double> grad, bool parallel);

namespace detail {
// Closed-form mean NLL (and gradient) of the marginal stage alone, used for
// the marginal phase of staged training where the later stages sit at their
// identity initialization. Requires the softmax constraint, a normal base, no
// feature-shift stage, and a basis cache. grad must be pre-zeroed and span the
// full parameter vector; pass an empty span with want_grad=false to skip it.
double marginal_nll_grad(const FlowModel& model, const MarginalCache& cache,
                         std::span<const double> x, std::span<const size_t> idx,
                         std::span<double> grad, bool want_grad);
}  // namespace detail

// Mean NLL without gradients (evaluation path).
double dataset_nll(const FlowModel& model, std::span<const double> y, std::span<const double> x,
                   std::span<const size_t> idx);

// Full training loop; restores the best-validation parameter snapshot.
TrainReport fit(FlowModel& model, std::span<const double> y, std::span<const double> x,
                size_t n_rows, const TrainConfig& cfg);

}  // namespace bnf
