// Benchmark: serial whole-batch gradient kernel vs the blocked OpenMP kernel.

#include <chrono>
#include <cstdio>

#include "bnf/data.hpp"
#include "bnf/training.hpp"

using namespace bnf;

int main() {
  auto ds = gen_moons(8192, 0.05, 0);
  std::vector<size_t> idx(ds.n);
  for (size_t i = 0; i < ds.n; ++i) idx[i] = i;

  for (const char* kind : {"mctm", "hcf", "maf"}) {
    ModelSpec s;
    s.kind = kind;
    s.J = 2;
    s.marginal_order = 60;
    s.hidden = {16, 16};
    auto m = FlowModel::build(s);
    auto cache = m.make_h1_cache(ds.y, ds.n);
    const MarginalCache* cp = cache.empty() ? nullptr : &cache;
    std::vector<double> g(m.params().size());

    auto time_it = [&](bool parallel) {
      const auto t0 = std::chrono::steady_clock::now();
      double nll = 0.0;
      const int reps = 5;
      for (int r = 0; r < reps; ++r) nll = batch_nll_grad(m, ds.y, {}, idx, cp, g, parallel);
      const double dt =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / reps;
      return std::pair{dt, nll};
    };
    auto [ts, ns] = time_it(false);
    auto [tp, np] = time_it(true);
    std::printf("%-5s serial %.3fs  blocked %.3fs  speedup %.2fx  |nll diff| %.2e\n", kind, ts,
                tp, ts / tp, std::fabs(ns - np));
  }
  return 0;
}
