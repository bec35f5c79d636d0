#include <doctest.h>

#include <random>

#include "bnf/bernstein.hpp"
#include "bnf/rootfind.hpp"
#include "bnf/rqs.hpp"
#include "helpers.hpp"

using namespace bnf;

namespace {

std::vector<double> random_raw(int len, std::mt19937_64& rng, double scale = 1.5) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> r(len);
  for (double& v : r) v = u(rng);
  return r;
}

}  // namespace

TEST_CASE("constraint: zero raw at M=2") {
  std::vector<double> raw{0.0, 0.0, 0.0, 0.0};
  auto th = bernstein_constrain(std::span<const double>{raw});
  CHECK(th[0] == doctest::Approx(-3.0 - std::log(2.0)).epsilon(1e-12));
  CHECK(th[1] == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(th[2] == doctest::Approx(3.0 + std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("constraint: telescoping span is exact") {
  std::mt19937_64 rng(1);
  for (int rep = 0; rep < 50; ++rep) {
    auto raw = random_raw(12, rng, 4.0);
    auto th = bernstein_constrain(std::span<const double>{raw});
    const double delta = (softplus(raw[11]) + 3.0) - (-softplus(raw[0]) - 3.0);
    CHECK(th.back() - th.front() == doctest::Approx(delta).epsilon(1e-14));
  }
}

TEST_CASE("constraint: interior increments follow the softmax") {
  // M=3, interior raw (ln 2, 0, 0) -> increments proportional to (2,1,1)/4
  std::vector<double> raw{0.0, std::log(2.0), 0.0, 0.0, 0.0};
  auto th = bernstein_constrain(std::span<const double>{raw});
  const double delta = th[3] - th[0];
  CHECK(th[1] - th[0] == doctest::Approx(delta * 0.5).epsilon(1e-12));
  CHECK(th[2] - th[1] == doctest::Approx(delta * 0.25).epsilon(1e-12));
  CHECK(th[3] - th[2] == doctest::Approx(delta * 0.25).epsilon(1e-12));
}

TEST_CASE("constraint: strictly increasing with pinned boundaries for arbitrary raw") {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 200; ++rep) {
    auto raw = random_raw(9, rng, 6.0);
    auto th = bernstein_constrain(std::span<const double>{raw});
    CHECK(th.front() <= -3.0);
    CHECK(th.back() >= 3.0);
    for (size_t k = 1; k < th.size(); ++k) CHECK(th[k] > th[k - 1]);
  }
}

TEST_CASE("constraint: non-finite raw rejected") {
  std::vector<double> raw{0.0, INFINITY, 0.0, 0.0};
  CHECK_THROWS(bernstein_constrain(std::span<const double>{raw}));
}

TEST_CASE("constraint: softplus variant is strictly increasing") {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 100; ++rep) {
    auto raw = random_raw(8, rng, 5.0);
    auto th = bernstein_constrain_softplus(std::span<const double>{raw});
    for (size_t k = 1; k < th.size(); ++k) CHECK(th[k] > th[k - 1]);
  }
}

TEST_CASE("forward: M=1 is linear interpolation") {
  BernsteinBasis bb(1);
  std::vector<double> th{0.0, 1.0};
  CHECK(bernstein_forward(bb, 0.25, std::span<const double>{th}, 0.0, 1.0) ==
        doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("forward: constant coefficients give a constant") {
  BernsteinBasis bb(6);
  std::vector<double> th(7, 1.7);
  for (double y : {0.0, 0.21, 0.5, 0.99, 1.0})
    CHECK(bernstein_forward(bb, y, std::span<const double>{th}, 0.0, 1.0) ==
          doctest::Approx(1.7).epsilon(1e-13));
}

TEST_CASE("forward: linear extrapolation with boundary slope") {
  BernsteinBasis bb(1);
  std::vector<double> th{0.0, 1.0};
  CHECK(bernstein_forward(bb, 1.5, std::span<const double>{th}, 0.0, 1.0) ==
        doctest::Approx(1.5).epsilon(1e-14));
  CHECK(bernstein_forward(bb, -0.75, std::span<const double>{th}, 0.0, 1.0) ==
        doctest::Approx(-0.75).epsilon(1e-14));
}

TEST_CASE("log-det: identity and rescaled domains") {
  BernsteinBasis bb(1);
  std::vector<double> th{0.0, 1.0};
  CHECK(bernstein_log_det(bb, 0.37, std::span<const double>{th}, 0.0, 1.0) ==
        doctest::Approx(0.0).epsilon(1e-14));
  CHECK(bernstein_log_det(bb, 0.37, std::span<const double>{th}, 0.0, 2.0) ==
        doctest::Approx(std::log(0.5)).epsilon(1e-14));
}

TEST_CASE("log-det matches finite differences of forward") {
  std::mt19937_64 rng(4);
  for (int m : {5, 20, 60}) {
    BernsteinBasis bb(m);
    for (int rep = 0; rep < 20; ++rep) {
      auto raw = random_raw(m + 2, rng);
      auto th = bernstein_constrain(std::span<const double>{raw});
      std::uniform_real_distribution<double> uy(-1.5, 2.5);
      for (int k = 0; k < 10; ++k) {
        const double y = uy(rng);
        const double ld = bernstein_log_det(bb, y, std::span<const double>{th}, -1.0, 2.0);
        const double fd = fd_central(
            [&](double yy) {
              return bernstein_forward(bb, yy, std::span<const double>{th}, -1.0, 2.0);
            },
            y);
        CHECK(rel_err(std::exp(ld), fd) < 1e-5);
      }
    }
  }
}

TEST_CASE("inverse: identity map and closed-form extrapolation") {
  BernsteinBasis bb(1);
  std::vector<double> th{0.0, 1.0};
  CHECK(bernstein_inverse(bb, 0.25, th, 0.0, 1.0) == doctest::Approx(0.25).epsilon(1e-10));
  CHECK(bernstein_inverse(bb, -2.0, th, 0.0, 1.0) == doctest::Approx(-2.0).epsilon(1e-12));
  CHECK(bernstein_inverse(bb, 3.5, th, 0.0, 1.0) == doctest::Approx(3.5).epsilon(1e-12));
}

TEST_CASE("inverse roundtrip over random bijectors") {
  std::mt19937_64 rng(5);
  for (int m : {5, 50}) {
    BernsteinBasis bb(m);
    std::uniform_real_distribution<double> uy(-2.0, 3.0);
    for (int rep = 0; rep < 100; ++rep) {
      auto raw = random_raw(m + 2, rng);
      auto th = bernstein_constrain(std::span<const double>{raw});
      for (int k = 0; k < 10; ++k) {
        const double y = uy(rng);
        const double z = bernstein_forward(bb, y, std::span<const double>{th}, -1.0, 2.0);
        const double yi = bernstein_inverse(bb, z, th, -1.0, 2.0);
        CHECK(std::fabs(yi - y) < 1e-6);
      }
    }
  }
}

TEST_CASE("strict monotonicity on random pairs") {
  std::mt19937_64 rng(6);
  BernsteinBasis bb(12);
  std::uniform_real_distribution<double> uy(-2.0, 3.0);
  for (int rep = 0; rep < 20; ++rep) {
    auto raw = random_raw(14, rng);
    auto th = bernstein_constrain(std::span<const double>{raw});
    for (int k = 0; k < 50; ++k) {
      double a = uy(rng), b = uy(rng);
      if (a == b) continue;
      if (a > b) std::swap(a, b);
      CHECK(bernstein_forward(bb, a, std::span<const double>{th}, -1.0, 2.0) <
            bernstein_forward(bb, b, std::span<const double>{th}, -1.0, 2.0));
    }
  }
}

TEST_CASE("order 300 stays finite and monotone") {
  std::mt19937_64 rng(7);
  BernsteinBasis bb(300);
  auto raw = random_raw(302, rng);
  auto th = bernstein_constrain(std::span<const double>{raw});
  double prev = -INFINITY;
  for (int i = 0; i <= 400; ++i) {
    const double y = -0.5 + 2.0 * i / 400.0;
    const double z = bernstein_forward(bb, y, std::span<const double>{th}, 0.0, 1.0);
    CHECK(std::isfinite(z));
    CHECK(z > prev);
    prev = z;
    CHECK(std::isfinite(bernstein_log_det(bb, y, std::span<const double>{th}, 0.0, 1.0)));
  }
}

TEST_CASE("derivative gradients with respect to z and theta") {
  // Var-path evaluation agrees with the double path and with finite differences
  std::mt19937_64 rng(8);
  BernsteinBasis bb(8);
  auto raw = random_raw(10, rng);
  const double y = 0.43;
  Tape t;
  auto rawv = t.leaves(raw);
  auto thv = bernstein_constrain(std::span<const Var>{rawv});
  Var z = bernstein_forward(bb, y, std::span<const Var>{thv}, 0.0, 1.0);
  auto thd = bernstein_constrain(std::span<const double>{raw});
  CHECK(z.val() == doctest::Approx(bernstein_forward(bb, y, std::span<const double>{thd}, 0.0, 1.0))
                       .epsilon(1e-12));
  t.backward(z);
  for (size_t i = 0; i < raw.size(); ++i) {
    const double g = fd_central(
        [&](double ri) {
          auto rr = raw;
          rr[i] = ri;
          auto tt = bernstein_constrain(std::span<const double>{rr});
          return bernstein_forward(bb, y, std::span<const double>{tt}, 0.0, 1.0);
        },
        raw[i]);
    CHECK(rel_err(t.adjoint(rawv[i]), g) < 1e-4);
  }
}

// ---- RQS -------------------------------------------------------------------

TEST_CASE("rqs: zero raw parameters give the identity") {
  std::vector<double> raw(rqs_param_count(8), 0.0);
  auto kn = rqs_constrain(std::span<const double>{raw}, 8, 4.0);
  for (double v : {-3.9, -1.0, 0.0, 0.3, 2.7}) {
    CHECK(rqs_forward(v, kn) == doctest::Approx(v).epsilon(1e-9));
    CHECK(rqs_log_det(v, kn) == doctest::Approx(0.0).epsilon(1e-9));
  }
}

TEST_CASE("rqs: identity tails") {
  std::mt19937_64 rng(9);
  auto raw = random_raw(rqs_param_count(8), rng);
  auto kn = rqs_constrain(std::span<const double>{raw}, 8, 4.0);
  CHECK(rqs_forward(9.0, kn) == 9.0);
  CHECK(rqs_forward(-5.5, kn) == -5.5);
  CHECK(rqs_log_det(9.0, kn) == 0.0);
}

TEST_CASE("rqs: roundtrip and log-det against finite differences") {
  std::mt19937_64 rng(10);
  for (int bins : {8, 32}) {
    std::uniform_real_distribution<double> uv(-4.5, 4.5);
    for (int rep = 0; rep < 50; ++rep) {
      auto raw = random_raw(rqs_param_count(bins), rng);
      auto kn = rqs_constrain(std::span<const double>{raw}, bins, 4.0);
      for (int k = 0; k < 20; ++k) {
        const double v = uv(rng);
        const double z = rqs_forward(v, kn);
        CHECK(std::fabs(rqs_inverse(z, kn) - v) < 1e-8);
        const double ld = rqs_log_det(v, kn);
        if (std::fabs(std::fabs(v) - 4.0) < 1e-3) continue;  // kink at the boundary
        const double fd = fd_central([&](double vv) { return rqs_forward(vv, kn); }, v);
        CHECK(rel_err(std::exp(ld), fd) < 1e-5);
      }
    }
  }
}

TEST_CASE("rqs: knot layout invariants") {
  std::mt19937_64 rng(11);
  auto raw = random_raw(rqs_param_count(16), rng, 3.0);
  auto kn = rqs_constrain(std::span<const double>{raw}, 16, 4.0);
  CHECK(kn.x.front() == -4.0);
  CHECK(kn.x.back() == 4.0);
  CHECK(kn.y.front() == -4.0);
  CHECK(kn.y.back() == 4.0);
  for (size_t k = 1; k < kn.x.size(); ++k) {
    CHECK(kn.x[k] - kn.x[k - 1] >= kRqsMinBin * 0.999);
    CHECK(kn.y[k] - kn.y[k - 1] >= kRqsMinBin * 0.999);
  }
  for (double d : kn.d) CHECK(d > 0.0);
  CHECK(kn.d.front() == 1.0);
  CHECK(kn.d.back() == 1.0);
}

TEST_CASE("rqs: gradient path matches finite differences") {
  std::mt19937_64 rng(12);
  auto raw = random_raw(rqs_param_count(8), rng);
  const double v = 0.8;
  Tape t;
  auto rv = t.leaves(raw);
  auto kn = rqs_constrain(std::span<const Var>{rv}, 8, 4.0);
  Var z = rqs_forward(v, kn);
  t.backward(z);
  for (size_t i = 0; i < raw.size(); ++i) {
    const double g = fd_central(
        [&](double ri) {
          auto rr = raw;
          rr[i] = ri;
          auto knd = rqs_constrain(std::span<const double>{rr}, 8, 4.0);
          return rqs_forward(v, knd);
        },
        raw[i]);
    CHECK(rel_err(t.adjoint(rv[i]), g) < 1e-4);
  }
}

// ---- root finding ----------------------------------------------------------

TEST_CASE("chandrupatla solves simple roots") {
  auto f = [](double x) { return x * x * x - 2.0; };
  const double r = chandrupatla(f, 0.0, 2.0, f(0.0), f(2.0));
  CHECK(r == doctest::Approx(std::cbrt(2.0)).epsilon(1e-12));
  auto g = [](double x) { return std::tanh(x) - 0.3; };
  const double r2 = chandrupatla(g, -5.0, 5.0, g(-5.0), g(5.0));
  CHECK(std::tanh(r2) == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("solve_increasing expands the bracket") {
  auto g = [](double x) { return 0.5 * x - 20.0; };
  const double r = solve_increasing(g, -1.0, 1.0, 1e-12);
  CHECK(r == doctest::Approx(40.0).epsilon(1e-10));
}
