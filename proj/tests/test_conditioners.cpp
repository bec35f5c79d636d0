#include <doctest.h>

#include <random>

#include "bnf/conditioners.hpp"
#include "helpers.hpp"

using namespace bnf;

namespace {

std::vector<double> random_params(size_t n, std::mt19937_64& rng, double scale = 0.8) {
  std::uniform_real_distribution<double> u(-scale, scale);
  std::vector<double> p(n);
  for (double& v : p) v = u(rng);
  return p;
}

}  // namespace

TEST_CASE("masks: output block 1 is disconnected from all inputs") {
  auto mm = build_masks(2, {8}, 3);
  // J=2: hidden degrees are all 1; output block 1 requires degree < 1
  const auto& out = mm.m.back();
  for (int pkt = 0; pkt < 3; ++pkt)
    for (int i = 0; i < 8; ++i) CHECK(out[static_cast<size_t>(pkt) * 8 + i] == 0);
}

TEST_CASE("masks: binary and degree-ordered") {
  auto mm = build_masks(4, {8, 8}, 2);
  for (const auto& m : mm.m)
    for (uint8_t v : m) CHECK((v == 0 || v == 1));
}

TEST_CASE("masks: hidden narrower than J-1 rejected") {
  CHECK_THROWS(build_masks(5, {3}, 1));
}

TEST_CASE("made: zero weights give the bias matrix") {
  MaskedMLP net(3, {8}, 2);
  std::vector<double> p(net.param_count(), 0.0);
  std::vector<double> w{0.5, -1.0, 2.0};
  auto out = net.forward<double, double>(p, 0, w);
  for (double v : out) CHECK(v == 0.0);
}

TEST_CASE("made: autoregressive property under input perturbation") {
  std::mt19937_64 rng(21);
  MaskedMLP net(3, {8, 8}, 2);
  for (int rep = 0; rep < 100; ++rep) {
    auto p = random_params(net.param_count(), rng);
    std::vector<double> w{0.3, -0.2, 0.9};
    auto base = net.forward<double, double>(p, 0, w);
    // perturbing w3 leaves every output block bit-identical
    std::vector<double> w3 = w;
    w3[2] += 1.7;
    auto out3 = net.forward<double, double>(p, 0, w3);
    CHECK(base == out3);
    // perturbing w2 leaves blocks 1 and 2 bit-identical
    std::vector<double> w2 = w;
    w2[1] -= 0.9;
    auto out2 = net.forward<double, double>(p, 0, w2);
    for (int k = 0; k < 4; ++k) CHECK(base[k] == out2[k]);
  }
}

TEST_CASE("made: jacobian blocks vanish for k >= j by finite differences") {
  std::mt19937_64 rng(22);
  MaskedMLP net(3, {8}, 2);
  auto p = random_params(net.param_count(), rng);
  std::vector<double> w{0.1, 0.4, -0.6};
  for (int k = 0; k < 3; ++k)
    for (int j = 0; j < 3; ++j)
      for (int pkt = 0; pkt < 2; ++pkt) {
        const double d = fd_central(
            [&](double wk) {
              auto ww = w;
              ww[k] = wk;
              return net.forward<double, double>(p, 0, ww)[j * 2 + pkt];
            },
            w[k]);
        if (k >= j) CHECK(d == 0.0);
      }
}

TEST_CASE("made: context input reaches output blocks j >= 2 and nothing else") {
  std::mt19937_64 rng(23);
  MaskedMLP net(2, {8}, 1, /*ctx_dim=*/1);
  std::vector<double> p(net.param_count());
  std::uniform_real_distribution<double> u(0.2, 0.9);  // positive weights, ReLU stays active
  for (double& v : p) v = u(rng);
  std::vector<double> w{0.3, 0.4};
  std::vector<double> c0{0.0}, c1{1.0};
  auto a = net.forward<double, double>(p, 0, w, c0);
  auto b = net.forward<double, double>(p, 0, w, c1);
  // block 1 has no incoming hidden connections by the degree rule, so the
  // context cannot reach it; block 2 must see it
  CHECK(a[0] == b[0]);
  CHECK(a[1] != b[1]);
}

TEST_CASE("made: Var path agrees with double path and finite differences") {
  std::mt19937_64 rng(24);
  MaskedMLP net(3, {6}, 2);
  auto p = random_params(net.param_count(), rng);
  std::vector<double> w{0.25, -0.5, 0.75};
  auto outd = net.forward<double, double>(p, 0, w);
  Tape t;
  auto pv = t.leaves(p);
  auto outv = net.forward<double, Var>(pv, 0, w);
  for (size_t k = 0; k < outd.size(); ++k)
    CHECK(outv[k].val() == doctest::Approx(outd[k]).epsilon(1e-13));
  Var loss = outv[2] * outv[5] + outv[4];
  t.backward(loss);
  for (size_t i = 0; i < p.size(); i += 7) {
    const double g = fd_central(
        [&](double pi) {
          auto pp = p;
          pp[i] = pi;
          auto o = net.forward<double, double>(pp, 0, w);
          return o[2] * o[5] + o[4];
        },
        p[i]);
    CHECK(rel_err(t.adjoint(pv[i]), g) < 1e-4);
  }
}

TEST_CASE("fcn: forward matches a hand-computed two-layer net") {
  FCN net({2, 2, 1});
  // layout: W1 (2x2 row-major), b1 (2), W2 (1x2), b2 (1)
  std::vector<double> p{1.0, -1.0, 0.5, 0.5, 0.1, -0.2, 2.0, 1.0, 0.3};
  std::vector<double> in{0.6, 0.2};
  const double h1 = std::max(0.0, 1.0 * 0.6 - 1.0 * 0.2 + 0.1);
  const double h2 = std::max(0.0, 0.5 * 0.6 + 0.5 * 0.2 - 0.2);
  const double want = 2.0 * h1 + 1.0 * h2 + 0.3;
  auto out = net.forward<double, double>(p, 0, in);
  CHECK(out[0] == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("fcn: Var path agrees with double path") {
  std::mt19937_64 rng(25);
  FCN net({3, 8, 4});
  auto p = random_params(net.param_count(), rng);
  std::vector<double> in{0.2, -0.7, 1.1};
  auto outd = net.forward<double, double>(p, 0, in);
  Tape t;
  auto pv = t.leaves(p);
  auto outv = net.forward<double, Var>(pv, 0, in);
  for (size_t k = 0; k < outd.size(); ++k)
    CHECK(outv[k].val() == doctest::Approx(outd[k]).epsilon(1e-13));
}

TEST_CASE("fcn: extra shifts first-layer pre-activations") {
  FCN net({1, 2, 2});
  std::vector<double> p(net.param_count(), 0.0);
  std::vector<double> in{0.5};
  std::vector<double> extra{1.0, -2.0};
  auto out = net.forward<double, double>(p, 0, in, std::span<const double>{extra});
  // zero weights: hidden = relu(extra), output = 0
  CHECK(out[0] == 0.0);
  CHECK(out[1] == 0.0);
  // make the output layer pass hidden unit 0 (= relu(extra0) = 1) through
  p[4] = 1.0;  // W2[0][0]
  out = net.forward<double, double>(p, 0, in, std::span<const double>{extra});
  CHECK(out[0] == 1.0);
}

TEST_CASE("fcn: zero-last init makes the output exactly zero") {
  std::mt19937_64 rng(26);
  FCN net({2, 8, 8, 5});
  std::vector<double> p(net.param_count());
  net.init(p, 0, rng, /*zero_last=*/true);
  std::vector<double> in{0.9, -1.4};
  for (double v : net.forward<double, double>(p, 0, in)) CHECK(v == 0.0);
}

TEST_CASE("feature shift: linear and constant-basis modes") {
  FeatureShiftMap fs;
  fs.mode = FeatureShiftMap::Mode::Linear;
  fs.n_features = 1;
  std::vector<double> zero{0.0, 0.0};
  std::vector<double> x{0.7};
  CHECK(fs.eval<double>(nullptr, zero, x) == 0.0);
  std::vector<double> lin{0.5, 2.0};
  CHECK(fs.eval<double>(nullptr, lin, x) == doctest::Approx(0.5 + 2.0 * 0.7).epsilon(1e-14));

  fs.mode = FeatureShiftMap::Mode::BernsteinBasis;
  fs.order = 6;
  fs.x_lo = 0.0;
  fs.x_hi = 1.0;
  BernsteinBasis bb(6);
  std::vector<double> cc(7, 1.3);
  CHECK(fs.eval<double>(&bb, cc, x) == doctest::Approx(1.3).epsilon(1e-13));
}

TEST_CASE("feature shift: basis mode matches direct Beta-density summation") {
  std::mt19937_64 rng(27);
  FeatureShiftMap fs;
  fs.mode = FeatureShiftMap::Mode::BernsteinBasis;
  fs.order = 6;
  fs.x_lo = 0.0;
  fs.x_hi = 1.0;
  BernsteinBasis bb(6);
  auto c = random_params(7, rng, 2.0);
  for (double xv : {0.05, 0.33, 0.5, 0.91}) {
    std::vector<double> x{xv};
    // independent oracle: 1/(M+1) sum Beta(i+1, M-i+1) density * c_i
    double want = 0.0;
    for (int i = 0; i <= 6; ++i) {
      const double lbeta = std::lgamma(8.0) - std::lgamma(i + 1.0) - std::lgamma(7.0 - i);
      want += std::exp(lbeta + i * std::log(xv) + (6 - i) * std::log1p(-xv)) * c[i] / 7.0;
    }
    CHECK(fs.eval<double>(&bb, c, x) == doctest::Approx(want).epsilon(1e-12));
  }
}
