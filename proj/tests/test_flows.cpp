#include <doctest.h>

#include <random>

#include "bnf/eval.hpp"
#include "bnf/flows.hpp"
#include "bnf/special.hpp"
#include "helpers.hpp"

using namespace bnf;

namespace {

ModelSpec small_spec(const std::string& kind, bool conditional, const std::string& family = "rqs") {
  ModelSpec s;
  s.kind = kind;
  s.family = family;
  s.conditional = conditional;
  s.U = conditional ? 1 : 0;
  s.J = 2;
  s.marginal_order = 5;
  s.h2_order = 4;
  s.bins = 4;
  s.hidden = {6};
  s.feature_hidden = {4};
  s.init_seed = 11;
  return s;
}

void randomize(FlowModel& m, uint64_t seed, double scale = 0.4) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (double& v : m.params().values) v += u(rng);
}

double logprob_at(const FlowModel& m, std::span<const double> y, std::span<const double> x) {
  return m.log_prob(y, x);
}

}  // namespace

TEST_CASE("identity-initialized cf and maf equal the standard normal") {
  for (const char* kind : {"cf", "maf"}) {
    auto m = FlowModel::build(small_spec(kind, false));
    std::vector<double> y{0.0, 0.0};
    CHECK(m.log_prob(y) == doctest::Approx(-1.8378770664093453).epsilon(1e-12));
    std::vector<double> y2{1.0, -0.5};
    CHECK(m.log_prob(y2) ==
          doctest::Approx(norm_logpdf(1.0) + norm_logpdf(-0.5)).epsilon(1e-12));
  }
}

TEST_CASE("mctm parameter count matches the construction formula") {
  ModelSpec s = small_spec("mctm", false);
  s.marginal_order = 300;
  auto m = FlowModel::build(s);
  CHECK(m.params().size() == 2 * 302 + 1);
}

TEST_CASE("mvn log-prob matches the closed-form density") {
  ModelSpec s = small_spec("mvn", false);
  s.J = 3;
  auto m = FlowModel::build(s);
  randomize(m, 31);
  std::span<const double> p = m.params().values;
  // materialize mu and L, evaluate the dense formula
  std::vector<double> mu(p.begin(), p.begin() + 3);
  std::vector<double> lr(p.begin() + 3, p.begin() + 9);
  double L[3][3] = {};
  int e = 0;
  for (int j = 0; j < 3; ++j) {
    for (int i = 0; i < j; ++i) L[j][i] = lr[e++];
    L[j][j] = softplus(lr[e++]) + 1e-5;
  }
  std::vector<double> y{0.4, -1.1, 0.7};
  // z = L^-1 (y - mu) by forward substitution
  double z[3], logdet = 0.0;
  for (int j = 0; j < 3; ++j) {
    double acc = y[j] - mu[j];
    for (int i = 0; i < j; ++i) acc -= L[j][i] * z[i];
    z[j] = acc / L[j][j];
    logdet += std::log(L[j][j]);
  }
  const double want = -0.5 * (z[0] * z[0] + z[1] * z[1] + z[2] * z[2]) - 3 * kLogSqrt2Pi - logdet;
  CHECK(m.log_prob(y) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("mctm log-prob decomposes into marginal, lambda, and base parts") {
  auto m = FlowModel::build(small_spec("mctm", false));
  randomize(m, 32);
  std::vector<double> y{0.6, -0.4};
  std::vector<double> none;
  const double w1 = m.marginal_forward(0, y[0], none);
  const double w2 = m.marginal_forward(1, y[1], none);
  auto lam = m.lambda_matrix(none);
  const double z2 = lam[2] * w1 + w2;
  const double want = norm_logpdf(w1) + norm_logpdf(z2) + m.marginal_log_det(0, y[0], none) +
                      m.marginal_log_det(1, y[1], none);
  CHECK(m.log_prob(y) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("gradients match finite differences for every model kind") {
  for (const char* kind : {"mvn", "mctm", "cf", "maf", "hcf", "hmaf"}) {
    for (bool cond : {false, true}) {
      auto m = FlowModel::build(small_spec(kind, cond));
      randomize(m, 33, 0.3);
      std::vector<double> y{0.45, -0.3};
      std::vector<double> x{1.0};
      std::span<const double> xs = cond ? std::span<const double>{x} : std::span<const double>{};
      Tape t;
      auto p = t.leaves(m.params().values);
      Var lp = m.log_prob(p, y, xs);
      t.backward(lp);
      std::mt19937_64 pick(44);
      std::uniform_int_distribution<size_t> ui(0, m.params().size() - 1);
      for (int k = 0; k < 25; ++k) {
        const size_t i = ui(pick);
        const double save = m.params().values[i];
        const double g = fd_central(
            [&](double v) {
              m.params().values[i] = v;
              const double out = m.log_prob(y, xs);
              m.params().values[i] = save;
              return out;
            },
            save);
        INFO(kind << " cond=" << cond << " param " << i);
        CHECK(rel_err(t.adjoint(p[i]), g) < 1e-4);
      }
    }
  }
}

TEST_CASE("bernstein h2 family gradients match finite differences") {
  for (const char* kind : {"cf", "hmaf"}) {
    auto m = FlowModel::build(small_spec(kind, false, "bernstein"));
    randomize(m, 34, 0.3);
    std::vector<double> y{0.2, 0.8};
    Tape t;
    auto p = t.leaves(m.params().values);
    Var lp = m.log_prob(p, y, {});
    t.backward(lp);
    for (size_t i = 0; i < m.params().size(); i += 11) {
      const double save = m.params().values[i];
      const double g = fd_central(
          [&](double v) {
            m.params().values[i] = v;
            const double out = m.log_prob(y, {});
            m.params().values[i] = save;
            return out;
          },
          save);
      CHECK(rel_err(t.adjoint(p[i]), g) < 1e-4);
    }
  }
}

TEST_CASE("cached marginal path agrees with the direct path") {
  for (const char* kind : {"mctm", "hcf", "hmaf"}) {
    auto m = FlowModel::build(small_spec(kind, false));
    randomize(m, 35);
    std::vector<double> rows{0.3, -0.9, 1.4, 0.1, -2.6, 3.1};  // includes out-of-domain
    auto cache = m.make_h1_cache(rows, 3);
    for (size_t r = 0; r < 3; ++r) {
      std::span<const double> y{rows.data() + r * 2, 2};
      const double direct = m.log_prob(y);
      Tape t;
      auto p = t.leaves(m.params().values);
      auto th = m.h1_thetas(p);
      Var lp = m.log_prob(p, y, {}, &cache, r, &th);
      CHECK(lp.val() == doctest::Approx(direct).epsilon(1e-11));
    }
  }
}

TEST_CASE("conditional collapse: zero feature pathways ignore x exactly") {
  for (const char* kind : {"mvn", "mctm", "cf", "maf", "hcf", "hmaf"}) {
    auto m = FlowModel::build(small_spec(kind, true));
    // feature pathways are zero-initialized; randomizing is skipped on purpose
    std::vector<double> y{0.7, -0.2};
    std::vector<double> x0{0.0}, x1{1.0};
    CHECK(m.log_prob(y, x0) == m.log_prob(y, x1));
  }
}

TEST_CASE("serialization round-trips bit-exactly") {
  for (const char* kind : {"mvn", "mctm", "cf", "maf", "hcf", "hmaf"}) {
    auto m = FlowModel::build(small_spec(kind, true));
    randomize(m, 36);
    auto m2 = FlowModel::from_json_string(m.to_json_string());
    CHECK(m.params().values == m2.params().values);
    std::vector<double> y{0.3, 0.4};
    std::vector<double> x{1.0};
    CHECK(m.log_prob(y, x) == m2.log_prob(y, x));
    CHECK(m.to_json_string() == m2.to_json_string());
  }
}

TEST_CASE("sampling: determinism and identity-model statistics") {
  auto m = FlowModel::build(small_spec("cf", false));
  auto a = m.sample({}, 4000, 7);
  auto b = m.sample({}, 4000, 7);
  CHECK(a == b);
  double mean = 0.0, var = 0.0;
  for (double v : a) mean += v;
  mean /= static_cast<double>(a.size());
  for (double v : a) var += (v - mean) * (v - mean);
  var /= static_cast<double>(a.size());
  CHECK(std::fabs(mean) < 4.0 / std::sqrt(static_cast<double>(a.size())));
  CHECK(var == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("sampling: log-prob of draws is finite for random models") {
  for (const char* kind : {"mctm", "cf", "maf", "hcf", "hmaf"}) {
    auto m = FlowModel::build(small_spec(kind, false));
    randomize(m, 37, 0.25);
    auto rows = m.sample({}, 200, 3);
    for (size_t r = 0; r < 200; ++r) {
      std::span<const double> y{rows.data() + r * 2, 2};
      CHECK(std::isfinite(m.log_prob(y)));
    }
  }
}

TEST_CASE("sampling inverts the forward transform (mctm reconstruction)") {
  auto m = FlowModel::build(small_spec("mctm", false));
  randomize(m, 38);
  // drawing with the model then pushing back through H must give base-normal
  // z with the exact density the model reports
  auto rows = m.sample({}, 50, 9);
  std::vector<double> none;
  auto lam = m.lambda_matrix(none);
  for (size_t r = 0; r < 50; ++r) {
    const double y1 = rows[r * 2], y2 = rows[r * 2 + 1];
    const double w1 = m.marginal_forward(0, y1, none);
    const double w2 = m.marginal_forward(1, y2, none);
    const double z2 = lam[2] * w1 + w2;
    const double want = norm_logpdf(w1) + norm_logpdf(z2) + m.marginal_log_det(0, y1, none) +
                        m.marginal_log_det(1, y2, none);
    CHECK(m.log_prob({rows.data() + r * 2, 2}) == doctest::Approx(want).epsilon(1e-10));
  }
}

TEST_CASE("hcf head dimension keeps its marginal law under sampling") {
  auto m = FlowModel::build(small_spec("hcf", false));
  randomize(m, 39, 0.3);
  auto rows = m.sample({}, 4000, 13);
  std::vector<double> w(4000);
  std::vector<double> none;
  for (size_t r = 0; r < 4000; ++r) w[r] = m.marginal_forward(0, rows[r * 2], none);
  std::mt19937_64 rng(99);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> ref(4000);
  for (double& v : ref) v = nd(rng);
  CHECK(ks_two_sample(w, ref) > 0.01);
}

TEST_CASE("invalid specs are rejected with offending fields") {
  ModelSpec s = small_spec("hcf", false);
  s.J = 1;
  CHECK_THROWS_WITH_AS(FlowModel::build(s), doctest::Contains("J"), std::invalid_argument);
  s = small_spec("nope", false);
  CHECK_THROWS_AS(FlowModel::build(s), std::invalid_argument);
  s = small_spec("hcf", true);
  s.U = 0;
  CHECK_THROWS_AS(FlowModel::build(s), std::invalid_argument);
}

TEST_CASE("non-finite evaluation raises an error naming the model kind") {
  auto m = FlowModel::build(small_spec("mctm", false));
  std::vector<double> y{NAN, 0.0};
  CHECK_THROWS(logprob_at(m, y, {}));
}

TEST_CASE("logistic base density is used when configured") {
  ModelSpec s = small_spec("cf", false);
  s.base = "logistic";
  auto m = FlowModel::build(s);
  std::vector<double> y{0.3, -1.2};
  CHECK(m.log_prob(y) ==
        doctest::Approx(logistic_logpdf(0.3) + logistic_logpdf(-1.2)).epsilon(1e-12));
}

TEST_CASE("marginal quantile inverts the marginal cdf") {
  for (const char* kind : {"mctm", "hcf"}) {
    auto m = FlowModel::build(small_spec(kind, false));
    randomize(m, 41);
    std::vector<double> none;
    for (double u : {0.05, 0.3, 0.5, 0.77, 0.99})
      for (int j = 0; j < 2; ++j) {
        const double y = m.marginal_quantile(j, u, none);
        CHECK(m.marginal_cdf(j, y, none) == doctest::Approx(u).epsilon(1e-9));
      }
  }
}

TEST_CASE("normalization: random small models integrate to one") {
  // 2D Simpson grid over +-8, random parameters
  for (const char* kind : {"mctm", "hcf"}) {
    auto m = FlowModel::build(small_spec(kind, false));
    randomize(m, 42, 0.3);
    const int n = 200;  // even
    const double lo = -8.0, hi = 8.0, h = (hi - lo) / n;
    auto wt = [&](int i) { return i == 0 || i == n ? 1.0 : (i % 2 ? 4.0 : 2.0); };
    double acc = 0.0;
    for (int a = 0; a <= n; ++a)
      for (int b = 0; b <= n; ++b) {
        std::vector<double> y{lo + a * h, lo + b * h};
        acc += wt(a) * wt(b) * std::exp(m.log_prob(y));
      }
    acc *= h * h / 9.0;
    CHECK(acc == doctest::Approx(1.0).epsilon(1e-2));
  }
}
