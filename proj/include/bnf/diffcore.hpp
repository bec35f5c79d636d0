#pragma once

// Reverse-mode scalar autodiff on an edge-list tape, plus the flat
// parameter store used by all models.

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bnf {

class Tape;

struct Var {
  Tape* tape = nullptr;
  int32_t idx = -1;
  double val() const;
};

struct tape_error : std::runtime_error {
  int32_t node;
  tape_error(const std::string& msg, int32_t n)
      : std::runtime_error(msg + " (node " + std::to_string(n) + ")"), node(n) {}
};

// Nodes store forward values and local partials per incoming edge; one
// backward sweep over the edge list yields all adjoints.
class Tape {
 public:
  struct Edge {
    int32_t src;
    double partial;
  };

  Var leaf(double v) {
    val_.push_back(v);
    edge_start_.push_back(static_cast<uint32_t>(edges_.size()));
    return {this, static_cast<int32_t>(val_.size() - 1)};
  }

  std::vector<Var> leaves(std::span<const double> vals) {
    std::vector<Var> out;
    out.reserve(vals.size());
    for (double v : vals) out.push_back(leaf(v));
    return out;
  }
  std::vector<Var> leaves(std::initializer_list<double> vals) {
    return leaves(std::span<const double>{vals.begin(), vals.size()});
  }

  Var node1(double v, Var a, double pa) {
    edges_.push_back({a.idx, pa});
    val_.push_back(v);
    edge_start_.push_back(static_cast<uint32_t>(edges_.size()));
    return {this, static_cast<int32_t>(val_.size() - 1)};
  }

  Var node2(double v, Var a, double pa, Var b, double pb) {
    edges_.push_back({a.idx, pa});
    edges_.push_back({b.idx, pb});
    val_.push_back(v);
    edge_start_.push_back(static_cast<uint32_t>(edges_.size()));
    return {this, static_cast<int32_t>(val_.size() - 1)};
  }

  // sum_i c[i] * x[i] (+ bias), fused into a single node
  Var dot(std::span<const double> c, std::span<const Var> x, double bias = 0.0) {
    double s = bias;
    for (size_t i = 0; i < c.size(); ++i) {
      s += c[i] * x[i].val();
      edges_.push_back({x[i].idx, c[i]});
    }
    val_.push_back(s);
    edge_start_.push_back(static_cast<uint32_t>(edges_.size()));
    return {this, static_cast<int32_t>(val_.size() - 1)};
  }

  // sum_i w[i] * x[i] + b, both factors differentiable (one dense unit)
  Var affine(std::span<const Var> w, std::span<const Var> x, Var b) {
    double s = b.val();
    edges_.push_back({b.idx, 1.0});
    for (size_t i = 0; i < w.size(); ++i) {
      const double wv = w[i].val(), xv = x[i].val();
      s += wv * xv;
      edges_.push_back({w[i].idx, xv});
      edges_.push_back({x[i].idx, wv});
    }
    val_.push_back(s);
    edge_start_.push_back(static_cast<uint32_t>(edges_.size()));
    return {this, static_cast<int32_t>(val_.size() - 1)};
  }

  double value(int32_t i) const { return val_[i]; }
  size_t size() const { return val_.size(); }

  // Truncate back to a previous mark (parameter leaves below the mark survive).
  size_t mark() const { return val_.size(); }
  void rewind(size_t m) {
    val_.resize(m);
    edges_.resize(edge_start_[m]);
    edge_start_.resize(m + 1);
  }

  void clear() {
    val_.clear();
    edges_.clear();
    edge_start_.assign(1, 0);
    adj_.clear();
  }

  void backward(Var loss);
  double adjoint(Var v) const { return adj_[v.idx]; }

  Tape() { edge_start_.assign(1, 0); }

 private:
  std::vector<double> val_;
  std::vector<Edge> edges_;
  std::vector<uint32_t> edge_start_;  // size() + 1 entries
  std::vector<double> adj_;
};

inline double Var::val() const { return tape->value(idx); }

// ---- arithmetic -----------------------------------------------------------

inline Var operator+(Var a, Var b) { return a.tape->node2(a.val() + b.val(), a, 1.0, b, 1.0); }
inline Var operator-(Var a, Var b) { return a.tape->node2(a.val() - b.val(), a, 1.0, b, -1.0); }
inline Var operator*(Var a, Var b) { return a.tape->node2(a.val() * b.val(), a, b.val(), b, a.val()); }
inline Var operator/(Var a, Var b) {
  const double bv = b.val();
  if (bv == 0.0) throw tape_error("division by zero", b.idx);
  return a.tape->node2(a.val() / bv, a, 1.0 / bv, b, -a.val() / (bv * bv));
}

inline Var operator+(Var a, double c) { return a.tape->node1(a.val() + c, a, 1.0); }
inline Var operator+(double c, Var a) { return a + c; }
inline Var operator-(Var a, double c) { return a.tape->node1(a.val() - c, a, 1.0); }
inline Var operator-(double c, Var a) { return a.tape->node1(c - a.val(), a, -1.0); }
inline Var operator*(Var a, double c) { return a.tape->node1(a.val() * c, a, c); }
inline Var operator*(double c, Var a) { return a * c; }
inline Var operator/(Var a, double c) {
  if (c == 0.0) throw tape_error("division by zero constant", a.idx);
  return a * (1.0 / c);
}
inline Var operator/(double c, Var a) {
  const double av = a.val();
  if (av == 0.0) throw tape_error("division by zero", a.idx);
  return a.tape->node1(c / av, a, -c / (av * av));
}
inline Var operator-(Var a) { return a.tape->node1(-a.val(), a, -1.0); }

inline Var& operator+=(Var& a, Var b) { a = a + b; return a; }
inline Var& operator-=(Var& a, Var b) { a = a - b; return a; }
inline Var& operator*=(Var& a, Var b) { a = a * b; return a; }

// ---- elementary functions -------------------------------------------------

inline Var exp(Var a) {
  const double e = std::exp(a.val());
  return a.tape->node1(e, a, e);
}
inline Var log(Var a) {
  const double av = a.val();
  if (!(av > 0.0)) throw tape_error("log of non-positive operand", a.idx);
  return a.tape->node1(std::log(av), a, 1.0 / av);
}
inline Var sqrt(Var a) {
  const double av = a.val();
  if (!(av > 0.0)) throw tape_error("sqrt of non-positive operand", a.idx);
  const double s = std::sqrt(av);
  return a.tape->node1(s, a, 0.5 / s);
}
inline Var tanh(Var a) {
  const double t = std::tanh(a.val());
  return a.tape->node1(t, a, 1.0 - t * t);
}
inline Var relu(Var a) {
  const double av = a.val();
  return a.tape->node1(av > 0.0 ? av : 0.0, a, av > 0.0 ? 1.0 : 0.0);
}
inline double relu(double a) { return a > 0.0 ? a : 0.0; }

// double shims so code generic over {double, Var} resolves unqualified calls
inline double exp(double x) { return std::exp(x); }
inline double log(double x) { return std::log(x); }
inline double sqrt(double x) { return std::sqrt(x); }
inline double tanh(double x) { return std::tanh(x); }
inline double erf(double x) { return std::erf(x); }
inline double pow(double x, double p) { return std::pow(x, p); }

inline double softplus(double x) {
  // log(1 + e^x), overflow safe
  return std::log1p(std::exp(-std::fabs(x))) + (x > 0.0 ? x : 0.0);
}
inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
inline Var softplus(Var a) { return a.tape->node1(softplus(a.val()), a, sigmoid(a.val())); }
inline Var sigmoid(Var a) {
  const double s = sigmoid(a.val());
  return a.tape->node1(s, a, s * (1.0 - s));
}
inline Var erf(Var a) {
  const double av = a.val();
  return a.tape->node1(std::erf(av), a, 2.0 / std::sqrt(M_PI) * std::exp(-av * av));
}
inline Var pow(Var a, double p) {
  const double av = a.val();
  if (av <= 0.0 && p != std::floor(p))
    throw tape_error("pow of non-positive base with fractional exponent", a.idx);
  const double v = std::pow(av, p);
  return a.tape->node1(v, a, av == 0.0 ? 0.0 : p * v / av);
}

// value extraction usable in code generic over {double, Var}
inline double value_of(double x) { return x; }
inline double value_of(Var x) { return x.val(); }

// ---- parameter store ------------------------------------------------------

struct ParamStore {
  std::vector<double> values;
  std::vector<double> grads;
  std::map<std::string, std::pair<size_t, size_t>> slices;  // name -> (offset, len)

  size_t add(const std::string& name, size_t len, double init = 0.0) {
    if (slices.count(name)) throw std::invalid_argument("duplicate slice: " + name);
    const size_t off = values.size();
    values.resize(off + len, init);
    grads.resize(values.size(), 0.0);
    slices[name] = {off, len};
    return off;
  }

  std::span<double> slice(const std::string& name) {
    auto [off, len] = slices.at(name);
    return {values.data() + off, len};
  }
  std::span<const double> slice(const std::string& name) const {
    auto [off, len] = slices.at(name);
    return {values.data() + off, len};
  }

  void zero_grad() { std::fill(grads.begin(), grads.end(), 0.0); }
  size_t size() const { return values.size(); }
};

}  // namespace bnf
