#include "bnf/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace bnf {

namespace {

void shuffle_rows(Dataset& ds, std::mt19937_64& rng) {
  std::vector<size_t> order(ds.n);
  for (size_t i = 0; i < ds.n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<double> y(ds.y.size()), x(ds.x.size());
  for (size_t i = 0; i < ds.n; ++i) {
    for (int j = 0; j < ds.J; ++j) y[i * ds.J + j] = ds.y[order[i] * ds.J + j];
    for (int u = 0; u < ds.U; ++u) x[i * ds.U + u] = ds.x[order[i] * ds.U + u];
  }
  ds.y = std::move(y);
  ds.x = std::move(x);
}

}  // namespace

Dataset gen_moons(size_t n, double noise_std, uint64_t seed) {
  if (n < 2) throw std::invalid_argument("gen_moons: need n >= 2");
  Dataset ds;
  ds.J = 2;
  ds.U = 1;
  ds.n = n;
  ds.y.resize(n * 2);
  ds.x.resize(n);
  ds.y_names = {"y1", "y2"};
  ds.x_names = {"x"};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ut(0.0, M_PI);
  std::normal_distribution<double> nd(0.0, 1.0);
  const size_t n_outer = n / 2;
  for (size_t i = 0; i < n; ++i) {
    const double t = ut(rng);
    const bool inner = i >= n_outer;
    double y1 = inner ? 1.0 - std::cos(t) : std::cos(t);
    double y2 = inner ? 0.5 - std::sin(t) : std::sin(t);
    if (noise_std > 0.0) {
      y1 += noise_std * nd(rng);
      y2 += noise_std * nd(rng);
    }
    ds.y[i * 2] = y1;
    ds.y[i * 2 + 1] = y2;
    ds.x[i] = inner ? 1.0 : 0.0;
  }
  shuffle_rows(ds, rng);
  return ds;
}

Dataset gen_circles(size_t n, double noise_std, double inner_factor, uint64_t seed) {
  if (n < 2) throw std::invalid_argument("gen_circles: need n >= 2");
  if (!(inner_factor > 0.0 && inner_factor < 1.0))
    throw std::invalid_argument("gen_circles: inner_factor must lie in (0,1)");
  Dataset ds;
  ds.J = 2;
  ds.U = 1;
  ds.n = n;
  ds.y.resize(n * 2);
  ds.x.resize(n);
  ds.y_names = {"y1", "y2"};
  ds.x_names = {"x"};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ua(0.0, 2.0 * M_PI);
  std::normal_distribution<double> nd(0.0, 1.0);
  const size_t n_outer = n / 2;
  for (size_t i = 0; i < n; ++i) {
    const double a = ua(rng);
    const bool inner = i >= n_outer;
    const double r = inner ? inner_factor : 1.0;
    double y1 = r * std::cos(a);
    double y2 = r * std::sin(a);
    if (noise_std > 0.0) {
      y1 += noise_std * nd(rng);
      y2 += noise_std * nd(rng);
    }
    ds.y[i * 2] = y1;
    ds.y[i * 2 + 1] = y2;
    ds.x[i] = inner ? 1.0 : 0.0;
  }
  shuffle_rows(ds, rng);
  return ds;
}

Dataset gen_tabular(size_t n, int J, double rho, uint64_t seed) {
  if (n < 2 || J < 1) throw std::invalid_argument("gen_tabular: need n >= 2 and J >= 1");
  if (!(rho > -1.0 && rho < 1.0)) throw std::invalid_argument("gen_tabular: |rho| must be < 1");
  Dataset ds;
  ds.J = J;
  ds.U = 0;
  ds.n = n;
  ds.y.resize(n * J);
  for (int j = 0; j < J; ++j) ds.y_names.push_back("y" + std::to_string(j + 1));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  const double s = std::sqrt(1.0 - rho * rho);
  for (size_t i = 0; i < n; ++i) {
    double prev = 0.0;
    for (int j = 0; j < J; ++j) {
      const double z = j == 0 ? nd(rng) : rho * prev + s * nd(rng);
      prev = z;
      ds.y[i * J + j] = z + 0.2 * z * z * z;  // monotone warp, heavy tails
    }
  }
  return ds;
}

double report_scale_shift(const Dataset& ds) {
  if (ds.n == 0) throw std::invalid_argument("report_scale_shift: empty dataset");
  double shift = 0.0;
  for (int j = 0; j < ds.J; ++j) {
    double lo = ds.y[j], hi = ds.y[j];
    for (size_t i = 0; i < ds.n; ++i) {
      lo = std::min(lo, ds.y[i * ds.J + j]);
      hi = std::max(hi, ds.y[i * ds.J + j]);
    }
    if (!(hi > lo)) throw std::invalid_argument("report_scale_shift: constant response column");
    shift += std::log(0.9 / (hi - lo));
  }
  return shift;
}

Standardizer Standardizer::fit(const Dataset& ds) {
  Standardizer st;
  st.mean.assign(ds.J, 0.0);
  st.std.assign(ds.J, 0.0);
  for (size_t i = 0; i < ds.n; ++i)
    for (int j = 0; j < ds.J; ++j) st.mean[j] += ds.y[i * ds.J + j];
  for (int j = 0; j < ds.J; ++j) st.mean[j] /= static_cast<double>(ds.n);
  for (size_t i = 0; i < ds.n; ++i)
    for (int j = 0; j < ds.J; ++j) {
      const double d = ds.y[i * ds.J + j] - st.mean[j];
      st.std[j] += d * d;
    }
  for (int j = 0; j < ds.J; ++j) {
    st.std[j] = std::sqrt(st.std[j] / static_cast<double>(ds.n));
    if (!(st.std[j] > 0.0)) throw std::runtime_error("standardize: constant column " + std::to_string(j));
  }
  return st;
}

void Standardizer::apply(Dataset& ds) const {
  for (size_t i = 0; i < ds.n; ++i)
    for (int j = 0; j < ds.J; ++j)
      ds.y[i * ds.J + j] = (ds.y[i * ds.J + j] - mean[j]) / std[j];
}

void Standardizer::invert(Dataset& ds) const {
  for (size_t i = 0; i < ds.n; ++i)
    for (int j = 0; j < ds.J; ++j) ds.y[i * ds.J + j] = ds.y[i * ds.J + j] * std[j] + mean[j];
}

std::string Standardizer::to_json_string() const {
  return nlohmann::json{{"mean", mean}, {"std", std}}.dump();
}

Standardizer Standardizer::from_json_string(const std::string& s) {
  auto j = nlohmann::json::parse(s);
  Standardizer st;
  st.mean = j.at("mean").get<std::vector<double>>();
  st.std = j.at("std").get<std::vector<double>>();
  return st;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

Dataset load_table(const std::string& path, const std::vector<std::string>& response_cols,
                   const std::vector<std::string>& feature_cols) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_table: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_table: empty file " + path);
  auto header = split_csv_line(line);

  auto col_index = [&](const std::string& name) {
    for (size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw std::runtime_error("load_table: missing column '" + name + "' in " + path);
  };
  std::vector<size_t> yc, xc;
  for (const auto& c : response_cols) yc.push_back(col_index(c));
  for (const auto& c : feature_cols) xc.push_back(col_index(c));

  Dataset ds;
  ds.J = static_cast<int>(yc.size());
  ds.U = static_cast<int>(xc.size());
  ds.y_names = response_cols;
  ds.x_names = feature_cols;

  size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw std::runtime_error("load_table: row " + std::to_string(row) + " has " +
                               std::to_string(cells.size()) + " cells, expected " +
                               std::to_string(header.size()));
    auto parse = [&](size_t c) {
      const std::string& s = cells[c];
      size_t pos = 0;
      double v;
      try {
        v = std::stod(s, &pos);
      } catch (...) {
        pos = 0;
      }
      if (pos != s.size() || s.empty())
        throw std::runtime_error("load_table: non-numeric cell at row " + std::to_string(row) +
                                 ", column '" + header[c] + "'");
      return v;
    };
    for (size_t c : yc) ds.y.push_back(parse(c));
    for (size_t c : xc) ds.x.push_back(parse(c));
    ++ds.n;
  }
  return ds;
}

void save_table(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_table: cannot open " + path);
  for (int j = 0; j < ds.J; ++j) out << (j ? "," : "") << ds.y_names[j];
  for (int u = 0; u < ds.U; ++u) out << "," << ds.x_names[u];
  out << "\n";
  char buf[64];
  for (size_t i = 0; i < ds.n; ++i) {
    for (int j = 0; j < ds.J; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", ds.y[i * ds.J + j]);
      out << (j ? "," : "") << buf;
    }
    for (int u = 0; u < ds.U; ++u) {
      std::snprintf(buf, sizeof buf, "%.17g", ds.x[i * ds.U + u]);
      out << "," << buf;
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("save_table: write failure on " + path);
}

}  // namespace bnf
