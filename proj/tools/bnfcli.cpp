// Command-line front end: generate / train / eval / sample / qq / copula /
// rankcorr / sweep, driven by a JSON config with flag overrides. Artifacts
// land under outdir/{dataset,model,report,metrics,samples}/ keyed by a
// run id hashed from (config, seed).

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "bnf/data.hpp"
#include "bnf/eval.hpp"
#include "bnf/special.hpp"
#include "bnf/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json default_config() {
  return json{
      {"outdir", "out"},
      {"seeds", {0}},
      {"dataset",
       {{"generator", "moons"},
        {"n", 16384},
        {"noise", 0.05},
        {"inner_factor", 0.5},
        {"rho", 0.6},
        {"J", 8},
        {"file", ""},
        {"response_cols", json::array()},
        {"feature_cols", json::array()},
        {"standardize", true}}},
      {"model",
       {{"kind", "hcf"},
        {"family", "rqs"},
        {"conditional", false},
        {"marginal_order", 0},  // 0 = auto: 300 for hcf/hmaf, 60 otherwise
        {"h2_order", 10},
        {"bins", 8},
        {"tail_bound", 4.0},
        {"layers", 2},
        {"hidden", {16, 16}},
        {"feature_hidden", {8}},
        {"shift_mode", "none"},
        {"shift_order", 6},
        {"base", "normal"},
        {"constrain", "softmax"},
        {"cond_mode", "additive"}}},
      {"train",
       {{"epochs", 60},
        {"marginal_epochs", 300},
        {"batch", 512},
        {"lr_max", 1e-2},
        {"lr_min", 1e-4},
        {"patience", 50},
        {"val_frac", 0.25},
        {"clip_norm", 10.0},
        {"parallel", true},
        {"verbose", false}}}};
}

void merge_into(json& base, const json& over) {
  for (auto it = over.begin(); it != over.end(); ++it) {
    if (it->is_object() && base.contains(it.key()) && base[it.key()].is_object())
      merge_into(base[it.key()], *it);
    else
      base[it.key()] = *it;
  }
}

void apply_set(json& cfg, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos) throw CLI::ValidationError("--set expects key.path=value");
  std::string path = kv.substr(0, eq), val = kv.substr(eq + 1);
  json* node = &cfg;
  std::stringstream ss(path);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
  json parsed = json::parse(val, nullptr, false);
  (*node)[parts.back()] = parsed.is_discarded() ? json(val) : parsed;
}

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string run_id(const json& cfg, uint64_t seed) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a(cfg.dump() + "#" + std::to_string(seed))));
  return buf;
}

void write_file(const fs::path& p, const std::string& content) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << content;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bnf::Dataset build_dataset(const json& d, uint64_t seed) {
  const std::string gen = d.at("generator");
  const size_t n = d.at("n");
  if (gen == "moons") return bnf::gen_moons(n, d.at("noise"), seed);
  if (gen == "circles") return bnf::gen_circles(n, d.at("noise"), d.at("inner_factor"), seed);
  if (gen == "tabular") return bnf::gen_tabular(n, d.at("J"), d.at("rho"), seed);
  if (gen == "file")
    return bnf::load_table(d.at("file"), d.at("response_cols").get<std::vector<std::string>>(),
                           d.at("feature_cols").get<std::vector<std::string>>());
  throw std::runtime_error("unknown generator: " + gen);
}

struct Prepared {
  bnf::Dataset train, test;
  bnf::Standardizer std;
  bool standardized = false;
};

// Test data comes from an independent draw of the same generator (file
// datasets are split 75/25 instead); responses standardized by train stats.
Prepared prepare_data(const json& cfg, uint64_t seed) {
  const json& d = cfg.at("dataset");
  Prepared pr;
  if (d.at("generator") == "file") {
    bnf::Dataset all = build_dataset(d, seed);
    const size_t n_test = std::max<size_t>(1, all.n / 4);
    const size_t n_train = all.n - n_test;
    pr.train = all;
    pr.test = all;
    pr.train.n = n_train;
    pr.train.y.resize(n_train * all.J);
    if (all.U) pr.train.x.resize(n_train * all.U);
    pr.test.y.erase(pr.test.y.begin(), pr.test.y.begin() + n_train * all.J);
    if (all.U) pr.test.x.erase(pr.test.x.begin(), pr.test.x.begin() + n_train * all.U);
    pr.test.n = n_test;
  } else {
    pr.train = build_dataset(d, seed);
    pr.test = build_dataset(d, seed ^ 0x74657374u);  // independent test draw
  }
  if (d.value("standardize", true)) {
    pr.std = bnf::Standardizer::fit(pr.train);
    pr.std.apply(pr.train);
    pr.std.apply(pr.test);
    pr.standardized = true;
  }
  return pr;
}

bnf::ModelSpec spec_from_config(const json& m, const bnf::Dataset& train, uint64_t seed) {
  bnf::ModelSpec s;
  s.kind = m.at("kind");
  s.family = m.at("family");
  s.conditional = m.at("conditional");
  s.J = train.J;
  s.U = s.conditional ? train.U : 0;
  int morder = m.at("marginal_order");
  if (morder <= 0) morder = (s.kind == "hcf" || s.kind == "hmaf") ? 300 : 60;
  s.marginal_order = morder;
  s.h2_order = m.at("h2_order");
  s.bins = m.at("bins");
  s.tail_bound = m.at("tail_bound");
  s.layers = m.at("layers");
  s.hidden = m.at("hidden").get<std::vector<int>>();
  s.feature_hidden = m.at("feature_hidden").get<std::vector<int>>();
  s.shift_mode = m.at("shift_mode");
  s.shift_order = m.at("shift_order");
  s.base = m.at("base");
  s.constrain = m.at("constrain");
  s.cond_mode = m.at("cond_mode");
  s.init_seed = seed;
  // response domain: data range padded by 1% per side (linear extrapolation
  // covers points beyond it; a tight domain keeps the basis resolution high
  // near the data boundary)
  s.y_lo.assign(train.J, 0.0);
  s.y_hi.assign(train.J, 0.0);
  for (int j = 0; j < train.J; ++j) {
    double lo = train.y[j], hi = train.y[j];
    for (size_t i = 0; i < train.n; ++i) {
      lo = std::min(lo, train.y[i * train.J + j]);
      hi = std::max(hi, train.y[i * train.J + j]);
    }
    const double pad = 0.01 * (hi - lo);
    s.y_lo[j] = lo - pad;
    s.y_hi[j] = hi + pad;
  }
  if (s.conditional && train.U > 0) {
    double lo = train.x[0], hi = train.x[0];
    for (double v : train.x) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    s.x_lo = lo;
    s.x_hi = hi > lo ? hi : lo + 1.0;
  }
  return s;
}

bnf::TrainConfig train_from_config(const json& t, uint64_t seed) {
  bnf::TrainConfig c;
  c.epochs = t.at("epochs");
  c.marginal_epochs = t.value("marginal_epochs", 0);
  c.batch = t.at("batch");
  c.lr_max = t.at("lr_max");
  c.lr_min = t.at("lr_min");
  c.patience = t.at("patience");
  c.val_frac = t.at("val_frac");
  c.clip_norm = t.at("clip_norm");
  c.parallel = t.at("parallel");
  c.verbose = t.value("verbose", false);
  c.seed = seed;
  return c;
}

struct RunResult {
  uint64_t seed;
  double test_nll;
  std::string id;
};

RunResult run_train(const json& cfg, uint64_t seed, bool write_artifacts) {
  Prepared pr = prepare_data(cfg, seed);
  bnf::ModelSpec spec = spec_from_config(cfg.at("model"), pr.train, seed);
  bnf::FlowModel model = bnf::FlowModel::build(spec);
  bnf::TrainConfig tc = train_from_config(cfg.at("train"), seed);
  bnf::TrainReport rep = bnf::fit(model, pr.train.y, pr.train.x, pr.train.n, tc);

  std::vector<size_t> tidx(pr.test.n);
  for (size_t i = 0; i < pr.test.n; ++i) tidx[i] = i;
  // reported on the range-normalized scale; invariant to internal standardization
  double test_nll =
      bnf::dataset_nll(model, pr.test.y, pr.test.x, tidx) + bnf::report_scale_shift(pr.train);

  const std::string id = run_id(cfg, seed);
  if (write_artifacts) {
    const fs::path out = cfg.at("outdir").get<std::string>();
    write_file(out / "model" / (id + ".json"), model.to_json_string());
    if (pr.standardized)
      write_file(out / "model" / (id + ".standardizer.json"), pr.std.to_json_string());
    write_file(out / "report" / (id + ".csv"), rep.to_csv());
    write_file(out / "report" / (id + ".json"), rep.to_json_string());
    json summary{{"run_id", id},
                 {"seed", seed},
                 {"model", spec.kind},
                 {"conditional", spec.conditional},
                 {"test_nll", test_nll},
                 {"best_val_nll", rep.best_val},
                 {"best_epoch", rep.best_epoch}};
    write_file(out / "metrics" / (id + ".json"), summary.dump(2));
  }
  return {seed, test_nll, id};
}

std::vector<uint64_t> seed_list(const json& cfg) {
  auto v = cfg.at("seeds").get<std::vector<uint64_t>>();
  if (v.empty()) throw std::runtime_error("config error at seeds: list must be non-empty");
  return v;
}

int worker_count() {
  if (const char* env = std::getenv("BNF_WORKERS")) return std::max(1, std::atoi(env));
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"density regression with hybrid Bernstein flows"};
  app.require_subcommand(1);

  std::string config_path, set_outdir, set_dataset, set_model;
  std::vector<std::string> sets;
  int64_t set_seed = -1, set_n = -1, sample_n = 1000;
  int set_conditional = -1;
  int grid = 25;
  double at_x = 0.0;
  bool has_x = false;

  app.add_option("-c,--config", config_path, "JSON config file");
  app.add_option("--set", sets, "override config entries, key.path=value");
  app.add_option("--outdir", set_outdir, "output directory");
  app.add_option("--seed", set_seed, "single seed override");
  app.add_option("--n", set_n, "dataset size override");
  app.add_option("--dataset", set_dataset, "generator override (moons|circles|tabular|file)");
  app.add_option("--model", set_model, "model kind override (mvn|mctm|cf|maf|hcf|hmaf)");
  app.add_option("--conditional", set_conditional, "conditional flag override (0|1)");

  auto* cmd_generate = app.add_subcommand("generate", "write dataset CSV + sidecar");
  auto* cmd_train = app.add_subcommand("train", "train a model, write model/report/metrics");
  auto* cmd_eval = app.add_subcommand("eval", "test NLL of a stored model");
  auto* cmd_sample = app.add_subcommand("sample", "draw from a stored model");
  auto* cmd_qq = app.add_subcommand("qq", "marginal QQ data of a stored model");
  auto* cmd_copula = app.add_subcommand("copula", "copula density grid of a stored model");
  auto* cmd_rankcorr = app.add_subcommand("rankcorr", "Spearman matrix from the Lambda stage");
  auto* cmd_sweep = app.add_subcommand("sweep", "train over all seeds, aggregate NLL table");

  std::string model_path;
  for (auto* c : {cmd_eval, cmd_sample, cmd_qq, cmd_copula, cmd_rankcorr})
    c->add_option("--model-file", model_path, "stored model JSON")->required();
  cmd_sample->add_option("--samples", sample_n, "number of draws");
  cmd_copula->add_option("--grid", grid, "grid points per axis");
  for (auto* c : {cmd_sample, cmd_qq, cmd_copula, cmd_rankcorr})
    c->add_option("--x", at_x, "scalar feature value for conditional models")
        ->each([&](const std::string&) { has_x = true; });

  CLI11_PARSE(app, argc, argv);

  try {
    json cfg = default_config();
    if (!config_path.empty()) merge_into(cfg, json::parse(read_file(config_path)));
    for (const auto& kv : sets) apply_set(cfg, kv);
    if (!set_outdir.empty()) cfg["outdir"] = set_outdir;
    if (set_seed >= 0) cfg["seeds"] = {static_cast<uint64_t>(set_seed)};
    if (set_n >= 0) cfg["dataset"]["n"] = set_n;
    if (!set_dataset.empty()) cfg["dataset"]["generator"] = set_dataset;
    if (!set_model.empty()) cfg["model"]["kind"] = set_model;
    if (set_conditional >= 0) cfg["model"]["conditional"] = set_conditional != 0;

    const fs::path out = cfg.at("outdir").get<std::string>();
    const auto seeds = seed_list(cfg);

    auto load_model = [&]() { return bnf::FlowModel::from_json_string(read_file(model_path)); };
    auto feature = [&](const bnf::FlowModel& m) {
      static std::vector<double> xv;
      xv.clear();
      if (m.spec().conditional) xv.assign(static_cast<size_t>(m.spec().U), at_x);
      return std::span<const double>{xv};
    };

    if (*cmd_generate) {
      for (uint64_t seed : seeds) {
        bnf::Dataset ds = build_dataset(cfg.at("dataset"), seed);
        const std::string id = run_id(cfg, seed);
        fs::create_directories(out / "dataset");
        bnf::save_table((out / "dataset" / (id + ".csv")).string(), ds);
        json side{{"run_id", id}, {"seed", seed}, {"n", ds.n}, {"J", ds.J}, {"U", ds.U},
                  {"generator", cfg["dataset"]["generator"]}};
        write_file(out / "dataset" / (id + ".meta.json"), side.dump(2));
        std::cout << (out / "dataset" / (id + ".csv")).string() << "\n";
      }
    } else if (*cmd_train) {
      for (uint64_t seed : seeds) {
        RunResult r = run_train(cfg, seed, true);
        std::cout << "run " << r.id << " seed " << r.seed << " test_nll " << r.test_nll << "\n";
      }
    } else if (*cmd_eval) {
      bnf::FlowModel model = load_model();
      Prepared pr = prepare_data(cfg, seeds.front());
      std::vector<size_t> tidx(pr.test.n);
      for (size_t i = 0; i < pr.test.n; ++i) tidx[i] = i;
      double nll =
          bnf::dataset_nll(model, pr.test.y, pr.test.x, tidx) + bnf::report_scale_shift(pr.train);
      const std::string id = run_id(cfg, seeds.front());
      write_file(out / "metrics" / (id + ".eval.json"),
                 json{{"run_id", id}, {"test_nll", nll}}.dump(2));
      std::cout << "test_nll " << nll << "\n";
    } else if (*cmd_sample) {
      bnf::FlowModel model = load_model();
      auto xs = feature(model);
      auto rows = model.sample(xs, static_cast<int>(sample_n), seeds.front());
      bnf::Dataset ds;
      ds.J = model.spec().J;
      ds.n = static_cast<size_t>(sample_n);
      ds.y = std::move(rows);
      for (int j = 0; j < ds.J; ++j) ds.y_names.push_back("y" + std::to_string(j + 1));
      const std::string id = run_id(cfg, seeds.front());
      fs::create_directories(out / "samples");
      bnf::save_table((out / "samples" / (id + ".csv")).string(), ds);
      std::cout << (out / "samples" / (id + ".csv")).string() << "\n";
    } else if (*cmd_qq) {
      bnf::FlowModel model = load_model();
      if (!model.has_marginal_stage())
        throw std::runtime_error("qq: model has no marginal stage");
      Prepared pr = prepare_data(cfg, seeds.front());
      auto xs = feature(model);
      const std::string id = run_id(cfg, seeds.front());
      // goodness-of-fit of the marginal stage: the fitted sample, marginally
      // normalized, should match the base distribution
      for (int j = 0; j < model.spec().J; ++j) {
        std::vector<double> w(pr.train.n);
        for (size_t i = 0; i < pr.train.n; ++i)
          w[i] = model.marginal_forward(j, pr.train.y[i * model.spec().J + j],
                                        model.spec().conditional ? pr.train.row_x(i) : xs);
        auto pts = bnf::qq_points(w, [](double p) { return bnf::norm_quantile(p); });
        write_file(out / "metrics" / (id + ".qq" + std::to_string(j + 1) + ".csv"),
                   bnf::qq_to_csv(pts));
      }
      std::cout << (out / "metrics").string() << "\n";
    } else if (*cmd_copula) {
      bnf::FlowModel model = load_model();
      auto xs = feature(model);
      if (model.spec().J != 2) throw std::runtime_error("copula: grid output is 2D only");
      std::string csv = "u1,u2,c\n";
      char buf[96];
      for (int a = 1; a <= grid; ++a)
        for (int b = 1; b <= grid; ++b) {
          const double u1 = (a - 0.5) / grid, u2 = (b - 0.5) / grid;
          const double c = bnf::copula_density(model, std::vector<double>{u1, u2}, xs);
          std::snprintf(buf, sizeof buf, "%.10g,%.10g,%.10g\n", u1, u2, c);
          csv += buf;
        }
      const std::string id = run_id(cfg, seeds.front());
      write_file(out / "metrics" / (id + ".copula.csv"), csv);
      std::cout << (out / "metrics" / (id + ".copula.csv")).string() << "\n";
    } else if (*cmd_rankcorr) {
      bnf::FlowModel model = load_model();
      auto xs = feature(model);
      auto lam = model.lambda_matrix(xs);
      auto rs = bnf::spearman_from_lambda(lam, model.spec().J);
      std::string csv;
      char buf[48];
      for (int i = 0; i < model.spec().J; ++i) {
        for (int j = 0; j < model.spec().J; ++j) {
          std::snprintf(buf, sizeof buf, "%s%.10g", j ? "," : "",
                        rs[static_cast<size_t>(i) * model.spec().J + j]);
          csv += buf;
        }
        csv += "\n";
      }
      const std::string id = run_id(cfg, seeds.front());
      write_file(out / "metrics" / (id + ".rankcorr.csv"), csv);
      std::cout << (out / "metrics" / (id + ".rankcorr.csv")).string() << "\n";
    } else if (*cmd_sweep) {
      std::vector<RunResult> results(seeds.size());
      const int workers = std::min<int>(worker_count(), static_cast<int>(seeds.size()));
      std::atomic<size_t> next{0};
      auto worker = [&]() {
        for (size_t k = next.fetch_add(1); k < seeds.size(); k = next.fetch_add(1))
          results[k] = run_train(cfg, seeds[k], true);
      };
      if (workers <= 1) {
        worker();
      } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
      }
      bnf::TrialTable table;
      for (const auto& r : results)
        table.rows.push_back({cfg["model"]["kind"], cfg["dataset"]["generator"],
                              cfg["model"]["conditional"], r.seed, r.test_nll});
      const std::string id = run_id(cfg, seeds.front());
      write_file(out / "metrics" / (id + ".nll_table.csv"), table.to_csv());
      std::cout << table.to_csv();
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
