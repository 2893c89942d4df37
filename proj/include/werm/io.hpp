// CSV datasets, JSON configs and JSON/CSV reports.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "werm/core.hpp"
#include "werm/errors.hpp"
#include "werm/harness.hpp"
#include "werm/inference.hpp"
#include "werm/losses.hpp"
#include "werm/rng.hpp"
#include "werm/segmentation.hpp"
#include "werm/solver.hpp"
#include "werm/state_evolution.hpp"
#include "werm/weights.hpp"

namespace werm::io {

using json = nlohmann::json;

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

inline json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(what + ": malformed JSON: " + e.what());
  }
}

// ---------------------------------------------------------------- datasets

inline std::string dataset_csv(const Dataset& d) {
  std::string s = "y";
  for (int j = 1; j <= d.p(); ++j) s += ",x" + std::to_string(j);
  s += '\n';
  for (int i = 0; i < d.n(); ++i) {
    s += fmt17(d.y(i));
    for (int j = 0; j < d.p(); ++j) {
      s += ',';
      s += fmt17(d.x(i, j));
    }
    s += '\n';
  }
  return s;
}

inline Dataset parse_dataset_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("csv: missing header row");
  const auto cols = static_cast<int>(std::count(line.begin(), line.end(), ',')) + 1;
  if (cols < 2) throw ValidationError("csv: need y and at least one x column");
  std::vector<double> vals;
  int rows = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const char* c = line.c_str();
    int got = 0;
    while (true) {
      char* end = nullptr;
      const double v = std::strtod(c, &end);
      if (end == c) throw ValidationError("csv: unparsable value on data row " + std::to_string(rows + 1));
      vals.push_back(v);
      ++got;
      c = end;
      if (*c == ',') ++c;
      else if (*c == '\0') break;
      else throw ValidationError("csv: unexpected character on data row " + std::to_string(rows + 1));
    }
    if (got != cols) throw ValidationError("csv: row " + std::to_string(rows + 1) + " has the wrong number of fields");
    ++rows;
  }
  MatrixXd x(rows, cols - 1);
  VectorXd y(rows);
  for (int i = 0; i < rows; ++i) {
    y(i) = vals[static_cast<std::size_t>(i) * cols];
    for (int j = 1; j < cols; ++j) x(i, j - 1) = vals[static_cast<std::size_t>(i) * cols + j];
  }
  return Dataset(std::move(x), std::move(y));
}

inline json truth_json(const Truth& t) {
  json j;
  j["eta"] = t.eta;
  if (t.noise_sd) j["noise_sd"] = *t.noise_sd;
  else j["noise_sd"] = nullptr;
  return j;
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& csv) {
  auto p = csv;
  p.replace_extension(".meta.json");
  return p;
}

inline void save_dataset(const Dataset& d, const std::filesystem::path& csv) {
  write_file(csv, dataset_csv(d));
  if (d.meta) write_file(sidecar_path(csv), truth_json(*d.meta).dump(2) + "\n");
}

inline Dataset load_dataset(const std::filesystem::path& csv) {
  Dataset d = parse_dataset_csv(read_file(csv));
  const auto side = sidecar_path(csv);
  if (std::filesystem::exists(side)) {
    const json j = parse_json(read_file(side), side.string());
    Truth t;
    if (j.contains("eta")) t.eta = j.at("eta").get<std::vector<int>>();
    if (j.contains("noise_sd") && !j.at("noise_sd").is_null()) t.noise_sd = j.at("noise_sd").get<double>();
    if (!t.eta.empty()) t.psi = config_from_changepoints(t.eta, d.n()).psi();
    d.meta = t;
  }
  return d;
}

// ------------------------------------------------------------ matrix helpers

inline json to_json(const MatrixXd& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    a.push_back(r);
  }
  return a;
}

inline json to_json(const VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline MatrixXd matrix_from(const json& j, const std::string& key) {
  if (!j.is_array() || j.empty() || !j[0].is_array()) throw ConfigError(key + ": expected a non-empty array of rows");
  const auto r = j.size(), c = j[0].size();
  MatrixXd m(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    if (!j[i].is_array() || j[i].size() != c) throw ConfigError(key + ": rows must have equal length");
    for (std::size_t k = 0; k < c; ++k) {
      if (!j[i][k].is_number()) throw ConfigError(key + ": entries must be numbers");
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = j[i][k].get<double>();
    }
  }
  return m;
}

// -------------------------------------------------------------- config reader

/// Typed access to a JSON object that rejects unknown keys and names the
/// offending key in every error.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  void allow(std::initializer_list<const char*> keys) {
    std::set<std::string> ok(keys.begin(), keys.end());
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!ok.count(it.key())) throw ConfigError("unknown key '" + key(it.key()) + "'");
  }

  bool has(const std::string& k) const { return j_.contains(k) && !j_.at(k).is_null(); }
  const json& raw(const std::string& k) const { return j_.at(k); }
  std::string key(const std::string& k) const { return path_.empty() ? k : path_ + "." + k; }

  template <class T>
  T get(const std::string& k, T fallback) const {
    if (!has(k)) return fallback;
    return as<T>(k);
  }

  template <class T>
  T need(const std::string& k) const {
    if (!has(k)) throw ConfigError("missing key '" + key(k) + "'");
    return as<T>(k);
  }

  Reader sub(const std::string& k) const { return Reader(j_.at(k), key(k)); }

 private:
  template <class T>
  T as(const std::string& k) const {
    try {
      return j_.at(k).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("key '" + key(k) + "' has the wrong type");
    }
  }
  std::string where() const { return path_.empty() ? "config" : path_; }

  const json& j_;
  std::string path_;
};

inline Loss parse_loss(const json& j, const std::string& path) {
  std::string kind;
  double tau = 1.345;
  if (j.is_string()) {
    kind = j.get<std::string>();
  } else {
    Reader r(j, path);
    r.allow({"kind", "tau"});
    kind = r.need<std::string>("kind");
    tau = r.get<double>("tau", tau);
  }
  if (kind == "squared") return Loss::squared();
  if (kind == "huber") return Loss::huber(tau);
  if (kind == "logistic") return Loss::logistic();
  throw ConfigError("key '" + path + "' names an unknown loss '" + kind + "'");
}

inline GlmModel parse_model(const Reader& r, const std::string& k) {
  const auto s = r.get<std::string>(k, "linear");
  if (s == "linear") return GlmModel::linear();
  if (s == "logistic") return GlmModel::logistic();
  throw ConfigError("key '" + r.key(k) + "' names an unknown model '" + s + "'");
}

inline NoiseSpec parse_noise(const json& j, const std::string& path) {
  Reader r(j, path);
  r.allow({"kind", "sd", "scale", "df"});
  const auto kind = r.need<std::string>("kind");
  if (kind == "gaussian") return NoiseSpec::gaussian(r.get<double>("sd", r.get<double>("scale", 1.0)));
  if (kind == "student_t") {
    const double df = r.get<double>("df", 4.0);
    if (!(df > 2.0)) throw ConfigError("key '" + r.key("df") + "' must exceed 2");
    return NoiseSpec::student_t(df, r.get<double>("scale", 1.0));
  }
  if (kind == "laplace") return NoiseSpec::laplace(r.get<double>("scale", 1.0));
  if (kind == "uniform01") return NoiseSpec::uniform01();
  throw ConfigError("key '" + r.key("kind") + "' names an unknown noise '" + kind + "'");
}

inline json noise_json(const NoiseSpec& n) {
  switch (n.kind) {
    case NoiseSpec::Kind::gaussian:
      return {{"kind", "gaussian"}, {"sd", n.scale}};
    case NoiseSpec::Kind::student_t:
      return {{"kind", "student_t"}, {"df", n.df}, {"scale", n.scale}};
    case NoiseSpec::Kind::laplace:
      return {{"kind", "laplace"}, {"scale", n.scale}};
    case NoiseSpec::Kind::uniform01:
      return {{"kind", "uniform01"}};
  }
  return {};
}

inline json loss_json(const Loss& l) {
  json j = {{"kind", l.name()}};
  if (l.kind == Loss::Kind::huber) j["tau"] = l.tau;
  return j;
}

inline ChangePointPrior parse_prior(const json& j, const std::string& path,
                                    const std::filesystem::path& base = {}) {
  Reader r(j, path);
  r.allow({"kind", "L", "min_gap", "min_gap_frac", "table", "table_path", "n"});
  const auto kind = r.need<std::string>("kind");
  if (kind == "exact_uniform") return ChangePointPrior::exact_uniform(r.need<int>("L"));
  if (kind == "atmost_uniform") return ChangePointPrior::atmost_uniform(r.need<int>("L"));
  if (kind == "spaced_uniform") {
    if (r.has("min_gap_frac")) return ChangePointPrior::spaced_uniform_frac(r.need<int>("L"), r.need<double>("min_gap_frac"));
    return ChangePointPrior::spaced_uniform(r.need<int>("L"), r.get<int>("min_gap", 1));
  }
  if (kind == "alternating") return ChangePointPrior::alternating();
  if (kind == "custom") {
    json tab;
    int n = 0;
    if (r.has("table_path")) {
      auto p = std::filesystem::path(r.need<std::string>("table_path"));
      if (p.is_relative() && !base.empty()) p = base / p;
      tab = parse_json(read_file(p), p.string());
      if (tab.is_object()) {
        Reader t(tab, p.string());
        t.allow({"n", "table"});
        n = t.need<int>("n");
        tab = tab.at("table");
      }
    } else {
      tab = r.raw("table");
    }
    n = r.get<int>("n", n);
    if (n < 2) throw ConfigError("missing key '" + r.key("n") + "' for custom prior");
    if (!tab.is_array()) throw ConfigError("key '" + r.key("table") + "' must be an array");
    std::vector<std::pair<std::vector<int>, double>> rows;
    for (const auto& e : tab) {
      Reader er(e, r.key("table[]"));
      er.allow({"eta", "p"});
      rows.emplace_back(er.need<std::vector<int>>("eta"), er.need<double>("p"));
    }
    return ChangePointPrior::custom(std::move(rows), n);
  }
  throw ConfigError("key '" + r.key("kind") + "' names an unknown prior '" + kind + "'");
}

inline json prior_json(const ChangePointPrior& p) {
  json j = {{"kind", p.name()}, {"L", p.L}};
  if (p.kind == ChangePointPrior::Kind::spaced_uniform) {
    if (p.min_gap_frac) j["min_gap_frac"] = *p.min_gap_frac;
    else j["min_gap"] = p.min_gap;
  }
  if (p.kind == ChangePointPrior::Kind::custom) {
    j.erase("L");
    j["n"] = p.table_n;
    json t = json::array();
    for (const auto& [eta, pr] : p.table) t.push_back({{"eta", eta}, {"p", pr}});
    j["table"] = t;
  }
  return j;
}

inline Penalty parse_penalty(const json& j, const std::string& path) {
  std::string kind;
  double c = 0.0;
  if (j.is_string()) {
    kind = j.get<std::string>();
  } else {
    Reader r(j, path);
    r.allow({"kind", "c"});
    kind = r.need<std::string>("kind");
    c = r.get<double>("c", 0.0);
  }
  if (kind == "zero") return Penalty::zero();
  if (kind == "log_binomial") return Penalty::log_binomial();
  if (kind == "linear") return Penalty::linear(c);
  throw ConfigError("key '" + path + "' names an unknown penalty '" + kind + "'");
}

inline SearchConfig parse_search(const json& j, const std::string& path) {
  Reader r(j, path);
  r.allow({"L", "strategy", "min_gap", "penalty", "segment_columns"});
  SearchConfig s;
  s.L = r.get<int>("L", 1);
  s.min_gap = r.get<int>("min_gap", 1);
  const auto st = r.get<std::string>("strategy", "exhaustive");
  if (st == "exhaustive") s.strategy = SearchConfig::Strategy::exhaustive;
  else if (st == "greedy") s.strategy = SearchConfig::Strategy::greedy;
  else throw ConfigError("key '" + r.key("strategy") + "' must be exhaustive or greedy");
  if (r.has("penalty")) s.penalty = parse_penalty(r.raw("penalty"), r.key("penalty"));
  s.segment_columns = r.get<std::vector<int>>("segment_columns", {});
  return s;
}

inline SignalSpec parse_signal(const json& j, const std::string& path) {
  Reader r(j, path);
  r.allow({"kind", "nonzero_prob", "variance", "scale_by_delta", "p_s", "base_var", "jump_var", "cov"});
  SignalSpec s;
  const auto kind = r.get<std::string>("kind", "gaussian_sparse");
  if (kind == "gaussian_sparse") s.kind = SignalSpec::Kind::gaussian_sparse;
  else if (kind == "sparse_diff") s.kind = SignalSpec::Kind::sparse_diff;
  else if (kind == "correlated") s.kind = SignalSpec::Kind::correlated;
  else throw ConfigError("key '" + r.key("kind") + "' names an unknown signal generator '" + kind + "'");
  s.nonzero_prob = r.get<double>("nonzero_prob", s.nonzero_prob);
  if (!(s.nonzero_prob >= 0.0 && s.nonzero_prob <= 1.0)) throw ConfigError("key '" + r.key("nonzero_prob") + "' must lie in [0,1]");
  s.variance = r.get<double>("variance", s.variance);
  s.scale_by_delta = r.get<bool>("scale_by_delta", s.scale_by_delta);
  s.p_s = r.get<double>("p_s", s.p_s);
  s.base_var = r.get<double>("base_var", s.base_var);
  s.jump_var = r.get<double>("jump_var", s.jump_var);
  if (r.has("cov")) s.cov = matrix_from(r.raw("cov"), r.key("cov"));
  return s;
}

inline SigmaSpec parse_sigma(const json& j, const std::string& path) {
  Reader r(j, path);
  r.allow({"kind", "rho", "df"});
  SigmaSpec s;
  const auto kind = r.get<std::string>("kind", "identity");
  if (kind == "identity") s.kind = SigmaSpec::Kind::identity;
  else if (kind == "ar1") s.kind = SigmaSpec::Kind::ar1;
  else if (kind == "random_orthogonal_chisq") s.kind = SigmaSpec::Kind::random_orthogonal_chisq;
  else throw ConfigError("key '" + r.key("kind") + "' names an unknown covariance '" + kind + "'");
  s.rho = r.get<double>("rho", 0.0);
  s.df = r.get<double>("df", 10.0);
  return s;
}

/// Keys of a scenario config beyond the scenario itself, used by the CLI.
struct CliExtras {
  std::string data;  // CSV path; simulate when empty
  json posterior;     // posterior block (may be null)
  json fit;           // fit block (may be null)
};

inline ScenarioConfig parse_scenario(const json& j, CliExtras* extras = nullptr,
                                     const std::filesystem::path& base = {}) {
  Reader r(j, "");
  r.allow({"name", "n", "p", "delta", "deltas", "model", "loss", "signal", "sigma", "covariates_over_n", "noise", "eta",
           "segment_signals", "prior", "search", "selection", "l1", "trials", "seed", "theory", "theory_trials",
           "mc_samples", "threads", "data", "posterior", "fit", "$schema"});
  ScenarioConfig c;
  c.name = r.get<std::string>("name", c.name);
  c.p = r.get<int>("p", c.p);
  if (r.has("deltas")) c.deltas = r.need<std::vector<double>>("deltas");
  else if (r.has("delta")) c.deltas = {r.need<double>("delta")};
  if (r.has("n")) {
    if (r.has("deltas") || r.has("delta")) throw ConfigError("key 'n' conflicts with 'delta'/'deltas'");
    c.deltas = {static_cast<double>(r.need<int>("n")) / c.p};
  }
  c.model = parse_model(r, "model");
  if (r.has("loss")) c.loss = parse_loss(r.raw("loss"), "loss");
  else c.loss = c.model.kind == GlmModel::Kind::logistic ? Loss::logistic() : Loss::squared();
  if (r.has("signal")) c.signal = parse_signal(r.raw("signal"), "signal");
  if (r.has("sigma")) c.sigma = parse_sigma(r.raw("sigma"), "sigma");
  c.covariates_over_n = r.get<bool>("covariates_over_n", true);
  if (r.has("noise")) c.noise = parse_noise(r.raw("noise"), "noise");
  else c.noise = c.model.default_noise();
  c.eta_fractions = r.get<std::vector<double>>("eta", {});
  c.segment_signals = r.get<std::vector<int>>("segment_signals", {});
  if (r.has("prior")) c.prior = parse_prior(r.raw("prior"), "prior", base);
  else c.prior = ChangePointPrior::exact_uniform(static_cast<int>(c.eta_fractions.size()) + 1);
  c.search.L = c.prior.num_columns();
  if (r.has("search")) c.search = parse_search(r.raw("search"), "search");
  if (!r.has("search") || !r.sub("search").has("L")) c.search.L = c.prior.kind == ChangePointPrior::Kind::alternating ? 3 : c.prior.num_columns();
  if (r.has("selection")) {
    Reader s = r.sub("selection");
    s.allow({"kind", "folds", "k"});
    const auto kind = s.get<std::string>("kind", "cv");
    if (kind == "cv") c.selection.kind = SelectionSpec::Kind::cv;
    else if (kind == "penalized") c.selection.kind = SelectionSpec::Kind::penalized;
    else if (kind == "fixed") c.selection.kind = SelectionSpec::Kind::fixed;
    else throw ConfigError("key 'selection.kind' must be cv, penalized or fixed");
    c.selection.folds = s.get<int>("folds", 5);
    c.selection.fixed_k = s.get<int>("k", static_cast<int>(c.eta_fractions.size()));
    if (c.selection.folds < 2) throw ConfigError("key 'selection.folds' must be >= 2");
  }
  if (r.has("l1")) {
    if (r.raw("l1").is_string()) {
      if (r.need<std::string>("l1") != "sparse_rule") throw ConfigError("key 'l1' must be a number or \"sparse_rule\"");
      c.l1_sparse_rule = true;
    } else {
      c.l1 = r.need<double>("l1");
      if (c.l1 < 0) throw ConfigError("key 'l1' must be nonnegative");
    }
  }
  c.trials = r.get<int>("trials", c.trials);
  c.seed = r.get<std::uint64_t>("seed", c.seed);
  c.theory = r.get<bool>("theory", false);
  c.theory_trials = r.get<int>("theory_trials", c.theory_trials);
  c.mc_samples = r.get<int>("mc_samples", c.mc_samples);
  c.threads = r.get<int>("threads", 1);
  if (extras) {
    extras->data = r.get<std::string>("data", "");
    if (!extras->data.empty() && std::filesystem::path(extras->data).is_relative() && !base.empty())
      extras->data = (base / extras->data).string();
    extras->posterior = r.has("posterior") ? r.raw("posterior") : json();
    extras->fit = r.has("fit") ? r.raw("fit") : json();
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  return c;
}

// ------------------------------------------------------------ SE problems

inline json to_json(const SEProblem& p) {
  json j;
  j["delta"] = p.delta;
  j["gamma"] = to_json(p.gamma);
  j["loss"] = loss_json(p.loss);
  j["model"] = p.model.kind == GlmModel::Kind::linear ? "linear" : "logistic";
  j["noise"] = noise_json(p.noise);
  j["alphas"] = p.alphas;
  j["segment_labels"] = p.segment_labels;
  if (p.prior) j["prior"] = prior_json(*p.prior);
  j["n_eval"] = p.n_eval;
  if (p.weights) j["weights"] = to_json(p.weights->pi);
  if (!p.psi.empty()) j["psi"] = p.psi;
  j["mc_samples"] = p.mc_samples;
  j["seed"] = p.seed;
  j["damping"] = p.damping;
  j["max_iter"] = p.max_iter;
  j["tol"] = p.tol;
  const char* ex[] = {"automatic", "monte_carlo", "analytic"};
  j["expectation"] = ex[static_cast<int>(p.expectation)];
  return j;
}

inline SEProblem parse_se_problem(const json& j) {
  Reader r(j, "");
  r.allow({"delta", "gamma", "loss", "model", "noise", "alphas", "segment_labels", "prior", "n_eval", "weights", "psi",
           "mc_samples", "seed", "damping", "max_iter", "tol", "expectation", "$schema"});
  SEProblem p;
  p.delta = r.need<double>("delta");
  p.gamma = matrix_from(r.raw("gamma"), "gamma");
  p.model = parse_model(r, "model");
  if (r.has("loss")) p.loss = parse_loss(r.raw("loss"), "loss");
  else p.loss = p.model.kind == GlmModel::Kind::logistic ? Loss::logistic() : Loss::squared();
  if (r.has("noise")) p.noise = parse_noise(r.raw("noise"), "noise");
  else p.noise = p.model.default_noise();
  p.alphas = r.get<std::vector<double>>("alphas", {});
  p.segment_labels = r.get<std::vector<int>>("segment_labels", {});
  if (r.has("prior")) p.prior = parse_prior(r.raw("prior"), "prior");
  p.n_eval = r.get<int>("n_eval", p.n_eval);
  if (r.has("weights")) p.weights = WeightMatrix{matrix_from(r.raw("weights"), "weights")};
  p.psi = r.get<std::vector<int>>("psi", {});
  p.mc_samples = r.get<int>("mc_samples", p.mc_samples);
  p.seed = r.get<std::uint64_t>("seed", p.seed);
  p.damping = r.get<double>("damping", p.damping);
  p.max_iter = r.get<int>("max_iter", p.max_iter);
  p.tol = r.get<double>("tol", p.tol);
  const auto ex = r.get<std::string>("expectation", "automatic");
  if (ex == "automatic") p.expectation = SEProblem::Expectation::automatic;
  else if (ex == "monte_carlo") p.expectation = SEProblem::Expectation::monte_carlo;
  else if (ex == "analytic") p.expectation = SEProblem::Expectation::analytic;
  else throw ConfigError("key 'expectation' must be automatic, monte_carlo or analytic");
  if (!p.prior && !p.weights) throw ConfigError("missing key 'prior' (or 'weights')");
  try {
    p.validate();
  } catch (const ValidationError& e) {
    throw ConfigError(std::string("invalid SE problem: ") + e.what());
  }
  return p;
}

inline json to_json(const SEParams& s) {
  json j;
  j["lambda"] = to_json(s.lambda);
  j["kappa"] = to_json(s.kappa);
  j["b"] = to_json(s.b);
  j["residuals"] = {{"b", to_json(s.b_residual)},
                    {"fixed_point", to_json(s.fp_residual)},
                    {"kappa", to_json(s.kappa_residual)},
                    {"stein", to_json(s.stein_residual)},
                    {"stein_stderr", to_json(s.stein_stderr)},
                    {"kappa_stderr", to_json(s.kappa_stderr)}};
  j["iterations"] = s.iterations;
  return j;
}

inline SEParams parse_se_params(const json& j) {
  Reader r(j, "");
  r.allow({"lambda", "kappa", "b", "residuals", "iterations"});
  SEParams s;
  s.lambda = matrix_from(r.raw("lambda"), "lambda");
  s.kappa = matrix_from(r.raw("kappa"), "kappa");
  const auto b = r.need<std::vector<double>>("b");
  s.b = Eigen::Map<const VectorXd>(b.data(), static_cast<Eigen::Index>(b.size()));
  s.iterations = r.get<std::vector<int>>("iterations", {});
  return s;
}

// ------------------------------------------------------------ results

inline json to_json(const FitResult& f) {
  json cols = json::array();
  for (const auto& c : f.columns)
    cols.push_back({{"iterations", c.iterations}, {"grad_norm", c.grad_norm}, {"objective", c.objective},
                    {"converged", c.converged}});
  return {{"b_hat", to_json(f.b_hat)}, {"diagnostics", cols}};
}

inline json to_json(const SegmentationResult& s) {
  json cv = json::array();
  for (const auto& row : s.cv_table) cv.push_back({{"L_hat", row.L_hat}, {"error", row.error}, {"eta_hat", row.eta_hat}});
  json j = {{"eta_hat", s.eta_hat.eta()}, {"L_hat", s.L_hat()}, {"objective", s.objective}, {"cv_table", cv}};
  if (!s.path.empty()) j["path"] = s.path;
  return j;
}

inline json to_json(const PosteriorTable& t) {
  json e = json::array();
  for (const auto& x : t.entries)
    e.push_back({{"eta", x.eta}, {"log_likelihood", x.log_likelihood}, {"log_prior", x.log_prior},
                 {"probability", x.probability}});
  json m = json::array();
  for (const auto& [loc, pr] : t.location_marginal()) m.push_back({{"location", loc}, {"probability", pr}});
  return {{"n", t.n}, {"log_normalizer", t.log_normalizer}, {"ridged", t.ridged}, {"entries", e}, {"marginal", m}};
}

inline std::string posterior_csv(const PosteriorTable& t) {
  std::string s = "location,probability\n";
  for (const auto& [loc, pr] : t.location_marginal()) s += std::to_string(loc) + "," + fmt17(pr) + "\n";
  return s;
}

inline json opt_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
inline json num_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json to_json(const Summary& s) {
  return {{"mean", num_or_null(s.mean)}, {"median", num_or_null(s.median)}, {"p25", num_or_null(s.p25)},
          {"p75", num_or_null(s.p75)}, {"count", s.count}};
}

inline json to_json(const RunReport& r) {
  json trials = json::array();
  for (const auto& t : r.trials) {
    json j = {{"delta", t.delta}, {"trial", t.trial}, {"eta_hat", t.eta_hat},
              {"hausdorff_frac", opt_number(t.hausdorff_frac)}, {"size", t.size}, {"runtime_s", t.runtime_s}};
    if (!t.error.empty()) j["error"] = t.error;
    trials.push_back(j);
  }
  json aggs = json::array();
  for (const auto& a : r.aggregates)
    aggs.push_back({{"delta", a.delta},
                    {"hausdorff_frac", to_json(a.hausdorff_frac)},
                    {"size", to_json(a.size)},
                    {"runtime_s", to_json(a.runtime_s)},
                    {"failures", a.failures},
                    {"theory_hausdorff_frac", opt_number(a.theory_hausdorff_frac)},
                    {"theory_size", opt_number(a.theory_size)}});
  char hash[19];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(r.config_hash));
  return {{"name", r.name},
          {"provenance", {{"config_hash", hash}, {"seed", r.seed}, {"version", r.version}}},
          {"trials", trials},
          {"aggregates", aggs}};
}

/// Rows (delta, mean, p25, p75, metric) for plotting.
inline std::string plot_csv(const RunReport& r) {
  std::string s = "delta,mean,p25,p75,metric\n";
  auto row = [&](double d, double m, double a, double b, const char* metric) {
    auto f = [](double v) { return std::isfinite(v) ? fmt17(v) : std::string(); };
    s += f(d) + "," + f(m) + "," + f(a) + "," + f(b) + "," + metric + "\n";
  };
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& a : r.aggregates) {
    row(a.delta, a.hausdorff_frac.mean, a.hausdorff_frac.p25, a.hausdorff_frac.p75, "hausdorff_frac");
    row(a.delta, a.size.mean, a.size.p25, a.size.p75, "size");
    if (a.theory_hausdorff_frac) row(a.delta, *a.theory_hausdorff_frac, nan, nan, "theory_hausdorff_frac");
    if (a.theory_size) row(a.delta, *a.theory_size, nan, nan, "theory_size");
  }
  return s;
}

/// Hash of the canonical (sorted-key) serialization of a config.
inline std::uint64_t config_hash(const json& j) { return fnv1a(j.dump()); }

}  // namespace werm::io
