// Synthetic scenarios: data generation, experiment orchestration and metrics.
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/random/chi_squared_distribution.hpp>

#include "werm/core.hpp"
#include "werm/errors.hpp"
#include "werm/inference.hpp"
#include "werm/losses.hpp"
#include "werm/rng.hpp"
#include "werm/segmentation.hpp"
#include "werm/solver.hpp"
#include "werm/state_evolution.hpp"
#include "werm/weights.hpp"

namespace werm {

struct SignalSpec {
  enum class Kind { gaussian_sparse, sparse_diff, correlated };
  Kind kind = Kind::gaussian_sparse;
  // gaussian_sparse: entries ~ nonzero_prob N(0, variance) + (1 - nonzero_prob) delta_0
  double nonzero_prob = 1.0;
  double variance = 1.0;
  bool scale_by_delta = true;  // multiply variances by delta = n / p
  // sparse_diff: beta^(1) ~ N(0, base_var); each later entry jumps with prob p_s
  double p_s = 0.3;
  double base_var = 8.0;
  double jump_var = 400.0;  // times delta when scale_by_delta
  // correlated: rows (beta_j^(1..d)) ~ N(0, variance * cov)
  MatrixXd cov;
};

struct SigmaSpec {
  enum class Kind { identity, ar1, random_orthogonal_chisq };
  Kind kind = Kind::identity;
  double rho = 0.0;
  double df = 10.0;
};

struct SelectionSpec {
  enum class Kind { cv, penalized, fixed };
  Kind kind = Kind::cv;
  int folds = 5;
  int fixed_k = 0;
};

struct ScenarioConfig {
  std::string name = "scenario";
  int p = 20;
  std::vector<double> deltas = {10.0};
  GlmModel model = GlmModel::linear();
  Loss loss = Loss::squared();
  SignalSpec signal;
  SigmaSpec sigma;
  bool covariates_over_n = true;  // x_i ~ N(0, Sigma / n) when true, N(0, Sigma) otherwise
  NoiseSpec noise = NoiseSpec::gaussian(1.0);
  std::vector<double> eta_fractions;  // true change points as fractions of n
  std::vector<int> segment_signals;   // true signal per segment; default 1, 2, ...
  ChangePointPrior prior = ChangePointPrior::exact_uniform(1);
  SearchConfig search;
  SelectionSpec selection;
  double l1 = 0.0;
  bool l1_sparse_rule = false;  // l1 = 10 n sqrt(2 log(p) / n)
  int trials = 2;
  std::uint64_t seed = 0;
  bool theory = false;
  int theory_trials = 20;
  int mc_samples = 100000;
  int threads = 1;

  int n_for(double delta) const { return static_cast<int>(std::llround(delta * p)); }
  int num_signals() const {
    if (!segment_signals.empty()) return *std::max_element(segment_signals.begin(), segment_signals.end());
    return static_cast<int>(eta_fractions.size()) + 1;
  }
  int signal_of_segment(int s) const {
    return segment_signals.empty() ? s + 1 : segment_signals[static_cast<std::size_t>(s)];
  }

  void validate() const {
    if (p < 1) throw ConfigError("p: must be >= 1");
    if (deltas.empty()) throw ConfigError("deltas: must be non-empty");
    for (double d : deltas)
      if (!(d > 0.0)) throw ConfigError("deltas: entries must be positive");
    for (std::size_t k = 0; k < eta_fractions.size(); ++k) {
      if (!(eta_fractions[k] > 0.0 && eta_fractions[k] < 1.0)) throw ConfigError("eta: fractions must lie in (0,1)");
      if (k > 0 && !(eta_fractions[k] > eta_fractions[k - 1])) throw ConfigError("eta: fractions must increase");
    }
    if (!segment_signals.empty() && segment_signals.size() != eta_fractions.size() + 1)
      throw ConfigError("segment_signals: need one entry per segment");
    if (signal.variance < 0.0 || signal.base_var < 0.0 || signal.jump_var < 0.0)
      throw ConfigError("signal: variances must be nonnegative");
    if (signal.kind == SignalSpec::Kind::correlated &&
        (signal.cov.rows() != num_signals() || signal.cov.cols() != num_signals()))
      throw ConfigError("signal.cov: must be d x d with d the number of true signals");
    if (trials < 1) throw ConfigError("trials: must be >= 1");
    if (search.L < 1) throw ConfigError("search.L: must be >= 1");
    if (sigma.kind == SigmaSpec::Kind::ar1 && !(std::abs(sigma.rho) < 1.0)) throw ConfigError("sigma.rho: |rho| < 1");
  }
};

inline MatrixXd make_sigma(const SigmaSpec& s, int p, Stream& rng) {
  switch (s.kind) {
    case SigmaSpec::Kind::identity:
      return MatrixXd::Identity(p, p);
    case SigmaSpec::Kind::ar1: {
      MatrixXd m(p, p);
      for (int i = 0; i < p; ++i)
        for (int j = 0; j < p; ++j) m(i, j) = std::pow(s.rho, std::abs(i - j));
      return m;
    }
    case SigmaSpec::Kind::random_orthogonal_chisq: {
      MatrixXd g(p, p);
      for (int i = 0; i < p; ++i)
        for (int j = 0; j < p; ++j) g(i, j) = rng.normal();
      Eigen::HouseholderQR<MatrixXd> qr(g);
      MatrixXd U = qr.householderQ();
      const VectorXd rd = qr.matrixQR().diagonal();
      for (int j = 0; j < p; ++j)
        if (rd(j) < 0) U.col(j) *= -1.0;
      boost::random::chi_squared_distribution<double> chi(s.df);
      VectorXd ev(p);
      for (int j = 0; j < p; ++j) ev(j) = chi(rng.engine());
      const MatrixXd D = U.transpose() * ev.asDiagonal() * U;
      const VectorXd dg = D.diagonal().cwiseSqrt();
      return (D.array() / (dg * dg.transpose()).array()).matrix();
    }
  }
  return MatrixXd::Identity(p, p);
}

inline MatrixXd make_signals(const SignalSpec& s, int p, int d, double delta, Stream& rng) {
  const double scale = s.scale_by_delta ? delta : 1.0;
  MatrixXd B(p, d);
  switch (s.kind) {
    case SignalSpec::Kind::gaussian_sparse:
      for (int l = 0; l < d; ++l)
        for (int j = 0; j < p; ++j)
          B(j, l) = rng.uniform() < s.nonzero_prob ? std::sqrt(s.variance * scale) * rng.normal() : 0.0;
      break;
    case SignalSpec::Kind::sparse_diff: {
      const double jump = s.jump_var * scale;
      const double nu = std::sqrt(s.base_var / (s.base_var + jump));
      for (int j = 0; j < p; ++j) B(j, 0) = std::sqrt(s.base_var) * rng.normal();
      for (int l = 1; l < d; ++l)
        for (int j = 0; j < p; ++j)
          B(j, l) = rng.uniform() < s.p_s ? nu * (B(j, l - 1) + std::sqrt(jump) * rng.normal()) : B(j, l - 1);
      break;
    }
    case SignalSpec::Kind::correlated: {
      const MatrixXd root = detail::psd_sqrt(s.cov * (s.variance * scale));
      VectorXd g(d);
      for (int j = 0; j < p; ++j) {
        for (int l = 0; l < d; ++l) g(l) = rng.normal();
        B.row(j) = (root * g).transpose();
      }
      break;
    }
  }
  return B;
}

/// X with i.i.d. rows N(0, Sigma) (optionally divided by n).
inline MatrixXd make_covariates(const SigmaSpec& spec, const MatrixXd& sigma, int n, bool over_n, Stream& rng) {
  const int p = static_cast<int>(sigma.rows());
  MatrixXd X(n, p);
  for (int j = 0; j < p; ++j)
    for (int i = 0; i < n; ++i) X(i, j) = rng.normal();
  if (spec.kind == SigmaSpec::Kind::ar1) {
    const double r = spec.rho, c = std::sqrt(1.0 - r * r);
    for (int j = 1; j < p; ++j) X.col(j) = r * X.col(j - 1) + c * X.col(j);
  } else if (spec.kind != SigmaSpec::Kind::identity) {
    Eigen::LLT<MatrixXd> llt(sigma);
    X = X * MatrixXd(llt.matrixL()).transpose();
  }
  if (over_n) X /= std::sqrt(static_cast<double>(n));
  return X;
}

/// Dataset for trial `trial` at sampling ratio `delta`; deterministic in (seed, delta, trial).
inline Dataset simulate(const ScenarioConfig& cfg, double delta, int trial) {
  cfg.validate();
  const int n = cfg.n_for(delta), p = cfg.p, d = cfg.num_signals();
  if (n < 2) throw ConfigError("simulate: n = delta * p must be >= 2");
  const auto cp = changepoints_from_fractions(cfg.eta_fractions, n);
  const auto psi = config_from_changepoints(cp);
  const std::uint64_t key = static_cast<std::uint64_t>(std::llround(delta * 1e6));
  const std::uint64_t t = static_cast<std::uint64_t>(trial);
  Stream rs(cfg.seed ^ key, "sigma", t), rb(cfg.seed ^ key, "signals", t), rx(cfg.seed ^ key, "covariates", t),
      re(cfg.seed ^ key, "noise", t);
  const MatrixXd sigma = make_sigma(cfg.sigma, p, rs);
  const MatrixXd B = make_signals(cfg.signal, p, d, delta, rb);
  const MatrixXd X = make_covariates(cfg.sigma, sigma, n, cfg.covariates_over_n, rx);
  VectorXd y(n);
  for (int i = 1; i <= n; ++i) {
    const int sg = cfg.signal_of_segment(psi(i) - 1) - 1;
    y(i - 1) = cfg.model.q(X.row(i - 1).dot(B.col(sg)), cfg.noise.sample(re));
  }
  Truth tr;
  tr.eta = cp.eta();
  tr.psi = psi.psi();
  tr.b = B;
  if (cfg.model.kind == GlmModel::Kind::linear) tr.noise_sd = std::sqrt(cfg.noise.variance());
  tr.gamma = B.transpose() * sigma * B / (cfg.covariates_over_n ? static_cast<double>(n) : 1.0);
  return Dataset(X, y, tr);
}

/// Full estimation pipeline of one scenario on one dataset.
struct Estimate {
  SegmentationResult seg;
  FitResult fit;
  WeightMatrix weights;
};

inline SearchConfig effective_search(const ScenarioConfig& cfg, int n) {
  SearchConfig s = cfg.search;
  s.min_gap = std::max(s.min_gap, cfg.prior.gap_for(n));
  return s;
}

inline FitOptions effective_fit(const ScenarioConfig& cfg, int n) {
  FitOptions f;
  f.l1 = cfg.l1_sparse_rule ? 10.0 * n * std::sqrt(2.0 * std::log(static_cast<double>(cfg.p)) / n) : cfg.l1;
  f.threads = cfg.threads;
  return f;
}

inline Estimate estimate(const ScenarioConfig& cfg, const Dataset& data) {
  const int n = data.n();
  Estimate e;
  const SearchConfig scfg = effective_search(cfg, n);
  const FitOptions fopt = effective_fit(cfg, n);
  switch (cfg.selection.kind) {
    case SelectionSpec::Kind::cv: {
      CvOptions co;
      co.folds = cfg.selection.folds;
      co.seed = cfg.seed;
      co.fit = fopt;
      e.seg = select_order_cv(data, cfg.loss, cfg.model, cfg.prior, scfg, co);
      break;
    }
    case SelectionSpec::Kind::penalized: {
      e.weights = marginal_weights(cfg.prior, n);
      e.fit = fit_weighted_erm(data, cfg.loss, e.weights, fopt);
      SearchConfig c = scfg;
      c.L = std::min(scfg.L, e.weights.L());
      e.seg = search_penalized(weighted_loss_matrix(e.fit, data, cfg.loss), c);
      break;
    }
    case SelectionSpec::Kind::fixed: {
      e.weights = marginal_weights(cfg.prior, n);
      e.fit = fit_weighted_erm(data, cfg.loss, e.weights, fopt);
      SearchConfig c = scfg;
      const int k = cfg.selection.fixed_k;
      c.segment_columns = cfg.prior.kind == ChangePointPrior::Kind::alternating ? cfg.prior.segment_columns(k + 1)
                                                                                : std::vector<int>{};
      e.seg = search(weighted_loss_matrix(e.fit, data, cfg.loss), c, k);
      break;
    }
  }
  return e;
}

struct TrialRecord {
  double delta = 0.0;
  int trial = 0;
  std::vector<int> eta_hat;
  std::optional<double> hausdorff_frac;
  int size = 0;  // number of estimated change points
  double runtime_s = 0.0;
  std::string error;  // non-empty when the trial failed
};

struct Summary {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double median = std::numeric_limits<double>::quiet_NaN();
  double p25 = std::numeric_limits<double>::quiet_NaN();
  double p75 = std::numeric_limits<double>::quiet_NaN();
  int count = 0;
};

/// Linear-interpolated quantile of stored values.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(v.size() - 1, lo + 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline Summary summarize(const std::vector<double>& v) {
  Summary s;
  s.count = static_cast<int>(v.size());
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  s.median = quantile(v, 0.5);
  s.p25 = quantile(v, 0.25);
  s.p75 = quantile(v, 0.75);
  return s;
}

struct DeltaAggregate {
  double delta = 0.0;
  Summary hausdorff_frac;
  Summary size;
  Summary runtime_s;
  int failures = 0;
  std::optional<double> theory_hausdorff_frac;
  std::optional<double> theory_size;
};

struct RunReport {
  std::string name;
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::string version;
  std::vector<TrialRecord> trials;
  std::vector<DeltaAggregate> aggregates;
};

inline constexpr const char* kVersion = "0.1.0";

/// Theory prediction of d_H / n and size for the fixed-weight estimators.
inline PerformancePrediction theory_prediction(const ScenarioConfig& cfg, double delta, const MatrixXd& gamma) {
  if (cfg.selection.kind == SelectionSpec::Kind::cv)
    throw ConfigError("theory: prediction needs a fixed or penalized selection rule");
  const int n = cfg.n_for(delta);
  const WeightMatrix w = marginal_weights(cfg.prior, n);
  SEProblem pr;
  pr.delta = delta;
  pr.gamma = gamma;
  pr.loss = cfg.loss;
  pr.model = cfg.model;
  pr.noise = cfg.noise;
  pr.alphas = cfg.eta_fractions;
  pr.segment_labels = cfg.segment_signals;
  pr.weights = w;
  pr.mc_samples = cfg.mc_samples;
  pr.seed = cfg.seed;
  const SEParams par = solve_se(pr);
  const auto psi = config_from_changepoints(changepoints_from_fractions(cfg.eta_fractions, n));
  SearchConfig scfg = effective_search(cfg, n);
  scfg.L = std::min(scfg.L, w.L());
  const auto sel = cfg.selection;
  const auto prior = cfg.prior;
  auto est = [scfg, sel, prior](const MatrixXd& lossmat) {
    if (sel.kind == SelectionSpec::Kind::penalized) return search_penalized(lossmat, scfg).eta_hat.eta();
    SearchConfig c = scfg;
    c.segment_columns = prior.kind == ChangePointPrior::Kind::alternating ? prior.segment_columns(sel.fixed_k + 1)
                                                                          : std::vector<int>{};
    return search(lossmat, c, sel.fixed_k).eta_hat.eta();
  };
  return predict_performance(pr, par, w, psi, est, cfg.theory_trials, cfg.seed ^ 0x7468656f7279ULL);
}

inline RunReport run_scenario(const ScenarioConfig& cfg, std::uint64_t config_hash = 0) {
  cfg.validate();
  RunReport rep;
  rep.name = cfg.name;
  rep.seed = cfg.seed;
  rep.config_hash = config_hash;
  rep.version = kVersion;
  for (double delta : cfg.deltas) {
    DeltaAggregate agg;
    agg.delta = delta;
    std::vector<double> hs, sz, rt;
    MatrixXd gamma_sum;
    int gamma_count = 0;
    for (int t = 0; t < cfg.trials; ++t) {
      TrialRecord rec;
      rec.delta = delta;
      rec.trial = t;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        const Dataset data = simulate(cfg, delta, t);
        if (gamma_count == 0) gamma_sum = data.meta->gamma;
        else gamma_sum += data.meta->gamma;
        ++gamma_count;
        const Estimate e = estimate(cfg, data);
        rec.eta_hat = e.seg.eta_hat.eta();
        rec.size = static_cast<int>(rec.eta_hat.size());
        const auto h = hausdorff(rec.eta_hat, data.meta->eta);
        if (h) rec.hausdorff_frac = *h / data.n();
      } catch (const Error& ex) {
        rec.error = ex.what();
        ++agg.failures;
      }
      rec.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (rec.error.empty()) {
        if (rec.hausdorff_frac) hs.push_back(*rec.hausdorff_frac);
        sz.push_back(rec.size);
        rt.push_back(rec.runtime_s);
      }
      rep.trials.push_back(std::move(rec));
    }
    agg.hausdorff_frac = summarize(hs);
    agg.size = summarize(sz);
    agg.runtime_s = summarize(rt);
    if (cfg.theory && gamma_count > 0) {
      try {
        const auto pred = theory_prediction(cfg, delta, gamma_sum / gamma_count);
        agg.theory_hausdorff_frac = pred.mean_hausdorff_frac;
        agg.theory_size = pred.mean_size;
      } catch (const Error&) {
        // reported as missing
      }
    }
    rep.aggregates.push_back(agg);
  }
  return rep;
}

}  // namespace werm
