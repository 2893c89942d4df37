// Change point search over a loss matrix (entry (i, l) = M(theta_i^(l), y_i)):
// exact dynamic programming, greedy insertion, penalties and cross-validated
// order selection.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "werm/core.hpp"
#include "werm/errors.hpp"
#include "werm/losses.hpp"
#include "werm/solver.hpp"
#include "werm/weights.hpp"

namespace werm {

/// Penalty as a function of the number k of change points.
struct Penalty {
  enum class Kind { zero, log_binomial, linear };
  Kind kind = Kind::zero;
  double c = 0.0;

  static Penalty zero() { return {Kind::zero, 0.0}; }
  /// log C(n-1, k)
  static Penalty log_binomial() { return {Kind::log_binomial, 0.0}; }
  static Penalty linear(double c) { return {Kind::linear, c}; }

  double operator()(int k, int n) const {
    switch (kind) {
      case Kind::zero:
        return 0.0;
      case Kind::log_binomial:
        return log_binom(n - 1, k);
      case Kind::linear:
        return c * k;
    }
    return 0.0;
  }
};

struct SearchConfig {
  enum class Strategy { exhaustive, greedy };
  int L = 1;  // maximum number of segments
  Penalty penalty;
  int min_gap = 1;  // minimum segment length
  Strategy strategy = Strategy::exhaustive;
  // Column (1-based) used by each segment; empty means segment s uses column s.
  std::vector<int> segment_columns;
};

struct CvRow {
  int L_hat = 0;
  double error = 0.0;
  std::vector<int> eta_hat;  // full-data estimate for this order
};

struct SegmentationResult {
  ChangePoints eta_hat;
  SignalConfig psi_hat;
  double objective = 0.0;
  std::vector<double> path;  // greedy: unpenalized objective after 0..k insertions
  std::vector<CvRow> cv_table;

  int L_hat() const noexcept { return eta_hat.num_segments(); }
};

namespace detail {

inline MatrixXd prefix_sums(const MatrixXd& lossmat) {
  MatrixXd pre = MatrixXd::Zero(lossmat.rows() + 1, lossmat.cols());
  for (Eigen::Index i = 0; i < lossmat.rows(); ++i) pre.row(i + 1) = pre.row(i) + lossmat.row(i);
  return pre;
}

// Cost of columns `c` (0-based) on samples (a, b], 0-based prefix indices.
inline double block(const MatrixXd& pre, int c, int a, int b) { return pre(b, c) - pre(a, c); }

inline std::vector<int> columns_for(const SearchConfig& cfg, int segments, int available) {
  std::vector<int> cols;
  if (!cfg.segment_columns.empty()) {
    if (static_cast<int>(cfg.segment_columns.size()) != segments)
      throw ConfigError("search: segment_columns length must equal k + 1");
    cols = cfg.segment_columns;
  } else {
    for (int s = 1; s <= segments; ++s) cols.push_back(s);
  }
  for (int c : cols)
    if (c < 1 || c > available) throw ConfigError("search: not enough loss matrix columns for k");
  return cols;
}

inline SegmentationResult finish(const MatrixXd& lossmat, std::vector<int> eta, const SearchConfig& cfg,
                                 const std::vector<int>& cols) {
  const int n = static_cast<int>(lossmat.rows());
  SegmentationResult r;
  r.eta_hat = ChangePoints(std::move(eta), n);
  r.psi_hat = config_from_changepoints(r.eta_hat);
  double s = 0.0;
  for (int i = 1; i <= n; ++i) s += lossmat(i - 1, cols[static_cast<std::size_t>(r.psi_hat(i) - 1)] - 1);
  r.objective = s + cfg.penalty(static_cast<int>(r.eta_hat.size()), n);
  return r;
}

inline void check_feasible(int n, int k, int g) {
  if (k < 0) throw ConfigError("search: k must be >= 0");
  if (static_cast<long long>(k + 1) * g > n)
    throw ConfigError("search: " + std::to_string(k) + " change points infeasible with min_gap " +
                      std::to_string(g) + " at n = " + std::to_string(n));
}

// Damped Newton on sum_i m(x_i' beta, y_i) + ridge |beta|^2 where
// `m(eta, y, d)` returns the value and fills d = {m', m''}.
template <class M>
VectorXd newton_refit(const MatrixXd& x, const VectorXd& y, double ridge, VectorXd beta, const M& m, int max_iter = 50) {
  const int p = static_cast<int>(x.cols());
  auto objective = [&](const VectorXd& b) {
    const VectorXd eta = x * b;
    double f = ridge * b.squaredNorm();
    double d[2];
    for (Eigen::Index i = 0; i < eta.size(); ++i) f += m(eta(i), y(i), d);
    return f;
  };
  double f = objective(beta);
  for (int it = 0; it < max_iter; ++it) {
    const VectorXd eta = x * beta;
    VectorXd g1(eta.size()), h1(eta.size());
    double d[2];
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      m(eta(i), y(i), d);
      g1(i) = d[0];
      h1(i) = d[1];
    }
    const VectorXd grad = x.transpose() * g1 + 2.0 * ridge * beta;
    MatrixXd h = weighted_gram(x, h1);
    h.diagonal().array() += 2.0 * ridge + 1e-10 * std::max(1.0, h.trace() / p);
    const VectorXd step = -h.ldlt().solve(grad);
    const double slope = grad.dot(step);
    if (!(slope < 0.0) || !std::isfinite(slope)) break;
    double t = 1.0, fc = f;
    VectorXd cand;
    bool ok = false;
    for (int ls = 0; ls < 40; ++ls) {
      cand = beta + t * step;
      fc = objective(cand);
      if (fc <= f + 1e-4 * t * slope) {
        ok = true;
        break;
      }
      t *= 0.5;
    }
    if (!ok) break;
    const double rel = (f - fc) / std::max(1.0, std::abs(f));
    beta = cand;
    f = fc;
    if (rel < 1e-12) break;
  }
  return beta;
}

/// Least absolute deviations through a smoothed objective with continuation.
inline VectorXd fit_lad(const MatrixXd& x, const VectorXd& y) {
  VectorXd beta = VectorXd::Zero(x.cols());
  const double scale = std::max(1e-12, y.cwiseAbs().mean());
  for (double eps = scale; eps >= scale * 1e-6; eps *= 0.1) {
    beta = newton_refit(x, y, 0.0, beta, [eps](double eta, double v, double* d) {
      const double r = eta - v, s = std::sqrt(r * r + eps * eps);
      d[0] = r / s;
      d[1] = eps * eps / (s * s * s);
      return s;
    });
  }
  return beta;
}

/// Ridge-penalized logistic regression, sum of losses + alpha |beta|^2.
inline VectorXd fit_ridge_logistic(const MatrixXd& x, const VectorXd& y, double alpha) {
  return newton_refit(x, y, alpha, VectorXd::Zero(x.cols()), [](double eta, double v, double* d) {
    const double s = sigmoid(eta);
    d[0] = s - v;
    d[1] = s * (1.0 - s);
    return log1pexp(eta) - v * eta;
  });
}

/// Held-out score of a segment refit: absolute error for additive models,
/// logistic loss for binary responses.
inline double heldout_loss(const GlmModel& model, double eta, double y) {
  if (model.kind == GlmModel::Kind::logistic) return log1pexp(eta) - y * eta;
  return std::abs(y - eta);
}

inline VectorXd refit_segment(const GlmModel& model, const MatrixXd& x, const VectorXd& y) {
  if (model.kind == GlmModel::Kind::logistic) return fit_ridge_logistic(x, y, 1.0);
  return fit_lad(x, y);
}

}  // namespace detail

/// Global minimizer over configurations with exactly k change points.
inline SegmentationResult search_exhaustive(const MatrixXd& lossmat, const SearchConfig& cfg, int k) {
  const int n = static_cast<int>(lossmat.rows());
  const int g = std::max(1, cfg.min_gap);
  detail::check_feasible(n, k, g);
  const auto cols = detail::columns_for(cfg, k + 1, static_cast<int>(lossmat.cols()));
  const MatrixXd pre = detail::prefix_sums(lossmat);
  const double inf = std::numeric_limits<double>::infinity();
  // cost(s, j): best cost of samples 1..j split into s+1 segments, last ending at j.
  MatrixXd cost = MatrixXd::Constant(k + 1, n + 1, inf);
  Eigen::MatrixXi arg = Eigen::MatrixXi::Constant(k + 1, n + 1, -1);
  for (int j = g; j <= n; ++j) cost(0, j) = detail::block(pre, cols[0] - 1, 0, j);
  for (int s = 1; s <= k; ++s) {
    const int c = cols[static_cast<std::size_t>(s)] - 1;
    for (int j = (s + 1) * g; j <= n; ++j) {
      double best = inf;
      int bt = -1;
      for (int t = s * g; t <= j - g; ++t) {
        const double v = cost(s - 1, t) + pre(j, c) - pre(t, c);
        if (v < best) {
          best = v;
          bt = t;
        }
      }
      cost(s, j) = best;
      arg(s, j) = bt;
    }
  }
  std::vector<int> eta(static_cast<std::size_t>(k));
  int j = n;
  for (int s = k; s >= 1; --s) {
    const int t = arg(s, j);
    eta[static_cast<std::size_t>(s - 1)] = t + 1;
    j = t;
  }
  return detail::finish(lossmat, std::move(eta), cfg, cols);
}

/// Insert change points one at a time, each time taking the best single split.
inline SegmentationResult search_greedy(const MatrixXd& lossmat, const SearchConfig& cfg, int k) {
  const int n = static_cast<int>(lossmat.rows());
  const int g = std::max(1, cfg.min_gap);
  detail::check_feasible(n, k, g);
  if (!cfg.segment_columns.empty()) throw ConfigError("greedy search requires consecutive segment labels");
  if (k + 1 > lossmat.cols()) throw ConfigError("search: not enough loss matrix columns for k");
  const MatrixXd pre = detail::prefix_sums(lossmat);
  std::vector<int> bounds = {0, n};  // segment s covers (bounds[s], bounds[s+1]]
  std::vector<double> path;
  auto total = [&](const std::vector<int>& b) {
    double s = 0.0;
    for (std::size_t q = 0; q + 1 < b.size(); ++q) s += detail::block(pre, static_cast<int>(q), b[q], b[q + 1]);
    return s;
  };
  path.push_back(total(bounds));
  for (int step = 0; step < k; ++step) {
    const int segs = static_cast<int>(bounds.size()) - 1;
    // same[q]: cost of segment q at its label; shifted[q]: at label q+1.
    std::vector<double> same(static_cast<std::size_t>(segs)), shifted(static_cast<std::size_t>(segs));
    for (int q = 0; q < segs; ++q) {
      same[static_cast<std::size_t>(q)] = detail::block(pre, q, bounds[q], bounds[q + 1]);
      shifted[static_cast<std::size_t>(q)] = detail::block(pre, q + 1, bounds[q], bounds[q + 1]);
    }
    std::vector<double> before(static_cast<std::size_t>(segs + 1), 0.0), after(static_cast<std::size_t>(segs + 1), 0.0);
    for (int q = 0; q < segs; ++q) before[q + 1] = before[q] + same[q];
    for (int q = segs - 1; q >= 0; --q) after[q] = after[q + 1] + shifted[q];
    double best = std::numeric_limits<double>::infinity();
    int best_pos = -1;
    for (int x = g; x <= n - g; ++x) {
      // x = number of samples left of the new change point; change point index x + 1.
      const auto it = std::upper_bound(bounds.begin(), bounds.end(), x);
      const int q = static_cast<int>(it - bounds.begin()) - 1;
      if (q < 0 || q >= segs) continue;
      const int a = bounds[q], b = bounds[q + 1];
      if (x - a < g || b - x < g) continue;
      const double v = before[q] + detail::block(pre, q, a, x) + detail::block(pre, q + 1, x, b) + after[q + 1];
      if (v < best) {
        best = v;
        best_pos = x;
      }
    }
    if (best_pos < 0) throw ConfigError("greedy search: no admissible split left");
    bounds.insert(std::upper_bound(bounds.begin(), bounds.end(), best_pos), best_pos);
    path.push_back(best);
  }
  std::vector<int> eta;
  for (std::size_t q = 1; q + 1 < bounds.size(); ++q) eta.push_back(bounds[q] + 1);
  std::vector<int> cols;
  for (int s = 1; s <= k + 1; ++s) cols.push_back(s);
  auto r = detail::finish(lossmat, std::move(eta), cfg, cols);
  r.path = std::move(path);
  return r;
}

inline SegmentationResult search(const MatrixXd& lossmat, const SearchConfig& cfg, int k) {
  return cfg.strategy == SearchConfig::Strategy::greedy ? search_greedy(lossmat, cfg, k)
                                                        : search_exhaustive(lossmat, cfg, k);
}

/// Penalized estimate over k = 0..L-1 (ties go to fewer change points).
inline SegmentationResult search_penalized(const MatrixXd& lossmat, const SearchConfig& cfg) {
  std::optional<SegmentationResult> best;
  const int n = static_cast<int>(lossmat.rows());
  for (int k = 0; k < cfg.L; ++k) {
    if (static_cast<long long>(k + 1) * std::max(1, cfg.min_gap) > n) break;
    SearchConfig c = cfg;
    if (!cfg.segment_columns.empty() && static_cast<int>(cfg.segment_columns.size()) != k + 1)
      c.segment_columns.clear();
    auto r = search(lossmat, c, k);
    if (!best || r.objective < best->objective) best = std::move(r);
  }
  if (!best) throw ConfigError("search: no feasible order");
  return *best;
}

/// Smallest k after which one more change point gains less than the last one did.
inline int elbow(const std::vector<double>& path) {
  if (path.size() < 3) return static_cast<int>(path.size()) - 1;
  for (std::size_t k = 1; k + 1 < path.size(); ++k) {
    const double gain_k = path[k - 1] - path[k];
    const double gain_next = path[k] - path[k + 1];
    if (gain_next < gain_k) return static_cast<int>(k);
  }
  return static_cast<int>(path.size()) - 1;
}

struct CvOptions {
  int folds = 5;
  std::uint64_t seed = 0;
  FitOptions fit;
};

/// 0-based fold of 0-based sample i.
inline int cv_fold(int i, int folds, std::uint64_t seed) {
  return static_cast<int>((static_cast<std::uint64_t>(i) + seed) % static_cast<std::uint64_t>(folds));
}

/// Chooses the number of segments in 1..cfg.L by held-out error of per-segment
/// refits and returns the full-data segmentation at that order.
inline SegmentationResult select_order_cv(const Dataset& data, const Loss& loss, const GlmModel& model,
                                          const ChangePointPrior& prior_family, const SearchConfig& cfg,
                                          const CvOptions& opt = {}) {
  const int n = data.n();
  const int folds = opt.folds;
  if (folds < 2) throw ConfigError("cv: folds must be >= 2");
  if (folds > n) throw ConfigError("cv: more folds than samples");
  const int g = std::max(1, cfg.min_gap);
  const int g_train = std::max(1, static_cast<int>(std::floor(static_cast<double>(g) * (folds - 1) / folds)));

  std::vector<std::vector<int>> train(static_cast<std::size_t>(folds)), test(static_cast<std::size_t>(folds));
  for (int i = 0; i < n; ++i)
    for (int f = 0; f < folds; ++f) (cv_fold(i, folds, opt.seed) == f ? test : train)[static_cast<std::size_t>(f)].push_back(i);

  std::vector<CvRow> table;
  std::optional<SegmentationResult> best;
  double best_err = std::numeric_limits<double>::infinity();
  for (int Lh = 1; Lh <= cfg.L; ++Lh) {
    const ChangePointPrior prior = prior_family.with_segments(Lh);
    WeightMatrix w;
    try {
      w = marginal_weights(prior, n);
    } catch (const ConfigError&) {
      break;
    }
    const int k = Lh - 1;
    SearchConfig scfg = cfg;
    scfg.L = Lh;
    scfg.segment_columns = prior.segment_columns(Lh);
    if (prior.kind != ChangePointPrior::Kind::alternating) scfg.segment_columns.clear();
    double err = 0.0;
    long long count = 0;
    bool feasible = true;
    for (int f = 0; f < folds && feasible; ++f) {
      const auto& tr = train[static_cast<std::size_t>(f)];
      const int nt = static_cast<int>(tr.size());
      if (static_cast<long long>(Lh) * g_train > nt) {
        feasible = false;
        break;
      }
      Dataset dtr = data.subset(tr);
      WeightMatrix wt;
      wt.pi.resize(nt, w.L());
      for (int r = 0; r < nt; ++r) wt.pi.row(r) = w.pi.row(tr[static_cast<std::size_t>(r)]);
      FitResult fit;
      try {
        fit = fit_weighted_erm(dtr, loss, wt, opt.fit);
      } catch (const NumericError& e) {
        throw ConfigError(std::string("cv: fold too small to fit (") + e.what() + ")");
      }
      SearchConfig tcfg = scfg;
      tcfg.min_gap = g_train;
      const auto seg = search(weighted_loss_matrix(fit, dtr, loss), tcfg, k);
      // Change points in original indices: first original index of each new segment.
      std::vector<int> eta_orig;
      for (int e : seg.eta_hat.eta()) eta_orig.push_back(tr[static_cast<std::size_t>(e - 1)] + 1);
      // Refit each estimated segment on its training rows, score held-out rows.
      std::vector<int> bounds = {0};
      for (int e : eta_orig) bounds.push_back(e - 1);
      bounds.push_back(n);
      const auto& te = test[static_cast<std::size_t>(f)];
      for (std::size_t s = 0; s + 1 < bounds.size(); ++s) {
        std::vector<int> rows, held;
        for (int i : tr)
          if (i >= bounds[s] && i < bounds[s + 1]) rows.push_back(i);
        for (int i : te)
          if (i >= bounds[s] && i < bounds[s + 1]) held.push_back(i);
        if (held.empty()) continue;
        VectorXd beta = VectorXd::Zero(data.p());
        if (!rows.empty()) {
          const Dataset seg_data = data.subset(rows);
          beta = detail::refit_segment(model, seg_data.x, seg_data.y);
        }
        for (int i : held) {
          err += detail::heldout_loss(model, data.x.row(i).dot(beta), data.y(i));
          ++count;
        }
      }
    }
    if (!feasible) break;
    err /= static_cast<double>(count);

    FitResult full = fit_weighted_erm(data, loss, w, opt.fit);
    auto seg = search(weighted_loss_matrix(full, data, loss), scfg, k);
    table.push_back({Lh, err, seg.eta_hat.eta()});
    if (err < best_err) {
      best_err = err;
      best = std::move(seg);
    }
  }
  if (!best) throw ConfigError("cv: no candidate order could be evaluated");
  best->cv_table = std::move(table);
  return *best;
}

}  // namespace werm
