// Weighted empirical risk minimization, one convex fit per weight column:
//   beta^(l) = argmin_beta  sum_i pi_i^(l) M(x_i' beta, y_i) + l1 * |beta|_1.
#pragma once

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "werm/core.hpp"
#include "werm/errors.hpp"
#include "werm/losses.hpp"
#include "werm/weights.hpp"

namespace werm {

struct FitOptions {
  double l1 = 0.0;
  int max_iter = 200;        // Newton iterations (smooth case)
  int max_iter_prox = 20000; // proximal gradient iterations (l1 > 0)
  double tol = 1e-8;         // relative to max(1, |X'y|)
  int threads = 1;
};

struct ColumnDiagnostics {
  int iterations = 0;
  double grad_norm = 0.0;  // gradient norm, or prox-gradient residual when l1 > 0
  double objective = 0.0;
  bool converged = false;
};

struct FitResult {
  MatrixXd b_hat;      // p x L
  MatrixXd theta_hat;  // n x L
  std::vector<ColumnDiagnostics> columns;

  int L() const noexcept { return static_cast<int>(b_hat.cols()); }
};

/// Objective of one column, without the l1 term.
inline double weighted_objective(const MatrixXd& x, const VectorXd& y, const VectorXd& w,
                                 const Loss& loss, const VectorXd& beta) {
  const VectorXd eta = x * beta;
  double s = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i)
    if (w(i) != 0.0) s += w(i) * loss.value(eta(i), y(i));
  return s;
}

inline VectorXd weighted_gradient(const MatrixXd& x, const VectorXd& y, const VectorXd& w,
                                  const Loss& loss, const VectorXd& beta) {
  const VectorXd eta = x * beta;
  VectorXd g(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) g(i) = w(i) * loss.d1(eta(i), y(i));
  return x.transpose() * g;
}

namespace detail {

inline MatrixXd weighted_gram(const MatrixXd& x, const VectorXd& d) {
  MatrixXd xs = x.array().colwise() * d.array().max(0.0).sqrt();
  MatrixXd h = MatrixXd::Zero(x.cols(), x.cols());
  h.selfadjointView<Eigen::Lower>().rankUpdate(xs.transpose());
  return h.selfadjointView<Eigen::Lower>();
}

inline VectorXd weighted_least_squares(const MatrixXd& x, const VectorXd& y, const VectorXd& w) {
  const MatrixXd h = weighted_gram(x, w);
  const VectorXd rhs = x.transpose() * (w.array() * y.array()).matrix();
  Eigen::LLT<MatrixXd> llt(h);
  const double scale = std::max(1e-300, h.diagonal().maxCoeff());
  bool ok = llt.info() == Eigen::Success;
  if (ok) {
    const auto& lm = llt.matrixLLT();
    const double dmin = lm.diagonal().minCoeff();
    ok = dmin * dmin > 1e-13 * scale;
  }
  if (!ok)
    throw NumericError(
        "weighted least squares system is rank deficient; use l1 > 0 or more samples");
  return llt.solve(rhs);
}

inline double soft(double a, double t) { return a > t ? a - t : (a < -t ? a + t : 0.0); }

inline ColumnDiagnostics fit_newton(const MatrixXd& x, const VectorXd& y, const VectorXd& w,
                                    const Loss& loss, double gtol, int max_iter, VectorXd& beta) {
  ColumnDiagnostics d;
  const int p = static_cast<int>(x.cols());
  double f = weighted_objective(x, y, w, loss, beta);
  double best_f = f;
  VectorXd best = beta;
  std::vector<double> traj;
  const double blowup = 1e6 * std::sqrt(static_cast<double>(p));
  for (int it = 0; it < max_iter; ++it) {
    const VectorXd eta = x * beta;
    VectorXd g1(eta.size()), h1(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      g1(i) = w(i) * loss.d1(eta(i), y(i));
      h1(i) = w(i) * loss.d2(eta(i), y(i));
    }
    const VectorXd grad = x.transpose() * g1;
    d.grad_norm = grad.norm();
    d.iterations = it;
    traj.push_back(d.grad_norm);
    if (d.grad_norm <= gtol) {
      d.converged = true;
      d.objective = f;
      if (loss.kind == Loss::Kind::logistic && f <= 1e-8 * std::max(1e-300, w.sum()))
        throw ExistenceError("logistic estimate diverges (data likely separable)");
      return d;
    }
    MatrixXd h = weighted_gram(x, h1);
    const double ridge = 1e-12 * std::max(1.0, h.trace() / p);
    h.diagonal().array() += ridge;
    Eigen::LDLT<MatrixXd> ldlt(h);
    VectorXd step = -ldlt.solve(grad);
    double slope = grad.dot(step);
    if (!(ldlt.info() == Eigen::Success) || !std::isfinite(slope) || slope >= 0.0) {
      step = -grad;
      slope = -grad.squaredNorm();
    }
    double t = 1.0;
    VectorXd cand;
    double fc = f;
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      cand = beta + t * step;
      fc = weighted_objective(x, y, w, loss, cand);
      if (std::isfinite(fc) && fc <= f + 1e-4 * t * slope) {
        accepted = true;
        break;
      }
      // objective change below round-off: fall back to the gradient norm
      if (std::isfinite(fc) && std::abs(fc - f) <= 1e-12 * std::max(1.0, std::abs(f)) &&
          weighted_gradient(x, y, w, loss, cand).norm() < d.grad_norm) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      // No representable decrease left: treat as converged at machine precision.
      d.objective = f;
      d.converged = std::abs(slope) <= 1e-20 * std::max(1.0, std::abs(f)) || d.grad_norm <= 1e3 * gtol;
      if (!d.converged)
        throw ConvergenceError("Newton line search failed", std::vector<double>(best.data(), best.data() + p), traj);
      return d;
    }
    beta = cand;
    f = fc;
    if (f < best_f) {
      best_f = f;
      best = beta;
    }
    if (loss.kind == Loss::Kind::logistic && beta.norm() > blowup)
      throw ExistenceError("logistic estimate diverges (data likely separable)");
  }
  d.objective = f;
  d.iterations = max_iter;
  throw ConvergenceError("Newton did not converge in " + std::to_string(max_iter) + " iterations",
                         std::vector<double>(best.data(), best.data() + p), traj);
}

inline ColumnDiagnostics fit_prox_gradient(const MatrixXd& x, const VectorXd& y, const VectorXd& w,
                                           const Loss& loss, double l1, double tol, int max_iter,
                                           VectorXd& beta) {
  ColumnDiagnostics d;
  const int p = static_cast<int>(x.cols());
  // Lipschitz constant of the smooth part via power iteration on X' W X.
  VectorXd v = VectorXd::Ones(p) / std::sqrt(static_cast<double>(p));
  double lip = 1.0;
  const VectorXd cw = w * loss.curvature_bound();
  for (int k = 0; k < 50; ++k) {
    VectorXd u = x.transpose() * (cw.array() * (x * v).array()).matrix();
    lip = u.norm();
    if (!(lip > 0.0)) break;
    v = u / lip;
  }
  double step = 1.0 / std::max(lip * 1.01, 1e-12);
  auto full = [&](const VectorXd& b) { return weighted_objective(x, y, w, loss, b) + l1 * b.lpNorm<1>(); };
  VectorXd z = beta, prev = beta;
  double tk = 1.0;
  std::vector<double> traj;
  for (int it = 0; it < max_iter; ++it) {
    const VectorXd g = weighted_gradient(x, y, w, loss, z);
    const double fz = weighted_objective(x, y, w, loss, z);
    VectorXd next(p);
    for (;;) {
      for (int j = 0; j < p; ++j) next(j) = soft(z(j) - step * g(j), step * l1);
      const VectorXd diff = next - z;
      const double fn = weighted_objective(x, y, w, loss, next);
      if (fn <= fz + g.dot(diff) + diff.squaredNorm() / (2.0 * step) + 1e-12 * std::abs(fz)) break;
      step *= 0.5;
    }
    // Fixed-point residual of the prox-gradient map at the new iterate.
    const VectorXd gn = weighted_gradient(x, y, w, loss, next);
    VectorXd mapped(p);
    for (int j = 0; j < p; ++j) mapped(j) = soft(next(j) - step * gn(j), step * l1);
    const double res = (mapped - next).norm() / step;
    traj.push_back(res);
    prev = beta;
    beta = next;
    d.iterations = it + 1;
    d.grad_norm = res;
    if (res <= tol) {
      d.converged = true;
      d.objective = full(beta);
      return d;
    }
    const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
    z = beta + ((tk - 1.0) / tn) * (beta - prev);
    // Restart momentum when it stops helping.
    if ((z - beta).dot(beta - prev) < 0.0 || full(z) > full(beta)) z = beta;
    tk = tn;
  }
  throw ConvergenceError("proximal gradient did not converge",
                         std::vector<double>(beta.data(), beta.data() + p), traj);
}

}  // namespace detail

/// Fit a single weighted column.
inline VectorXd fit_column(const MatrixXd& x, const VectorXd& y, const VectorXd& w, const Loss& loss,
                           const FitOptions& opts, ColumnDiagnostics* diag = nullptr) {
  if (w.size() != x.rows()) throw ValidationError("fit: weight column length must equal n");
  if (!x.allFinite() || !y.allFinite() || !w.allFinite()) throw NumericError("fit: non-finite input");
  const double scale = std::max(1.0, (x.transpose() * y).norm());
  const double gtol = opts.tol * scale;
  VectorXd beta;
  ColumnDiagnostics d;
  if (opts.l1 > 0.0) {
    beta = VectorXd::Zero(x.cols());
    d = detail::fit_prox_gradient(x, y, w, loss, opts.l1, gtol, opts.max_iter_prox, beta);
  } else if (loss.kind == Loss::Kind::squared) {
    beta = detail::weighted_least_squares(x, y, w);
    d.grad_norm = weighted_gradient(x, y, w, loss, beta).norm();
    d.objective = weighted_objective(x, y, w, loss, beta);
    d.iterations = 1;
    d.converged = true;
  } else {
    if (loss.kind == Loss::Kind::huber) {
      try {
        beta = detail::weighted_least_squares(x, y, w);
      } catch (const NumericError&) {
        beta = VectorXd::Zero(x.cols());
      }
    } else {
      beta = VectorXd::Zero(x.cols());
    }
    d = detail::fit_newton(x, y, w, loss, gtol, opts.max_iter, beta);
  }
  if (diag) *diag = d;
  return beta;
}

inline FitResult fit_weighted_erm(const Dataset& data, const Loss& loss, const WeightMatrix& weights,
                                  const FitOptions& opts = {}) {
  if (weights.n() != data.n()) throw ValidationError("fit: weight matrix must have n rows");
  if (opts.l1 < 0.0) throw ConfigError("fit: l1 must be nonnegative");
  const int L = weights.L();
  FitResult r;
  r.b_hat.resize(data.p(), L);
  r.columns.resize(static_cast<std::size_t>(L));
  auto work = [&](int ell) {
    ColumnDiagnostics d;
    r.b_hat.col(ell) = fit_column(data.x, data.y, weights.pi.col(ell), loss, opts, &d);
    r.columns[static_cast<std::size_t>(ell)] = d;
  };
  if (opts.threads > 1 && L > 1) {
    std::vector<std::exception_ptr> errs(static_cast<std::size_t>(L));
    std::vector<std::thread> pool;
    for (int ell = 0; ell < L; ++ell)
      pool.emplace_back([&, ell] {
        try {
          work(ell);
        } catch (...) {
          errs[static_cast<std::size_t>(ell)] = std::current_exception();
        }
      });
    for (auto& t : pool) t.join();
    for (auto& e : errs)
      if (e) std::rethrow_exception(e);
  } else {
    for (int ell = 0; ell < L; ++ell) work(ell);
  }
  r.theta_hat = data.x * r.b_hat;
  return r;
}

/// Entry (i, l) = M(theta_hat_i^(l), y_i).
inline MatrixXd weighted_loss_matrix(const FitResult& fit, const Dataset& data, const Loss& loss) {
  MatrixXd out(fit.theta_hat.rows(), fit.theta_hat.cols());
  for (Eigen::Index l = 0; l < out.cols(); ++l)
    for (Eigen::Index i = 0; i < out.rows(); ++i) out(i, l) = loss.value(fit.theta_hat(i, l), data.y(i));
  return out;
}

}  // namespace werm
