#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "werm/harness.hpp"
#include "werm/solver.hpp"

using namespace werm;

namespace {

struct Problem {
  MatrixXd x;
  VectorXd y;
  VectorXd w;
};

Problem make_problem(int n, int p, const Loss& loss, std::uint64_t seed) {
  Stream rng(seed, "solver-test");
  Problem pr{MatrixXd(n, p), VectorXd(n), VectorXd(n)};
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) pr.x(i, j) = rng.normal() / std::sqrt(static_cast<double>(n));
  VectorXd beta(p);
  for (int j = 0; j < p; ++j) beta(j) = rng.normal();
  const VectorXd z = pr.x * beta;
  for (int i = 0; i < n; ++i) {
    if (loss.kind == Loss::Kind::logistic) pr.y(i) = rng.uniform() < sigmoid(z(i)) ? 1.0 : 0.0;
    else pr.y(i) = z(i) + 0.5 * rng.normal() * (rng.uniform() < 0.1 ? 6.0 : 1.0);
    pr.w(i) = 0.1 + rng.uniform();
  }
  return pr;
}

MatrixXd random_spd(int p, Stream& rng) {
  MatrixXd a(p, p);
  for (int i = 0; i < p; ++i)
    for (int j = 0; j < p; ++j) a(i, j) = rng.normal();
  return a * a.transpose() / p + 0.5 * MatrixXd::Identity(p, p);
}

const std::vector<Loss> kLosses = {Loss::squared(), Loss::huber(1.0), Loss::logistic()};

}  // namespace

TEST(Solver, GradientMatchesFiniteDifferences) {
  for (const auto& loss : kLosses) {
    const auto pr = make_problem(80, 6, loss, 1);
    Stream rng(2, "beta");
    VectorXd beta(6);
    for (int j = 0; j < 6; ++j) beta(j) = rng.normal();
    const VectorXd g = weighted_gradient(pr.x, pr.y, pr.w, loss, beta);
    const double h = 1e-6;
    for (int j = 0; j < 6; ++j) {
      VectorXd bp = beta, bm = beta;
      bp(j) += h;
      bm(j) -= h;
      const double fd = (weighted_objective(pr.x, pr.y, pr.w, loss, bp) - weighted_objective(pr.x, pr.y, pr.w, loss, bm)) / (2 * h);
      EXPECT_NEAR(g(j), fd, 1e-6 * (1 + std::abs(fd))) << loss.name();
    }
  }
}

TEST(Solver, StationaryAtSolution) {
  for (const auto& loss : kLosses) {
    const auto pr = make_problem(400, 20, loss, 3);
    ColumnDiagnostics d;
    const VectorXd b = fit_column(pr.x, pr.y, pr.w, loss, FitOptions{}, &d);
    EXPECT_TRUE(d.converged) << loss.name();
    EXPECT_LT(weighted_gradient(pr.x, pr.y, pr.w, loss, b).norm(), 1e-6) << loss.name();
  }
}

TEST(Solver, SquaredMatchesNormalEquations) {
  const auto pr = make_problem(100, 8, Loss::squared(), 4);
  const MatrixXd xtw = pr.x.transpose() * pr.w.asDiagonal();
  const VectorXd ref = (xtw * pr.x).colPivHouseholderQr().solve(xtw * pr.y);
  const VectorXd b = fit_column(pr.x, pr.y, pr.w, Loss::squared(), FitOptions{});
  EXPECT_LT((b - ref).norm(), 1e-9 * (1 + ref.norm()));
}

TEST(Solver, LassoKkt) {
  for (const auto& loss : kLosses) {
    const auto pr = make_problem(200, 30, loss, 5);
    FitOptions o;
    o.l1 = 0.5;
    o.tol = 1e-10;
    const VectorXd b = fit_column(pr.x, pr.y, pr.w, loss, o);
    const VectorXd g = weighted_gradient(pr.x, pr.y, pr.w, loss, b);
    int zeros = 0;
    for (int j = 0; j < b.size(); ++j) {
      if (b(j) != 0.0) EXPECT_NEAR(g(j), -o.l1 * (b(j) > 0 ? 1.0 : -1.0), 1e-5) << loss.name();
      else {
        EXPECT_LE(std::abs(g(j)), o.l1 + 1e-5) << loss.name();
        ++zeros;
      }
    }
    EXPECT_GT(zeros, 0) << loss.name();
  }
}

TEST(Solver, CovarianceReduction) {
  Stream rng(9, "spd");
  for (const auto& loss : kLosses)
    for (int p : {5, 12, 20}) {
      const auto pr = make_problem(10 * p, p, loss, 10 + p);
      const MatrixXd sigma = random_spd(p, rng);
      const MatrixXd Lc = sigma.llt().matrixL();
      const MatrixXd xs = pr.x * Lc.transpose();  // covariates with covariance Sigma
      const MatrixXd xt = xs * Lc.transpose().inverse();
      FitOptions o;
      o.tol = 1e-12;
      const VectorXd b = fit_column(xs, pr.y, pr.w, loss, o);
      const VectorXd bt = fit_column(xt, pr.y, pr.w, loss, o);
      EXPECT_LT((bt - Lc.transpose() * b).norm(), 1e-6 * (1 + bt.norm())) << loss.name() << " p=" << p;
      EXPECT_LT((xs * b - xt * bt).norm(), 1e-6 * (1 + (xs * b).norm()));
    }
}

TEST(Solver, RankDeficientSquaredRaises) {
  const auto pr = make_problem(10, 20, Loss::squared(), 6);
  EXPECT_THROW(fit_column(pr.x, pr.y, pr.w, Loss::squared(), FitOptions{}), NumericError);
  FitOptions o;
  o.l1 = 0.1;
  EXPECT_NO_THROW(fit_column(pr.x, pr.y, pr.w, Loss::squared(), o));
}

TEST(Solver, SeparableLogisticRaises) {
  MatrixXd x(6, 1);
  x << -3, -2, -1, 1, 2, 3;
  VectorXd y(6);
  y << 0, 0, 0, 1, 1, 1;
  EXPECT_THROW(fit_column(x, y, VectorXd::Ones(6), Loss::logistic(), FitOptions{}), NumericError);
}

TEST(Solver, ThreadsDoNotChangeResult) {
  ScenarioConfig cfg;
  cfg.p = 30;
  cfg.eta_fractions = {0.4};
  const Dataset d = simulate(cfg, 8.0, 0);
  const auto w = marginal_weights(ChangePointPrior::exact_uniform(3), d.n());
  FitOptions a, b;
  b.threads = 3;
  for (const auto& loss : kLosses) {
    if (loss.kind == Loss::Kind::logistic) continue;
    const auto ra = fit_weighted_erm(d, loss, w, a), rb = fit_weighted_erm(d, loss, w, b);
    EXPECT_EQ(ra.b_hat, rb.b_hat);
  }
}

TEST(Solver, ZeroWeightRowsIgnored) {
  auto pr = make_problem(120, 5, Loss::huber(1.0), 7);
  for (int i = 60; i < 120; ++i) pr.w(i) = 0.0;
  MatrixXd xh = pr.x.topRows(60);
  VectorXd yh = pr.y.head(60), wh = pr.w.head(60);
  FitOptions o;
  o.tol = 1e-12;
  const VectorXd a = fit_column(pr.x, pr.y, pr.w, Loss::huber(1.0), o);
  const VectorXd b = fit_column(xh, yh, wh, Loss::huber(1.0), o);
  EXPECT_LT((a - b).norm(), 1e-8);
}
