#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include <Eigen/Eigenvalues>

#include "werm/losses.hpp"
#include "werm/state_evolution.hpp"

using namespace werm;

namespace {

struct Rule {
  std::vector<double> x, w;  // nodes and weights for E f(N(0,1))
};

// Probabilists' Gauss-Hermite rule from the Jacobi matrix.
Rule hermite(int m) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(m, m);
  for (int k = 1; k < m; ++k) J(k, k - 1) = J(k - 1, k) = std::sqrt(static_cast<double>(k));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  Rule r;
  for (int k = 0; k < m; ++k) {
    r.x.push_back(es.eigenvalues()(k));
    r.w.push_back(es.eigenvectors()(0, k) * es.eigenvectors()(0, k));
  }
  return r;
}

struct Residuals {
  double b, lambda, kappa;
};

// Fixed-point residuals for L = 1, pi = 1, scalar signal, by quadrature.
Residuals quadrature_residuals(const Loss& loss, bool logistic, double g2, double sigma, double delta,
                               double lam, double kappa, double b) {
  const Rule r = hermite(60);
  double e_b = 0.0, e_l = 0.0, e_k = 0.0;
  for (std::size_t a = 0; logistic && a < r.x.size(); ++a)
    for (std::size_t c = 0; c < r.x.size(); ++c) {
      const double z = std::sqrt(g2) * r.x[a];
      const double v = lam * z + std::sqrt(kappa) * r.x[c];
      auto add = [&](double y, double w) {
        const double th = prox(loss, b, y, v);
        const double m1 = loss.d1(th, y), m2 = loss.d2(th, y);
        e_b += w / (1.0 + b * m2);
        e_l += w * z * m1;
        e_k += w * m1 * m1;
      };
      const double w = r.w[a] * r.w[c];
      const double p1 = 1.0 / (1.0 + std::exp(-z));
      add(1.0, w * p1);
      add(0.0, w * (1.0 - p1));
    }
  if (!logistic) {
    // y - V is Gaussian and prox depends on y - V alone; fine midpoint rule in r
    const double var = (1.0 - lam) * (1.0 - lam) * g2 + sigma * sigma + kappa;
    const double sd = std::sqrt(var), lo = -14.0 * sd, h = 28.0 * sd / 400000;
    for (int k = 0; k < 400000; ++k) {
      const double rr = lo + (k + 0.5) * h;
      const double w = h * std::exp(-0.5 * rr * rr / var) / (sd * std::sqrt(2.0 * M_PI));
      const double th = prox(loss, b, rr, 0.0);
      const double m1 = loss.d1(th, rr), m2 = loss.d2(th, rr);
      e_b += w / (1.0 + b * m2);
      e_l += w * (1.0 - lam) * g2 / var * rr * m1;
      e_k += w * m1 * m1;
    }
  }
  return {e_b - (1.0 - 1.0 / delta), e_l, delta * b * b * e_k - kappa};
}

SEProblem single(double delta, const Loss& loss, const GlmModel& model, const NoiseSpec& noise, double g2) {
  SEProblem p;
  p.delta = delta;
  p.gamma = MatrixXd::Constant(1, 1, g2);
  p.loss = loss;
  p.model = model;
  p.noise = noise;
  p.prior = ChangePointPrior::exact_uniform(1);
  p.mc_samples = 100000;
  p.seed = 5;
  return p;
}

}  // namespace

TEST(StateEvolution, OlsClosedFormAnalytic) {
  for (double delta : {2.0, 5.0, 10.0}) {
    auto p = single(delta, Loss::squared(), GlmModel::linear(), NoiseSpec::gaussian(1.0), 1.0);
    p.expectation = SEProblem::Expectation::analytic;
    p.tol = 1e-10;
    const auto s = solve_se(p);
    EXPECT_NEAR(s.b(0), 1.0 / (delta - 1.0), 1e-8);
    EXPECT_NEAR(s.lambda(0, 0), 1.0, 1e-8);
    EXPECT_NEAR(s.kappa(0, 0), 1.0 / (delta - 1.0), 1e-7);
  }
}

TEST(StateEvolution, OlsClosedFormMonteCarlo) {
  const double delta = 4.0;
  auto p = single(delta, Loss::squared(), GlmModel::linear(), NoiseSpec::gaussian(1.0), 1.5);
  p.expectation = SEProblem::Expectation::monte_carlo;
  const auto s = solve_se(p);
  EXPECT_NEAR(s.b(0), 1.0 / (delta - 1.0), 0.01 / (delta - 1.0));
  EXPECT_NEAR(s.lambda(0, 0), 1.0, 0.01);
  EXPECT_NEAR(s.kappa(0, 0), 1.0 / (delta - 1.0), 0.02 / (delta - 1.0));
}

TEST(StateEvolution, RhsBAtClosedForm) {
  auto p = single(3.0, Loss::squared(), GlmModel::linear(), NoiseSpec::gaussian(1.0), 1.0);
  p.expectation = SEProblem::Expectation::monte_carlo;
  // squared loss: (1 + b)^{-1} exactly, any lambda, kappa
  EXPECT_NEAR(se_rhs_b(p, 1, VectorXd::Ones(1), 0.5, 0.5), 1.0 / 1.5, 1e-12);
}

TEST(StateEvolution, HuberMatchesQuadrature) {
  const double delta = 5.0, g2 = 1.0, sigma = 1.0;
  auto p = single(delta, Loss::huber(1.0), GlmModel::linear(), NoiseSpec::gaussian(sigma), g2);
  p.mc_samples = 200000;
  const auto s = solve_se(p);
  const auto r = quadrature_residuals(Loss::huber(1.0), false, g2, sigma, delta, s.lambda(0, 0), s.kappa(0, 0), s.b(0));
  EXPECT_LT(std::abs(r.b), 2e-3);
  EXPECT_LT(std::abs(r.lambda), 2e-3);
  EXPECT_LT(std::abs(r.kappa), 0.01 * s.kappa(0, 0));
  EXPECT_NEAR(s.lambda(0, 0), 1.0, 1e-3);
}

TEST(StateEvolution, LogisticMatchesQuadrature) {
  const double delta = 8.0, g2 = 2.0;
  auto p = single(delta, Loss::logistic(), GlmModel::logistic(), NoiseSpec::uniform01(), g2);
  p.mc_samples = 200000;
  const auto s = solve_se(p);
  const auto r = quadrature_residuals(Loss::logistic(), true, g2, 0.0, delta, s.lambda(0, 0), s.kappa(0, 0), s.b(0));
  EXPECT_LT(std::abs(r.b), 5e-3);
  EXPECT_LT(std::abs(r.lambda), 5e-3);
  EXPECT_LT(std::abs(r.kappa), 0.03 * s.kappa(0, 0));
  // the unpenalized logistic MLE inflates the signal
  EXPECT_GT(s.lambda(0, 0), 1.0);
}

TEST(StateEvolution, TwoSignalsAnalyticAgreesWithMonteCarlo) {
  SEProblem p;
  p.delta = 6.0;
  p.gamma = (MatrixXd(2, 2) << 1.0, 0.2, 0.2, 1.5).finished();
  p.prior = ChangePointPrior::exact_uniform(2);
  p.alphas = {0.4};
  p.noise = NoiseSpec::gaussian(0.8);
  p.mc_samples = 200000;
  p.expectation = SEProblem::Expectation::analytic;
  const auto a = solve_se(p);
  p.expectation = SEProblem::Expectation::monte_carlo;
  const auto m = solve_se(p);
  for (int l = 0; l < 2; ++l) {
    EXPECT_NEAR(m.b(l), a.b(l), 0.01 * a.b(l));
    for (int j = 0; j < 2; ++j) EXPECT_NEAR(m.lambda(j, l), a.lambda(j, l), 0.01);
  }
  for (int l = 0; l < 2; ++l)
    for (int k = 0; k < 2; ++k) EXPECT_NEAR(m.kappa(l, k), a.kappa(l, k), 0.03 * std::sqrt(a.kappa(l, l) * a.kappa(k, k)));
  EXPECT_LE(std::abs(a.kappa(0, 1)), std::sqrt(a.kappa(0, 0) * a.kappa(1, 1)));
}

TEST(StateEvolution, FiniteWeightsNearLimit) {
  SEProblem p;
  p.delta = 6.0;
  p.gamma = MatrixXd::Identity(2, 2);
  p.alphas = {0.5};
  p.noise = NoiseSpec::gaussian(1.0);
  p.prior = ChangePointPrior::exact_uniform(2);
  const auto lim = solve_se(p);
  p.prior.reset();
  p.weights = marginal_weights(ChangePointPrior::exact_uniform(2), 2000);
  const auto fin = solve_se(p);
  EXPECT_LT((lim.lambda - fin.lambda).cwiseAbs().maxCoeff(), 5e-3);
  EXPECT_LT((lim.kappa - fin.kappa).cwiseAbs().maxCoeff(), 5e-3);
}

TEST(StateEvolution, DeterministicInSeed) {
  auto p = single(5.0, Loss::huber(1.0), GlmModel::linear(), NoiseSpec::student_t(4.0), 1.0);
  p.mc_samples = 20000;
  const auto a = solve_se(p), b = solve_se(p);
  EXPECT_EQ(a.kappa(0, 0), b.kappa(0, 0));
  EXPECT_EQ(a.b(0), b.b(0));
}

TEST(StateEvolution, Validation) {
  auto p = single(0.8, Loss::squared(), GlmModel::linear(), NoiseSpec::gaussian(1.0), 1.0);
  EXPECT_THROW(solve_se(p), ConfigError);
  p.delta = 3.0;
  p.gamma = (MatrixXd(2, 2) << 1, 2, 2, 1).finished();
  EXPECT_THROW(solve_se(p), ConfigError);
}
