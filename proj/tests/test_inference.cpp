#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "werm/harness.hpp"
#include "werm/inference.hpp"

using namespace werm;

namespace {

PosteriorOptions linear_options(const MatrixXd& gamma, double delta) {
  PosteriorOptions o;
  o.gamma = gamma;
  o.delta = delta;
  o.loss = Loss::squared();
  o.model = GlmModel::linear();
  o.noise_var = 1.0;
  return o;
}

struct TheoryDraw {
  MatrixXd V;
  VectorXd u;
  WeightMatrix w;
};

TheoryDraw draw_two_segments(int n, int cp, double delta, const MatrixXd& gamma, std::uint64_t trial) {
  TheoryDraw t{MatrixXd(), VectorXd(), marginal_weights(ChangePointPrior::exact_uniform(2), n)};
  SEProblem pr;
  pr.delta = delta;
  pr.gamma = gamma;
  pr.weights = t.w;
  std::vector<int> rows(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) rows[static_cast<std::size_t>(i)] = i + 1 < cp ? 1 : 2;
  pr.psi = rows;
  const SEParams par = solve_se(pr);
  auto [V, u] = sample_theory_observation(par, gamma, rows, GlmModel::linear(), NoiseSpec::gaussian(1.0), 11, trial);
  t.V = V;
  t.u = u;
  return t;
}

}  // namespace

TEST(BHat, ConstantCurvatureClosedForm) {
  for (double delta : {1.5, 4.0, 20.0})
    for (double c : {0.3, 1.0, 7.0}) {
      const VectorXd cc = VectorXd::Constant(50, c);
      EXPECT_NEAR(solve_b_hat(cc, delta), 1.0 / ((delta - 1.0) * c), 1e-10 / c);
    }
}

TEST(BHat, SolvesEquationForMixedCurvature) {
  Stream rng(3, "bhat");
  VectorXd c(300);
  for (int i = 0; i < c.size(); ++i) c(i) = rng.uniform() < 0.3 ? 0.0 : rng.uniform() * 2.0;
  const double delta = 3.0, b = solve_b_hat(c, delta);
  EXPECT_NEAR((1.0 / (1.0 + b * c.array())).mean(), 1.0 - 1.0 / delta, 1e-12);
  // too many flat rows leave no root
  EXPECT_THROW(solve_b_hat(VectorXd::Zero(10), delta), ExistenceError);
}

TEST(Adjust, OlsFullWeight) {
  ScenarioConfig cfg;
  cfg.p = 40;
  const Dataset d = simulate(cfg, 5.0, 0);
  const auto w = marginal_weights(ChangePointPrior::exact_uniform(1), d.n());
  const auto fit = fit_weighted_erm(d, Loss::squared(), w);
  const auto a = adjust(fit, d, Loss::squared(), w);
  const double b = 1.0 / (5.0 - 1.0);
  EXPECT_NEAR(a.b_hat(0), b, 1e-10);
  const VectorXd ref = fit.theta_hat.col(0) + b * (fit.theta_hat.col(0) - d.y);
  EXPECT_LT((a.theta_adj.col(0) - ref).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LT(std::abs(a.residual(0)), 1e-10);
}

TEST(Adjust, NoiseVarianceEstimate) {
  ScenarioConfig cfg;
  cfg.p = 100;
  cfg.noise = NoiseSpec::gaussian(1.5);
  const Dataset d = simulate(cfg, 8.0, 1);
  const auto w = marginal_weights(ChangePointPrior::exact_uniform(1), d.n());
  const auto fit = fit_weighted_erm(d, Loss::squared(), w);
  // RSS / (n - p) is unbiased for the OLS fit
  EXPECT_NEAR(estimate_noise_variance(fit, d, w), (d.y - fit.theta_hat.col(0)).squaredNorm() / (d.n() - d.p()), 1e-9);
  EXPECT_NEAR(estimate_noise_variance(fit, d, w), 2.25, 0.25);
}

TEST(GaussHermite, Moments) {
  const auto& gh = detail::gauss_hermite32();
  double m0 = 0, m2 = 0, m4 = 0, c = 0;
  for (std::size_t k = 0; k < gh.x.size(); ++k) {
    m0 += gh.w[k];
    m2 += gh.w[k] * gh.x[k] * gh.x[k];
    m4 += gh.w[k] * std::pow(gh.x[k], 4);
    c += gh.w[k] * std::cos(gh.x[k]);
  }
  EXPECT_NEAR(m0, 1.0, 1e-13);
  EXPECT_NEAR(m2, 1.0, 1e-12);
  EXPECT_NEAR(m4, 3.0, 1e-11);
  EXPECT_NEAR(c, std::exp(-0.5), 1e-13);
}

TEST(GaussHermite, LogisticLikelihoodMatchesIntegral) {
  // E sigmoid(m + s Z) by a fine midpoint rule
  SEParams par;
  par.lambda = MatrixXd::Constant(1, 1, 1.3);
  par.kappa = MatrixXd::Constant(1, 1, 0.7);
  const MatrixXd gamma = MatrixXd::Constant(1, 1, 2.0);
  const VectorXd v = VectorXd::Constant(1, 0.9);
  const double S = 1.3 * 1.3 * 2.0 + 0.7, m = 1.3 * 2.0 / S * 0.9, var = 2.0 - 1.3 * 1.3 * 4.0 / S;
  double p1 = 0.0;
  const int N = 200000;
  const double lo = -12.0, h = 24.0 / N;
  for (int k = 0; k < N; ++k) {
    const double z = lo + (k + 0.5) * h;
    p1 += h * std::exp(-0.5 * z * z) / std::sqrt(2 * M_PI) / (1.0 + std::exp(-(m + std::sqrt(var) * z)));
  }
  const double lv = -0.5 * (std::log(2 * M_PI * S) + 0.81 / S);
  EXPECT_NEAR(config_loglik(v, 1.0, 1, par, gamma, GlmModel::logistic(), 0.0), lv + std::log(p1), 1e-10);
  EXPECT_NEAR(config_loglik(v, 0.0, 1, par, gamma, GlmModel::logistic(), 0.0), lv + std::log1p(-p1), 1e-10);
}

TEST(GridSupport, CountsMatchEnumeration) {
  const int n = 100;
  std::vector<int> grid;
  for (int g = 10; g <= 90; g += 10) grid.push_back(g);
  EXPECT_EQ(grid_support(n, grid, 2, 1).size(), 36u);
  for (int min_len : {1, 15, 20, 35}) {
    std::size_t count = 0;
    for (int a : grid)
      for (int b : grid)
        if (b > a && a - 1 >= min_len && b - a >= min_len && n + 1 - b >= min_len) ++count;
    EXPECT_EQ(grid_support(n, grid, 2, min_len).size(), count) << min_len;
  }
  EXPECT_EQ(grid_support(n, grid, 0, 1).size(), 1u);
}

TEST(Posterior, NormalizedAndMatchesRowSums) {
  const int n = 200;
  const MatrixXd gamma = (MatrixXd(2, 2) << 1.0, 0.0, 0.0, 1.0).finished();
  auto t = draw_two_segments(n, 81, 5.0, gamma, 0);
  const auto opt = linear_options(gamma, 5.0);
  std::vector<int> grid;
  for (int g = 21; g <= 181; g += 20) grid.push_back(g);
  const auto support = grid_support(n, grid, 1, 1);
  SECache cache(t.w, opt);
  const auto tab = posterior_from(t.V, t.u, t.w, ChangePointPrior::exact_uniform(2), support, opt, &cache);
  double s = 0.0;
  for (const auto& e : tab.entries) s += e.probability;
  EXPECT_NEAR(s, 1.0, 1e-12);
  // direct row-by-row likelihood for one configuration
  const auto& e = tab.entries[2];
  const SEParams& par = cache.get(e.eta, {1, 2});
  double ll = 0.0;
  for (int i = 0; i < n; ++i)
    ll += config_loglik(t.V.row(i).transpose(), t.u(i), i + 1 < e.eta[0] ? 1 : 2, par, gamma, opt.model, 1.0);
  EXPECT_NEAR(e.log_likelihood, ll, 1e-8 * std::abs(ll));
}

TEST(Posterior, PriorEntersMultiplicatively) {
  const int n = 200;
  const MatrixXd gamma = MatrixXd::Identity(2, 2);
  auto t = draw_two_segments(n, 101, 5.0, gamma, 1);
  const auto opt = linear_options(gamma, 5.0);
  std::vector<ChangePoints> support = {ChangePoints({61}, n), ChangePoints({101}, n), ChangePoints({141}, n)};
  const auto flat = posterior_from(t.V, t.u, t.w, ChangePointPrior::exact_uniform(2), support, opt);
  const auto tilted = posterior_from(t.V, t.u, t.w, ChangePointPrior::custom({{{61}, 1.0}, {{101}, 2.0}, {{141}, 5.0}}, n),
                                     support, opt);
  auto lo = [](const PosteriorTable& p, int a, int b) {
    return std::log(p.entries[static_cast<std::size_t>(a)].probability / p.entries[static_cast<std::size_t>(b)].probability);
  };
  EXPECT_NEAR(lo(tilted, 1, 0) - lo(flat, 1, 0), std::log(2.0), 1e-9);
  EXPECT_NEAR(lo(tilted, 2, 0) - lo(flat, 2, 0), std::log(5.0), 1e-9);
}

TEST(Posterior, ConcentratesNearTruthOnAverage) {
  const int n = 400;
  const MatrixXd gamma = (MatrixXd(2, 2) << 2.0, 0.0, 0.0, 2.0).finished();
  const auto opt = linear_options(gamma, 5.0);
  std::vector<int> grid;
  for (int g = 41; g <= 361; g += 40) grid.push_back(g);
  const auto support = grid_support(n, grid, 1, 1);
  double at_truth = 0.0;
  for (std::uint64_t trial = 0; trial < 5; ++trial) {
    auto t = draw_two_segments(n, 161, 5.0, gamma, trial);
    const auto tab = posterior_from(t.V, t.u, t.w, ChangePointPrior::exact_uniform(2), support, opt);
    for (const auto& e : tab.entries)
      if (e.eta[0] == 161) at_truth += e.probability / 5.0;
  }
  EXPECT_GT(at_truth, 0.5);
}

TEST(Posterior, Validation) {
  const int n = 50;
  const auto w = marginal_weights(ChangePointPrior::exact_uniform(2), n);
  const auto opt = linear_options(MatrixXd::Identity(2, 2), 5.0);
  EXPECT_THROW(posterior_from(MatrixXd::Zero(n, 2), VectorXd::Zero(n), w, ChangePointPrior::exact_uniform(2), {}, opt),
               ConfigError);
  EXPECT_THROW(posterior_from(MatrixXd::Zero(n, 2), VectorXd::Zero(n), w, ChangePointPrior::exact_uniform(2),
                              {ChangePoints({10, 20}, n)}, opt),
               ConfigError);
}

TEST(Gamma, RecoversSignalStrength) {
  ScenarioConfig cfg;
  cfg.p = 150;
  cfg.eta_fractions = {0.5};
  cfg.seed = 4;
  const double delta = 6.0;
  const Dataset d = simulate(cfg, delta, 0);
  const auto w = marginal_weights(ChangePointPrior::exact_uniform(2), d.n());
  const auto fit = fit_weighted_erm(d, Loss::squared(), w);
  const auto a = adjust(fit, d, Loss::squared(), w);
  GammaOptions go;
  go.loss = Loss::squared();
  go.model = GlmModel::linear();
  go.noise_var = 1.0;
  const auto g = estimate_gamma(a, d, w, SignalConfig(d.meta->psi), go);
  const MatrixXd& truth = d.meta->gamma;
  for (int j = 0; j < 2; ++j) EXPECT_NEAR(g.gamma(j, j), truth(j, j), 0.2 * truth(j, j));
  EXPECT_NEAR(g.gamma(0, 1), truth(0, 1), 0.2 * std::sqrt(truth(0, 0) * truth(1, 1)));
  EXPECT_FALSE(g.warning);
}

TEST(Posterior, FlatLikelihoodReturnsPrior) {
  // one signal behind every segment: the likelihood cannot tell configurations apart
  const int n = 120;
  const MatrixXd gamma = MatrixXd::Constant(1, 1, 1.5);
  const auto w = marginal_weights(ChangePointPrior::exact_uniform(3), n);
  SEProblem pr;
  pr.delta = 4.0;
  pr.gamma = gamma;
  pr.weights = w;
  pr.psi.assign(static_cast<std::size_t>(n), 1);
  const SEParams par = solve_se(pr);
  auto [V, u] = sample_theory_observation(par, gamma, pr.psi, GlmModel::linear(), NoiseSpec::gaussian(1.0), 3, 0);
  auto opt = linear_options(gamma, 4.0);
  opt.segment_signals = [](int segs) { return std::vector<int>(static_cast<std::size_t>(segs), 1); };
  std::vector<int> grid;
  for (int g = 13; g <= 109; g += 12) grid.push_back(g);
  const auto support = grid_support(n, grid, 2, 1);
  std::vector<std::pair<std::vector<int>, double>> table;
  Stream rng(8, "masses");
  for (const auto& cp : support) table.emplace_back(cp.eta(), 0.1 + rng.uniform());
  const auto prior = ChangePointPrior::custom(table, n);
  const auto tab = posterior_from(V, u, w, prior, support, opt);
  double total = 0.0;
  for (const auto& t : table) total += t.second;
  for (std::size_t c = 0; c < support.size(); ++c)
    EXPECT_NEAR(tab.entries[c].probability, table[c].second / total, 1e-9);
}
