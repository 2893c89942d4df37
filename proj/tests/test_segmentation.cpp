#include <gtest/gtest.h>

#include <functional>
#include <limits>
#include <vector>

#include "werm/harness.hpp"
#include "werm/segmentation.hpp"

using namespace werm;

namespace {

MatrixXd random_lossmat(int n, int L, std::uint64_t seed) {
  Stream rng(seed, "lossmat");
  MatrixXd m(n, L);
  for (int i = 0; i < n; ++i)
    for (int l = 0; l < L; ++l) m(i, l) = rng.uniform() * 3.0 + (rng.uniform() < 0.2 ? 2.0 : 0.0);
  return m;
}

// Best objective over all k-change-point vectors by enumeration.
double brute_best(const MatrixXd& m, int k, int g, const std::vector<int>& cols, std::vector<int>* arg) {
  const int n = static_cast<int>(m.rows());
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> cur;
  std::function<void(int)> rec = [&](int from) {
    if (static_cast<int>(cur.size()) == k) {
      int prev = 1;
      double s = 0.0;
      for (int q = 0; q <= k; ++q) {
        const int next = q < k ? cur[static_cast<std::size_t>(q)] : n + 1;
        if (next - prev < g) return;
        for (int i = prev; i < next; ++i) s += m(i - 1, cols[static_cast<std::size_t>(q)] - 1);
        prev = next;
      }
      if (s < best) {
        best = s;
        *arg = cur;
      }
      return;
    }
    for (int e = from; e <= n; ++e) {
      cur.push_back(e);
      rec(e + 1);
      cur.pop_back();
    }
  };
  rec(2);
  return best;
}

}  // namespace

TEST(Search, ExhaustiveMatchesEnumeration) {
  for (int n : {6, 11, 15})
    for (int k : {0, 1, 2, 3})
      for (int g : {1, 2, 3})
        for (std::uint64_t seed = 0; seed < 4; ++seed) {
          if ((k + 1) * g > n) continue;
          const MatrixXd m = random_lossmat(n, k + 1, seed * 31 + n);
          SearchConfig cfg;
          cfg.L = k + 1;
          cfg.min_gap = g;
          std::vector<int> cols;
          for (int s = 1; s <= k + 1; ++s) cols.push_back(s);
          std::vector<int> arg;
          const double ref = brute_best(m, k, g, cols, &arg);
          const auto r = search_exhaustive(m, cfg, k);
          EXPECT_NEAR(r.objective, ref, 1e-10);
          EXPECT_EQ(r.eta_hat.eta(), arg);
        }
}

TEST(Search, ExhaustiveWithRepeatedColumns) {
  const int n = 14;
  const MatrixXd m = random_lossmat(n, 2, 5);
  SearchConfig cfg;
  cfg.L = 3;
  cfg.segment_columns = {1, 2, 1};
  std::vector<int> arg;
  const double ref = brute_best(m, 2, 1, {1, 2, 1}, &arg);
  const auto r = search_exhaustive(m, cfg, 2);
  EXPECT_NEAR(r.objective, ref, 1e-10);
  EXPECT_EQ(r.eta_hat.eta(), arg);
}

TEST(Search, GreedyNeverBetterThanExhaustive) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const int n = 12 + static_cast<int>(seed % 20);
    const MatrixXd m = random_lossmat(n, 4, seed);
    for (int k = 0; k <= 3; ++k)
      for (int g : {1, 2}) {
        SearchConfig cfg;
        cfg.L = 4;
        cfg.min_gap = g;
        const auto ex = search_exhaustive(m, cfg, k);
        const auto gr = search_greedy(m, cfg, k);
        EXPECT_GE(gr.objective, ex.objective - 1e-10);
        EXPECT_EQ(static_cast<int>(gr.path.size()), k + 1);
        EXPECT_NEAR(gr.path.back(), gr.objective, 1e-10);
        if (k == 1) {
          EXPECT_NEAR(gr.objective, ex.objective, 1e-10);
        }
      }
  }
}

TEST(Search, PlantedSignalRecovered) {
  const int n = 60;
  MatrixXd m = MatrixXd::Constant(n, 3, 1.0);
  for (int i = 0; i < n; ++i) {
    const int truth = i < 20 ? 0 : (i < 45 ? 1 : 2);
    m(i, truth) = 0.0;
  }
  SearchConfig cfg;
  cfg.L = 3;
  for (auto st : {SearchConfig::Strategy::exhaustive, SearchConfig::Strategy::greedy}) {
    cfg.strategy = st;
    EXPECT_EQ(search(m, cfg, 2).eta_hat.eta(), (std::vector<int>{21, 46}));
  }
}

TEST(Search, PenalizedTradesFitForSize) {
  const int n = 40;
  MatrixXd m = MatrixXd::Constant(n, 2, 1.0);
  for (int i = 0; i < n; ++i) m(i, i < 20 ? 0 : 1) = 0.5;
  // gain of splitting is 10; choose penalties on both sides of it
  SearchConfig cfg;
  cfg.L = 2;
  cfg.penalty = Penalty::linear(5.0);
  EXPECT_EQ(search_penalized(m, cfg).eta_hat.eta(), std::vector<int>{21});
  cfg.penalty = Penalty::linear(15.0);
  EXPECT_TRUE(search_penalized(m, cfg).eta_hat.empty());
  EXPECT_NEAR(Penalty::log_binomial()(2, 11), std::log(45.0), 1e-12);
}

TEST(Search, Infeasible) {
  SearchConfig cfg;
  cfg.L = 3;
  cfg.min_gap = 5;
  EXPECT_THROW(search_exhaustive(MatrixXd::Zero(12, 3), cfg, 2), ConfigError);
}

TEST(Elbow, PicksKneeOfPath) {
  EXPECT_EQ(elbow({100, 60, 20, 18, 17}), 2);
  EXPECT_EQ(elbow({100, 50, 40}), 1);
  EXPECT_EQ(elbow({10}), 0);
}

TEST(Cv, FoldsInterleaved) {
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 100; ++i) ++counts[cv_fold(i, 5, 3)];
  for (int c : counts) EXPECT_EQ(c, 20);
  EXPECT_NE(cv_fold(0, 5, 0), cv_fold(1, 5, 0));
}

TEST(Cv, SelectsTrueOrderOnEasyData) {
  ScenarioConfig cfg;
  cfg.p = 20;
  cfg.deltas = {15.0};
  cfg.signal.variance = 4.0;
  cfg.noise = NoiseSpec::gaussian(0.5);
  cfg.eta_fractions = {0.3, 0.7};
  cfg.prior = ChangePointPrior::spaced_uniform_frac(4, 0.1);
  cfg.search.L = 4;
  cfg.search.strategy = SearchConfig::Strategy::greedy;
  cfg.seed = 7;
  const Dataset d = simulate(cfg, 15.0, 0);
  const auto e = estimate(cfg, d);
  EXPECT_EQ(e.seg.eta_hat.size(), 2u);
  EXPECT_EQ(static_cast<int>(e.seg.cv_table.size()), 4);
  EXPECT_LE(*hausdorff(e.seg.eta_hat.eta(), d.meta->eta), 0.02 * d.n());
}
