#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "werm/core.hpp"
#include "werm/errors.hpp"
#include "werm/rng.hpp"

using namespace werm;

TEST(ChangePoints, Validation) {
  EXPECT_NO_THROW(ChangePoints({2, 5, 10}, 10));
  EXPECT_NO_THROW(ChangePoints({}, 3));
  EXPECT_THROW(ChangePoints({1}, 10), ValidationError);
  EXPECT_THROW(ChangePoints({11}, 10), ValidationError);
  EXPECT_THROW(ChangePoints({5, 5}, 10), ValidationError);
  EXPECT_THROW(ChangePoints({6, 5}, 10), ValidationError);
}

TEST(SignalConfig, RejectsNonConsecutive) {
  EXPECT_THROW(SignalConfig({2, 2}), ValidationError);
  EXPECT_THROW(SignalConfig({1, 3}), ValidationError);
  EXPECT_THROW(SignalConfig({1, 2, 1}), ValidationError);
  EXPECT_NO_THROW(SignalConfig({1, 1, 2, 3}));
}

TEST(SignalConfig, BijectionWithChangePoints) {
  const int n = 9;
  // every subset of {2..n}
  for (int mask = 0; mask < (1 << (n - 1)); ++mask) {
    std::vector<int> eta;
    for (int b = 0; b < n - 1; ++b)
      if (mask & (1 << b)) eta.push_back(b + 2);
    const ChangePoints cp(eta, n);
    const auto psi = config_from_changepoints(cp);
    ASSERT_EQ(psi.n(), n);
    ASSERT_EQ(psi.num_signals(), static_cast<int>(eta.size()) + 1);
    for (int e : eta) ASSERT_EQ(psi(e), psi(e - 1) + 1);
    ASSERT_EQ(changepoints_from_config(psi), cp);
  }
}

TEST(ChangePoints, FromFractions) {
  EXPECT_EQ(changepoints_from_fractions({0.3, 0.6}, 100).eta(), (std::vector<int>{31, 61}));
  EXPECT_EQ(changepoints_from_fractions({0.5}, 7).eta(), std::vector<int>{4});
  EXPECT_THROW(changepoints_from_fractions({0.0}, 10), ValidationError);
  EXPECT_THROW(changepoints_from_fractions({1.0}, 10), ValidationError);
}

TEST(Hausdorff, HandComputed) {
  EXPECT_DOUBLE_EQ(*hausdorff({10, 50}, {12, 47, 90}), 40.0);
  EXPECT_DOUBLE_EQ(*hausdorff({30}, {40, 90}), 60.0);
  EXPECT_DOUBLE_EQ(*hausdorff({}, {}), 0.0);
  EXPECT_FALSE(hausdorff({}, {5}).has_value());
  EXPECT_FALSE(hausdorff({5}, {}).has_value());
}

TEST(Hausdorff, MetricProperties) {
  Stream rng(3, "hausdorff");
  auto draw = [&] {
    std::set<int> s;
    const int k = static_cast<int>(rng.integer(1, 4));
    while (static_cast<int>(s.size()) < k) s.insert(static_cast<int>(rng.integer(2, 100)));
    return std::vector<int>(s.begin(), s.end());
  };
  for (int t = 0; t < 200; ++t) {
    const auto a = draw(), b = draw(), c = draw();
    EXPECT_DOUBLE_EQ(*hausdorff(a, a), 0.0);
    EXPECT_DOUBLE_EQ(*hausdorff(a, b), *hausdorff(b, a));
    EXPECT_LE(*hausdorff(a, c), *hausdorff(a, b) + *hausdorff(b, c) + 1e-12);
  }
}

TEST(Noise, SecondMomentMatches) {
  const std::vector<NoiseSpec> specs = {NoiseSpec::gaussian(2.0), NoiseSpec::student_t(6.0, 1.5),
                                        NoiseSpec::laplace(0.7), NoiseSpec::uniform01()};
  for (const auto& s : specs) {
    Stream rng(11, "noise-moments");
    const int m = 400000;
    double sq = 0.0;
    for (int i = 0; i < m; ++i) {
      const double v = s.sample(rng);
      sq += v * v;
    }
    EXPECT_NEAR(sq / m / s.variance(), 1.0, 0.03);
  }
}

TEST(Stream, DeterministicAndDistinct) {
  Stream a(1, "x", 2, 3), b(1, "x", 2, 3), c(1, "x", 3, 3), d(1, "y", 2, 3);
  const double va = a.normal();
  EXPECT_EQ(va, b.normal());
  EXPECT_NE(va, c.normal());
  EXPECT_NE(va, d.normal());
}

TEST(GlmModel, Links) {
  const auto lin = GlmModel::linear();
  EXPECT_DOUBLE_EQ(lin.q(1.5, -0.5), 1.0);
  const auto lg = GlmModel::logistic();
  EXPECT_DOUBLE_EQ(lg.q(0.0, 0.49), 1.0);
  EXPECT_DOUBLE_EQ(lg.q(0.0, 0.51), 0.0);
  EXPECT_NEAR(lg.mean(2.0), 1.0 / (1.0 + std::exp(-2.0)), 1e-15);
  EXPECT_NEAR(log1pexp(800.0), 800.0, 1e-12);
  EXPECT_NEAR(log1pexp(-800.0), 0.0, 1e-300);
}

TEST(Dataset, ValidatesShapes) {
  EXPECT_THROW(Dataset(MatrixXd::Zero(3, 2), VectorXd::Zero(4)), ValidationError);
  Truth t;
  t.eta = {2};
  t.psi = {1, 2, 2};
  EXPECT_NO_THROW(Dataset(MatrixXd::Zero(3, 2), VectorXd::Zero(3), t));
  t.psi = {1, 2};
  EXPECT_THROW(Dataset(MatrixXd::Zero(3, 2), VectorXd::Zero(3), t), ValidationError);
}

TEST(Dataset, Subset) {
  MatrixXd x(4, 1);
  x << 1, 2, 3, 4;
  VectorXd y(4);
  y << 10, 20, 30, 40;
  const Dataset d(x, y);
  const auto s = d.subset({3, 1});
  EXPECT_EQ(s.n(), 2);
  EXPECT_DOUBLE_EQ(s.x(0, 0), 4.0);
  EXPECT_DOUBLE_EQ(s.y(1), 20.0);
}
