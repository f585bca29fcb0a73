#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "alphagen/metrics.hpp"
#include "oracles.hpp"

using namespace alphagen;

using oracle::pearson;

TEST(Normalize, ThreeValues) {
  const std::vector<double> v{1, 2, 3};
  auto n = normalize_cross_section(v);
  ASSERT_TRUE(n);
  EXPECT_NEAR((*n)[0], -1 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR((*n)[1], 0.0, 1e-15);
  EXPECT_NEAR((*n)[2], 1 / std::sqrt(2.0), 1e-15);
}

TEST(Normalize, ConstantIsDegenerate) {
  const std::vector<double> v{4, 4, 4};
  EXPECT_FALSE(normalize_cross_section(v));
  const std::vector<double> big{1e12, 1e12, 1e12};
  EXPECT_FALSE(normalize_cross_section(big));
}

TEST(Normalize, MissingStaysMissing) {
  const std::vector<double> v{1, kMissing, 3};
  auto n = normalize_cross_section(v);
  ASSERT_TRUE(n);
  EXPECT_TRUE(is_missing((*n)[1]));
  EXPECT_NEAR((*n)[0], -std::sqrt(0.5), 1e-15);
  const std::vector<double> single{kMissing, 2, kMissing};
  EXPECT_FALSE(normalize_cross_section(single));
}

TEST(Normalize, MeanZeroUnitLength) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(5, 3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v(2 + trial % 30);
    for (double& x : v) x = g(rng);
    auto n = *normalize_cross_section(v);
    double s = 0, ss = 0;
    for (double x : n) {
      s += x;
      ss += x * x;
    }
    EXPECT_NEAR(s, 0.0, 1e-12);
    EXPECT_NEAR(ss, 1.0, 1e-12);
  }
}

TEST(DailyIc, WorkedExample) {
  const std::vector<double> u{1, 2, 3, 4}, v{1, 3, 2, 4};
  EXPECT_NEAR(*daily_ic(u, v), 0.8, 1e-15);
}

TEST(DailyIc, PerfectAndAnti) {
  const std::vector<double> u{1, 2, 3}, v{10, 20, 30}, w{3, 2, 1};
  EXPECT_NEAR(*daily_ic(u, v), 1.0, 1e-15);
  EXPECT_NEAR(*daily_ic(u, w), -1.0, 1e-15);
}

TEST(DailyIc, PairwiseComplete) {
  const std::vector<double> u{1, 2, kMissing, 4}, v{2, kMissing, 5, 8};
  EXPECT_NEAR(*daily_ic(u, v), 1.0, 1e-15);
  const std::vector<double> a{1, kMissing}, b{kMissing, 1};
  EXPECT_FALSE(daily_ic(a, b));
}

TEST(DailyIc, ConstantSideIsUndefined) {
  const std::vector<double> u{1, 2, 3}, v{7, 7, 7};
  EXPECT_FALSE(daily_ic(u, v));
}

TEST(DailyIc, MatchesPearsonOracleAndNormalizedDot) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> u(3 + trial % 40), v(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) {
      u[i] = g(rng);
      v[i] = 0.5 * u[i] + g(rng);
    }
    const double ic = *daily_ic(u, v);
    EXPECT_NEAR(ic, pearson(u, v), 1e-12);
    auto nu = *normalize_cross_section(u), nv = *normalize_cross_section(v);
    double dot = 0;
    for (std::size_t i = 0; i < u.size(); ++i) dot += nu[i] * nv[i];
    EXPECT_NEAR(ic, dot, 1e-12);
  }
}

TEST(DailyIc, InvariantUnderPositiveAffineMaps) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0, 1);
  std::vector<double> u(20), v(20), w(20);
  for (std::size_t i = 0; i < u.size(); ++i) {
    u[i] = g(rng);
    v[i] = g(rng) + u[i];
    w[i] = 3.5 * u[i] - 7.0;
  }
  EXPECT_NEAR(*daily_ic(u, v), *daily_ic(w, v), 1e-12);
}

TEST(Ranks, FootnoteExamples) {
  const std::vector<double> a{3, -2, 6, 4};
  EXPECT_EQ(average_ranks(a), (std::vector<double>{2, 1, 4, 3}));
  const std::vector<double> b{3, -2, 4, 4};
  EXPECT_EQ(average_ranks(b), (std::vector<double>{2, 1, 3.5, 3.5}));
}

TEST(Ranks, AllTied) {
  const std::vector<double> v{5, 5, 5, 5};
  EXPECT_EQ(average_ranks(v), (std::vector<double>{2.5, 2.5, 2.5, 2.5}));
}

TEST(RankIc, MonotoneTransformIsOne) {
  const std::vector<double> u{1, 5, 2, 9, 3}, v{std::exp(1.0), std::exp(5.0), std::exp(2.0), std::exp(9.0), std::exp(3.0)};
  EXPECT_NEAR(*rank_ic(u, v), 1.0, 1e-15);
}

TEST(MeanIc, SkipsDegenerateDays) {
  Grid a(3, 3), b(3, 3);
  const double av[] = {1, 2, 3, 4, 4, 4, 1, 2, 3};
  const double bv[] = {1, 2, 3, 1, 2, 3, 3, 2, 1};
  for (int i = 0; i < 9; ++i) {
    a.raw()[i] = av[i];
    b.raw()[i] = bv[i];
  }
  EXPECT_NEAR(*mean_ic(a, b), 0.0, 1e-15);
  Grid c(2, 2, 1.0);
  EXPECT_FALSE(mean_ic(c, c));
}

TEST(MeanIc, AveragesDailyValues) {
  // Day rows chosen with daily ICs 0.2 and 0.4 against a common target.
  const std::vector<double> y{-1.5, -0.5, 0.5, 1.5};
  auto with_ic = [&](double rho) {
    const std::vector<double> e{0.5, -1.5, 1.5, -0.5};  // orthogonal to y, same norm
    std::vector<double> x(4);
    for (int i = 0; i < 4; ++i) x[i] = rho * y[i] + std::sqrt(1 - rho * rho) * e[i];
    return x;
  };
  Grid v(2, 4), t(2, 4);
  const auto d0 = with_ic(0.2), d1 = with_ic(0.4);
  for (int i = 0; i < 4; ++i) {
    v(0, i) = d0[i];
    v(1, i) = d1[i];
    t(0, i) = t(1, i) = y[i];
  }
  EXPECT_NEAR(*daily_ic(v.row(0), t.row(0)), 0.2, 1e-12);
  EXPECT_NEAR(*mean_ic(v, t), 0.3, 1e-12);
  EXPECT_NEAR(*mean_ic(t, t), 1.0, 1e-15);
}
