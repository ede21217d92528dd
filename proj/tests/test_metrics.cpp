#include <gtest/gtest.h>

#include <cmath>

#include "drex/metrics.hpp"
#include "drex/rng.hpp"
#include "metric_oracle.hpp"

using namespace drex;
using namespace drex::metrics;

using drex::testing::oracle_pearson;
using drex::testing::oracle_ranks;
using drex::testing::with_ties;

TEST(Pearson, Examples) {
  const std::vector<double> c = {1, 2, 3};
  EXPECT_NEAR(pearson(c, c), 1.0, 1e-15);
  const std::vector<double> neg = {4, 3, 2};
  EXPECT_NEAR(pearson(c, neg), -1.0, 1e-15);
  EXPECT_NEAR(pearson(c, std::vector<double>{1, 3, 2}), 0.5, 1e-15);
}

TEST(Pearson, ZeroVarianceThrows) {
  EXPECT_THROW(pearson(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), DegenerateVarianceError);
  EXPECT_THROW(pearson(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}), std::invalid_argument);
  EXPECT_THROW(pearson(std::vector<double>{1}, std::vector<double>{1}), std::invalid_argument);
}

TEST(Pearson, AffineInvariance) {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> a(40), b(40), b2(40);
    for (std::size_t i = 0; i < 40; ++i) {
      a[i] = rng.normal();
      b[i] = a[i] + rng.normal();
    }
    const double scale = rng.uniform(0.1, 10), shift = rng.uniform(-5, 5);
    for (std::size_t i = 0; i < 40; ++i) b2[i] = scale * b[i] + shift;
    EXPECT_NEAR(pearson(a, b), pearson(a, b2), 1e-12);
  }
}

TEST(Spearman, Examples) {
  const std::vector<double> c = {1, 2, 3, 4, 5};
  EXPECT_NEAR(spearman(c, std::vector<double>{2, 4, 8, 16, 32}), 1.0, 1e-15);
  EXPECT_NEAR(spearman(c, std::vector<double>{5, 4, 3, 2, 1}), -1.0, 1e-15);
  const std::vector<double> tied = {1, 2, 2, 3};
  const auto r = average_ranks(tied);
  EXPECT_EQ(r, (std::vector<double>{1, 2.5, 2.5, 4}));
  // pearson([1,2.5,2.5,4],[1,2,3,4]) = 4.5 / sqrt(4.5 * 5)
  EXPECT_NEAR(spearman(tied, std::vector<double>{10, 20, 30, 40}), 4.5 / std::sqrt(22.5), 1e-15);
  EXPECT_NEAR(spearman(tied, std::vector<double>{10, 20, 30, 40}), 0.9487, 5e-5);
}

TEST(Spearman, AllEqualThrows) {
  EXPECT_THROW(spearman(std::vector<double>{2, 2, 2}, std::vector<double>{1, 2, 3}), DegenerateVarianceError);
}

TEST(Spearman, MonotoneInvariance) {
  Rng rng(2);
  for (int t = 0; t < 30; ++t) {
    std::vector<double> a(30), b(30), b2(30);
    for (std::size_t i = 0; i < 30; ++i) {
      a[i] = rng.normal();
      b[i] = a[i] + rng.normal();
      b2[i] = std::exp(3 * b[i]) + 1;
    }
    EXPECT_NEAR(spearman(a, b), spearman(a, b2), 1e-12);
  }
}

TEST(ErrorMetrics, Examples) {
  const std::vector<double> c = {0.5, 0.5};
  auto e = error_metrics(c, c);
  EXPECT_EQ(e.rmse, 0.0);
  EXPECT_EQ(e.mae, 0.0);
  e = error_metrics(std::vector<double>{1, 1}, std::vector<double>{0, 2});
  EXPECT_DOUBLE_EQ(e.rmse, 1.0);
  EXPECT_DOUBLE_EQ(e.mae, 1.0);
  e = error_metrics(std::vector<double>{0.1, 0.3}, std::vector<double>{0, 0});
  EXPECT_NEAR(e.rmse, std::sqrt(0.05), 1e-15);
  EXPECT_NEAR(e.mae, 0.2, 1e-15);
  EXPECT_THROW(error_metrics(std::vector<double>{}, std::vector<double>{}), std::invalid_argument);
}

TEST(ErrorMetrics, RmseDominatesMae) {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> a(17), b(17);
    for (std::size_t i = 0; i < 17; ++i) {
      a[i] = rng.uniform();
      b[i] = rng.uniform();
    }
    const auto e = error_metrics(a, b);
    EXPECT_GE(e.rmse, e.mae);
    EXPECT_GE(e.mae, 0.0);
  }
}

TEST(Metrics, AgreeWithBruteForceOracle) {
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    const auto c = with_ties(rng, 50);
    auto h = with_ties(rng, 50);
    for (std::size_t i = 0; i < 50; ++i) h[i] = 0.5 * h[i] + 0.5 * c[i];
    const auto m = evaluate(c, h);
    EXPECT_NEAR(m.pearson_r, oracle_pearson(c, h), 1e-10);
    EXPECT_NEAR(m.spearman_rho, oracle_pearson(oracle_ranks(c), oracle_ranks(h)), 1e-10);
    double sq = 0, ab = 0;
    for (std::size_t i = 0; i < 50; ++i) {
      sq += (c[i] - h[i]) * (c[i] - h[i]);
      ab += std::abs(c[i] - h[i]);
    }
    EXPECT_NEAR(m.rmse, std::sqrt(sq / 50), 1e-10);
    EXPECT_NEAR(m.mae, ab / 50, 1e-10);
    EXPECT_EQ(m.n, 50u);
  }
}

TEST(Metrics, ReportUsesFourDecimals) {
  MetricReport m{0.95814, 0.95, 0.123456, 0.1, 500};
  const auto s = format_report(m, "val_");
  EXPECT_NE(s.find("val_pearson_r: 0.9581\n"), std::string::npos);
  EXPECT_NE(s.find("val_rmse: 0.1235\n"), std::string::npos);
  EXPECT_NE(s.find("val_mae: 0.1000\n"), std::string::npos);
  EXPECT_NE(s.find("val_n: 500\n"), std::string::npos);
}
