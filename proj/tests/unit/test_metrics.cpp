#include <gtest/gtest.h>

#include <numeric>

#include "datt/errors.hpp"
#include "datt/metrics.hpp"
#include "datt/rng.hpp"

namespace datt {
namespace {

using V = std::vector<double>;

TEST(Metrics, Mse) {
  EXPECT_EQ(mse(V{1, 2}, V{1, 2}), 0.0);
  EXPECT_EQ(mse(V{0, 0}, V{1, 1}), 1.0);
  EXPECT_EQ(mse(V{3}, V{1}), 4.0);
  EXPECT_THROW(mse(V{1, 2}, V{1}), Error);
}

TEST(Metrics, Mape) {
  EXPECT_EQ(mape(V{5, 7}, V{5, 7}), 0.0);
  EXPECT_NEAR(mape(V{100}, V{99}), 1.0, 1e-12);
  EXPECT_NEAR(mape(V{200, 400}, V{210, 380}), 5.0, 1e-12);
  EXPECT_THROW(mape(V{0, 1}, V{0, 1}), MetricError);
}

TEST(Metrics, R2) {
  EXPECT_EQ(r2(V{1, 2, 3}, V{1, 2, 3}), 1.0);
  EXPECT_EQ(r2(V{0, 2}, V{1, 1}), 0.0);
  EXPECT_THROW(r2(V{4, 4, 4}, V{1, 2, 3}), MetricError);
  EXPECT_THROW(r2(V{4}, V{4}), MetricError);
}

TEST(Metrics, RandomCrossChecks) {
  Rng r(1);
  for (int t = 0; t < 20; ++t) {
    V y(15);
    for (double& v : y) v = r.uniform(100, 900);
    const double m = std::accumulate(y.begin(), y.end(), 0.0) / y.size();
    EXPECT_NEAR(r2(y, V(y.size(), m)), 0.0, 1e-12);
    EXPECT_EQ(mape(y, y), 0.0);
  }
}

TEST(Metrics, MeanStdIsPopulation) {
  const MeanStd s = mean_std(V{1, 3});
  EXPECT_EQ(s.mean, 2.0);
  EXPECT_EQ(s.std, 1.0);
}

TEST(Metrics, PaperStyleFormatting) {
  EXPECT_EQ(format_mape({1.06, 0.30}), "MAPE 1.06% ± 0.30%");
  EXPECT_EQ(format_r2({0.9932, 0.006}), "R² 0.9932 ± 0.0060");
}

}  // namespace
}  // namespace datt
