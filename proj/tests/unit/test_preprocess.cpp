#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "datt/errors.hpp"
#include "datt/preprocess.hpp"
#include "datt/rng.hpp"

namespace datt {
namespace {

// Textbook piecewise form, written with pow/log rather than expm1/log1p.
double yj_oracle(double x, double l) {
  if (x >= 0.0) return l == 0.0 ? std::log(x + 1.0) : (std::pow(x + 1.0, l) - 1.0) / l;
  return l == 2.0 ? -std::log(1.0 - x) : -(std::pow(1.0 - x, 2.0 - l) - 1.0) / (2.0 - l);
}

double ll_oracle(const std::vector<double>& xs, double l) {
  const double n = static_cast<double>(xs.size());
  std::vector<double> t;
  for (double x : xs) t.push_back(yj_oracle(x, l));
  const double m = std::accumulate(t.begin(), t.end(), 0.0) / n;
  double v = 0.0, jac = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    v += (t[i] - m) * (t[i] - m);
    jac += (xs[i] > 0 ? 1.0 : xs[i] < 0 ? -1.0 : 0.0) * std::log(std::abs(xs[i]) + 1.0);
  }
  return -0.5 * n * std::log(v / n) + (l - 1.0) * jac;
}

double grid_mle(const std::vector<double>& xs) {
  double best = -INFINITY, arg = 0.0;
  for (int i = -5000; i <= 5000; ++i) {
    const double l = i * 1e-3;
    const double v = ll_oracle(xs, l);
    if (v > best) {
      best = v;
      arg = l;
    }
  }
  return arg;
}

std::vector<double> lognormal_column(std::uint64_t seed, std::size_t n, double sigma, double shift) {
  Rng r(seed);
  std::vector<double> c(n);
  for (double& v : c) v = std::exp(sigma * r.normal()) - shift;
  return c;
}

TEST(YeoJohnson, DocumentedExamples) {
  EXPECT_DOUBLE_EQ(yeo_johnson(3.0, 1.0), 3.0);
  EXPECT_NEAR(yeo_johnson(std::exp(1.0) - 1.0, 0.0), 1.0, 1e-15);
  EXPECT_NEAR(yeo_johnson(-1.0, 2.0), -std::log(2.0), 1e-15);
}

TEST(YeoJohnson, FourBranchesMatchClosedForm) {
  Rng r(5);
  for (double l : {0.0, 1.0, 2.0, -1.3, 0.4, 3.7}) {
    for (int i = 0; i < 200; ++i) {
      const double x = r.uniform(-5.0, 5.0);
      EXPECT_NEAR(yeo_johnson(x, l), yj_oracle(x, l), 1e-12) << "x=" << x << " l=" << l;
    }
  }
}

TEST(YeoJohnson, ContinuousInLambdaAtBranchPoints) {
  for (double x : {0.5, 3.0}) EXPECT_NEAR(yeo_johnson(x, 1e-9), yeo_johnson(x, 0.0), 1e-8);
  for (double x : {-0.5, -3.0}) EXPECT_NEAR(yeo_johnson(x, 2.0 - 1e-9), yeo_johnson(x, 2.0), 1e-8);
}

TEST(YeoJohnson, InverseRoundTrip) {
  Rng r(6);
  for (double l : {0.0, 2.0, -2.5, 0.7, 1.0, 4.2}) {
    for (int i = 0; i < 500; ++i) {
      const double x = r.uniform(-10.0, 10.0);
      const double back = yeo_johnson_inverse(yeo_johnson(x, l), l);
      EXPECT_LE(std::abs(back - x), 1e-8 * std::max(1.0, std::abs(x)));
    }
  }
}

TEST(YeoJohnson, StrictlyIncreasing) {
  Rng r(7);
  for (int i = 0; i < 2000; ++i) {
    const double l = r.uniform(-5.0, 5.0);
    double a = r.uniform(-8.0, 8.0), b = r.uniform(-8.0, 8.0);
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    EXPECT_LT(yeo_johnson(a, l), yeo_johnson(b, l));
  }
}

TEST(FitLambda, MatchesGridOracle) {
  for (std::uint64_t s = 1; s <= 4; ++s) {
    const auto col = lognormal_column(s, 150, 0.5 + 0.2 * s, 1.0);
    EXPECT_NEAR(fit_lambda(col), grid_mle(col), 2e-3) << "seed " << s;
  }
}

TEST(FitLambda, GaussianColumnNearIdentity) {
  Rng r(8);
  std::vector<double> col(2000);
  for (double& v : col) v = 3.0 + r.normal();
  EXPECT_NEAR(fit_lambda(col), 1.0, 0.15);
}

TEST(FitLambda, ShiftedLognormalLosesSkew) {
  const auto col = lognormal_column(9, 2000, 1.0, 1.0);
  const double l = fit_lambda(col);
  std::vector<double> t;
  for (double x : col) t.push_back(yeo_johnson(x, l));
  EXPECT_LT(std::abs(skewness(t)), 0.2);
}

TEST(FitLambda, SkewnessNeverIncreases) {
  for (std::uint64_t s = 100; s < 200; ++s) {
    Rng r(s);
    const auto col = lognormal_column(s, 80, r.uniform(0.2, 1.5), r.uniform(-2.0, 2.0));
    const double l = fit_lambda(col);
    std::vector<double> t;
    for (double x : col) t.push_back(yeo_johnson(x, l));
    EXPECT_LE(std::abs(skewness(t)), std::abs(skewness(col)) + 1e-12) << "seed " << s;
  }
}

TEST(FitLambda, DeterministicAndRejectsDegenerate) {
  const auto col = lognormal_column(10, 50, 0.8, 0.0);
  const auto copy = col;
  EXPECT_EQ(fit_lambda(col), fit_lambda(copy));
  const std::vector<double> flat{2.0, 2.0, 2.0, 2.0};
  EXPECT_THROW(fit_lambda(flat), FitError);
  const std::vector<double> two{1.0, 2.0, 1.0, 2.0};
  EXPECT_THROW(fit_lambda(two), FitError);
}

TEST(LogLikelihood, MatchesOracle) {
  const auto col = lognormal_column(11, 60, 0.7, 0.5);
  for (double l : {-3.0, 0.0, 0.5, 2.0, 4.0}) {
    EXPECT_NEAR(yeo_johnson_log_likelihood(col, l), ll_oracle(col, l), 1e-8);
  }
}

Tensor skewed_matrix(std::uint64_t seed, std::size_t n) {
  Rng r(seed);
  Tensor x(Shape{n, 3});
  for (std::size_t i = 0; i < n; ++i) {
    x.at(i, 0) = std::exp(r.normal());
    x.at(i, 1) = r.uniform(-4.0, 4.0);
    x.at(i, 2) = 10.0 + 3.0 * r.normal();
  }
  return x;
}

TEST(FeatureTransform, StandardisesTrainingColumns) {
  const Tensor x = skewed_matrix(12, 300);
  const auto ft = FeatureTransform::fit(x);
  const Tensor z = ft.transform(x);
  for (std::size_t j = 0; j < 3; ++j) {
    double m = 0.0, v = 0.0;
    for (std::size_t i = 0; i < 300; ++i) m += z.at(i, j);
    m /= 300;
    for (std::size_t i = 0; i < 300; ++i) v += (z.at(i, j) - m) * (z.at(i, j) - m);
    EXPECT_NEAR(m, 0.0, 1e-10);
    EXPECT_NEAR(std::sqrt(v / 300), 1.0, 1e-10);
  }
}

TEST(FeatureTransform, RoundTrip) {
  const Tensor x = skewed_matrix(13, 100);
  const auto ft = FeatureTransform::fit(x);
  const Tensor back = ft.inverse_transform(ft.transform(x));
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_LE(std::abs(back[i] - x[i]), 1e-8 * std::max(1.0, std::abs(x[i])));
  }
}

TEST(FeatureTransform, FitUsesOnlyGivenRows) {
  const Tensor x = skewed_matrix(14, 200);
  std::vector<std::size_t> train(150), all(200);
  std::iota(train.begin(), train.end(), 0);
  std::iota(all.begin(), all.end(), 0);
  const auto on_train = FeatureTransform::fit(x.take_rows(train));
  const auto on_all = FeatureTransform::fit(x.take_rows(all));
  EXPECT_NE(on_train.lambdas, on_all.lambdas);
  // Applying to held-out rows leaves the fitted statistics untouched.
  const auto copy = on_train;
  std::vector<std::size_t> held(50);
  std::iota(held.begin(), held.end(), 150);
  (void)on_train.transform(x.take_rows(held));
  EXPECT_EQ(copy.lambdas, on_train.lambdas);
  EXPECT_EQ(copy.post_means, on_train.post_means);
}

TEST(FeatureTransform, ConstantColumnIsFitError) {
  Tensor x = skewed_matrix(15, 50);
  for (std::size_t i = 0; i < 50; ++i) x.at(i, 1) = 4.0;
  EXPECT_THROW(FeatureTransform::fit(x), FitError);
}

TEST(FeatureTransform, WrongWidthRejected) {
  const auto ft = FeatureTransform::fit(skewed_matrix(16, 40));
  EXPECT_THROW(ft.transform(Tensor(Shape{2, 4})), DimensionError);
}

TEST(TargetTransform, ZScoreRoundTrip) {
  const std::vector<double> y{300.0, 450.0, 600.0, 900.0};
  const auto t = TargetTransform::fit(y);
  EXPECT_NEAR(t.mean, 562.5, 1e-12);
  const auto z = t.forward(y);
  double s = 0.0, s2 = 0.0;
  for (double v : z) {
    s += v;
    s2 += v * v;
  }
  EXPECT_NEAR(s, 0.0, 1e-12);
  EXPECT_NEAR(s2 / 4, 1.0, 1e-12);
  const auto back = t.inverse(z);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(back[i], y[i], 1e-9);
  const std::vector<double> flat{5.0, 5.0};
  EXPECT_THROW(TargetTransform::fit(flat), FitError);
}

TEST(Split, SizesFollowFloorRule) {
  auto s = split_dataset(252, 1);
  EXPECT_EQ(s.train.size(), 202u);
  EXPECT_EQ(s.val.size(), 25u);
  EXPECT_EQ(s.test.size(), 25u);
  s = split_dataset(10, 1);
  EXPECT_EQ(s.train.size(), 8u);
  EXPECT_EQ(s.val.size(), 1u);
  EXPECT_EQ(s.test.size(), 1u);
  EXPECT_THROW(split_dataset(9, 1), ContractError);
}

TEST(Split, PartitionAndDeterminism) {
  const auto a = split_dataset(137, 3);
  const auto b = split_dataset(137, 3);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.val, b.val);
  EXPECT_EQ(a.test, b.test);
  std::set<std::size_t> all(a.train.begin(), a.train.end());
  all.insert(a.val.begin(), a.val.end());
  all.insert(a.test.begin(), a.test.end());
  EXPECT_EQ(all.size(), 137u);
  EXPECT_EQ(*all.rbegin(), 136u);
  EXPECT_TRUE(std::is_sorted(a.train.begin(), a.train.end()));
  EXPECT_NE(split_dataset(137, 4).test, a.test);
}

TEST(KFold, BalancedSizes) {
  const auto folds = kfold(252, 10, 42);
  ASSERT_EQ(folds.size(), 10u);
  std::multiset<std::size_t> sizes;
  std::set<std::size_t> seen;
  for (const auto& f : folds) {
    sizes.insert(f.val.size());
    EXPECT_EQ(f.train.size() + f.val.size(), 252u);
    for (std::size_t i : f.val) EXPECT_TRUE(seen.insert(i).second);
  }
  EXPECT_EQ(sizes, (std::multiset<std::size_t>{25, 25, 25, 25, 25, 25, 25, 25, 26, 26}));
  EXPECT_EQ(seen.size(), 252u);
  for (const auto& f : kfold(20, 10, 1)) EXPECT_EQ(f.val.size(), 2u);
  EXPECT_THROW(kfold(5, 10, 1), ContractError);
}

}  // namespace
}  // namespace datt
