#include "datt/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "datt/errors.hpp"
#include "datt/rng.hpp"

namespace datt {

double yeo_johnson(double x, double lambda) {
  if (x >= 0.0) {
    if (lambda == 0.0) return std::log1p(x);
    return std::expm1(lambda * std::log1p(x)) / lambda;
  }
  const double p = 2.0 - lambda;
  if (p == 0.0) return -std::log1p(-x);
  return -std::expm1(p * std::log1p(-x)) / p;
}

double yeo_johnson_inverse(double y, double lambda) {
  if (y >= 0.0) {
    if (lambda == 0.0) return std::expm1(y);
    const double base = lambda * y;
    if (base <= -1.0) throw ContractError("yeo_johnson_inverse: value outside transform range");
    return std::expm1(std::log1p(base) / lambda);
  }
  const double p = 2.0 - lambda;
  if (p == 0.0) return -std::expm1(-y);
  const double base = -p * y;
  if (base <= -1.0) throw ContractError("yeo_johnson_inverse: value outside transform range");
  return -std::expm1(std::log1p(base) / p);
}

double yeo_johnson_log_likelihood(std::span<const double> column, double lambda) {
  const double n = static_cast<double>(column.size());
  double mean = 0.0;
  for (double x : column) mean += yeo_johnson(x, lambda);
  mean /= n;
  double var = 0.0;
  double jacobian = 0.0;
  for (double x : column) {
    const double d = yeo_johnson(x, lambda) - mean;
    var += d * d;
    jacobian += std::copysign(std::log1p(std::abs(x)), x);
  }
  var /= n;
  return -0.5 * n * std::log(var) + (lambda - 1.0) * jacobian;
}

double fit_lambda(std::span<const double> column) {
  std::vector<double> sorted(column.begin(), column.end());
  std::sort(sorted.begin(), sorted.end());
  const auto distinct = std::unique(sorted.begin(), sorted.end()) - sorted.begin();
  if (distinct < 3) {
    throw FitError("fit_lambda: need at least 3 distinct values, got " + std::to_string(distinct));
  }
  for (double x : column) {
    if (!std::isfinite(x)) throw FitError("fit_lambda: non-finite value in column");
  }
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = kLambdaLower, b = kLambdaUpper;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = yeo_johnson_log_likelihood(column, c);
  double fd = yeo_johnson_log_likelihood(column, d);
  while (b - a > kLambdaTolerance) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = yeo_johnson_log_likelihood(column, c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = yeo_johnson_log_likelihood(column, d);
    }
  }
  return 0.5 * (a + b);
}

double skewness(std::span<const double> column) {
  const double n = static_cast<double>(column.size());
  double mean = 0.0;
  for (double x : column) mean += x;
  mean /= n;
  double m2 = 0.0, m3 = 0.0;
  for (double x : column) {
    const double d = x - mean;
    m2 += d * d;
    m3 += d * d * d;
  }
  m2 /= n;
  m3 /= n;
  if (m2 <= 0.0) return 0.0;
  return m3 / std::pow(m2, 1.5);
}

namespace {

std::vector<double> column_of(const Tensor& x, std::size_t j) {
  std::vector<double> col(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) col[r] = x.at(r, j);
  return col;
}

void mean_std(std::span<const double> v, double& mean, double& std) {
  mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  std = std::sqrt(var / static_cast<double>(v.size()));
}

}  // namespace

FeatureTransform FeatureTransform::fit(const Tensor& x) {
  FeatureTransform t;
  const std::size_t f = x.cols();
  for (std::size_t j = 0; j < f; ++j) {
    std::vector<double> col = column_of(x, j);
    double lambda;
    try {
      lambda = fit_lambda(col);
    } catch (const FitError& e) {
      throw FitError("feature " + std::to_string(j) + ": " + e.what());
    }
    for (double& v : col) v = yeo_johnson(v, lambda);
    double mean, std;
    mean_std(col, mean, std);
    if (!(std > 0.0)) throw FitError("feature " + std::to_string(j) + " is degenerate after transform");
    t.lambdas.push_back(lambda);
    t.post_means.push_back(mean);
    t.post_stds.push_back(std);
  }
  return t;
}

void FeatureTransform::validate() const {
  if (lambdas.empty() || post_means.size() != lambdas.size() ||
      post_stds.size() != lambdas.size()) {
    throw FitError("feature transform: inconsistent parameter counts");
  }
  for (double s : post_stds) {
    if (!(s > 0.0) || !std::isfinite(s)) throw FitError("feature transform: std must be positive");
  }
}

Tensor FeatureTransform::transform(const Tensor& x) const {
  if (x.cols() != features()) {
    throw DimensionError("feature transform expects " + std::to_string(features()) +
                         " columns, got " + std::to_string(x.cols()));
  }
  Tensor z(x.shape());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t j = 0; j < features(); ++j) {
      z.at(r, j) = (yeo_johnson(x.at(r, j), lambdas[j]) - post_means[j]) / post_stds[j];
    }
  }
  return z;
}

Tensor FeatureTransform::inverse_transform(const Tensor& z) const {
  if (z.cols() != features()) {
    throw DimensionError("feature transform expects " + std::to_string(features()) +
                         " columns, got " + std::to_string(z.cols()));
  }
  Tensor x(z.shape());
  for (std::size_t r = 0; r < z.rows(); ++r) {
    for (std::size_t j = 0; j < features(); ++j) {
      x.at(r, j) = yeo_johnson_inverse(z.at(r, j) * post_stds[j] + post_means[j], lambdas[j]);
    }
  }
  return x;
}

TargetTransform TargetTransform::fit(std::span<const double> y) {
  if (y.empty()) throw FitError("target transform: empty target");
  TargetTransform t;
  mean_std(y, t.mean, t.std);
  if (!(t.std > 0.0)) throw FitError("target transform: constant target");
  return t;
}

std::vector<double> TargetTransform::forward(std::span<const double> y) const {
  std::vector<double> out(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) out[i] = forward(y[i]);
  return out;
}

std::vector<double> TargetTransform::inverse(std::span<const double> z) const {
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = inverse(z[i]);
  return out;
}

void TargetTransform::validate() const {
  if (!(std > 0.0) || !std::isfinite(std) || !std::isfinite(mean)) {
    throw FitError("target transform: std must be positive and finite");
  }
}

DatasetSplit split_dataset(std::size_t n, std::uint64_t seed) {
  if (n < 10) throw ContractError("split_dataset: need n >= 10, got " + std::to_string(n));
  std::vector<std::size_t> perm = iota_indices(n);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(perm));
  const std::size_t n_hold = n / 10;
  DatasetSplit s;
  s.seed = seed;
  s.val.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_hold));
  s.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_hold),
                perm.begin() + static_cast<std::ptrdiff_t>(2 * n_hold));
  s.train.assign(perm.begin() + static_cast<std::ptrdiff_t>(2 * n_hold), perm.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

std::vector<Fold> kfold(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2 || k > n) {
    throw ContractError("kfold: need 2 <= k <= n, got k=" + std::to_string(k) +
                        " n=" + std::to_string(n));
  }
  std::vector<std::size_t> perm = iota_indices(n);
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(perm));
  const std::size_t base = n / k, extra = n % k;
  std::vector<Fold> folds(k);
  std::size_t start = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t len = base + (f < extra ? 1 : 0);
    folds[f].val.assign(perm.begin() + static_cast<std::ptrdiff_t>(start),
                        perm.begin() + static_cast<std::ptrdiff_t>(start + len));
    std::sort(folds[f].val.begin(), folds[f].val.end());
    start += len;
  }
  for (std::size_t f = 0; f < k; ++f) {
    for (std::size_t g = 0; g < k; ++g) {
      if (g != f) folds[f].train.insert(folds[f].train.end(), folds[g].val.begin(), folds[g].val.end());
    }
    std::sort(folds[f].train.begin(), folds[f].train.end());
  }
  return folds;
}

}  // namespace datt
