#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "datt/tensor.hpp"

namespace datt {

// Yeo-Johnson power transform psi(x, lambda). Total on finite reals,
// strictly increasing in x, continuous in lambda.
double yeo_johnson(double x, double lambda);
double yeo_johnson_inverse(double y, double lambda);

// Profile log-likelihood of lambda:
//   -(n/2) ln(var(psi(x, lambda))) + (lambda - 1) * sum sign(x) ln(|x| + 1)
// with the population variance of the transformed column.
double yeo_johnson_log_likelihood(std::span<const double> column, double lambda);

inline constexpr double kLambdaLower = -5.0;
inline constexpr double kLambdaUpper = 5.0;
inline constexpr double kLambdaTolerance = 1e-6;

// Maximum-likelihood lambda by golden-section search on [-5, 5].
// Throws FitError when the column has fewer than three distinct values.
double fit_lambda(std::span<const double> column);

// Sample skewness (population moments).
double skewness(std::span<const double> column);

// Per-feature Yeo-Johnson followed by standardisation to zero mean and unit
// (population) variance, all statistics taken from the fitting rows only.
struct FeatureTransform {
  std::vector<double> lambdas;
  std::vector<double> post_means;
  std::vector<double> post_stds;

  // x is [rows, features].
  static FeatureTransform fit(const Tensor& x);
  std::size_t features() const noexcept { return lambdas.size(); }
  Tensor transform(const Tensor& x) const;
  Tensor inverse_transform(const Tensor& z) const;
  void validate() const;
};

// z-score of the resistivity target (ohm*m).
struct TargetTransform {
  double mean = 0.0;
  double std = 1.0;

  static TargetTransform fit(std::span<const double> y);
  double forward(double y) const noexcept { return (y - mean) / std; }
  double inverse(double z) const noexcept { return z * std + mean; }
  std::vector<double> forward(std::span<const double> y) const;
  std::vector<double> inverse(std::span<const double> z) const;
  void validate() const;
};

// 80/10/10 assignment of row indices. Each list is sorted ascending.
struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;
};

// n_val = n_test = floor(n / 10); the rest trains. Requires n >= 10.
DatasetSplit split_dataset(std::size_t n, std::uint64_t seed);

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

// k balanced folds (sizes differ by at most one, larger folds first) over a
// seeded shuffle. Every row is validated exactly once.
std::vector<Fold> kfold(std::size_t n, std::size_t k, std::uint64_t seed);

}  // namespace datt
