#pragma once

#include <span>
#include <string>

namespace datt {

// (1/n) sum (y - yhat)^2
double mse(std::span<const double> y, std::span<const double> yhat);
// (100/n) sum |y - yhat| / |y|. Any zero target is a MetricError.
double mape(std::span<const double> y, std::span<const double> yhat);
// 1 - SSE/SST. Needs n >= 2 and a non-constant target.
double r2(std::span<const double> y, std::span<const double> yhat);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population
};

MeanStd mean_std(std::span<const double> values);

// "MAPE 1.06% ± 0.30%"
std::string format_mape(const MeanStd& s);
// "R² 0.9932 ± 0.0060"
std::string format_r2(const MeanStd& s);

}  // namespace datt
