#include "datt/metrics.hpp"

#include <cmath>
#include <cstdio>

#include "datt/errors.hpp"

namespace datt {

namespace {

void check_lengths(std::span<const double> y, std::span<const double> yhat, const char* metric) {
  if (y.size() != yhat.size()) {
    throw MetricError(std::string(metric) + ": length mismatch " + std::to_string(y.size()) +
                      " vs " + std::to_string(yhat.size()));
  }
  if (y.empty()) throw MetricError(std::string(metric) + ": empty input");
}

}  // namespace

double mse(std::span<const double> y, std::span<const double> yhat) {
  check_lengths(y, yhat, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - yhat[i]) * (y[i] - yhat[i]);
  return s / static_cast<double>(y.size());
}

double mape(std::span<const double> y, std::span<const double> yhat) {
  check_lengths(y, yhat, "mape");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] == 0.0) throw MetricError("mape: target " + std::to_string(i) + " is zero");
    s += std::abs(y[i] - yhat[i]) / std::abs(y[i]);
  }
  return 100.0 * s / static_cast<double>(y.size());
}

double r2(std::span<const double> y, std::span<const double> yhat) {
  check_lengths(y, yhat, "r2");
  if (y.size() < 2) throw MetricError("r2: need at least 2 values");
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double sse = 0.0, sst = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    sse += (y[i] - yhat[i]) * (y[i] - yhat[i]);
    sst += (y[i] - mean) * (y[i] - mean);
  }
  if (sst == 0.0) throw MetricError("r2: constant target");
  return 1.0 - sse / sst;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  if (values.empty()) return out;
  for (double v : values) out.mean += v;
  out.mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(var / static_cast<double>(values.size()));
  return out;
}

std::string format_mape(const MeanStd& s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "MAPE %.2f%% ± %.2f%%", s.mean, s.std);
  return buf;
}

std::string format_r2(const MeanStd& s) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "R² %.4f ± %.4f", s.mean, s.std);
  return buf;
}

}  // namespace datt
