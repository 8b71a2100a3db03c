#include "datt/shap.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <bit>
#include <sstream>

#include <Eigen/Dense>

#include "datt/errors.hpp"
#include "datt/rng.hpp"

namespace datt {

namespace {

std::vector<std::string> default_names(std::vector<std::string> names, std::size_t m) {
  if (names.empty()) {
    for (std::size_t i = 0; i < m; ++i) names.push_back("x" + std::to_string(i));
  }
  if (names.size() != m) {
    throw ContractError("explanation: " + std::to_string(names.size()) + " names for " +
                        std::to_string(m) + " features");
  }
  return names;
}

void check_inputs(std::span<const double> x, const Tensor& background) {
  if (background.empty() || background.rank() != 2 || background.rows() == 0) {
    throw ContractError("explanation: background set is empty");
  }
  if (background.cols() != x.size()) {
    throw DimensionError("explanation: instance has " + std::to_string(x.size()) +
                         " features, background has " + std::to_string(background.cols()));
  }
  if (x.empty() || x.size() > 63) throw ContractError("explanation: feature count must lie in [1, 63]");
}

double binomial(std::size_t n, std::size_t k) {
  double r = 1.0;
  for (std::size_t i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return r;
}

}  // namespace

double ShapExplanation::additivity_residual() const {
  double total = base_value;
  for (double p : phi) total += p;
  return prediction - total;
}

void to_json(nlohmann::json& j, const ShapExplanation& e) {
  nlohmann::json phi = nlohmann::json::object();
  for (std::size_t i = 0; i < e.phi.size(); ++i) phi[e.feature_names[i]] = e.phi[i];
  j = nlohmann::json{{"base_value", e.base_value}, {"phi", phi}, {"prediction", e.prediction}};
}

std::vector<double> coalition_values(const BatchModel& model, std::span<const double> x,
                                     std::span<const Coalition> coalitions, const Tensor& background) {
  check_inputs(x, background);
  const std::size_t m = x.size();
  const std::size_t k = background.rows();
  if (coalitions.empty()) return {};
  Tensor rows(Shape{coalitions.size() * k, m});
  for (std::size_t c = 0; c < coalitions.size(); ++c) {
    if (m < 64 && (coalitions[c] >> m) != 0) throw ContractError("coalition names a feature out of range");
    for (std::size_t b = 0; b < k; ++b) {
      double* dst = rows.row(c * k + b).data();
      const double* z = background.row(b).data();
      for (std::size_t i = 0; i < m; ++i) dst[i] = (coalitions[c] >> i & 1U) ? x[i] : z[i];
    }
  }
  const std::vector<double> y = model(rows);
  if (y.size() != rows.rows()) {
    throw DimensionError("explanation: model returned " + std::to_string(y.size()) + " outputs for " +
                         std::to_string(rows.rows()) + " rows");
  }
  std::vector<double> v(coalitions.size());
  for (std::size_t c = 0; c < coalitions.size(); ++c) {
    double total = 0.0;
    for (std::size_t b = 0; b < k; ++b) total += y[c * k + b];
    v[c] = total / static_cast<double>(k);
  }
  return v;
}

double coalition_value(const BatchModel& model, std::span<const double> x, Coalition s,
                       const Tensor& background) {
  const Coalition one[] = {s};
  return coalition_values(model, x, one, background)[0];
}

ShapExplanation exact_shapley(const BatchModel& model, std::span<const double> x,
                              const Tensor& background, std::vector<std::string> names) {
  check_inputs(x, background);
  const std::size_t m = x.size();
  if (m > kMaxExactFeatures) {
    throw ContractError("exact_shapley: " + std::to_string(m) +
                        " features is too many for enumeration; use kernel_shap");
  }
  const Coalition full = (Coalition{1} << m) - 1;
  std::vector<Coalition> all(full + 1);
  std::iota(all.begin(), all.end(), Coalition{0});
  const std::vector<double> v = coalition_values(model, x, all, background);

  // w(s) = s! (M - s - 1)! / M!
  std::vector<double> w(m);
  for (std::size_t s = 0; s < m; ++s) w[s] = 1.0 / (static_cast<double>(m) * binomial(m - 1, s));

  ShapExplanation e;
  e.feature_names = default_names(std::move(names), m);
  e.base_value = v[0];
  e.prediction = v[full];
  e.phi.assign(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const Coalition bit = Coalition{1} << i;
    for (Coalition s = 0; s <= full; ++s) {
      if (s & bit) continue;
      const std::size_t size = static_cast<std::size_t>(std::popcount(s));
      e.phi[i] += w[size] * (v[s | bit] - v[s]);
    }
  }
  return e;
}

double shapley_kernel_weight(std::size_t m, std::size_t s) {
  if (s > m) throw ContractError("shapley_kernel_weight: coalition size exceeds feature count");
  if (s == 0 || s == m) return std::numeric_limits<double>::infinity();
  return static_cast<double>(m - 1) /
         (binomial(m, s) * static_cast<double>(s) * static_cast<double>(m - s));
}

ShapExplanation kernel_shap(const BatchModel& model, std::span<const double> x,
                            const Tensor& background, const KernelShapOptions& options,
                            std::vector<std::string> names) {
  check_inputs(x, background);
  const std::size_t m = x.size();
  const Coalition full = m == 64 ? ~Coalition{0} : (Coalition{1} << m) - 1;

  // Coalition -> total regression weight.
  std::map<Coalition, double> weights;
  if (options.exhaustive) {
    if (m > 20) throw ContractError("kernel_shap: exhaustive mode limited to 20 features");
    for (Coalition s = 1; s < full; ++s) {
      weights[s] = shapley_kernel_weight(m, static_cast<std::size_t>(std::popcount(s)));
    }
  } else if (m > 1) {
    if (options.n_samples == 0) throw ContractError("kernel_shap: n_samples must be positive");
    // Coalition sizes drawn with probability proportional to the total kernel
    // mass of that size, members uniformly; each draw carries unit weight.
    std::vector<double> size_mass(m, 0.0);
    double mass = 0.0;
    for (std::size_t s = 1; s < m; ++s) {
      size_mass[s] = 1.0 / (static_cast<double>(s) * static_cast<double>(m - s));
      mass += size_mass[s];
    }
    Rng rng(options.seed);
    std::vector<std::size_t> order(m);
    for (std::size_t draw = 0; draw < options.n_samples; ++draw) {
      double u = rng.uniform() * mass;
      std::size_t s = 1;
      while (s < m - 1 && u >= size_mass[s]) u -= size_mass[s++];
      std::iota(order.begin(), order.end(), std::size_t{0});
      Coalition c = 0;
      for (std::size_t j = 0; j < s; ++j) {
        std::swap(order[j], order[j + rng.below(m - j)]);
        c |= Coalition{1} << order[j];
      }
      weights[c] += 1.0;
    }
  }

  std::vector<Coalition> coalitions{0, full};
  for (const auto& [c, w] : weights) coalitions.push_back(c);
  const std::vector<double> v = coalition_values(model, x, coalitions, background);

  ShapExplanation e;
  e.feature_names = default_names(std::move(names), m);
  e.base_value = v[0];
  e.prediction = v[1];
  const double gap = e.prediction - e.base_value;
  if (m == 1) {
    e.phi = {gap};
    return e;
  }

  // phi_{M-1} = gap - sum_{j<M-1} phi_j; rows a_j = z_j - z_{M-1}.
  const std::size_t p = m - 1;
  const std::size_t rows = weights.size();
  Eigen::MatrixXd a(rows, p);
  Eigen::VectorXd y(rows);
  std::size_t r = 0;
  for (const auto& [c, w] : weights) {
    const double sw = std::sqrt(w);
    const double last = static_cast<double>(c >> p & 1U);
    for (std::size_t j = 0; j < p; ++j) a(r, j) = sw * (static_cast<double>(c >> j & 1U) - last);
    y(r) = sw * (v[r + 2] - e.base_value - last * gap);
    ++r;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  if (static_cast<std::size_t>(qr.rank()) < p) {
    throw ExplanationError("kernel_shap: coalition design has rank " + std::to_string(qr.rank()) +
                           ", need " + std::to_string(p) + "; draw more samples");
  }
  const Eigen::VectorXd sol = qr.solve(y);
  e.phi.assign(m, 0.0);
  double rest = gap;
  for (std::size_t j = 0; j < p; ++j) {
    e.phi[j] = sol(static_cast<Eigen::Index>(j));
    rest -= e.phi[j];
  }
  e.phi[p] = rest;
  return e;
}

GlobalImportance global_importance(const BatchModel& model, const Tensor& rows,
                                   const Tensor& background, std::vector<std::string> names) {
  if (rows.empty() || rows.rank() != 2 || rows.rows() == 0) throw ContractError("global_importance: no rows");
  const std::size_t m = rows.cols();
  GlobalImportance g;
  g.feature_names = default_names(std::move(names), m);
  g.mean_abs_phi.assign(m, 0.0);
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    const ShapExplanation e = kernel_shap(model, rows.row(r), background, {}, g.feature_names);
    for (std::size_t i = 0; i < m; ++i) g.mean_abs_phi[i] += std::abs(e.phi[i]);
  }
  for (double& v : g.mean_abs_phi) v /= static_cast<double>(rows.rows());
  g.ranking.resize(m);
  std::iota(g.ranking.begin(), g.ranking.end(), std::size_t{0});
  std::stable_sort(g.ranking.begin(), g.ranking.end(),
                   [&](std::size_t a, std::size_t b) { return g.mean_abs_phi[a] > g.mean_abs_phi[b]; });
  return g;
}

std::string format_importance(const GlobalImportance& g) {
  std::ostringstream out;
  char buf[128];
  for (std::size_t k = 0; k < g.ranking.size(); ++k) {
    const std::size_t i = g.ranking[k];
    std::snprintf(buf, sizeof buf, "%2zu. %-12s %12.4f\n", k + 1, g.feature_names[i].c_str(),
                  g.mean_abs_phi[i]);
    out << buf;
  }
  return out.str();
}

std::string format_waterfall(const ShapExplanation& e) {
  std::vector<std::size_t> order(e.phi.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(e.phi[a]) > std::abs(e.phi[b]); });
  std::ostringstream out;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-14s %12.3f\n", "E[f(X)]", e.base_value);
  out << buf;
  double running = e.base_value;
  for (std::size_t i : order) {
    running += e.phi[i];
    std::snprintf(buf, sizeof buf, "%-14s %+12.3f  -> %10.3f\n", e.feature_names[i].c_str(), e.phi[i], running);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "%-14s %12.3f\n", "base + sum", running);
  out << buf;
  std::snprintf(buf, sizeof buf, "%-14s %12.3f\n", "f(x)", e.prediction);
  out << buf;
  std::snprintf(buf, sizeof buf, "%-14s %12.3f\n", "residual", e.prediction - running);
  out << buf;
  return out.str();
}

}  // namespace datt
