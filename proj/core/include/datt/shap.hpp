#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "datt/tensor.hpp"

namespace datt {

// Batch model over raw feature rows [n, M] -> n outputs.
using BatchModel = std::function<std::vector<double>(const Tensor& rows)>;

// Coalitions are bitmasks: bit i set means feature i takes the explained
// instance's value.
using Coalition = std::uint64_t;

struct ShapExplanation {
  double base_value = 0.0;  // v(empty)
  std::vector<double> phi;
  double prediction = 0.0;  // f(x)
  std::vector<std::string> feature_names;

  // prediction - (base_value + sum phi)
  double additivity_residual() const;
};

void to_json(nlohmann::json& j, const ShapExplanation& e);

// v(S): mean over background rows z of f(h), h_i = x_i for i in S, z_i else.
double coalition_value(const BatchModel& model, std::span<const double> x, Coalition s,
                       const Tensor& background);
// Same for many coalitions through a single batched model call.
std::vector<double> coalition_values(const BatchModel& model, std::span<const double> x,
                                     std::span<const Coalition> coalitions, const Tensor& background);

inline constexpr std::size_t kMaxExactFeatures = 12;

// Enumerates all 2^M coalitions. M <= 12.
ShapExplanation exact_shapley(const BatchModel& model, std::span<const double> x,
                              const Tensor& background, std::vector<std::string> names = {});

// (M-1) / (C(M,s) s (M-s)) for 0 < s < M; +inf for s in {0, M}, which are
// handled as equality constraints. s > M is a ContractError.
double shapley_kernel_weight(std::size_t m, std::size_t s);

struct KernelShapOptions {
  // Enumerate every coalition (default). Otherwise draw n_samples coalitions
  // with sizes distributed by the Shapley kernel.
  bool exhaustive = true;
  std::size_t n_samples = 2048;
  std::uint64_t seed = 42;
};

// Weighted least squares over coalition indicators with the constraints
// phi_0 = v(empty) and sum phi = f(x) - v(empty) eliminated exactly.
// A rank-deficient system is an ExplanationError.
ShapExplanation kernel_shap(const BatchModel& model, std::span<const double> x,
                            const Tensor& background, const KernelShapOptions& options = {},
                            std::vector<std::string> names = {});

struct GlobalImportance {
  std::vector<double> mean_abs_phi;
  std::vector<std::size_t> ranking;  // feature indices, most important first
  std::vector<std::string> feature_names;
};

// Mean |phi_i| over the rows of `rows` (exhaustive KernelSHAP per row).
GlobalImportance global_importance(const BatchModel& model, const Tensor& rows,
                                   const Tensor& background, std::vector<std::string> names = {});
std::string format_importance(const GlobalImportance& g);

// Plain-text waterfall: base value, contributions ordered by |phi|, the
// reconstructed sum and the reported prediction.
std::string format_waterfall(const ShapExplanation& e);

}  // namespace datt
