#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "datt/model.hpp"
#include "datt/preprocess.hpp"
#include "datt/tensor.hpp"

namespace datt {

// Rows pushed through one no-grad forward call.
inline constexpr std::size_t kPredictChunk = 256;

// Predictions in standardised target units for standardised rows x. For the
// full variant a non-null context ([B_c, N_f], standardised) is used as the
// frozen sample-attention context; without one each chunk attends to itself.
std::vector<double> predict_standardized(const BoundParams& params, const ModelConfig& config,
                                         const Tensor& x, const ContextState* context);

// End-to-end regressor: raw soil features in, resistivity in ohm*m out.
// Immutable after construction and safe for concurrent predict() calls.
class TrainedModel {
 public:
  // context_rows and background_rows are raw feature rows. context_rows is
  // required for the full variant and ignored otherwise.
  TrainedModel(ModelConfig config, ParamStore params, FeatureTransform features,
               TargetTransform target, Tensor context_rows, Tensor background_rows,
               nlohmann::json metadata = nlohmann::json::object());

  const ModelConfig& config() const noexcept { return config_; }
  const ParamStore& params() const noexcept { return params_; }
  const FeatureTransform& feature_transform() const noexcept { return features_; }
  const TargetTransform& target_transform() const noexcept { return target_; }
  const Tensor& context_rows() const noexcept { return context_rows_; }
  const Tensor& background_rows() const noexcept { return background_rows_; }
  const nlohmann::json& metadata() const noexcept { return metadata_; }

  // raw_rows [n, N_f] -> n resistivities.
  std::vector<double> predict(const Tensor& raw_rows) const;
  double predict_one(std::span<const double> raw_row) const;

 private:
  ModelConfig config_;
  ParamStore params_;
  FeatureTransform features_;
  TargetTransform target_;
  Tensor context_rows_;
  Tensor background_rows_;
  nlohmann::json metadata_;
  std::shared_ptr<const BoundParams> bound_;
  std::shared_ptr<const ContextState> context_;
};

}  // namespace datt
