#include "datt/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "datt/autograd.hpp"
#include "datt/errors.hpp"

namespace datt {

std::vector<double> predict_standardized(const BoundParams& params, const ModelConfig& config,
                                         const Tensor& x, const ContextState* context) {
  ag::NoGradGuard no_grad;
  if (x.rank() != 2) throw DimensionError("predict: expected rows [n, N_f], got " + shape_string(x.shape()));
  const std::size_t n = x.rows();
  std::vector<double> out;
  out.reserve(n);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += kPredictChunk) {
    const std::size_t end = std::min(n, start + kPredictChunk);
    idx.resize(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
    const Tensor chunk = (start == 0 && end == n) ? x : x.take_rows(idx);
    const ContextState* ctx = config.variant == Variant::kFull ? context : nullptr;
    const ag::Var y = forward(ag::constant(chunk), params, config, ctx);
    for (std::size_t i = 0; i < y.value().rows(); ++i) out.push_back(y.value().at(i, 0));
  }
  return out;
}

TrainedModel::TrainedModel(ModelConfig config, ParamStore params, FeatureTransform features,
                           TargetTransform target, Tensor context_rows, Tensor background_rows,
                           nlohmann::json metadata)
    : config_(std::move(config)),
      params_(std::move(params)),
      features_(std::move(features)),
      target_(target),
      context_rows_(std::move(context_rows)),
      background_rows_(std::move(background_rows)),
      metadata_(std::move(metadata)) {
  config_.validate();
  check_layout(params_, config_);
  features_.validate();
  target_.validate();
  if (features_.features() != static_cast<std::size_t>(config_.n_features)) {
    throw ContractError("feature transform covers " + std::to_string(features_.features()) +
                        " features, config has " + std::to_string(config_.n_features));
  }
  if (config_.out_dim != 1) throw ConfigError("pipeline supports a single output only");
  bound_ = std::make_shared<const BoundParams>(BoundParams::frozen(params_));
  if (config_.variant == Variant::kFull) {
    if (context_rows_.empty()) throw ContractError("full variant needs frozen context rows");
    ag::NoGradGuard no_grad;
    context_ = std::make_shared<const ContextState>(
        encode_context(features_.transform(context_rows_), *bound_, config_));
  } else {
    context_rows_ = Tensor();
  }
}

std::vector<double> TrainedModel::predict(const Tensor& raw_rows) const {
  const std::vector<double> z =
      predict_standardized(*bound_, config_, features_.transform(raw_rows), context_.get());
  std::vector<double> y = target_.inverse(z);
  for (double v : y) {
    if (!std::isfinite(v)) throw NumericError("prediction is not finite");
  }
  return y;
}

double TrainedModel::predict_one(std::span<const double> raw_row) const {
  Tensor x(Shape{1, raw_row.size()}, std::vector<double>(raw_row.begin(), raw_row.end()));
  return predict(x)[0];
}

}  // namespace datt
