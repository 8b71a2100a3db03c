#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "datt/dataset.hpp"
#include "datt/metrics.hpp"
#include "datt/model.hpp"
#include "datt/pipeline.hpp"
#include "datt/preprocess.hpp"

namespace datt {

struct TrainSpec {
  int epochs = 1000;
  int batch_size = 32;
  double learning_rate = 8.6e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // Abort after `patience` epochs without a new best validation loss.
  bool early_stop = false;
  int patience = 50;
  int max_epochs_cv = 500;
  std::uint64_t seed = 42;
  // Frozen-context and SHAP-background sizes of the resulting model.
  std::size_t context_cap = 256;
  std::size_t background_size = 64;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainSpec& s);
void from_json(const nlohmann::json& j, TrainSpec& s);

// Standardised splits ready for the optimiser.
struct TrainingData {
  Tensor train_x;
  std::vector<double> train_y;
  Tensor val_x;
  std::vector<double> val_y;
  Tensor test_x;  // may be empty
  std::vector<double> test_y;
  TargetTransform target;
  // Standardised frozen-context rows used to score the validation split.
  Tensor context_x;
};

struct FitReport {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::vector<double> val_r2;
  int best_epoch = 0;  // 1-based; 0 when no epoch ran
  double best_val_loss = 0.0;
  std::optional<double> test_mape;  // percent, ohm*m scale
  std::optional<double> test_r2;
  std::size_t parameter_count = 0;
  std::uint64_t seed = 0;

  // Best validation R^2 seen during training; NaN without a defined value.
  double best_val_r2() const;
};

void to_json(nlohmann::json& j, const FitReport& r);
// "epoch,train_loss,val_loss" with one row per epoch.
std::string loss_curve_csv(const FitReport& r);

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long long t = 0;
};

// One bias-corrected Adam update of every tensor in params. A non-finite
// gradient raises NumericError naming the parameter and leaves params intact.
void adam_step(ParamStore& params, const std::vector<Tensor>& grads, AdamState& state,
               const TrainSpec& spec);
// Same update applied to graph leaves using their accumulated gradients.
void adam_step(BoundParams& params, AdamState& state, const TrainSpec& spec);

// Sorted row indices of the frozen context: all rows when n <= cap, otherwise
// a seeded subsample of cap rows.
std::vector<std::size_t> select_rows(std::size_t n, std::size_t cap, std::uint64_t seed);

struct TrainResult {
  ParamStore params;
  FitReport report;
};

// Mini-batch Adam on standardised data; returns the parameters of the epoch
// with the lowest validation loss. Test metrics, when a test split exists,
// are computed once with those parameters.
TrainResult train(const TrainingData& data, const ModelConfig& config, const TrainSpec& spec);

struct FitResult {
  TrainedModel model;
  FitReport report;
};

// Fits preprocessing on split.train, trains, and packages the pipeline.
FitResult fit_model(const Dataset& data, const DatasetSplit& split, const ModelConfig& config,
                    const TrainSpec& spec);

struct FoldReport {
  std::size_t fold = 0;
  std::size_t train_size = 0;
  std::size_t val_size = 0;
  int best_epoch = 0;
  double mape = 0.0;
  double r2 = 0.0;
};

struct CvReport {
  std::vector<FoldReport> folds;
  MeanStd mape;
  MeanStd r2;
  std::string summary() const;  // "MAPE m% ± s%, R² m ± s"
};

void to_json(nlohmann::json& j, const CvReport& r);

// k-fold cross-validation. Each fold trains for spec.max_epochs_cv epochs and
// is scored on its held-out rows at the best-validation checkpoint. Folds run
// in parallel on up to `threads` workers (0 = hardware concurrency).
CvReport cross_validate(const Dataset& data, const ModelConfig& config, const TrainSpec& spec,
                        std::size_t k = 10, std::uint64_t seed = 42, std::size_t threads = 0);

struct AblationRow {
  Variant variant;
  double test_mape = 0.0;
  double test_r2 = 0.0;
  int best_epoch = 0;
  std::size_t parameter_count = 0;
};

// Rows in the order mlp-only, feature-only, full.
std::vector<AblationRow> ablation(const Dataset& data, const DatasetSplit& split,
                                  const ModelConfig& base, const TrainSpec& spec,
                                  std::size_t threads = 0);
std::string format_ablation(const std::vector<AblationRow>& rows);

}  // namespace datt
