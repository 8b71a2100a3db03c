#include "datt/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <string>

#include "datt/autograd.hpp"
#include "datt/errors.hpp"
#include "datt/io.hpp"
#include "datt/parallel.hpp"
#include "datt/rng.hpp"

namespace datt {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Salts for streams derived from the master seed.
constexpr std::uint64_t kInitSalt = 1;
constexpr std::uint64_t kContextSalt = 2;
constexpr std::uint64_t kBackgroundSalt = 3;
constexpr std::uint64_t kEpochSalt = 0x1000;
constexpr std::uint64_t kFoldSalt = 0x100;

double r2_or_nan(std::span<const double> y, std::span<const double> yhat) {
  try {
    return r2(y, yhat);
  } catch (const MetricError&) {
    return kNaN;
  }
}

// Visits every (name, value, grad) triple; grad may be null for "all zero".
template <typename Visit>
void adam_apply(std::size_t n, AdamState& state, const TrainSpec& spec, Visit&& visit) {
  // visit(i) -> {const std::string&, Tensor&, const Tensor*}
  for (std::size_t i = 0; i < n; ++i) {
    auto [name, value, grad] = visit(i);
    if (grad && grad->size() != value.size()) {
      throw DimensionError("adam_step: gradient of '" + name + "' has shape " +
                           shape_string(grad->shape()) + ", parameter " + shape_string(value.shape()));
    }
    if (grad && !grad->all_finite()) throw NumericError("non-finite gradient in parameter '" + name + "'");
  }
  if (state.m.size() != n) {
    state.m.clear();
    state.v.clear();
    for (std::size_t i = 0; i < n; ++i) {
      auto [name, value, grad] = visit(i);
      (void)name;
      (void)grad;
      state.m.emplace_back(value.shape());
      state.v.emplace_back(value.shape());
    }
    state.t = 0;
  }
  ++state.t;
  const double b1 = spec.beta1, b2 = spec.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < n; ++i) {
    auto [name, value, grad] = visit(i);
    (void)name;
    double* m = state.m[i].data();
    double* v = state.v[i].data();
    double* p = value.data();
    const double* g = grad ? grad->data() : nullptr;
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double gj = g ? g[j] : 0.0;
      m[j] = b1 * m[j] + (1.0 - b1) * gj;
      v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p[j] -= spec.learning_rate * mhat / (std::sqrt(vhat) + spec.adam_eps);
    }
  }
}

struct Triple {
  const std::string& name;
  Tensor& value;
  const Tensor* grad;
};

}  // namespace

void TrainSpec::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning_rate must be > 0");
  if (!(beta1 > 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must lie in (0, 1)");
  if (!(beta2 > 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must lie in (0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
  if (early_stop && patience < 1) throw ConfigError("patience must be >= 1");
  if (max_epochs_cv < 0) throw ConfigError("max_epochs_cv must be >= 0");
  if (context_cap < 1) throw ConfigError("context_cap must be >= 1");
  if (background_size < 1) throw ConfigError("background_size must be >= 1");
}

void to_json(nlohmann::json& j, const TrainSpec& s) {
  j = nlohmann::json{{"epochs", s.epochs},
                     {"batch_size", s.batch_size},
                     {"learning_rate", s.learning_rate},
                     {"beta1", s.beta1},
                     {"beta2", s.beta2},
                     {"adam_eps", s.adam_eps},
                     {"early_stop", s.early_stop},
                     {"patience", s.patience},
                     {"max_epochs_cv", s.max_epochs_cv},
                     {"seed", s.seed},
                     {"context_cap", s.context_cap},
                     {"background_size", s.background_size}};
}

void from_json(const nlohmann::json& j, TrainSpec& s) {
  if (!j.is_object()) throw ConfigError("train spec must be a JSON object");
  static const char* const known[] = {"epochs", "batch_size", "learning_rate", "beta1",
                                      "beta2", "adam_eps", "early_stop", "patience",
                                      "max_epochs_cv", "seed", "context_cap", "background_size"};
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("unknown train spec field '" + key + "'");
  }
  try {
    TrainSpec d;
    s.epochs = j.value("epochs", d.epochs);
    s.batch_size = j.value("batch_size", d.batch_size);
    s.learning_rate = j.value("learning_rate", d.learning_rate);
    s.beta1 = j.value("beta1", d.beta1);
    s.beta2 = j.value("beta2", d.beta2);
    s.adam_eps = j.value("adam_eps", d.adam_eps);
    s.early_stop = j.value("early_stop", d.early_stop);
    s.patience = j.value("patience", d.patience);
    s.max_epochs_cv = j.value("max_epochs_cv", d.max_epochs_cv);
    s.seed = j.value("seed", d.seed);
    s.context_cap = j.value("context_cap", d.context_cap);
    s.background_size = j.value("background_size", d.background_size);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train spec: ") + e.what());
  }
}

double FitReport::best_val_r2() const {
  double best = kNaN;
  for (double r : val_r2) {
    if (std::isfinite(r) && (std::isnan(best) || r > best)) best = r;
  }
  return best;
}

void to_json(nlohmann::json& j, const FitReport& r) {
  auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  auto series = [](const std::vector<double>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (double x : v) a.push_back(std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr));
    return a;
  };
  j = nlohmann::json{{"seed", r.seed},
                     {"parameter_count", r.parameter_count},
                     {"best_epoch", r.best_epoch},
                     {"best_val_loss", r.val_loss.empty() ? nlohmann::json(nullptr)
                                                          : nlohmann::json(r.best_val_loss)},
                     {"best_val_r2", opt(std::isfinite(r.best_val_r2())
                                             ? std::optional<double>(r.best_val_r2())
                                             : std::nullopt)},
                     {"test_mape", opt(r.test_mape)},
                     {"test_r2", opt(r.test_r2)},
                     {"train_loss", series(r.train_loss)},
                     {"val_loss", series(r.val_loss)},
                     {"val_r2", series(r.val_r2)}};
}

std::string loss_curve_csv(const FitReport& r) {
  std::ostringstream out;
  out << "epoch,train_loss,val_loss\n";
  for (std::size_t e = 0; e < r.train_loss.size(); ++e) {
    out << e + 1 << ',' << format_number(r.train_loss[e]) << ',' << format_number(r.val_loss[e]) << '\n';
  }
  return out.str();
}

void adam_step(ParamStore& params, const std::vector<Tensor>& grads, AdamState& state,
               const TrainSpec& spec) {
  if (grads.size() != params.size()) {
    throw DimensionError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params.size()) + " parameters");
  }
  adam_apply(params.size(), state, spec, [&](std::size_t i) {
    return Triple{params.name(i), params.tensor(i), &grads[i]};
  });
}

void adam_step(BoundParams& params, AdamState& state, const TrainSpec& spec) {
  adam_apply(params.size(), state, spec, [&](std::size_t i) {
    ag::Node* node = params.var(i).node();
    return Triple{params.name(i), params.var(i).mutable_value(),
                  node->grad.empty() ? nullptr : &node->grad};
  });
}

std::vector<std::size_t> select_rows(std::size_t n, std::size_t cap, std::uint64_t seed) {
  std::vector<std::size_t> idx = iota_indices(n);
  if (n <= cap) return idx;
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(idx));
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  return idx;
}

TrainResult train(const TrainingData& data, const ModelConfig& config, const TrainSpec& spec) {
  config.validate();
  spec.validate();
  if (data.train_y.empty() || data.val_y.empty()) throw ContractError("train: empty train or validation split");
  const std::size_t nf = static_cast<std::size_t>(config.n_features);
  auto check = [&](const Tensor& x, std::size_t n, const char* what) {
    if (x.rank() != 2 || x.rows() != n || x.cols() != nf) {
      throw DimensionError(std::string("train: ") + what + " has shape " + shape_string(x.shape()));
    }
  };
  check(data.train_x, data.train_y.size(), "train_x");
  check(data.val_x, data.val_y.size(), "val_x");
  if (!data.test_y.empty()) check(data.test_x, data.test_y.size(), "test_x");

  TrainResult result;
  result.params = init_params(config, derive_seed(spec.seed, kInitSalt));
  FitReport& report = result.report;
  report.seed = spec.seed;
  report.parameter_count = result.params.parameter_count();
  report.best_val_loss = kNaN;

  const Tensor& context_x = data.context_x.empty() ? data.train_x : data.context_x;
  const bool uses_context = config.variant == Variant::kFull;

  auto score = [&](const BoundParams& bp, const Tensor& x) {
    ag::NoGradGuard no_grad;
    if (!uses_context) return predict_standardized(bp, config, x, nullptr);
    const ContextState ctx = encode_context(context_x, bp, config);
    return predict_standardized(bp, config, x, &ctx);
  };

  BoundParams bp = BoundParams::trainable(result.params);
  AdamState adam;
  const std::size_t n = data.train_y.size();
  const std::size_t batch = static_cast<std::size_t>(spec.batch_size);
  std::vector<std::size_t> order;
  std::vector<std::size_t> idx;
  int since_best = 0;

  for (int epoch = 1; epoch <= spec.epochs; ++epoch) {
    order = iota_indices(n);
    Rng rng(derive_seed(spec.seed, kEpochSalt + static_cast<std::uint64_t>(epoch)));
    rng.shuffle(std::span<std::size_t>(order));
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t end = std::min(n, start + batch);
      idx.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                 order.begin() + static_cast<std::ptrdiff_t>(end));
      Tensor yb(Shape{idx.size(), 1});
      for (std::size_t i = 0; i < idx.size(); ++i) yb[i] = data.train_y[idx[i]];
      bp.zero_grads();
      const ag::Var pred = forward(ag::constant(data.train_x.take_rows(idx)), bp, config);
      const ag::Var loss = ag::mse_loss(pred, yb);
      const double lv = loss.value()[0];
      if (!std::isfinite(lv)) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch) +
                           " (non-finite loss)");
      }
      ag::backward(loss);
      adam_step(bp, adam, spec);
      total += lv * static_cast<double>(idx.size());
    }
    report.train_loss.push_back(total / static_cast<double>(n));

    const std::vector<double> val_pred = score(bp, data.val_x);
    const double vl = mse(data.val_y, val_pred);
    if (!std::isfinite(vl)) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch) +
                         " (non-finite validation loss)");
    }
    report.val_loss.push_back(vl);
    report.val_r2.push_back(r2_or_nan(data.val_y, val_pred));
    if (report.best_epoch == 0 || vl < report.best_val_loss) {
      report.best_val_loss = vl;
      report.best_epoch = epoch;
      result.params = bp.snapshot();
      since_best = 0;
    } else if (spec.early_stop && ++since_best >= spec.patience) {
      break;
    }
  }

  if (!data.test_y.empty()) {
    const BoundParams best = BoundParams::frozen(result.params);
    const std::vector<double> z = score(best, data.test_x);
    const std::vector<double> y = data.target.inverse(data.test_y);
    const std::vector<double> yhat = data.target.inverse(z);
    report.test_mape = mape(y, yhat);
    if (y.size() >= 2) {
      const double r = r2_or_nan(y, yhat);
      if (std::isfinite(r)) report.test_r2 = r;
    }
  }
  return result;
}

namespace {

struct PreparedRun {
  FeatureTransform features;
  TargetTransform target;
  Tensor context_raw;
  TrainResult result;
};

PreparedRun run_training(const Dataset& train_set, const Dataset& val_set, const Dataset* test_set,
                         const ModelConfig& config, const TrainSpec& spec) {
  PreparedRun run;
  run.features = FeatureTransform::fit(train_set.features);
  run.target = TargetTransform::fit(train_set.targets);
  const std::vector<std::size_t> ctx =
      select_rows(train_set.size(), spec.context_cap, derive_seed(spec.seed, kContextSalt));
  run.context_raw = train_set.features.take_rows(ctx);

  TrainingData td;
  td.target = run.target;
  td.train_x = run.features.transform(train_set.features);
  td.train_y = run.target.forward(train_set.targets);
  td.val_x = run.features.transform(val_set.features);
  td.val_y = run.target.forward(val_set.targets);
  if (test_set && test_set->size() > 0) {
    td.test_x = run.features.transform(test_set->features);
    td.test_y = run.target.forward(test_set->targets);
  }
  td.context_x = run.features.transform(run.context_raw);
  run.result = train(td, config, spec);
  return run;
}

template <typename E>
bool rethrow_as(const std::exception& e, const std::string& prefix) {
  if (dynamic_cast<const E*>(&e)) throw E(prefix + e.what());
  return false;
}

[[noreturn]] void rethrow_with_prefix(const std::exception& e, const std::string& prefix) {
  rethrow_as<NumericError>(e, prefix) || rethrow_as<MetricError>(e, prefix) ||
      rethrow_as<FitError>(e, prefix) || rethrow_as<ConfigError>(e, prefix) ||
      rethrow_as<DimensionError>(e, prefix) || rethrow_as<DataError>(e, prefix);
  throw ContractError(prefix + e.what());
}

}  // namespace

FitResult fit_model(const Dataset& data, const DatasetSplit& split, const ModelConfig& config,
                    const TrainSpec& spec) {
  if (split.train.empty() || split.val.empty()) throw ContractError("fit_model: empty train or validation split");
  const Dataset train_set = data.subset(split.train);
  const Dataset val_set = data.subset(split.val);
  const Dataset test_set = split.test.empty() ? Dataset{} : data.subset(split.test);
  PreparedRun run = run_training(train_set, val_set, &test_set, config, spec);

  const std::vector<std::size_t> bg =
      select_rows(train_set.size(), spec.background_size, derive_seed(spec.seed, kBackgroundSalt));
  const FitReport& r = run.result.report;
  nlohmann::json meta{{"seed", spec.seed},
                      {"split_seed", split.seed},
                      {"train_rows", split.train.size()},
                      {"val_rows", split.val.size()},
                      {"test_rows", split.test.size()},
                      {"epochs", spec.epochs},
                      {"batch_size", spec.batch_size},
                      {"learning_rate", spec.learning_rate},
                      {"best_epoch", r.best_epoch},
                      {"best_val_loss", r.val_loss.empty() ? nlohmann::json(nullptr)
                                                           : nlohmann::json(r.best_val_loss)},
                      {"test_mape", r.test_mape ? nlohmann::json(*r.test_mape) : nlohmann::json(nullptr)},
                      {"test_r2", r.test_r2 ? nlohmann::json(*r.test_r2) : nlohmann::json(nullptr)}};
  TrainedModel model(config, std::move(run.result.params), run.features, run.target,
                     std::move(run.context_raw), train_set.features.take_rows(bg), std::move(meta));
  return FitResult{std::move(model), std::move(run.result.report)};
}

std::string CvReport::summary() const { return format_mape(mape) + ", " + format_r2(r2); }

void to_json(nlohmann::json& j, const CvReport& r) {
  nlohmann::json folds = nlohmann::json::array();
  for (const FoldReport& f : r.folds) {
    folds.push_back({{"fold", f.fold},
                     {"train_size", f.train_size},
                     {"val_size", f.val_size},
                     {"best_epoch", f.best_epoch},
                     {"mape", f.mape},
                     {"r2", f.r2}});
  }
  j = nlohmann::json{{"folds", folds},
                     {"mape_mean", r.mape.mean},
                     {"mape_std", r.mape.std},
                     {"r2_mean", r.r2.mean},
                     {"r2_std", r.r2.std},
                     {"summary", r.summary()}};
}

CvReport cross_validate(const Dataset& data, const ModelConfig& config, const TrainSpec& spec,
                        std::size_t k, std::uint64_t seed, std::size_t threads) {
  config.validate();
  spec.validate();
  const std::vector<Fold> folds = kfold(data.size(), k, seed);
  CvReport report;
  report.folds.resize(k);
  parallel_for(
      k,
      [&](std::size_t f) {
        try {
          const Dataset train_set = data.subset(folds[f].train);
          const Dataset val_set = data.subset(folds[f].val);
          TrainSpec fs = spec;
          fs.epochs = spec.max_epochs_cv;
          fs.seed = derive_seed(spec.seed, kFoldSalt + f);
          PreparedRun run = run_training(train_set, val_set, nullptr, config, fs);
          const int best_epoch = run.result.report.best_epoch;
          const TrainedModel model(config, std::move(run.result.params), run.features, run.target,
                                   std::move(run.context_raw), Tensor());
          const std::vector<double> pred = model.predict(val_set.features);
          FoldReport& fr = report.folds[f];
          fr.fold = f;
          fr.train_size = train_set.size();
          fr.val_size = val_set.size();
          fr.best_epoch = best_epoch;
          fr.mape = mape(val_set.targets, pred);
          fr.r2 = r2(val_set.targets, pred);
        } catch (const std::exception& e) {
          rethrow_with_prefix(e, "fold " + std::to_string(f) + ": ");
        }
      },
      threads);
  std::vector<double> mapes, r2s;
  for (const FoldReport& f : report.folds) {
    mapes.push_back(f.mape);
    r2s.push_back(f.r2);
  }
  report.mape = mean_std(mapes);
  report.r2 = mean_std(r2s);
  return report;
}

std::vector<AblationRow> ablation(const Dataset& data, const DatasetSplit& split,
                                  const ModelConfig& base, const TrainSpec& spec,
                                  std::size_t threads) {
  const Variant order[] = {Variant::kMlpOnly, Variant::kFeatureOnly, Variant::kFull};
  std::vector<AblationRow> rows(3);
  parallel_for(
      3,
      [&](std::size_t i) {
        ModelConfig c = base;
        c.variant = order[i];
        try {
          const FitResult fit = fit_model(data, split, c, spec);
          rows[i].variant = order[i];
          rows[i].test_mape = fit.report.test_mape.value_or(kNaN);
          rows[i].test_r2 = fit.report.test_r2.value_or(kNaN);
          rows[i].best_epoch = fit.report.best_epoch;
          rows[i].parameter_count = fit.report.parameter_count;
        } catch (const std::exception& e) {
          rethrow_with_prefix(e, std::string(variant_name(order[i])) + ": ");
        }
      },
      threads);
  return rows;
}

std::string format_ablation(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-14s %14s %10s %10s %8s\n", "variant", "test MAPE (%)", "test R2",
                "params", "best ep");
  out << buf;
  for (const AblationRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%-14s %14.4f %10.6f %10zu %8d\n",
                  std::string(variant_name(r.variant)).c_str(), r.test_mape, r.test_r2,
                  r.parameter_count, r.best_epoch);
    out << buf;
  }
  return out.str();
}

}  // namespace datt
