// datt: train, evaluate, tune, explain and serve soil-resistivity models.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "datt/dataset.hpp"
#include "datt/errors.hpp"
#include "datt/io.hpp"
#include "datt/metrics.hpp"
#include "datt/pso.hpp"
#include "datt/serve.hpp"
#include "datt/shap.hpp"
#include "datt/train.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

struct RunConfig {
  datt::ModelConfig model;
  datt::TrainSpec train;
};

RunConfig load_run_config(const std::string& path) {
  RunConfig rc;
  if (path.empty()) return rc;
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(datt::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw datt::ConfigError("config '" + path + "': " + e.what());
  }
  if (!j.is_object()) throw datt::ConfigError("config '" + path + "' must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (key != "model" && key != "train") throw datt::ConfigError("config: unknown section '" + key + "'");
  }
  if (j.contains("model")) rc.model = j.at("model").get<datt::ModelConfig>();
  if (j.contains("train")) rc.train = j.at("train").get<datt::TrainSpec>();
  rc.model.validate();
  rc.train.validate();
  return rc;
}

void announce_seed(std::uint64_t seed) { std::cerr << "seed: " << seed << '\n'; }

datt::Dataset load_labelled(const std::string& path) {
  const auto samples = datt::load_csv(path);
  return datt::to_dataset(samples);
}

datt::SoilSample sample_from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw datt::DataError("--row must be a JSON object");
  std::array<double, datt::kSoilFeatures> f{};
  for (std::size_t i = 0; i < datt::kSoilFeatures; ++i) {
    const std::string name(datt::kFeatureNames[i]);
    if (!j.contains(name) || !j.at(name).is_number()) {
      throw datt::DataError("--row: field '" + name + "' missing or not a number");
    }
    f[i] = j.at(name).get<double>();
  }
  datt::SoilSample s = datt::SoilSample::from_features(f);
  if (const auto bad = datt::check_invariants(s)) throw datt::DataError("--row: " + bad->field + ": " + bad->message);
  return s;
}

std::uint64_t model_seed(const datt::TrainedModel& m) { return m.metadata().value("seed", std::uint64_t{0}); }

std::vector<std::string> feature_names() {
  return {datt::kFeatureNames.begin(), datt::kFeatureNames.end()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dual-attention tabular transformer for soil resistivity"};
  app.require_subcommand(1);

  std::string data_path, config_path, out_path, model_path, row_json, report_path, loss_path;
  std::string trace_path, best_path, static_dir, host = "0.0.0.0";
  std::optional<std::uint64_t> seed;
  std::size_t folds = 10, particles = 10, iterations = 15, n_rows = 252, threads = 0;
  std::optional<std::size_t> index;
  int inner_epochs = 100, port = 8080;
  double noise = 0.0;

  auto* train = app.add_subcommand("train", "Train a model and save it");
  train->add_option("--data", data_path, "Labelled CSV")->required();
  train->add_option("--config", config_path, "JSON with optional 'model' and 'train' sections");
  train->add_option("--out", out_path, "Model file to write")->required();
  train->add_option("--seed", seed, "Master seed (overrides the config)");
  train->add_option("--report", report_path, "Write the fit report as JSON");
  train->add_option("--loss-csv", loss_path, "Write epoch,train_loss,val_loss");

  auto* eval = app.add_subcommand("eval", "Score a model on a labelled CSV");
  eval->add_option("--model", model_path)->required();
  eval->add_option("--data", data_path)->required();

  auto* cv = app.add_subcommand("cv", "k-fold cross-validation");
  cv->add_option("--data", data_path)->required();
  cv->add_option("--config", config_path);
  cv->add_option("--folds", folds)->capture_default_str();
  cv->add_option("--seed", seed);
  cv->add_option("--threads", threads, "Parallel folds (0 = all cores)");
  cv->add_option("--report", report_path, "Write the CV report as JSON");

  auto* pso = app.add_subcommand("pso", "Particle-swarm hyperparameter search");
  pso->add_option("--data", data_path)->required();
  pso->add_option("--config", config_path, "Base config for fields outside the search space");
  pso->add_option("--particles", particles)->capture_default_str();
  pso->add_option("--iters", iterations)->capture_default_str();
  pso->add_option("--inner-epochs", inner_epochs)->capture_default_str();
  pso->add_option("--seed", seed);
  pso->add_option("--threads", threads);
  pso->add_option("--trace", trace_path, "Write the swarm trace CSV");
  pso->add_option("--best", best_path, "Write the winning config JSON");

  auto* ablate = app.add_subcommand("ablate", "Train mlp-only, feature-only and full variants");
  ablate->add_option("--data", data_path)->required();
  ablate->add_option("--config", config_path);
  ablate->add_option("--seed", seed);
  ablate->add_option("--threads", threads);

  auto* explain = app.add_subcommand("explain", "KernelSHAP attribution of one row");
  explain->add_option("--model", model_path)->required();
  auto* row_opt = explain->add_option("--row", row_json, "JSON object with the six features");
  auto* index_opt = explain->add_option("--index", index, "Row of --data to explain (0-based)");
  explain->add_option("--data", data_path);
  row_opt->excludes(index_opt);
  index_opt->needs(explain->get_option("--data"));

  auto* predict = app.add_subcommand("predict", "Predict one row");
  predict->add_option("--model", model_path)->required();
  predict->add_option("--row", row_json)->required();

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic labelled CSV");
  gen->add_option("--n", n_rows)->required();
  gen->add_option("--seed", seed)->required();
  gen->add_option("--out", out_path)->required();
  gen->add_option("--noise", noise, "Gaussian noise sd in ohm*m")->capture_default_str();

  auto* serve = app.add_subcommand("serve", "HTTP prediction service");
  serve->add_option("--model", model_path)->required();
  serve->add_option("--port", port)->capture_default_str();
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--static", static_dir, "Directory served at /");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) {
      RunConfig rc = load_run_config(config_path);
      if (seed) rc.train.seed = *seed;
      announce_seed(rc.train.seed);
      const datt::Dataset data = load_labelled(data_path);
      const datt::DatasetSplit split = datt::split_dataset(data.size(), rc.train.seed);
      const datt::FitResult fit = datt::fit_model(data, split, rc.model, rc.train);
      datt::save_model(out_path, fit.model);
      if (!report_path.empty()) datt::write_file_atomic(report_path, nlohmann::json(fit.report).dump(2) + "\n");
      if (!loss_path.empty()) datt::write_file_atomic(loss_path, datt::loss_curve_csv(fit.report));
      nlohmann::json summary{{"model", out_path},
                             {"parameter_count", fit.report.parameter_count},
                             {"best_epoch", fit.report.best_epoch},
                             {"test_mape", fit.report.test_mape ? nlohmann::json(*fit.report.test_mape) : nlohmann::json()},
                             {"test_r2", fit.report.test_r2 ? nlohmann::json(*fit.report.test_r2) : nlohmann::json()}};
      std::cout << summary.dump() << '\n';
    } else if (*eval) {
      const datt::TrainedModel model = datt::load_model(model_path);
      announce_seed(model_seed(model));
      const datt::Dataset data = load_labelled(data_path);
      const std::vector<double> pred = model.predict(data.features);
      nlohmann::json out{{"n", data.size()}, {"mape", datt::mape(data.targets, pred)}};
      if (data.size() >= 2) out["r2"] = datt::r2(data.targets, pred);
      std::cout << out.dump() << '\n';
    } else if (*cv) {
      RunConfig rc = load_run_config(config_path);
      if (seed) rc.train.seed = *seed;
      announce_seed(rc.train.seed);
      const datt::Dataset data = load_labelled(data_path);
      const datt::CvReport report = datt::cross_validate(data, rc.model, rc.train, folds, rc.train.seed, threads);
      for (const datt::FoldReport& f : report.folds) {
        std::printf("fold %2zu  n_val=%3zu  best_epoch=%4d  MAPE %.4f%%  R² %.6f\n", f.fold, f.val_size,
                    f.best_epoch, f.mape, f.r2);
      }
      std::printf("%s\n%s\n", datt::format_mape(report.mape).c_str(), datt::format_r2(report.r2).c_str());
      if (!report_path.empty()) datt::write_file_atomic(report_path, nlohmann::json(report).dump(2) + "\n");
    } else if (*pso) {
      RunConfig rc = load_run_config(config_path);
      if (seed) rc.train.seed = *seed;
      announce_seed(rc.train.seed);
      const datt::Dataset data = load_labelled(data_path);
      const datt::DatasetSplit split = datt::split_dataset(data.size(), rc.train.seed);
      const datt::SearchSpace space = datt::SearchSpace::table2();
      datt::SearchOptions opts;
      opts.particles = particles;
      opts.iterations = iterations;
      opts.seed = rc.train.seed;
      opts.threads = threads;
      const datt::Objective objective = [&](std::span<const double> pos) {
        return datt::hyperparameter_fitness(pos, data, split, rc.model, rc.train, inner_epochs);
      };
      const datt::SearchResult result = datt::search(space, objective, opts);
      for (const datt::TraceEntry& e : result.trace.entries) {
        std::fprintf(stderr, "iteration %2d  best R² %.6f\n", e.iteration, -e.best_fitness);
      }
      RunConfig best = rc;
      datt::apply_position(result.best_position, best.model, best.train);
      const nlohmann::json best_json{{"model", best.model}, {"train", best.train}};
      if (!trace_path.empty()) datt::write_file_atomic(trace_path, datt::trace_csv(result.trace, space));
      if (!best_path.empty()) datt::write_file_atomic(best_path, best_json.dump(2) + "\n");
      std::cout << nlohmann::json{{"best_r2", -result.best_fitness}, {"config", best_json}}.dump() << '\n';
    } else if (*ablate) {
      RunConfig rc = load_run_config(config_path);
      if (seed) rc.train.seed = *seed;
      announce_seed(rc.train.seed);
      const datt::Dataset data = load_labelled(data_path);
      const datt::DatasetSplit split = datt::split_dataset(data.size(), rc.train.seed);
      std::cout << datt::format_ablation(datt::ablation(data, split, rc.model, rc.train, threads));
    } else if (*explain) {
      const datt::TrainedModel model = datt::load_model(model_path);
      announce_seed(model_seed(model));
      std::array<double, datt::kSoilFeatures> x{};
      if (index) {
        const auto samples = datt::load_csv(data_path);
        if (*index >= samples.size()) {
          throw datt::DataError("--index " + std::to_string(*index) + " out of range for " +
                                std::to_string(samples.size()) + " rows");
        }
        x = samples[*index].features();
      } else if (!row_json.empty()) {
        x = sample_from_json(row_json).features();
      } else {
        std::cerr << "explain needs --row or --index with --data\n";
        return kExitUsage;
      }
      const datt::BatchModel fn = [&](const datt::Tensor& rows) { return model.predict(rows); };
      const datt::ShapExplanation e = datt::kernel_shap(fn, x, model.background_rows(), {}, feature_names());
      std::cout << nlohmann::json(e).dump() << '\n' << datt::format_waterfall(e);
    } else if (*predict) {
      const std::string bytes = datt::read_file(model_path);
      const datt::TrainedModel model = datt::deserialize_model(bytes);
      announce_seed(model_seed(model));
      const datt::SoilSample s = sample_from_json(row_json);
      const double y = model.predict_one(s.features());
      std::cout << nlohmann::json{{"resistivity_ohm_m", y}, {"model_id", datt::fingerprint(bytes)}}.dump() << '\n';
    } else if (*gen) {
      announce_seed(*seed);
      datt::write_csv(out_path, datt::gen_synthetic(n_rows, *seed, noise));
    } else if (*serve) {
      const std::string bytes = datt::read_file(model_path);
      datt::TrainedModel model = datt::deserialize_model(bytes);
      announce_seed(model_seed(model));
      const datt::PredictionService service(std::move(model), datt::fingerprint(bytes));
      datt::HttpServer server(service, {host, port, static_dir});
      const int bound = server.bind();
      std::cerr << "listening on " << host << ':' << bound << '\n';
      server.listen();
    }
  } catch (const datt::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const datt::MetricError& e) {
    std::cerr << "metric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const datt::ExplanationError& e) {
    std::cerr << "explanation error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}
