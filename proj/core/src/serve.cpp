#include "datt/serve.hpp"

#include <cmath>
#include <exception>

#include <httplib.h>

#include "datt/dataset.hpp"
#include "datt/errors.hpp"
#include "datt/shap.hpp"

namespace datt {

namespace {

HttpResult error(int status, std::string message, std::string field = {}) {
  nlohmann::json body{{"error", std::move(message)}};
  if (!field.empty()) body["field"] = std::move(field);
  return {status, std::move(body)};
}

std::vector<std::string> feature_names() { return {kFeatureNames.begin(), kFeatureNames.end()}; }

// Either a valid sample or the error response to send.
struct Parsed {
  SoilSample sample;
  std::optional<HttpResult> failure;
};

Parsed parse_request(std::string_view body) {
  Parsed out;
  nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded()) {
    out.failure = error(400, "request body is not valid JSON");
    return out;
  }
  if (!j.is_object()) {
    out.failure = error(400, "request body must be a JSON object");
    return out;
  }
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool known = false;
    for (std::string_view n : kFeatureNames) known = known || key == n;
    if (!known) {
      out.failure = error(400, "unknown field '" + key + "'", key);
      return out;
    }
  }
  std::array<double, kSoilFeatures> f{};
  for (std::size_t i = 0; i < kSoilFeatures; ++i) {
    const std::string name(kFeatureNames[i]);
    if (!j.contains(name)) {
      out.failure = error(400, "missing field '" + name + "'", name);
      return out;
    }
    const nlohmann::json& v = j.at(name);
    if (!v.is_number()) {
      out.failure = error(400, "field '" + name + "' must be a number", name);
      return out;
    }
    f[i] = v.get<double>();
  }
  out.sample = SoilSample::from_features(f);
  if (const auto bad = check_invariants(out.sample)) {
    out.failure = error(422, bad->field + ": " + bad->message, bad->field);
  }
  return out;
}

template <typename F>
HttpResult guarded(F&& fn) {
  try {
    return fn();
  } catch (const NumericError& e) {
    return error(422, std::string("prediction failed: ") + e.what());
  } catch (const std::exception& e) {
    return error(500, e.what());
  }
}

}  // namespace

PredictionService::PredictionService(TrainedModel model, std::string model_id)
    : model_(std::move(model)), model_id_(std::move(model_id)) {
  if (model_.background_rows().empty()) throw ContractError("model carries no SHAP background rows");
}

HttpResult PredictionService::health() const { return {200, {{"status", "ok"}}}; }

HttpResult PredictionService::model_info() const {
  return guarded([&] {
    return HttpResult{200,
                      {{"model_id", model_id_},
                       {"config", model_.config()},
                       {"parameter_count", model_.params().parameter_count()},
                       {"feature_names", feature_names()},
                       {"target", kTargetName},
                       {"context_rows", model_.context_rows().empty() ? 0 : model_.context_rows().rows()},
                       {"background_rows", model_.background_rows().rows()},
                       {"metadata", model_.metadata()}}};
  });
}

HttpResult PredictionService::predict(std::string_view body) const {
  const Parsed req = parse_request(body);
  if (req.failure) return *req.failure;
  return guarded([&] {
    const auto f = req.sample.features();
    const double y = model_.predict_one(f);
    return HttpResult{200, {{"resistivity_ohm_m", y}, {"model_id", model_id_}}};
  });
}

HttpResult PredictionService::explain(std::string_view body) const {
  const Parsed req = parse_request(body);
  if (req.failure) return *req.failure;
  return guarded([&] {
    const auto f = req.sample.features();
    const BatchModel fn = [this](const Tensor& rows) { return model_.predict(rows); };
    const ShapExplanation e = kernel_shap(fn, f, model_.background_rows(), {}, feature_names());
    nlohmann::json j = e;
    j["model_id"] = model_id_;
    return HttpResult{200, std::move(j)};
  });
}

struct HttpServer::Impl {
  const PredictionService& service;
  ServeOptions options;
  httplib::Server server;
  int port = -1;

  Impl(const PredictionService& s, ServeOptions o) : service(s), options(std::move(o)) {
    auto reply = [](httplib::Response& res, const HttpResult& r) {
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
    };
    server.Get("/health", [this, reply](const httplib::Request&, httplib::Response& res) {
      reply(res, service.health());
    });
    server.Get("/model/info", [this, reply](const httplib::Request&, httplib::Response& res) {
      reply(res, service.model_info());
    });
    server.Post("/predict", [this, reply](const httplib::Request& req, httplib::Response& res) {
      reply(res, service.predict(req.body));
    });
    server.Post("/explain", [this, reply](const httplib::Request& req, httplib::Response& res) {
      reply(res, service.explain(req.body));
    });
    server.set_exception_handler([reply](const httplib::Request&, httplib::Response& res, std::exception_ptr) {
      reply(res, error(500, "internal error"));
    });
    if (!options.static_dir.empty() && !server.set_mount_point("/", options.static_dir)) {
      throw ContractError("static directory '" + options.static_dir + "' does not exist");
    }
  }
};

HttpServer::HttpServer(const PredictionService& service, ServeOptions options)
    : impl_(std::make_unique<Impl>(service, std::move(options))) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind() {
  if (impl_->port >= 0) return impl_->port;
  if (impl_->options.port == 0) {
    impl_->port = impl_->server.bind_to_any_port(impl_->options.host);
  } else if (impl_->server.bind_to_port(impl_->options.host, impl_->options.port)) {
    impl_->port = impl_->options.port;
  }
  if (impl_->port < 0) {
    throw ContractError("cannot bind " + impl_->options.host + ":" + std::to_string(impl_->options.port));
  }
  return impl_->port;
}

void HttpServer::listen() {
  bind();
  impl_->server.listen_after_bind();
}

void HttpServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

}  // namespace datt
