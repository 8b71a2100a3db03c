#pragma once

#include <memory>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "datt/pipeline.hpp"

namespace datt {

struct HttpResult {
  int status = 200;
  nlohmann::json body;
};

// Request handling independent of the transport. Stateless per request and
// safe to call concurrently.
class PredictionService {
 public:
  PredictionService(TrainedModel model, std::string model_id);

  const TrainedModel& model() const noexcept { return model_; }
  const std::string& model_id() const noexcept { return model_id_; }

  HttpResult health() const;
  HttpResult model_info() const;
  // Body: {"pd_g_cm3", "w_pct", "F200_pct", "Gs", "LL_pct", "PL_pct"}.
  // Malformed JSON or fields -> 400, invariant violation -> 422.
  HttpResult predict(std::string_view body) const;
  HttpResult explain(std::string_view body) const;

 private:
  TrainedModel model_;
  std::string model_id_;
};

struct ServeOptions {
  std::string host = "0.0.0.0";
  int port = 8080;  // 0 picks a free port
  std::string static_dir;  // served at / when non-empty
};

// HTTP/1.1 front end over a PredictionService.
class HttpServer {
 public:
  HttpServer(const PredictionService& service, ServeOptions options);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // Binds the socket and returns the bound port.
  int bind();
  // Serves until stop(); bind() is called first if needed.
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace datt
