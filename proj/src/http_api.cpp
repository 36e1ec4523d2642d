#include "filtertwin/http_api.hpp"

#include <charconv>
#include <limits>
#include <map>

#include <httplib.h>

namespace filtertwin {

namespace {

void reply(httplib::Response& res, const ApiResult& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json");
}

bool parse_body(const httplib::Request& req, httplib::Response& res, nlohmann::json& out, bool allow_empty) {
  if (req.body.empty() && allow_empty) {
    out = nullptr;
    return true;
  }
  try {
    out = nlohmann::json::parse(req.body);
    return true;
  } catch (const nlohmann::json::exception& e) {
    reply(res, api_error(400, "bad_request", std::string("body is not valid JSON: ") + e.what()));
    return false;
  }
}

template <class T>
bool query_number(const httplib::Request& req, httplib::Response& res, const char* key, T& value) {
  if (!req.has_param(key)) return true;
  const auto s = req.get_param_value(key);
  auto r = std::from_chars(s.data(), s.data() + s.size(), value);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) {
    reply(res, api_error(400, "bad_request", std::string("query parameter '") + key + "' is not a number"));
    return false;
  }
  return true;
}

}  // namespace

HttpServer::HttpServer(TwinService& service) : service_(service), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

HttpServer::~HttpServer() { stop(); }

void HttpServer::install_routes() {
  auto& s = *server_;
  s.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                         {"Access-Control-Allow-Headers", "Content-Type"},
                         {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  s.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  s.Post("/experiments", [this](const httplib::Request& req, httplib::Response& res) {
    nlohmann::json body;
    if (parse_body(req, res, body, false)) reply(res, service_.create_experiment(body));
  });
  s.Get("/experiments", [this](const httplib::Request& req, httplib::Response& res) {
    std::optional<SeriesStatus> filter;
    if (req.has_param("status")) {
      try {
        filter = series_status_from_string(req.get_param_value("status"));
      } catch (const DomainError& e) {
        return reply(res, api_error(400, "bad_request", e.what()));
      }
    }
    reply(res, ApiResult{200, {{"experiments", service_.store().list_experiments(filter)}}});
  });
  s.Post(R"(/experiments/([^/]+)/samples)", [this](const httplib::Request& req, httplib::Response& res) {
    nlohmann::json body;
    if (parse_body(req, res, body, false)) reply(res, service_.ingest(req.matches[1], body));
  });
  s.Post(R"(/experiments/([^/]+)/complete)", [this](const httplib::Request& req, httplib::Response& res) {
    reply(res, service_.complete(req.matches[1]));
  });
  s.Get(R"(/experiments/([^/]+)/live)", [this](const httplib::Request& req, httplib::Response& res) {
    double since = -std::numeric_limits<double>::infinity();
    if (query_number(req, res, "since", since)) reply(res, service_.live(req.matches[1], since));
  });
  s.Get(R"(/experiments/([^/]+)/evaluation)", [this](const httplib::Request& req, httplib::Response& res) {
    std::size_t window = kDefaultBandWindow;
    if (query_number(req, res, "window", window)) reply(res, service_.evaluate(req.matches[1], window));
  });
  s.Post("/predict", [this](const httplib::Request& req, httplib::Response& res) {
    nlohmann::json body;
    if (parse_body(req, res, body, false)) reply(res, service_.predict(body));
  });
  s.Post("/models/retrain", [this](const httplib::Request& req, httplib::Response& res) {
    nlohmann::json body;
    if (parse_body(req, res, body, true)) reply(res, service_.retrain(body));
  });
  s.Get("/models/current", [this](const httplib::Request&, httplib::Response& res) {
    reply(res, service_.current_models());
  });
  s.Get("/lifespan", [this](const httplib::Request& req, httplib::Response& res) {
    std::map<std::string, std::string> query;
    for (const auto& [k, v] : req.params) query[k] = v;
    reply(res, service_.lifespan(query));
  });

  s.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "unknown error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    reply(res, api_error(500, "internal_error", what));
  });
  s.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) reply(res, api_error(res.status, "not_found", "no such route"));
  });
}

int HttpServer::start(const std::string& host, int port) {
  int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return bound;
}

void HttpServer::run(const std::string& host, int port) {
  if (!server_->bind_to_port(host, port)) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  server_->listen_after_bind();
}

void HttpServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace filtertwin
