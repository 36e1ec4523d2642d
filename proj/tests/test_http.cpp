#include <doctest.h>

#include <atomic>
#include <filesystem>

#include <httplib.h>
#include <unistd.h>

#include "filtertwin/http_api.hpp"
#include "filtertwin/simulator.hpp"

using namespace filtertwin;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Server {
  fs::path dir;
  std::shared_ptr<FileStore> store;
  std::unique_ptr<TwinService> svc;
  std::unique_ptr<HttpServer> http;
  int port = 0;

  Server() {
    static std::atomic<int> n{0};
    dir = fs::temp_directory_path() / ("filtertwin_http_" + std::to_string(::getpid()) + "_" + std::to_string(n++));
    fs::remove_all(dir);
    store = std::make_shared<FileStore>(dir, FileStoreOptions{false, CrashPoint::none});
    svc = std::make_unique<TwinService>(store, store->models_dir());
    http = std::make_unique<HttpServer>(*svc);
    port = http->start("127.0.0.1", 0);
  }
  ~Server() {
    http->stop();
    svc.reset();
    fs::remove_all(dir);
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(60, 0);
    return c;
  }
};

json post(httplib::Client& c, const std::string& path, const json& body, int expect) {
  auto res = c.Post(path, body.dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == expect);
  CHECK(res->get_header_value("Content-Type") == "application/json");
  return json::parse(res->body);
}

json get(httplib::Client& c, const std::string& path, int expect) {
  auto res = c.Get(path);
  REQUIRE(res);
  CHECK(res->status == expect);
  return json::parse(res->body);
}

}  // namespace

TEST_CASE("experiment endpoints") {
  Server s;
  CHECK(s.port > 0);
  auto c = s.client();
  const json cfg{{"experiment_id", "exp-9"}, {"concentration", 12.5}, {"plate_count", 2}, {"end_pressure", 10},
                 {"cloth_cycles", 5}};
  auto body = post(c, "/experiments", cfg, 201);
  CHECK(body["status"] == "open");
  post(c, "/experiments", cfg, 409);
  auto bad = cfg;
  bad["end_pressure"] = 12;
  bad["experiment_id"] = "other";
  CHECK(post(c, "/experiments", bad, 400)["details"][0] == "end_pressure <= 10");

  const auto samples = simulate_cycle(ExperimentConfig{"exp-9", 12.5, 2, 10, 5, ""}, SimParams{}, 1).samples;
  const std::vector<Sample> first(samples.begin(), samples.begin() + 100);
  CHECK(post(c, "/experiments/exp-9/samples", json{{"samples", first}}, 200)["sample_count"] == 100);
  CHECK(post(c, "/experiments/exp-9/samples", json{{"samples", json::array({first[5]})}}, 422)["code"] ==
        "time_regression");
  CHECK(post(c, "/experiments/missing/samples", json{{"samples", first}}, 404)["code"] == "not_found");

  auto raw = c.Post("/experiments/exp-9/samples", "{not json", "application/json");
  REQUIRE(raw);
  CHECK(raw->status == 400);

  auto live = get(c, "/experiments/exp-9/live", 200);
  CHECK(live["samples"].size() == 100);
  CHECK(live["prediction"].is_null());
  live = get(c, "/experiments/exp-9/live?since=" + format_double(first[49].t), 200);
  CHECK(live["samples"].size() == 50);
  get(c, "/experiments/exp-9/live?since=abc", 400);

  CHECK(get(c, "/experiments", 200)["experiments"].size() == 1);
  CHECK(get(c, "/experiments?status=complete", 200)["experiments"].empty());
  get(c, "/experiments?status=weird", 400);

  CHECK(post(c, "/experiments/exp-9/complete", json::object(), 200)["status"] == "complete");
  CHECK(get(c, "/experiments?status=complete", 200)["experiments"].size() == 1);
  CHECK(get(c, "/experiments/exp-9/evaluation", 503)["code"] == "no_model");
  get(c, "/experiments/exp-9/evaluation?window=1", 400);
}

TEST_CASE("model endpoints before and after training") {
  Server s;
  auto c = s.client();
  CHECK(post(c, "/predict", json{{"concentration", 12.5}, {"plate_count", 2}, {"end_pressure", 10}, {"cloth_cycles", 5}},
             503)["code"] == "no_model");
  auto cur = get(c, "/models/current", 200);
  CHECK(cur["pressure"].is_null());
  CHECK(cur["retrain"]["state"] == "idle");
  get(c, "/lifespan?concentration=12.5&plate_count=2&end_pressure=10", 503);

  auto empty = c.Post("/models/retrain", "", "application/json");
  REQUIRE(empty);
  CHECK(empty->status == 422);

  const auto grid = table1_grid();
  SimParams params;
  params.t_max = 120.0;
  for (int i : {5, 0, 32}) s.store->import_series(grid[i], simulate_cycle(grid[i], params, i));
  auto started = post(c, "/models/retrain", json{{"epochs", 2}, {"architecture", "ffnn"}}, 202);
  CHECK(started["state"] == "running");
  REQUIRE(s.svc->wait_idle(std::chrono::minutes(5)));
  cur = get(c, "/models/current", 200);
  CHECK(cur["pressure"]["version"] == 1);
  CHECK(cur["flow"]["architecture"] == "ffnn");

  auto pred = post(c, "/predict",
                   json{{"config", {{"concentration", 12.5}, {"plate_count", 2}, {"end_pressure", 10}, {"cloth_cycles", 5}}},
                        {"dt", 2.0},
                        {"horizon", 60.0}},
                   200);
  CHECK(pred["t"].size() == 31);
  CHECK(pred["model_versions"]["flow"] == 1);
  auto life = get(c, "/lifespan?concentration=12.5&plate_count=2&end_pressure=10&k_max=3&horizon=200", 200);
  CHECK(life["rows"].size() == 3);
  get(c, "/lifespan?plate_count=2&end_pressure=10", 400);
}

TEST_CASE("unknown routes and CORS preflight") {
  Server s;
  auto c = s.client();
  auto res = c.Get("/nope");
  REQUIRE(res);
  CHECK(res->status == 404);
  CHECK(json::parse(res->body)["code"] == "not_found");
  auto pre = c.Options("/experiments");
  REQUIRE(pre);
  CHECK(pre->status == 204);
  CHECK(pre->get_header_value("Access-Control-Allow-Origin") == "*");
}
