#pragma once

// Digital-twin orchestration: experiment lifecycle, live ingestion, prediction,
// evaluation, background retraining with a versioned model registry, and
// cloth lifespan estimation. Every operation returns an HTTP status and a JSON
// body so the HTTP layer is a thin router.

#include <atomic>
#include <condition_variable>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "filtertwin/metrics.hpp"
#include "filtertwin/neural.hpp"
#include "filtertwin/store.hpp"
#include "filtertwin/training.hpp"

namespace filtertwin {

struct ApiResult {
  int status = 200;
  nlohmann::json body;
};

/// Error body {code, message, details}.
ApiResult api_error(int status, std::string code, std::string message, nlohmann::json details = nlohmann::json::array());

/// The pair served together. Immutable once installed.
struct ModelPair {
  TrainedModel pressure;
  TrainedModel flow;
  std::string trained_at;
};

struct ArchivedVersion {
  Target target = Target::pressure;
  int version = 0;
  Architecture architecture = Architecture::lstm;
  std::string trained_at;
  TrainReport report;
};

/// Current (pressure, flow) pair plus archive. Versions are persisted as
/// <dir>/<target>-v<N>.json and the current pair as <dir>/current.json, which
/// is replaced atomically after both model files are written.
class ModelRegistry {
public:
  /// Empty dir keeps everything in memory.
  explicit ModelRegistry(std::filesystem::path dir = {});

  [[nodiscard]] std::shared_ptr<const ModelPair> current() const;
  /// Assigns the next version to both models, archives the previous pair and
  /// swaps. Returns the installed pair.
  std::shared_ptr<const ModelPair> install(TrainedModel pressure, TrainedModel flow);
  [[nodiscard]] std::vector<ArchivedVersion> archived() const;

private:
  std::filesystem::path dir_;
  mutable std::mutex mutex_;
  std::shared_ptr<const ModelPair> current_;
  std::vector<ArchivedVersion> archive_;
};

struct RetrainRequest {
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double learning_rate = 1e-3;
  Architecture architecture = Architecture::lstm;
  PrepareOptions prepare;
};

RetrainRequest retrain_request_from_json(const nlohmann::json& j);

struct LifespanThresholds {
  double flow_floor = 8.0;  // dm3/min
  /// Defaults to duration_factor times the k=1 predicted duration.
  std::optional<double> duration_cap;
  double duration_factor = 1.5;
};

struct LifespanRow {
  int cycles = 0;
  std::optional<double> duration;  // empty: beyond the horizon
  double max_flow = 0.0;
  bool violates = false;
};

struct LifespanEstimate {
  ExperimentConfig basis;
  std::vector<LifespanRow> rows;
  std::optional<int> recommended_cycle;  // empty: none within sweep
  double flow_floor = 0.0;
  std::optional<double> duration_cap;
  int pressure_version = 0;
  int flow_version = 0;
};

void to_json(nlohmann::json& j, const LifespanEstimate& e);

/// Substitute for the registry's models, physical units at the given times.
using Predictor = std::function<std::vector<Sample>(const ExperimentConfig&, std::span<const double>)>;

struct ServiceOptions {
  double default_dt = 1.0;
  double default_horizon = 3600.0;
  /// When set, used for live overlays and evaluation instead of the registry.
  Predictor predictor;
  /// Called on the retrain thread with each finished epoch.
  std::function<void(Target, const EpochRecord&)> on_epoch;
};

class TwinService {
public:
  /// Models live in models_dir (empty: in memory only).
  TwinService(std::shared_ptr<Storage> store, std::filesystem::path models_dir, ServiceOptions options = {});
  ~TwinService();

  TwinService(const TwinService&) = delete;
  TwinService& operator=(const TwinService&) = delete;

  ApiResult create_experiment(const nlohmann::json& body);
  /// Accepts {"samples":[...]} or a bare array.
  ApiResult ingest(const std::string& id, const nlohmann::json& body);
  ApiResult complete(const std::string& id);
  ApiResult live(const std::string& id, double since);
  ApiResult evaluate(const std::string& id, std::size_t window);
  ApiResult predict(const nlohmann::json& body);
  /// 202 when a job starts, 409 while one runs.
  ApiResult retrain(const nlohmann::json& body);
  ApiResult current_models() const;
  /// Query keys: concentration, plate_count, end_pressure, k_max, flow_floor,
  /// duration_cap, duration_factor, dt, horizon.
  ApiResult lifespan(const std::map<std::string, std::string>& query);

  LifespanEstimate estimate_lifespan(const ExperimentConfig& basis, int k_max, const LifespanThresholds& thresholds,
                                     double dt, double horizon) const;

  /// Blocks until no retrain is running or the timeout passes. True when idle.
  bool wait_idle(std::chrono::milliseconds timeout);
  [[nodiscard]] bool retrain_running() const;

  [[nodiscard]] ModelRegistry& registry() { return registry_; }
  [[nodiscard]] Storage& store() { return *store_; }

private:
  void run_retrain(RetrainRequest request);
  std::optional<ApiResult> require_models(std::shared_ptr<const ModelPair>& out) const;
  std::vector<Sample> predict_samples(const ModelPair* models, const ExperimentConfig& config,
                                      std::span<const double> times) const;

  std::shared_ptr<Storage> store_;
  ServiceOptions options_;
  ModelRegistry registry_;

  mutable std::mutex job_mutex_;
  std::condition_variable job_cv_;
  bool running_ = false;
  std::string running_since_;
  std::optional<std::string> last_error_;
  std::string last_finished_;
  std::atomic<bool> stop_{false};
  std::thread worker_;
};

}  // namespace filtertwin
