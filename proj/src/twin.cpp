#include "filtertwin/twin.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <regex>

namespace filtertwin {

namespace fs = std::filesystem;

namespace {

constexpr std::size_t kMaxGridPoints = 1'000'000;
constexpr int kMaxLifespanCycles = 1000;

ApiResult from_store_error(const StoreError& e, bool ingest) {
  nlohmann::json details = e.details();
  switch (e.kind()) {
    case StoreErrorKind::not_found: return api_error(404, "not_found", e.what());
    case StoreErrorKind::duplicate: return api_error(409, "duplicate", e.what());
    case StoreErrorKind::closed: return api_error(409, "experiment_closed", e.what());
    case StoreErrorKind::invalid:
      if (ingest) return api_error(422, "invalid_sample", e.what(), {{"index", *e.index()}, {"violations", details}});
      return api_error(400, "validation_failed", e.what(), details);
    case StoreErrorKind::time_regression:
      return api_error(422, "time_regression", e.what(), {{"index", *e.index()}, {"violations", details}});
    case StoreErrorKind::io: break;
  }
  return api_error(500, "storage_error", e.what());
}

nlohmann::json model_summary(const TrainedModel& m) {
  nlohmann::json j{{"version", m.version},
                   {"target", to_string(m.target)},
                   {"architecture", to_string(m.architecture())},
                   {"seed", m.seed},
                   {"window_dt", m.window_dt},
                   {"parameter_count", parameters(m.network).size()},
                   {"report", m.report}};
  return j;
}

nlohmann::json series_arrays(std::span<const Sample> samples) {
  std::vector<double> t, p, q;
  t.reserve(samples.size());
  p.reserve(samples.size());
  q.reserve(samples.size());
  for (const auto& s : samples) {
    t.push_back(s.t);
    p.push_back(s.pressure);
    q.push_back(s.flow);
  }
  return {{"t", t}, {"pressure", p}, {"flow", q}};
}

nlohmann::json band_json(const BandedSeries& b) {
  return {{"ma", b.ma}, {"lower", b.lower}, {"upper", b.upper}};
}

nlohmann::json optional_number(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

template <class T>
std::optional<T> parse_number(const std::map<std::string, std::string>& q, const std::string& key) {
  auto it = q.find(key);
  if (it == q.end()) return std::nullopt;
  T v{};
  const auto& s = it->second;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw DomainError("query parameter '" + key + "' is not a number: '" + s + "'");
  return v;
}

void write_text_atomic(const fs::path& p, const std::string& text) {
  auto tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << text;
    out.flush();
    if (!out) throw DomainError("cannot write '" + tmp.string() + "'");
  }
  fs::rename(tmp, p);
}

fs::path model_path(const fs::path& dir, Target t, int version) {
  return dir / (std::string(to_string(t)) + "-v" + std::to_string(version) + ".json");
}

ArchivedVersion archive_entry(const TrainedModel& m, const std::string& trained_at) {
  return ArchivedVersion{m.target, m.version, m.architecture(), trained_at, m.report};
}

}  // namespace

ApiResult api_error(int status, std::string code, std::string message, nlohmann::json details) {
  return ApiResult{status, {{"code", std::move(code)}, {"message", std::move(message)}, {"details", std::move(details)}}};
}

// ---------------------------------------------------------------------------
// Registry

ModelRegistry::ModelRegistry(fs::path dir) : dir_(std::move(dir)) {
  if (dir_.empty()) return;
  fs::create_directories(dir_);
  std::optional<int> pv, fv;
  std::string trained_at;
  const auto current_path = dir_ / "current.json";
  if (fs::exists(current_path)) {
    std::ifstream in(current_path);
    const auto j = nlohmann::json::parse(in);
    pv = j.at("pressure").get<int>();
    fv = j.at("flow").get<int>();
    trained_at = j.value("trained_at", std::string{});
  }
  static const std::regex name_re(R"((pressure|flow)-v([0-9]+)\.json)");
  std::vector<std::pair<int, fs::path>> files;
  for (const auto& f : fs::directory_iterator(dir_)) {
    std::smatch m;
    const auto name = f.path().filename().string();
    if (std::regex_match(name, m, name_re)) files.emplace_back(std::stoi(m[2]), f.path());
  }
  std::sort(files.begin(), files.end());
  ModelPair pair;
  bool have_p = false, have_f = false;
  for (const auto& [version, path] : files) {
    auto model = load_model(path.string());
    model.version = version;
    if (pv && model.target == Target::pressure && version == *pv) {
      pair.pressure = std::move(model);
      have_p = true;
    } else if (fv && model.target == Target::flow && version == *fv) {
      pair.flow = std::move(model);
      have_f = true;
    } else {
      archive_.push_back(archive_entry(model, {}));
    }
  }
  if (have_p && have_f) {
    pair.trained_at = trained_at;
    current_ = std::make_shared<const ModelPair>(std::move(pair));
  } else if (pv || fv) {
    throw DomainError("model registry in '" + dir_.string() + "' references missing model files");
  }
}

std::shared_ptr<const ModelPair> ModelRegistry::current() const {
  std::lock_guard lock(mutex_);
  return current_;
}

std::shared_ptr<const ModelPair> ModelRegistry::install(TrainedModel pressure, TrainedModel flow) {
  std::lock_guard lock(mutex_);
  int latest = current_ ? std::max(current_->pressure.version, current_->flow.version) : 0;
  for (const auto& a : archive_) latest = std::max(latest, a.version);
  const int version = latest + 1;
  pressure.version = version;
  flow.version = version;
  auto pair = std::make_shared<ModelPair>();
  pair->pressure = std::move(pressure);
  pair->flow = std::move(flow);
  pair->trained_at = utc_timestamp_now();
  if (!dir_.empty()) {
    save_model(pair->pressure, model_path(dir_, Target::pressure, version).string());
    save_model(pair->flow, model_path(dir_, Target::flow, version).string());
    const nlohmann::json cur{{"pressure", version}, {"flow", version}, {"trained_at", pair->trained_at}};
    write_text_atomic(dir_ / "current.json", cur.dump(2) + "\n");
  }
  if (current_) {
    archive_.push_back(archive_entry(current_->pressure, current_->trained_at));
    archive_.push_back(archive_entry(current_->flow, current_->trained_at));
  }
  current_ = pair;
  return current_;
}

std::vector<ArchivedVersion> ModelRegistry::archived() const {
  std::lock_guard lock(mutex_);
  return archive_;
}

RetrainRequest retrain_request_from_json(const nlohmann::json& j) {
  RetrainRequest r;
  if (j.is_null()) return r;
  if (!j.is_object()) throw DomainError("retrain options must be a JSON object");
  try {
    r.epochs = j.value("epochs", r.epochs);
    r.batch_size = j.value("batch_size", r.batch_size);
    r.seed = j.value("seed", r.seed);
    r.learning_rate = j.value("learning_rate", r.learning_rate);
    if (j.contains("architecture")) r.architecture = architecture_from_string(j.at("architecture").get<std::string>());
    r.prepare.train_ratio = j.value("train_ratio", r.prepare.train_ratio);
    r.prepare.stride = j.value("stride", r.prepare.stride);
    r.prepare.balance_cap = j.value("balance_cap", r.prepare.balance_cap);
  } catch (const nlohmann::json::exception& e) {
    throw DomainError(std::string("bad retrain options: ") + e.what());
  }
  r.prepare.seed = r.seed;
  if (r.batch_size == 0) throw DomainError("batch_size must be >= 1");
  if (r.prepare.stride == 0) throw DomainError("stride must be >= 1");
  if (r.prepare.balance_cap == 0) throw DomainError("balance_cap must be >= 1");
  if (!(r.learning_rate > 0.0)) throw DomainError("learning_rate must be > 0");
  if (!(r.prepare.train_ratio > 0.0 && r.prepare.train_ratio < 1.0)) throw DomainError("train_ratio must lie in (0, 1)");
  return r;
}

void to_json(nlohmann::json& j, const LifespanEstimate& e) {
  auto rows = nlohmann::json::array();
  for (const auto& r : e.rows)
    rows.push_back({{"cycles", r.cycles},
                    {"duration", optional_number(r.duration)},
                    {"exceeds_horizon", !r.duration.has_value()},
                    {"max_flow", r.max_flow},
                    {"violates", r.violates}});
  j = {{"basis",
        {{"concentration", e.basis.concentration},
         {"plate_count", e.basis.plate_count},
         {"end_pressure", e.basis.end_pressure}}},
       {"rows", rows},
       {"recommended_cycle", e.recommended_cycle ? nlohmann::json(*e.recommended_cycle) : nlohmann::json(nullptr)},
       {"recommendation", e.recommended_cycle ? "replace at cycle " + std::to_string(*e.recommended_cycle)
                                              : std::string("none within sweep")},
       {"thresholds", {{"flow_floor", e.flow_floor}, {"duration_cap", optional_number(e.duration_cap)}}},
       {"model_versions", {{"pressure", e.pressure_version}, {"flow", e.flow_version}}}};
}

// ---------------------------------------------------------------------------
// Service

TwinService::TwinService(std::shared_ptr<Storage> store, fs::path models_dir, ServiceOptions options)
    : store_(std::move(store)), options_(std::move(options)), registry_(std::move(models_dir)) {
  if (!store_) throw DomainError("twin service needs a store");
}

TwinService::~TwinService() {
  stop_ = true;
  if (worker_.joinable()) worker_.join();
}

std::optional<ApiResult> TwinService::require_models(std::shared_ptr<const ModelPair>& out) const {
  out = registry_.current();
  if (!out && !options_.predictor)
    return api_error(503, "no_model", "no trained model yet; trigger POST /models/retrain");
  return std::nullopt;
}

std::vector<Sample> TwinService::predict_samples(const ModelPair* models, const ExperimentConfig& config,
                                                 std::span<const double> times) const {
  if (options_.predictor) return options_.predictor(config, times);
  return predict_on_grid(models->pressure, models->flow, config, times).series.samples;
}

ApiResult TwinService::create_experiment(const nlohmann::json& body) {
  ExperimentConfig config;
  try {
    config = body.get<ExperimentConfig>();
  } catch (const std::exception& e) {
    return api_error(400, "bad_request", e.what());
  }
  if (config.created_at.empty()) config.created_at = utc_timestamp_now();
  try {
    const auto rec = store_->create_experiment(config);
    nlohmann::json out = rec;
    out["id"] = rec.config.experiment_id;
    return {201, out};
  } catch (const StoreError& e) {
    return from_store_error(e, false);
  }
}

ApiResult TwinService::ingest(const std::string& id, const nlohmann::json& body) {
  std::vector<Sample> batch;
  try {
    const auto& arr = body.is_array() ? body : body.at("samples");
    if (!arr.is_array()) throw DomainError("samples must be an array");
    batch.reserve(arr.size());
    for (const auto& s : arr) batch.push_back(s.get<Sample>());
  } catch (const std::exception& e) {
    return api_error(400, "bad_request", std::string("malformed sample batch: ") + e.what());
  }
  try {
    const auto count = store_->append_samples(id, batch);
    return {200, {{"experiment_id", id}, {"accepted", batch.size()}, {"sample_count", count}}};
  } catch (const StoreError& e) {
    return from_store_error(e, true);
  }
}

ApiResult TwinService::complete(const std::string& id) {
  try {
    return {200, store_->mark_complete(id)};
  } catch (const StoreError& e) {
    return from_store_error(e, false);
  }
}

ApiResult TwinService::live(const std::string& id, double since) {
  try {
    const auto rec = store_->get_record(id);
    const auto delta = store_->samples_since(id, since);
    nlohmann::json out{{"experiment_id", id},
                       {"status", to_string(rec.status)},
                       {"since", since},
                       {"next_since", delta.empty() ? since : delta.back().t},
                       {"samples", delta}};
    const auto models = registry_.current();
    if ((models || options_.predictor) && !delta.empty()) {
      std::vector<double> t;
      t.reserve(delta.size());
      for (const auto& s : delta) t.push_back(s.t);
      out["prediction"] = series_arrays(predict_samples(models.get(), rec.config, t));
      if (models) out["model_versions"] = {{"pressure", models->pressure.version}, {"flow", models->flow.version}};
    } else {
      out["prediction"] = nullptr;
    }
    return {200, out};
  } catch (const StoreError& e) {
    return from_store_error(e, false);
  }
}

ApiResult TwinService::evaluate(const std::string& id, std::size_t window) {
  if (window < 2) return api_error(400, "bad_request", "window must be >= 2");
  try {
    const auto rec = store_->get_record(id);
    if (rec.status != SeriesStatus::complete)
      return api_error(409, "experiment_open", "experiment '" + id + "' is still open");
    std::shared_ptr<const ModelPair> models;
    if (auto err = require_models(models)) return *err;
    const auto measured = store_->get_series(id);
    if (measured.samples.empty()) return api_error(409, "no_samples", "experiment '" + id + "' has no samples");
    const auto times = measured.times();
    CycleSeries predicted;
    predicted.experiment_id = id;
    predicted.samples = predict_samples(models.get(), rec.config, times);
    const auto ev = evaluate_experiment(measured, predicted, window);
    nlohmann::json out{{"experiment_id", id},
                       {"window", window},
                       {"z", ev.pressure_band.z},
                       {"pressure", ev.pressure},
                       {"flow", ev.flow},
                       {"band", {{"t", times}, {"pressure", band_json(ev.pressure_band)}, {"flow", band_json(ev.flow_band)}}},
                       {"prediction", series_arrays(ev.aligned_prediction)}};
    if (models) out["model_versions"] = {{"pressure", models->pressure.version}, {"flow", models->flow.version}};
    return {200, out};
  } catch (const StoreError& e) {
    return from_store_error(e, false);
  } catch (const DomainError& e) {
    return api_error(422, "evaluation_failed", e.what());
  }
}

ApiResult TwinService::predict(const nlohmann::json& body) {
  ExperimentConfig config;
  double dt = options_.default_dt;
  double horizon = options_.default_horizon;
  try {
    auto cfg = body.contains("config") ? body.at("config") : body;
    if (!cfg.contains("experiment_id")) cfg["experiment_id"] = "forecast";
    config = cfg.get<ExperimentConfig>();
    dt = body.value("dt", dt);
    horizon = body.value("horizon", horizon);
  } catch (const std::exception& e) {
    return api_error(400, "bad_request", e.what());
  }
  if (auto v = validate_config(config); !v.empty()) return api_error(400, "validation_failed", "invalid config", v);
  if (!(std::isfinite(dt) && dt > 0.0) || !(std::isfinite(horizon) && horizon > 0.0))
    return api_error(400, "bad_request", "dt and horizon must be > 0");
  if (horizon / dt > static_cast<double>(kMaxGridPoints))
    return api_error(400, "bad_request", "prediction grid too large");
  const auto models = registry_.current();
  if (!models) return api_error(503, "no_model", "no trained model yet; trigger POST /models/retrain");
  const auto pred = predict_series(models->pressure, models->flow, config, dt, horizon);
  auto out = series_arrays(pred.series.samples);
  out["experiment_id"] = config.experiment_id;
  out["dt"] = dt;
  out["horizon"] = horizon;
  out["duration"] = optional_number(pred.duration);
  out["exceeds_horizon"] = pred.exceeds_horizon();
  out["max_flow"] = pred.max_flow;
  out["efficiency"] = {{"duration", optional_number(pred.duration)}, {"max_flow", pred.max_flow}};
  out["model_versions"] = {{"pressure", models->pressure.version}, {"flow", models->flow.version}};
  return {200, out};
}

ApiResult TwinService::retrain(const nlohmann::json& body) {
  RetrainRequest request;
  try {
    request = retrain_request_from_json(body);
  } catch (const DomainError& e) {
    return api_error(400, "bad_request", e.what());
  }
  std::unique_lock lock(job_mutex_);
  if (running_) return api_error(409, "retrain_running", "a retrain is already running since " + running_since_);
  if (store_->list_experiments(SeriesStatus::complete).empty())
    return api_error(422, "no_training_data", "no complete experiments to train on");
  if (worker_.joinable()) worker_.join();
  running_ = true;
  running_since_ = utc_timestamp_now();
  stop_ = false;
  worker_ = std::thread([this, request] { run_retrain(request); });
  return {202,
          {{"state", "running"},
           {"since", running_since_},
           {"epochs", request.epochs},
           {"seed", request.seed},
           {"architecture", to_string(request.architecture)}}};
}

void TwinService::run_retrain(RetrainRequest request) {
  std::optional<std::string> error;
  try {
    std::vector<CorpusEntry> corpus;
    for (const auto& rec : store_->list_experiments(SeriesStatus::complete)) {
      auto series = store_->get_series(rec.config.experiment_id);
      if (!series.samples.empty()) corpus.push_back(CorpusEntry{rec.config, std::move(series)});
    }
    auto train_one = [&](Target target) {
      TrainOptions opts;
      opts.epochs = request.epochs;
      opts.batch_size = request.batch_size;
      opts.seed = request.seed;
      opts.learning_rate = request.learning_rate;
      opts.on_epoch = [this, target](const EpochRecord& r) {
        if (options_.on_epoch) options_.on_epoch(target, r);
        return !stop_.load();
      };
      return train_model(corpus, target, request.architecture, opts, request.prepare);
    };
    auto pressure = train_one(Target::pressure);
    auto flow = train_one(Target::flow);
    if (stop_) throw DomainError("retrain cancelled");
    registry_.install(std::move(pressure), std::move(flow));
  } catch (const std::exception& e) {
    error = e.what();
  }
  std::lock_guard lock(job_mutex_);
  running_ = false;
  last_error_ = error;
  last_finished_ = utc_timestamp_now();
  job_cv_.notify_all();
}

bool TwinService::wait_idle(std::chrono::milliseconds timeout) {
  std::unique_lock lock(job_mutex_);
  return job_cv_.wait_for(lock, timeout, [this] { return !running_; });
}

bool TwinService::retrain_running() const {
  std::lock_guard lock(job_mutex_);
  return running_;
}

ApiResult TwinService::current_models() const {
  const auto models = registry_.current();
  nlohmann::json out;
  out["pressure"] = models ? model_summary(models->pressure) : nlohmann::json(nullptr);
  out["flow"] = models ? model_summary(models->flow) : nlohmann::json(nullptr);
  out["trained_at"] = models ? nlohmann::json(models->trained_at) : nlohmann::json(nullptr);
  {
    std::lock_guard lock(job_mutex_);
    out["retrain"] = {{"state", running_ ? "running" : "idle"},
                      {"since", running_ ? nlohmann::json(running_since_) : nlohmann::json(nullptr)},
                      {"last_error", last_error_ ? nlohmann::json(*last_error_) : nlohmann::json(nullptr)},
                      {"last_finished", last_finished_.empty() ? nlohmann::json(nullptr) : nlohmann::json(last_finished_)}};
  }
  auto archived = nlohmann::json::array();
  for (const auto& a : registry_.archived())
    archived.push_back({{"target", to_string(a.target)},
                        {"version", a.version},
                        {"architecture", to_string(a.architecture)},
                        {"trained_at", a.trained_at},
                        {"report", a.report}});
  out["archived"] = archived;
  return {200, out};
}

LifespanEstimate TwinService::estimate_lifespan(const ExperimentConfig& basis, int k_max,
                                                const LifespanThresholds& thresholds, double dt,
                                                double horizon) const {
  if (k_max < 1 || k_max > kMaxLifespanCycles)
    throw DomainError("k_max must lie in [1, " + std::to_string(kMaxLifespanCycles) + "]");
  const auto models = registry_.current();
  if (!models) throw DomainError("no trained model");
  LifespanEstimate est;
  est.basis = basis;
  est.flow_floor = thresholds.flow_floor;
  est.pressure_version = models->pressure.version;
  est.flow_version = models->flow.version;
  for (int k = 1; k <= k_max; ++k) {
    auto cfg = basis;
    cfg.cloth_cycles = k;
    const auto pred = predict_series(models->pressure, models->flow, cfg, dt, horizon);
    est.rows.push_back(LifespanRow{k, pred.duration, pred.max_flow, false});
  }
  est.duration_cap = thresholds.duration_cap;
  if (!est.duration_cap && est.rows.front().duration)
    est.duration_cap = thresholds.duration_factor * *est.rows.front().duration;
  for (auto& r : est.rows) {
    const bool slow = est.duration_cap && (!r.duration || *r.duration > *est.duration_cap);
    r.violates = r.max_flow < thresholds.flow_floor || slow;
    if (r.violates && !est.recommended_cycle) est.recommended_cycle = r.cycles;
  }
  return est;
}

ApiResult TwinService::lifespan(const std::map<std::string, std::string>& query) {
  ExperimentConfig basis;
  LifespanThresholds th;
  int k_max = 40;
  double dt = options_.default_dt;
  double horizon = options_.default_horizon;
  try {
    for (const char* key : {"concentration", "plate_count", "end_pressure"})
      if (!query.count(key)) throw DomainError(std::string("missing query parameter '") + key + "'");
    basis.experiment_id = "lifespan";
    basis.concentration = *parse_number<double>(query, "concentration");
    basis.plate_count = *parse_number<int>(query, "plate_count");
    basis.end_pressure = *parse_number<double>(query, "end_pressure");
    basis.cloth_cycles = 1;
    k_max = parse_number<int>(query, "k_max").value_or(k_max);
    th.flow_floor = parse_number<double>(query, "flow_floor").value_or(th.flow_floor);
    th.duration_cap = parse_number<double>(query, "duration_cap");
    th.duration_factor = parse_number<double>(query, "duration_factor").value_or(th.duration_factor);
    dt = parse_number<double>(query, "dt").value_or(dt);
    horizon = parse_number<double>(query, "horizon").value_or(horizon);
  } catch (const DomainError& e) {
    return api_error(400, "bad_request", e.what());
  }
  if (auto v = validate_config(basis); !v.empty()) return api_error(400, "validation_failed", "invalid basis", v);
  if (k_max < 1 || k_max > kMaxLifespanCycles)
    return api_error(400, "bad_request", "k_max must lie in [1, " + std::to_string(kMaxLifespanCycles) + "]");
  if (!(dt > 0.0 && horizon > 0.0) || horizon / dt > static_cast<double>(kMaxGridPoints))
    return api_error(400, "bad_request", "dt and horizon must be > 0 with a bounded grid");
  if (!registry_.current()) return api_error(503, "no_model", "no trained model yet; trigger POST /models/retrain");
  return {200, estimate_lifespan(basis, k_max, th, dt, horizon)};
}

}  // namespace filtertwin
