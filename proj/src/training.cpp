#include "filtertwin/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "filtertwin/kernels.hpp"

namespace filtertwin {

// ---------------------------------------------------------------------------
// Training loop

namespace {

struct ValidationStats {
  double mse = 0.0, mae = 0.0, r2 = 0.0;
};

ValidationStats validation_stats(const Network& net, const Dataset& data) {
  ValidationStats s;
  if (data.size() == 0) return s;
  const auto pred = predict_batch(net, data);
  const double n = static_cast<double>(data.size());
  double mean = 0.0;
  for (double y : data.targets) mean += y;
  mean /= n;
  double ss_res = 0.0, ss_tot = 0.0, abs_sum = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double e = data.targets[i] - pred[i];
    ss_res += e * e;
    abs_sum += std::abs(e);
    ss_tot += (data.targets[i] - mean) * (data.targets[i] - mean);
  }
  s.mse = ss_res / n;
  s.mae = abs_sum / n;
  s.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);
  return s;
}

}  // namespace

TrainResult train_network(Network net, const Dataset& train, const Dataset& validation,
                          const TrainOptions& opt) {
  TrainResult result{std::move(net), {}};
  result.report.seed = opt.seed;
  if (opt.epochs == 0) return result;
  if (train.size() == 0) throw DomainError("training set is empty");
  if (validation.size() == 0) throw DomainError("validation set is empty");
  if (opt.batch_size == 0) throw DomainError("batch size must be > 0");

  auto params = parameters(result.network);
  std::vector<double> m(params.size(), 0.0), v(params.size(), 0.0), grad;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(opt.seed ^ 0x5eed5eed5eed5eedULL);

  std::vector<double> best_params;
  double best_val = std::numeric_limits<double>::infinity();

  kernels::AdamStep step{opt.learning_rate, opt.beta1, opt.beta2, opt.epsilon, 1.0, 1.0};
  double beta1_pow = 1.0, beta2_pow = 1.0;

  for (std::size_t epoch = 1; epoch <= opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const auto len = std::min(opt.batch_size, order.size() - start);
      const std::span<const std::size_t> batch(order.data() + start, len);
      const double loss = mse_gradients(result.network, train, batch, grad);
      if (!std::isfinite(loss)) throw TrainingDiverged(epoch);
      beta1_pow *= opt.beta1;
      beta2_pow *= opt.beta2;
      step.bias_correction1 = 1.0 - beta1_pow;
      step.bias_correction2 = 1.0 - beta2_pow;
      kernels::adam_update(params, m, v, grad, step);
      loss_sum += loss;
      ++batches;
    }
    for (double p : params)
      if (!std::isfinite(p)) throw TrainingDiverged(epoch);
    const auto val = validation_stats(result.network, validation);
    if (!std::isfinite(val.mse)) throw TrainingDiverged(epoch);
    EpochRecord rec{epoch, loss_sum / static_cast<double>(batches), val.mse, val.mae, val.r2};
    result.report.epochs.push_back(rec);
    result.report.epoch_count = epoch;
    if (!opt.restore_best || val.mse < best_val) {
      best_val = val.mse;
      result.report.best_epoch = epoch;
      if (opt.restore_best) best_params.assign(params.begin(), params.end());
    }
    if (opt.on_epoch && !opt.on_epoch(rec)) break;
  }
  if (opt.restore_best && !best_params.empty()) std::copy(best_params.begin(), best_params.end(), params.begin());
  return result;
}

TrainResult train_network(Architecture arch, const Dataset& train, const Dataset& validation,
                          const TrainOptions& options) {
  return train_network(init_network(arch, options.seed), train, validation, options);
}

void to_json(nlohmann::json& j, const TrainReport& r) {
  auto records = nlohmann::json::array();
  for (const auto& e : r.epochs)
    records.push_back({{"epoch", e.epoch},
                       {"train_mse", e.train_mse},
                       {"val_mse", e.val_mse},
                       {"val_mae", e.val_mae},
                       {"val_r2", e.val_r2}});
  j = nlohmann::json{{"model_version", r.model_version},
                     {"seed", r.seed},
                     {"epoch_count", r.epoch_count},
                     {"best_epoch", r.best_epoch},
                     {"epochs", records}};
}

void from_json(const nlohmann::json& j, TrainReport& r) {
  r.model_version = j.value("model_version", std::string{});
  r.seed = j.value("seed", std::uint64_t{0});
  r.epoch_count = j.value("epoch_count", std::size_t{0});
  r.best_epoch = j.value("best_epoch", r.epoch_count);
  r.epochs.clear();
  for (const auto& e : j.value("epochs", nlohmann::json::array()))
    r.epochs.push_back(EpochRecord{e.at("epoch").get<std::size_t>(), e.at("train_mse").get<double>(),
                                   e.at("val_mse").get<double>(), e.at("val_mae").get<double>(),
                                   e.at("val_r2").get<double>()});
}

std::string train_report_csv(const TrainReport& r) {
  std::ostringstream os;
  os << "epoch,train_mse,val_mse,val_mae,val_r2\n";
  for (const auto& e : r.epochs)
    os << e.epoch << ',' << format_double(e.train_mse) << ',' << format_double(e.val_mse) << ','
       << format_double(e.val_mae) << ',' << format_double(e.val_r2) << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Trained models: inference and serialization

std::vector<double> TrainedModel::predict_at(const ExperimentConfig& config, std::span<const double> times) const {
  const std::size_t steps = input_steps(network);
  Dataset data;
  data.steps = steps;
  data.inputs.reserve(times.size() * steps * kFeatureCount);
  data.targets.assign(times.size(), 0.0);
  for (double t : times) {
    if (!std::isfinite(t) || t < 0.0) throw DomainError("prediction times must be finite and >= 0");
    for (std::size_t j = 0; j < steps; ++j) {
      const double back = static_cast<double>(steps - 1 - j) * window_dt;
      const auto row = standardizer.transform_features(feature_vector(config, std::max(0.0, t - back)));
      data.inputs.insert(data.inputs.end(), row.begin(), row.end());
    }
  }
  auto out = predict_batch(network, data);
  for (auto& y : out) y = standardizer.inverse_target(target, y);
  return out;
}

void to_json(nlohmann::json& j, const TrainedModel& m) {
  j = nlohmann::json::object();
  j["format"] = "filtertwin.model";
  j["format_version"] = 1;
  j["target"] = std::string(to_string(m.target));
  j["kind"] = std::string(to_string(m.architecture()));
  j["version"] = m.version;
  j["seed"] = m.seed;
  j["window_dt"] = m.window_dt;
  if (const auto* f = std::get_if<FfnnModel>(&m.network)) {
    j["shapes"] = {{"layer_sizes", f->layer_sizes}};
  } else {
    const auto& l = std::get<LstmModel>(m.network);
    j["shapes"] = {{"input_size", l.input_size}, {"hidden_size", l.hidden_size}, {"sequence_length", kSequenceLength}};
  }
  j["params"] = std::vector<double>(parameters(m.network).begin(), parameters(m.network).end());
  j["standardizer"] = m.standardizer;
  j["train_report"] = m.report;
}

void from_json(const nlohmann::json& j, TrainedModel& m) {
  try {
    if (j.at("format").get<std::string>() != "filtertwin.model") throw DomainError("not a filtertwin model");
    if (j.at("format_version").get<int>() != 1) throw DomainError("unsupported model format version");
    m.target = target_from_string(j.at("target").get<std::string>());
    const auto kind = architecture_from_string(j.at("kind").get<std::string>());
    m.version = j.at("version").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.window_dt = j.at("window_dt").get<double>();
    auto params = j.at("params").get<std::vector<double>>();
    const auto& shapes = j.at("shapes");
    if (kind == Architecture::ffnn) {
      FfnnModel f;
      f.layer_sizes = shapes.at("layer_sizes").get<std::vector<std::size_t>>();
      if (f.layer_sizes.size() < 2 || f.layer_sizes.front() != kFeatureCount || f.layer_sizes.back() != 1)
        throw DomainError("ffnn layer sizes incompatible with the feature schema");
      f.params = std::move(params);
      if (f.params.size() != f.parameter_count()) throw DomainError("ffnn parameter count mismatch");
      m.network = std::move(f);
    } else {
      LstmModel l;
      l.input_size = shapes.at("input_size").get<std::size_t>();
      l.hidden_size = shapes.at("hidden_size").get<std::size_t>();
      if (l.input_size != kFeatureCount || l.hidden_size == 0) throw DomainError("lstm shape mismatch");
      l.params = std::move(params);
      if (l.params.size() != l.parameter_count()) throw DomainError("lstm parameter count mismatch");
      m.network = std::move(l);
    }
    for (double p : parameters(m.network))
      if (!std::isfinite(p)) throw DomainError("model has non-finite parameters");
    m.standardizer = j.at("standardizer").get<Standardizer>();
    m.report = j.value("train_report", nlohmann::json::object()).get<TrainReport>();
  } catch (const nlohmann::json::exception& e) {
    throw DomainError(std::string("malformed model file: ") + e.what());
  }
}

TrainedModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DomainError("cannot open model file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DomainError("model file '" + path + "' is not valid JSON: " + e.what());
  }
  return j.get<TrainedModel>();
}

void save_model(const TrainedModel& m, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DomainError("cannot write model file '" + path + "'");
  out << nlohmann::json(m).dump() << '\n';
  if (!out) throw DomainError("failed writing model file '" + path + "'");
}

// ---------------------------------------------------------------------------
// Trajectory prediction

PredictedSeries predict_on_grid(const TrainedModel& pressure_model, const TrainedModel& flow_model,
                                const ExperimentConfig& config, std::span<const double> times) {
  if (pressure_model.target != Target::pressure || flow_model.target != Target::flow)
    throw DomainError("predict needs a pressure model and a flow model");
  require_valid(config);
  const auto p = pressure_model.predict_at(config, times);
  const auto q = flow_model.predict_at(config, times);
  PredictedSeries out;
  out.series.experiment_id = config.experiment_id;
  out.series.status = SeriesStatus::complete;
  out.series.samples.reserve(times.size());
  for (std::size_t i = 0; i < times.size(); ++i) {
    out.series.samples.push_back(Sample{times[i], std::max(0.0, p[i]), std::max(0.0, q[i])});
    if (!out.duration) out.max_flow = std::max(out.max_flow, out.series.samples.back().flow);
    if (!out.duration && p[i] >= config.end_pressure) out.duration = times[i];
  }
  return out;
}

PredictedSeries predict_series(const TrainedModel& pressure_model, const TrainedModel& flow_model,
                               const ExperimentConfig& config, double dt, double horizon) {
  if (!(std::isfinite(dt) && dt > 0.0)) throw DomainError("prediction dt must be > 0");
  if (!(std::isfinite(horizon) && horizon > 0.0)) throw DomainError("prediction horizon must be > 0");
  const auto n = static_cast<std::size_t>(std::floor(horizon / dt + 1e-9)) + 1;
  std::vector<double> times(n);
  for (std::size_t k = 0; k < n; ++k) times[k] = static_cast<double>(k) * dt;
  return predict_on_grid(pressure_model, flow_model, config, times);
}

// ---------------------------------------------------------------------------
// Corpus preparation

std::vector<FeatureVector> standardized_rows(const Standardizer& s, const ExperimentConfig& config,
                                             const CycleSeries& series) {
  std::vector<FeatureVector> rows;
  rows.reserve(series.samples.size());
  for (const auto& smp : series.samples) rows.push_back(s.transform_features(feature_vector(config, smp.t)));
  return rows;
}

namespace {

double median_spacing(const std::vector<CycleSeries>& series, double fallback) {
  std::vector<double> gaps;
  for (const auto& s : series)
    for (std::size_t i = 1; i < s.samples.size(); ++i) gaps.push_back(s.samples[i].t - s.samples[i - 1].t);
  if (gaps.empty()) return fallback;
  auto mid = gaps.begin() + static_cast<std::ptrdiff_t>(gaps.size() / 2);
  std::nth_element(gaps.begin(), mid, gaps.end());
  return *mid;
}

double target_value(const Sample& s, Target t) { return t == Target::pressure ? s.pressure : s.flow; }

}  // namespace

PreparedData prepare_data(const std::vector<CorpusEntry>& corpus, Target target, Architecture arch,
                          const PrepareOptions& options) {
  if (corpus.empty()) throw DomainError("training corpus is empty");
  if (options.stride == 0) throw DomainError("stride must be >= 1");
  if (options.balance_cap == 0) throw DomainError("balance cap must be >= 1");
  std::vector<CycleSeries> series;
  std::vector<std::size_t> counts;
  series.reserve(corpus.size());
  for (const auto& entry : corpus) {
    require_valid(entry.config);
    if (entry.config.experiment_id != entry.series.experiment_id)
      throw DomainError("corpus entry id mismatch for '" + entry.config.experiment_id + "'");
    series.push_back(decimate(entry.series, options.stride));
    counts.push_back(series.back().samples.size());
  }

  PreparedData out;
  out.split = split_train_val(counts, options.train_ratio, options.seed);
  out.window_dt = median_spacing(series, static_cast<double>(options.stride) * kNominalSampleInterval);

  std::vector<LabeledRow> fit_rows;
  fit_rows.reserve(out.split.train.size());
  for (const auto& ref : out.split.train) {
    const auto& s = series[ref.experiment].samples[ref.index];
    fit_rows.push_back(LabeledRow{feature_vector(corpus[ref.experiment].config, s.t), s.pressure, s.flow});
  }
  out.standardizer = Standardizer::fit(fit_rows);

  const std::size_t steps = arch == Architecture::ffnn ? 1 : kSequenceLength;
  out.train.steps = out.validation.steps = steps;
  std::vector<std::vector<FeatureVector>> rows(corpus.size());
  for (std::size_t e = 0; e < corpus.size(); ++e)
    rows[e] = standardized_rows(out.standardizer, corpus[e].config, series[e]);

  std::vector<double> flat(steps * kFeatureCount);
  auto append = [&](Dataset& ds, const SampleRef& ref) {
    const auto& r = rows[ref.experiment];
    if (steps == 1) {
      std::copy(r[ref.index].begin(), r[ref.index].end(), flat.begin());
    } else {
      const auto w = sequence_window(r, ref.index, steps);
      for (std::size_t j = 0; j < steps; ++j)
        std::copy(w.steps[j].begin(), w.steps[j].end(), flat.begin() + static_cast<std::ptrdiff_t>(j * kFeatureCount));
    }
    const double y = target_value(series[ref.experiment].samples[ref.index], target);
    ds.push_back(flat, out.standardizer.transform_target(target, y));
  };
  std::vector<std::size_t> repeats(corpus.size(), 1);
  if (options.balance_cap > 1) {
    std::vector<std::size_t> per(corpus.size(), 0);
    for (const auto& ref : out.split.train) ++per[ref.experiment];
    std::vector<std::size_t> nonzero;
    for (auto n : per)
      if (n > 0) nonzero.push_back(n);
    auto mid = nonzero.begin() + static_cast<std::ptrdiff_t>(nonzero.size() / 2);
    std::nth_element(nonzero.begin(), mid, nonzero.end());
    for (std::size_t e = 0; e < corpus.size(); ++e)
      if (per[e] > 0) {
        const auto r = std::llround(static_cast<double>(*mid) / static_cast<double>(per[e]));
        repeats[e] = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(1LL, r)), 1, options.balance_cap);
      }
  }
  for (const auto& ref : out.split.train)
    for (std::size_t k = 0; k < repeats[ref.experiment]; ++k) append(out.train, ref);
  for (const auto& ref : out.split.validation) append(out.validation, ref);
  return out;
}

TrainedModel train_model(const std::vector<CorpusEntry>& corpus, Target target, Architecture arch,
                         const TrainOptions& train_options, const PrepareOptions& prepare_options) {
  auto data = prepare_data(corpus, target, arch, prepare_options);
  auto result = train_network(arch, data.train, data.validation, train_options);
  TrainedModel m;
  m.target = target;
  m.network = std::move(result.network);
  m.standardizer = data.standardizer;
  m.seed = train_options.seed;
  m.window_dt = data.window_dt;
  m.report = std::move(result.report);
  return m;
}

}  // namespace filtertwin
