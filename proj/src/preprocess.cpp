#include "filtertwin/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace filtertwin {

namespace {

std::string column_name(std::size_t c) {
  if (c < kFeatureCount) return std::string(kFeatureNames[c]);
  return c == kPressureColumn ? "pressure" : "flow";
}

double column_value(const LabeledRow& r, std::size_t c) {
  if (c < kFeatureCount) return r.x[c];
  return c == kPressureColumn ? r.pressure : r.flow;
}

}  // namespace

std::size_t target_column(Target t) { return t == Target::pressure ? kPressureColumn : kFlowColumn; }

Standardizer::Standardizer(std::vector<double> mu, std::vector<double> sigma)
    : mu_(std::move(mu)), sigma_(std::move(sigma)) {
  if (mu_.size() != kStandardizerColumns || sigma_.size() != kStandardizerColumns)
    throw DomainError("standardizer needs " + std::to_string(kStandardizerColumns) + " columns");
  for (std::size_t c = 0; c < sigma_.size(); ++c)
    if (!(std::isfinite(sigma_[c]) && sigma_[c] > 0.0) || !std::isfinite(mu_[c]))
      throw DomainError("standardizer column '" + column_name(c) + "' has invalid statistics");
}

Standardizer Standardizer::fit(std::span<const LabeledRow> rows) {
  if (rows.size() < 2) throw DomainError("standardizer fit needs at least 2 rows");
  const double n = static_cast<double>(rows.size());
  std::vector<double> mu(kStandardizerColumns), sigma(kStandardizerColumns);
  for (std::size_t c = 0; c < kStandardizerColumns; ++c) {
    double s = 0.0;
    for (const auto& r : rows) s += column_value(r, c);
    const double mean = s / n;
    double ss = 0.0;
    bool constant = true;
    const double first = column_value(rows.front(), c);
    for (const auto& r : rows) {
      const double v = column_value(r, c);
      constant = constant && v == first;
      ss += (v - mean) * (v - mean);
    }
    if (constant) throw DomainError("cannot standardize constant column '" + column_name(c) + "'");
    mu[c] = mean;
    sigma[c] = std::sqrt(ss / n);
  }
  return Standardizer(std::move(mu), std::move(sigma));
}

std::vector<double> Standardizer::transform(std::span<const double> x) const {
  if (x.size() != kFeatureCount && x.size() != kStandardizerColumns)
    throw DomainError("transform arity " + std::to_string(x.size()) + " (expected 5 or 7)");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (x[i] - mu_[i]) / sigma_[i];
  return out;
}

std::vector<double> Standardizer::inverse_transform(std::span<const double> x) const {
  if (x.size() != kFeatureCount && x.size() != kStandardizerColumns)
    throw DomainError("inverse_transform arity " + std::to_string(x.size()) + " (expected 5 or 7)");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * sigma_[i] + mu_[i];
  return out;
}

FeatureVector Standardizer::transform_features(const FeatureVector& x) const {
  FeatureVector out{};
  for (std::size_t i = 0; i < kFeatureCount; ++i) out[i] = (x[i] - mu_[i]) / sigma_[i];
  return out;
}

double Standardizer::transform_target(Target t, double y) const {
  const auto c = target_column(t);
  return (y - mu_[c]) / sigma_[c];
}

double Standardizer::inverse_target(Target t, double y_scaled) const {
  const auto c = target_column(t);
  return y_scaled * sigma_[c] + mu_[c];
}

void to_json(nlohmann::json& j, const Standardizer& s) {
  std::vector<std::string> schema;
  for (std::size_t c = 0; c < kStandardizerColumns; ++c) schema.push_back(column_name(c));
  j = nlohmann::json{{"mu", s.mu()}, {"sigma", s.sigma()}, {"schema", schema}};
}

void from_json(const nlohmann::json& j, Standardizer& s) {
  try {
    auto schema = j.at("schema").get<std::vector<std::string>>();
    for (std::size_t c = 0; c < kStandardizerColumns; ++c)
      if (c >= schema.size() || schema[c] != column_name(c))
        throw DomainError("standardizer schema mismatch at column " + std::to_string(c));
    s = Standardizer(j.at("mu").get<std::vector<double>>(), j.at("sigma").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw DomainError(std::string("malformed standardizer: ") + e.what());
  }
}

SequenceWindow sequence_window(std::span<const FeatureVector> rows, std::size_t i, std::size_t length) {
  if (i >= rows.size()) throw DomainError("sequence window index out of range");
  if (length == 0) throw DomainError("sequence length must be >= 1");
  SequenceWindow w;
  w.target_index = i;
  w.steps.reserve(length);
  for (std::size_t j = 0; j < length; ++j) {
    const std::size_t back = length - 1 - j;
    w.steps.push_back(rows[i >= back ? i - back : 0]);
  }
  return w;
}

std::vector<SequenceWindow> make_sequences(std::span<const FeatureVector> rows, std::size_t length) {
  if (rows.empty()) throw DomainError("cannot build sequences from an empty series");
  std::vector<SequenceWindow> out;
  out.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out.push_back(sequence_window(rows, i, length));
  return out;
}

CycleSeries decimate(const CycleSeries& series, std::size_t block) {
  if (block == 0) throw DomainError("decimation block must be >= 1");
  CycleSeries out;
  out.experiment_id = series.experiment_id;
  out.status = series.status;
  out.timed_out = series.timed_out;
  const auto& in = series.samples;
  out.samples.reserve(in.size() / block + 1);
  for (std::size_t start = 0; start < in.size(); start += block) {
    const std::size_t end = std::min(in.size(), start + block);
    Sample m{0.0, 0.0, 0.0};
    for (std::size_t i = start; i < end; ++i) {
      m.t += in[i].t;
      m.pressure += in[i].pressure;
      m.flow += in[i].flow;
    }
    const auto n = static_cast<double>(end - start);
    out.samples.push_back(Sample{m.t / n, m.pressure / n, m.flow / n});
  }
  return out;
}

TrainValSplit split_train_val(std::span<const std::size_t> samples_per_experiment, double ratio,
                              std::uint64_t seed) {
  if (samples_per_experiment.empty()) throw DomainError("cannot split an empty corpus");
  if (!(ratio > 0.0 && ratio < 1.0)) throw DomainError("split ratio must lie in (0, 1)");
  std::mt19937_64 rng(seed);
  TrainValSplit split;
  std::vector<std::size_t> order;
  for (std::size_t e = 0; e < samples_per_experiment.size(); ++e) {
    const std::size_t m = samples_per_experiment[e];
    order.resize(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(m)));
    std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::sort(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    for (std::size_t k = 0; k < m; ++k)
      (k < n_train ? split.train : split.validation).push_back(SampleRef{e, order[k]});
  }
  return split;
}

}  // namespace filtertwin
