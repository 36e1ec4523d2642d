#include "filtertwin/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "filtertwin/kernels.hpp"

namespace filtertwin {

namespace {

void require_same_nonempty(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.empty()) throw DomainError(std::string(what) + ": empty input");
  if (a.size() != b.size())
    throw DomainError(std::string(what) + ": length mismatch (" + std::to_string(a.size()) + " vs " +
                      std::to_string(b.size()) + ")");
}

double squared_error_sum(std::span<const double> y, std::span<const double> yhat) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double e = y[i] - yhat[i];
    s += e * e;
  }
  return s;
}

}  // namespace

PointMetrics point_metrics(std::span<const double> y, std::span<const double> yhat) {
  require_same_nonempty(y, yhat, "point_metrics");
  const double n = static_cast<double>(y.size());
  PointMetrics m;
  const double ss_res = squared_error_sum(y, yhat);
  double abs_sum = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) abs_sum += std::abs(y[i] - yhat[i]);
  m.mse = ss_res / n;
  m.mae = abs_sum / n;
  m.rmse = std::sqrt(m.mse);
  const double mean = kernels::sum(y) / n;
  const double ss_tot = kernels::sum_sq_dev(y, mean);
  const bool constant = std::all_of(y.begin(), y.end(), [&](double v) { return v == y.front(); });
  if (!constant && ss_tot > 0.0) m.r2 = 1.0 - ss_res / ss_tot;
  return m;
}

std::vector<double> moving_average(std::span<const double> x, std::size_t n) {
  if (n == 0) throw DomainError("moving average window must be >= 1");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t len = std::min(n, i + 1);
    out[i] = kernels::sum(x.subspan(i + 1 - len, len)) / static_cast<double>(len);
  }
  return out;
}

std::vector<double> moving_std(std::span<const double> x, std::size_t n) {
  if (n == 0) throw DomainError("moving std window must be >= 1");
  const auto ma = moving_average(x, n);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t len = std::min(n, i + 1);
    out[i] = std::sqrt(kernels::sum_sq_dev(x.subspan(i + 1 - len, len), ma[i]) / static_cast<double>(len));
  }
  return out;
}

BandedSeries band(std::span<const double> x, std::size_t n, std::span<const double> t) {
  if (n < 2) throw DomainError("band window must be >= 2");
  if (!t.empty() && t.size() != x.size()) throw DomainError("band: time axis length mismatch");
  BandedSeries b;
  b.window = n;
  b.t.assign(t.begin(), t.end());
  b.ma = moving_average(x, n);
  const auto sd = moving_std(x, n);
  b.lower.resize(x.size());
  b.upper.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    b.lower[i] = b.ma[i] - b.z * sd[i];
    b.upper[i] = b.ma[i] + b.z * sd[i];
  }
  return b;
}

double rl2n(std::span<const double> y, std::span<const double> yhat) {
  require_same_nonempty(y, yhat, "rl2n");
  const double norm_sq = kernels::dot(y, y);
  if (!(norm_sq > 0.0)) throw DomainError("rl2n: reference has zero norm");
  return 100.0 * std::sqrt(squared_error_sum(y, yhat)) / std::sqrt(norm_sq);
}

double rl2n_b(std::span<const double> yhat, const BandedSeries& b) {
  require_same_nonempty(yhat, b.ma, "rl2n_b");
  const double norm_sq = kernels::dot(b.ma, b.ma);
  if (!(norm_sq > 0.0)) throw DomainError("rl2n_b: moving average has zero norm");
  double err = 0.0;
  for (std::size_t i = 0; i < yhat.size(); ++i) {
    if (yhat[i] < b.lower[i]) {
      err += (b.lower[i] - yhat[i]) * (b.lower[i] - yhat[i]);
    } else if (yhat[i] > b.upper[i]) {
      err += (yhat[i] - b.upper[i]) * (yhat[i] - b.upper[i]);
    }
  }
  return 100.0 * std::sqrt(err / norm_sq);
}

double pib(std::span<const double> yhat, const BandedSeries& b) {
  require_same_nonempty(yhat, b.ma, "pib");
  std::size_t inside = 0;
  for (std::size_t i = 0; i < yhat.size(); ++i)
    if (yhat[i] >= b.lower[i] && yhat[i] <= b.upper[i]) ++inside;
  return 100.0 * static_cast<double>(inside) / static_cast<double>(yhat.size());
}

void to_json(nlohmann::json& j, const MetricRow& r) {
  j = nlohmann::json{{"mse", r.mse}, {"rmse", r.rmse}, {"rl2n", r.rl2n}, {"rl2n_b", r.rl2n_b}, {"pib", r.pib}};
}

void from_json(const nlohmann::json& j, MetricRow& r) {
  r.mse = j.at("mse").get<double>();
  r.rmse = j.at("rmse").get<double>();
  r.rl2n = j.at("rl2n").get<double>();
  r.rl2n_b = j.at("rl2n_b").get<double>();
  r.pib = j.at("pib").get<double>();
}

MetricRow metric_row(std::span<const double> yhat, const BandedSeries& b) {
  const auto pm = point_metrics(b.ma, yhat);
  return MetricRow{pm.mse, pm.rmse, rl2n(b.ma, yhat), rl2n_b(yhat, b), pib(yhat, b)};
}

std::vector<Sample> align_to_grid(const std::vector<Sample>& predicted, std::span<const double> times) {
  if (predicted.empty()) throw DomainError("cannot align an empty prediction");
  std::vector<Sample> out;
  out.reserve(times.size());
  std::size_t k = 0;
  for (double t : times) {
    while (k + 1 < predicted.size() && predicted[k + 1].t <= t) ++k;
    const auto& a = predicted[k];
    if (a.t == t) {
      out.push_back(Sample{t, a.pressure, a.flow});
      continue;
    }
    if (t < a.t || k + 1 >= predicted.size())
      throw DomainError("prediction does not cover measured time " + format_double(t));
    const auto& b = predicted[k + 1];
    const double w = (t - a.t) / (b.t - a.t);
    out.push_back(Sample{t, a.pressure + w * (b.pressure - a.pressure), a.flow + w * (b.flow - a.flow)});
  }
  return out;
}

ExperimentEvaluation evaluate_experiment(const CycleSeries& measured, const CycleSeries& predicted,
                                         std::size_t window) {
  if (measured.samples.empty()) throw DomainError("measured series is empty");
  const auto t = measured.times();
  ExperimentEvaluation ev;
  ev.aligned_prediction = align_to_grid(predicted.samples, t);
  if (ev.aligned_prediction.size() != measured.samples.size())
    throw DomainError("prediction length mismatch after alignment");
  std::vector<double> p_hat, q_hat;
  p_hat.reserve(t.size());
  q_hat.reserve(t.size());
  for (const auto& s : ev.aligned_prediction) {
    p_hat.push_back(s.pressure);
    q_hat.push_back(s.flow);
  }
  ev.pressure_band = band(measured.pressures(), window, t);
  ev.flow_band = band(measured.flows(), window, t);
  ev.pressure = metric_row(p_hat, ev.pressure_band);
  ev.flow = metric_row(q_hat, ev.flow_band);
  return ev;
}

ReportRow mean_row(std::span<const ReportRow> rows) {
  if (rows.empty()) throw DomainError("mean of an empty report");
  ReportRow m{"mean", {}, {}};
  auto add = [](MetricRow& acc, const MetricRow& r) {
    acc.mse += r.mse;
    acc.rmse += r.rmse;
    acc.rl2n += r.rl2n;
    acc.rl2n_b += r.rl2n_b;
    acc.pib += r.pib;
  };
  for (const auto& r : rows) {
    add(m.pressure, r.pressure);
    add(m.flow, r.flow);
  }
  const double n = static_cast<double>(rows.size());
  for (auto* row : {&m.pressure, &m.flow}) {
    row->mse /= n;
    row->rmse /= n;
    row->rl2n /= n;
    row->rl2n_b /= n;
    row->pib /= n;
  }
  return m;
}

std::string report_csv(std::span<const ReportRow> rows) {
  std::ostringstream os;
  os << "experiment";
  for (const char* target : {"pressure", "flow"})
    for (const char* col : {"mse", "rmse", "rl2n", "rl2n_b", "pib"}) os << ',' << target << '_' << col;
  os << '\n';
  auto emit = [&](const ReportRow& r) {
    os << r.experiment;
    for (const auto* m : {&r.pressure, &r.flow})
      os << ',' << format_double(m->mse) << ',' << format_double(m->rmse) << ',' << format_double(m->rl2n)
         << ',' << format_double(m->rl2n_b) << ',' << format_double(m->pib);
    os << '\n';
  };
  for (const auto& r : rows) emit(r);
  emit(mean_row(rows));
  return os.str();
}

nlohmann::json report_json(std::span<const ReportRow> rows) {
  auto arr = nlohmann::json::array();
  for (const auto& r : rows) arr.push_back({{"experiment", r.experiment}, {"pressure", r.pressure}, {"flow", r.flow}});
  const auto m = mean_row(rows);
  return {{"rows", arr}, {"mean", {{"experiment", "mean"}, {"pressure", m.pressure}, {"flow", m.flow}}}};
}

}  // namespace filtertwin
