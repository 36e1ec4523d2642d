#pragma once

// Evaluation metrics: point errors, trailing moving-average confidence bands
// (CI90 = MA +/- z*STD) and band-relative errors.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "filtertwin/domain.hpp"

namespace filtertwin {

inline constexpr double kCi90Z = 1.645;
inline constexpr std::size_t kDefaultBandWindow = 50;

struct PointMetrics {
  double mse = 0.0;
  double mae = 0.0;
  double rmse = 0.0;
  /// Undefined (nullopt) when y is constant.
  std::optional<double> r2;
};

/// Throws DomainError on empty or unequal inputs.
PointMetrics point_metrics(std::span<const double> y, std::span<const double> yhat);

/// Trailing mean over the last min(n, i+1) samples.
std::vector<double> moving_average(std::span<const double> x, std::size_t n);
/// Trailing population standard deviation over the same shrinking window.
std::vector<double> moving_std(std::span<const double> x, std::size_t n);

struct BandedSeries {
  std::vector<double> t;
  std::vector<double> ma;
  std::vector<double> lower;
  std::vector<double> upper;
  std::size_t window = kDefaultBandWindow;
  double z = kCi90Z;

  [[nodiscard]] std::size_t size() const { return ma.size(); }
};

/// Requires n >= 2. t may be empty (no time axis) or match x in length.
BandedSeries band(std::span<const double> x, std::size_t n, std::span<const double> t = {});

/// 100 * ||y - yhat|| / ||y||. Throws on zero-norm y.
double rl2n(std::span<const double> y, std::span<const double> yhat);
/// Distance outside [lower, upper], normalized by the band's moving average.
double rl2n_b(std::span<const double> yhat, const BandedSeries& b);
/// Percentage of predictions inside the inclusive band.
double pib(std::span<const double> yhat, const BandedSeries& b);

struct MetricRow {
  double mse = 0.0;
  double rmse = 0.0;
  double rl2n = 0.0;    // percent
  double rl2n_b = 0.0;  // percent
  double pib = 0.0;     // percent
};

void to_json(nlohmann::json& j, const MetricRow& r);
void from_json(const nlohmann::json& j, MetricRow& r);

/// MSE/RMSE/RL2N against the band's moving average, RL2N-B and PIB against the band.
MetricRow metric_row(std::span<const double> yhat, const BandedSeries& b);

/// Linear interpolation of a predicted series onto the given times. Times past
/// the prediction's last sample are an alignment error.
std::vector<Sample> align_to_grid(const std::vector<Sample>& predicted, std::span<const double> times);

struct ExperimentEvaluation {
  MetricRow pressure;
  MetricRow flow;
  BandedSeries pressure_band;
  BandedSeries flow_band;
  std::vector<Sample> aligned_prediction;
};

ExperimentEvaluation evaluate_experiment(const CycleSeries& measured, const CycleSeries& predicted,
                                         std::size_t window = kDefaultBandWindow);

struct ReportRow {
  std::string experiment;
  MetricRow pressure;
  MetricRow flow;
};

/// Column-wise mean of the rows, labelled "mean".
ReportRow mean_row(std::span<const ReportRow> rows);

/// experiment,pressure_mse,...,flow_pib with a trailing mean row.
std::string report_csv(std::span<const ReportRow> rows);
nlohmann::json report_json(std::span<const ReportRow> rows);

}  // namespace filtertwin
