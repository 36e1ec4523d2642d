#pragma once

// Core value types shared across the filter-press twin: experiment
// configuration, measured samples, cycle series and the model feature schema.

#include <array>
#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace filtertwin {

/// Raised for contract violations on domain values (bad arguments, malformed files).
class DomainError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// Largest admissible end pressure in bar.
inline constexpr double kMaxEndPressure = 10.0;

/// Nominal logger sampling interval (10 Hz per channel).
inline constexpr double kNominalSampleInterval = 0.1;

/// Static inputs of one filtration cycle.
struct ExperimentConfig {
  std::string experiment_id;
  double concentration = 0.0;  // g/L
  int plate_count = 0;
  double end_pressure = 0.0;   // bar
  int cloth_cycles = 0;
  std::string created_at;      // ISO-8601 UTC

  bool operator==(const ExperimentConfig&) const = default;
};

struct Sample {
  double t = 0.0;         // s from cycle start
  double pressure = 0.0;  // bar
  double flow = 0.0;      // dm3/min

  bool operator==(const Sample&) const = default;
};

enum class SeriesStatus { open, complete };

std::string_view to_string(SeriesStatus s);
SeriesStatus series_status_from_string(std::string_view s);

struct CycleSeries {
  std::string experiment_id;
  std::vector<Sample> samples;
  SeriesStatus status = SeriesStatus::open;
  /// Set when a simulated cycle hit its time cap before reaching end pressure.
  bool timed_out = false;

  [[nodiscard]] double duration() const { return samples.empty() ? 0.0 : samples.back().t; }
  [[nodiscard]] std::vector<double> times() const;
  [[nodiscard]] std::vector<double> pressures() const;
  [[nodiscard]] std::vector<double> flows() const;
};

/// Model input schema. Order is fixed and shared by every module.
inline constexpr std::size_t kFeatureCount = 5;
inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames = {
    "chambers", "time", "concentration", "cycles", "max_pressure"};

using FeatureVector = std::array<double, kFeatureCount>;

namespace feature {
inline constexpr std::size_t chambers = 0;
inline constexpr std::size_t time = 1;
inline constexpr std::size_t concentration = 2;
inline constexpr std::size_t cycles = 3;
inline constexpr std::size_t max_pressure = 4;
}  // namespace feature

enum class Target { pressure, flow };
std::string_view to_string(Target t);
Target target_from_string(std::string_view s);

/// Returns every violated invariant; empty means the config is valid.
std::vector<std::string> validate_config(const ExperimentConfig& config);

/// Throws DomainError listing the violations when the config is invalid.
void require_valid(const ExperimentConfig& config);

/// Features for elapsed time t (seconds). Throws on negative or non-finite t.
FeatureVector feature_vector(const ExperimentConfig& config, double t);

/// Checks strictly increasing time and non-negative channels.
/// Returns the index of the first offending sample, if any.
std::optional<std::size_t> first_sample_violation(std::span<const Sample> samples,
                                                  std::optional<double> previous_t = std::nullopt);

// JSON: snake_case field names.
void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);
void to_json(nlohmann::json& j, const Sample& s);
void from_json(const nlohmann::json& j, Sample& s);

/// Canonical CSV header for cycle series.
inline constexpr std::string_view kSeriesCsvHeader = "time_s,pressure_bar,flow_dm3_min";

/// Shortest round-trip decimal representation of a double.
std::string format_double(double v);

void write_series_csv(std::ostream& out, const std::vector<Sample>& samples);
std::string series_csv(const std::vector<Sample>& samples);
std::vector<Sample> read_series_csv(std::istream& in);
std::vector<Sample> parse_series_csv(std::string_view text);

/// Formats a point in time as ISO-8601 UTC with seconds resolution.
std::string utc_timestamp_now();

}  // namespace filtertwin
