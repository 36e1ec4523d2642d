#pragma once

// Standardization of inputs and targets, fixed-length sequence windows for the
// recurrent model, and the per-experiment stratified train/validation split.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "filtertwin/domain.hpp"

namespace filtertwin {

/// Feature vector plus both targets, in physical units.
struct LabeledRow {
  FeatureVector x{};
  double pressure = 0.0;
  double flow = 0.0;
};

/// Columns: the five features followed by the pressure and flow targets.
inline constexpr std::size_t kStandardizerColumns = kFeatureCount + 2;
inline constexpr std::size_t kPressureColumn = kFeatureCount;
inline constexpr std::size_t kFlowColumn = kFeatureCount + 1;

std::size_t target_column(Target t);

class Standardizer {
public:
  Standardizer() = default;
  Standardizer(std::vector<double> mu, std::vector<double> sigma);

  /// Population mean and standard deviation per column. Needs >= 2 rows and no
  /// constant column; the error names the offending column.
  static Standardizer fit(std::span<const LabeledRow> rows);

  [[nodiscard]] const std::vector<double>& mu() const { return mu_; }
  [[nodiscard]] const std::vector<double>& sigma() const { return sigma_; }
  [[nodiscard]] bool fitted() const { return !mu_.empty(); }

  /// (x - mu) / sigma over either the 5 feature columns or all 7 columns.
  [[nodiscard]] std::vector<double> transform(std::span<const double> x) const;
  [[nodiscard]] std::vector<double> inverse_transform(std::span<const double> x) const;

  [[nodiscard]] FeatureVector transform_features(const FeatureVector& x) const;
  [[nodiscard]] double transform_target(Target t, double y) const;
  [[nodiscard]] double inverse_target(Target t, double y_scaled) const;

  bool operator==(const Standardizer&) const = default;

private:
  std::vector<double> mu_;
  std::vector<double> sigma_;
};

void to_json(nlohmann::json& j, const Standardizer& s);
void from_json(const nlohmann::json& j, Standardizer& s);

inline constexpr std::size_t kSequenceLength = 10;

struct SequenceWindow {
  std::vector<FeatureVector> steps;  // oldest first
  std::size_t target_index = 0;      // index of the last step in the source series
};

/// Window ending at row i; positions before row 0 repeat row 0.
SequenceWindow sequence_window(std::span<const FeatureVector> rows, std::size_t i,
                               std::size_t length = kSequenceLength);

/// One window per row.
std::vector<SequenceWindow> make_sequences(std::span<const FeatureVector> rows,
                                           std::size_t length = kSequenceLength);

/// Block means of `block` consecutive samples (time, pressure and flow). A
/// shorter trailing block is kept.
CycleSeries decimate(const CycleSeries& series, std::size_t block);

struct SampleRef {
  std::size_t experiment = 0;
  std::size_t index = 0;
  bool operator==(const SampleRef&) const = default;
  auto operator<=>(const SampleRef&) const = default;
};

struct TrainValSplit {
  std::vector<SampleRef> train;
  std::vector<SampleRef> validation;
};

/// Sample-level split stratified per experiment: each experiment of size m puts
/// round(ratio*m) randomly chosen samples into train. Deterministic in seed.
TrainValSplit split_train_val(std::span<const std::size_t> samples_per_experiment, double ratio,
                              std::uint64_t seed);

}  // namespace filtertwin
