#pragma once

// Feed-forward and LSTM regressors written against the kernels layer, with
// analytic gradients of the mean-squared-error loss and an Adam trainer.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "filtertwin/domain.hpp"
#include "filtertwin/preprocess.hpp"

namespace filtertwin {

enum class Architecture { ffnn, lstm };
std::string_view to_string(Architecture a);
Architecture architecture_from_string(std::string_view s);

/// Dense ReLU network with a linear scalar output. Parameters are stored layer
/// by layer: weights (out x in, row-major) followed by biases.
struct FfnnModel {
  std::vector<std::size_t> layer_sizes{kFeatureCount, 64, 32, 1};
  std::vector<double> params;

  [[nodiscard]] std::size_t parameter_count() const;
  /// Offset of layer l's weight block; its bias block follows immediately.
  [[nodiscard]] std::size_t weight_offset(std::size_t layer) const;
};

/// Single LSTM cell followed by a linear dense head on the final hidden state.
/// Layout: W_x (4H x I), W_h (4H x H), b (4H), w_out (H), b_out. Gate blocks
/// are ordered input, forget, candidate, output.
struct LstmModel {
  std::size_t input_size = kFeatureCount;
  std::size_t hidden_size = 64;
  std::vector<double> params;

  [[nodiscard]] std::size_t parameter_count() const;
  [[nodiscard]] std::size_t wx_offset() const { return 0; }
  [[nodiscard]] std::size_t wh_offset() const { return 4 * hidden_size * input_size; }
  [[nodiscard]] std::size_t bias_offset() const { return wh_offset() + 4 * hidden_size * hidden_size; }
  [[nodiscard]] std::size_t out_offset() const { return bias_offset() + 4 * hidden_size; }
};

using Network = std::variant<FfnnModel, LstmModel>;

Architecture architecture_of(const Network& net);
std::span<double> parameters(Network& net);
std::span<const double> parameters(const Network& net);
/// Sequence length consumed per prediction (1 for the feed-forward model).
std::size_t input_steps(const Network& net);

/// Glorot-uniform weights, zero biases, LSTM forget-gate bias 1.0.
FfnnModel init_ffnn(std::uint64_t seed, std::vector<std::size_t> layer_sizes = {kFeatureCount, 64, 32, 1});
LstmModel init_lstm(std::uint64_t seed, std::size_t hidden_size = 64, std::size_t input_size = kFeatureCount);
Network init_network(Architecture arch, std::uint64_t seed);

/// Throws DomainError on arity mismatch or non-finite input.
double forward_ffnn(const FfnnModel& model, std::span<const double> x);

/// Window is steps * input_size values, oldest step first. Zero initial state.
double forward_lstm(const LstmModel& model, std::span<const double> window, std::size_t steps = kSequenceLength);
double forward_lstm(const LstmModel& model, const SequenceWindow& window);

/// Gate activations for every step, for inspection.
struct LstmTrace {
  std::vector<std::vector<double>> input_gate, forget_gate, candidate, output_gate, cell, hidden;
  double output = 0.0;
};
LstmTrace trace_lstm(const LstmModel& model, std::span<const double> window, std::size_t steps = kSequenceLength);

/// Inputs for a regressor: n examples of `steps` feature rows each, flattened.
struct Dataset {
  std::size_t steps = 1;
  std::vector<double> inputs;   // n * steps * kFeatureCount
  std::vector<double> targets;  // n

  [[nodiscard]] std::size_t size() const { return targets.size(); }
  [[nodiscard]] std::span<const double> input(std::size_t i) const {
    const std::size_t stride = steps * kFeatureCount;
    return std::span<const double>(inputs).subspan(i * stride, stride);
  }
  void push_back(std::span<const double> x, double y);
};

/// Standardized-space prediction for one example.
double predict(const Network& net, std::span<const double> input);
/// Predictions for every example of a dataset.
std::vector<double> predict_batch(const Network& net, const Dataset& data);

/// Mean squared error over the selected examples and its gradient with
/// respect to every parameter (written to grad, which is resized). The LSTM
/// gradient backpropagates through all steps.
double mse_gradients(const Network& net, const Dataset& data, std::span<const std::size_t> indices,
                     std::vector<double>& grad);
double mse_gradients(const Network& net, const Dataset& data, std::vector<double>& grad);
double mse_loss(const Network& net, const Dataset& data, std::span<const std::size_t> indices);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_mse = 0.0;
  double val_mse = 0.0;
  double val_mae = 0.0;
  double val_r2 = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::string model_version;
  std::uint64_t seed = 0;
  std::size_t epoch_count = 0;
  /// Epoch whose parameters were kept (0: the initialization).
  std::size_t best_epoch = 0;
};

void to_json(nlohmann::json& j, const TrainReport& r);
void from_json(const nlohmann::json& j, TrainReport& r);
/// epoch,train_mse,val_mse,val_mae,val_r2
std::string train_report_csv(const TrainReport& r);

struct TrainOptions {
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Return the parameters of the epoch with the lowest validation MSE instead
  /// of the last epoch's.
  bool restore_best = true;
  /// Called after each epoch; returning false stops training early.
  std::function<bool(const EpochRecord&)> on_epoch;
};

class TrainingDiverged : public std::runtime_error {
public:
  explicit TrainingDiverged(std::size_t epoch)
      : std::runtime_error("training diverged (non-finite loss) in epoch " + std::to_string(epoch)),
        epoch_(epoch) {}
  [[nodiscard]] std::size_t epoch() const { return epoch_; }

private:
  std::size_t epoch_;
};

struct TrainResult {
  Network network;
  TrainReport report;
};

/// Adam over shuffled mini-batches. Train MSE per epoch is the mean of the
/// mini-batch losses; validation metrics use the model at epoch end.
TrainResult train_network(Network initial, const Dataset& train, const Dataset& validation,
                          const TrainOptions& options);
TrainResult train_network(Architecture arch, const Dataset& train, const Dataset& validation,
                          const TrainOptions& options);

/// A trained regressor for one target together with everything needed to use
/// it on physical inputs.
struct TrainedModel {
  Target target = Target::pressure;
  Network network;
  Standardizer standardizer;
  std::uint64_t seed = 0;
  int version = 0;
  double window_dt = kNominalSampleInterval;  // spacing of LSTM window rows, s
  TrainReport report;

  [[nodiscard]] Architecture architecture() const { return architecture_of(network); }
  /// Physical-unit predictions at the given times.
  [[nodiscard]] std::vector<double> predict_at(const ExperimentConfig& config, std::span<const double> times) const;
};

void to_json(nlohmann::json& j, const TrainedModel& m);
void from_json(const nlohmann::json& j, TrainedModel& m);
TrainedModel load_model(const std::string& path);
void save_model(const TrainedModel& m, const std::string& path);

struct PredictedSeries {
  CycleSeries series;
  /// First grid time where predicted pressure reaches the end pressure.
  std::optional<double> duration;
  [[nodiscard]] bool exceeds_horizon() const { return !duration.has_value(); }
  /// Largest predicted flow up to and including the duration point.
  double max_flow = 0.0;
};

/// Sweeps t = 0, dt, 2dt, ... <= horizon through both regressors.
PredictedSeries predict_series(const TrainedModel& pressure_model, const TrainedModel& flow_model,
                               const ExperimentConfig& config, double dt, double horizon);

/// Same evaluation on an explicit time grid.
PredictedSeries predict_on_grid(const TrainedModel& pressure_model, const TrainedModel& flow_model,
                                const ExperimentConfig& config, std::span<const double> times);

}  // namespace filtertwin
