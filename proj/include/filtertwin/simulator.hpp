#pragma once

// Synthetic chamber-filter-press cycles. A pump-limited flow feeds a growing
// cake; cloth wear throttles pump-deliverable flow and raises medium
// resistance. Measured channels add pump pulsation and Gaussian sensor noise.

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "filtertwin/domain.hpp"

namespace filtertwin {

struct NoiseParams {
  double pressure_sigma = 0.15;        // bar
  double flow_sigma = 0.5;             // dm3/min
  double pulsation_amplitude = 0.1;    // bar
  double pulsation_frequency = 1.2;    // Hz
  double low_flow_extra_sigma = 0.8;   // dm3/min, added below low_flow_threshold
  double low_flow_threshold = 5.0;     // dm3/min

  static NoiseParams none() { return {0.0, 0.0, 0.0, 1.2, 0.0, 5.0}; }
};

struct SimParams {
  double q_max0 = 25.0;   // clean-cloth pump-limited flow, dm3/min
  double p_stall = 11.0;  // pump stall pressure, bar
  double r_m0 = 0.022;    // clean medium resistance, bar*min/dm3
  double beta_q = 0.02;   // per-cycle flow blinding
  double beta_r = 0.01;   // per-cycle medium resistance growth
  double g = 0.03;        // cake resistance growth, bar*min/dm3 per (g/L * dm3 / plate^2)
  double dt = kNominalSampleInterval;  // s
  double t_max = 3600.0;  // s
  NoiseParams noise{};

  /// Throws DomainError when a coefficient is out of range.
  void validate() const;
  [[nodiscard]] SimParams noiseless() const {
    SimParams p = *this;
    p.noise = NoiseParams::none();
    return p;
  }
};

struct DegradationFactors {
  double flow_cap_multiplier = 1.0;
  double resistance_multiplier = 1.0;
};

/// (1/(1+beta_q*k), 1+beta_r*k). k = 0 is accepted as the unworn reference.
DegradationFactors degradation_factors(int cloth_cycles, const SimParams& params);

/// Noise-free state of the press model at a given filtrate volume.
struct PressState {
  double resistance = 0.0;  // bar*min/dm3
  double flow = 0.0;        // dm3/min
  double pressure = 0.0;    // bar
  double flow_cap = 0.0;    // dm3/min
};

PressState press_state(const ExperimentConfig& config, const SimParams& params, double volume);

/// Simulates one cycle. Deterministic for a given seed. The series is complete;
/// timed_out is set when t_max was hit before end pressure.
CycleSeries simulate_cycle(const ExperimentConfig& config, const SimParams& params, std::uint64_t seed);

/// Per-experiment seed derived from the corpus seed and the experiment id.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view experiment_id);

/// One series per config. Throws on an empty grid or duplicate ids.
std::vector<CycleSeries> generate_corpus(const std::vector<ExperimentConfig>& grid,
                                         const SimParams& params, std::uint64_t seed);

class ReplayError : public std::runtime_error {
public:
  ReplayError(const std::string& what, std::size_t delivered)
      : std::runtime_error(what), delivered_(delivered) {}
  [[nodiscard]] std::size_t delivered() const { return delivered_; }

private:
  std::size_t delivered_;
};

using SampleSink = std::function<void(const Sample&)>;

/// Pushes samples to the sink in order, pacing by sample time / speedup.
/// A throwing sink aborts the replay with ReplayError carrying the partial count.
std::size_t replay(const CycleSeries& series, double speedup, const SampleSink& sink);

// Experiment grids mirroring the published experiment tables.
std::vector<ExperimentConfig> table1_grid();  // 34 training/validation cycles
std::vector<ExperimentConfig> table3_grid();  // 12 partially known experiments
std::vector<ExperimentConfig> table4_grid();  // 8 held-out experiments

/// "table1" | "table3" | "table4"; throws otherwise.
std::vector<ExperimentConfig> builtin_grid(std::string_view name);

}  // namespace filtertwin
