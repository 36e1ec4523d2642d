#include "filtertwin/simulator.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <set>
#include <thread>

namespace filtertwin {

void SimParams::validate() const {
  auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (!positive(q_max0) || !positive(r_m0) || !positive(beta_q) || !positive(beta_r) || !positive(g) ||
      !positive(dt) || !positive(t_max))
    throw DomainError("simulator coefficients must be finite and > 0");
  if (!(p_stall > kMaxEndPressure)) throw DomainError("p_stall must exceed the 10 bar end-pressure limit");
  if (noise.pressure_sigma < 0 || noise.flow_sigma < 0 || noise.low_flow_extra_sigma < 0 ||
      noise.pulsation_amplitude < 0)
    throw DomainError("noise amplitudes must be >= 0");
}

DegradationFactors degradation_factors(int cloth_cycles, const SimParams& params) {
  if (cloth_cycles < 0) throw DomainError("cloth cycle count must be >= 0");
  const double k = cloth_cycles;
  return {1.0 / (1.0 + params.beta_q * k), 1.0 + params.beta_r * k};
}

PressState press_state(const ExperimentConfig& config, const SimParams& params, double volume) {
  const auto wear = degradation_factors(config.cloth_cycles, params);
  const double plates = config.plate_count;
  PressState s;
  s.flow_cap = params.q_max0 * wear.flow_cap_multiplier;
  s.resistance = params.r_m0 * wear.resistance_multiplier +
                 params.g * config.concentration * volume / (plates * plates);
  s.flow = s.flow_cap / (1.0 + s.flow_cap * s.resistance / params.p_stall);
  s.pressure = s.flow * s.resistance;
  return s;
}

CycleSeries simulate_cycle(const ExperimentConfig& config, const SimParams& params, std::uint64_t seed) {
  require_valid(config);
  params.validate();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto& noise = params.noise;
  const double omega = 2.0 * std::numbers::pi * noise.pulsation_frequency;

  CycleSeries series;
  series.experiment_id = config.experiment_id;
  series.samples.reserve(static_cast<std::size_t>(std::min(params.t_max / params.dt, 1e6)) + 1);

  double volume = 0.0;  // dm3
  for (std::size_t step = 0;; ++step) {
    const double t = static_cast<double>(step) * params.dt;
    const auto state = press_state(config, params, volume);

    // Draw both channels every step so the stream is independent of branch outcomes.
    const double zp = gauss(rng);
    const double zq = gauss(rng);
    const double zq_low = gauss(rng);
    double pressure = state.pressure + noise.pulsation_amplitude * std::sin(omega * t) +
                      noise.pressure_sigma * zp;
    double flow = state.flow + noise.flow_sigma * zq;
    if (state.flow < noise.low_flow_threshold) flow += noise.low_flow_extra_sigma * zq_low;
    series.samples.push_back(Sample{t, std::max(0.0, pressure), std::max(0.0, flow)});

    if (state.pressure >= config.end_pressure) break;
    if (t >= params.t_max) {
      series.timed_out = true;
      break;
    }
    volume += state.flow * params.dt / 60.0;
  }
  series.status = SeriesStatus::complete;
  return series;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::string_view experiment_id) {
  return splitmix64(splitmix64(seed) ^ fnv1a(experiment_id));
}

std::vector<CycleSeries> generate_corpus(const std::vector<ExperimentConfig>& grid,
                                         const SimParams& params, std::uint64_t seed) {
  if (grid.empty()) throw DomainError("corpus grid is empty");
  std::set<std::string> ids;
  for (const auto& c : grid)
    if (!ids.insert(c.experiment_id).second)
      throw DomainError("duplicate experiment id '" + c.experiment_id + "' in grid");
  std::vector<CycleSeries> corpus;
  corpus.reserve(grid.size());
  for (const auto& c : grid) corpus.push_back(simulate_cycle(c, params, derive_seed(seed, c.experiment_id)));
  return corpus;
}

std::size_t replay(const CycleSeries& series, double speedup, const SampleSink& sink) {
  if (!std::isfinite(speedup) || speedup <= 0.0) throw DomainError("replay speedup must be > 0");
  using clock = std::chrono::steady_clock;
  const auto start = clock::now();
  const double t0 = series.samples.empty() ? 0.0 : series.samples.front().t;
  std::size_t delivered = 0;
  for (const auto& s : series.samples) {
    const auto offset = std::chrono::duration<double>((s.t - t0) / speedup);
    std::this_thread::sleep_until(start + std::chrono::duration_cast<clock::duration>(offset));
    try {
      sink(s);
    } catch (const std::exception& e) {
      throw ReplayError(std::string("replay sink failed: ") + e.what(), delivered);
    }
    ++delivered;
  }
  return delivered;
}

namespace {

ExperimentConfig make(const std::string& id, double c, int plates, double end, int cycles, int ordinal) {
  char stamp[32];
  std::snprintf(stamp, sizeof stamp, "2023-01-01T%02d:%02d:00Z", ordinal / 60, ordinal % 60);
  return ExperimentConfig{id, c, plates, end, cycles, stamp};
}

std::string numbered(const char* prefix, int i, const char* suffix = "") {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%02d%s", prefix, i, suffix);
  return buf;
}

}  // namespace

std::vector<ExperimentConfig> table1_grid() {
  struct Row {
    double c;
    int plates;
    double end;
    std::vector<int> cycles;
  };
  // Each listed cycle value is one recorded cycle (the table's frequency column).
  const std::vector<Row> rows = {
      {6.25, 2, 2.0, {34}},
      {6.25, 2, 4.0, {32}},
      {6.25, 2, 5.0, {31}},
      {6.25, 2, 6.0, {30}},
      {6.25, 2, 8.0, {29}},
      {12.5, 1, 10.0, {4}},
      {12.5, 2, 10.0, {2, 4, 5, 6, 7, 14, 23, 35, 36}},
      {12.5, 2, 7.0, {5}},
      {12.5, 2, 8.0, {6}},
      {12.5, 2, 0.2, {1}},
      {12.5, 2, 0.5, {10, 11}},
      {12.5, 2, 0.7, {12, 13}},
      {12.5, 3, 10.0, {1, 2, 3}},
      {25.0, 2, 10.0, {24}},
      {25.0, 2, 5.0, {18}},
      {25.0, 2, 6.0, {19}},
      {25.0, 2, 7.0, {20}},
      {25.0, 2, 8.0, {21}},
      {25.0, 2, 9.0, {22}},
      {25.0, 2, 10.0, {23}},
      {25.0, 3, 10.0, {25}},
      {25.0, 4, 10.0, {26}},
  };
  std::vector<ExperimentConfig> grid;
  int i = 0;
  for (const auto& r : rows)
    for (int k : r.cycles) {
      ++i;
      grid.push_back(make(numbered("T1-", i), r.c, r.plates, r.end, k, i));
    }
  return grid;
}

std::vector<ExperimentConfig> table3_grid() {
  struct Row {
    double c;
    int plates;
    double end;
    int cycles;
  };
  const Row rows[] = {{12.5, 2, 10, 2}, {12.5, 2, 10, 7}, {12.5, 2, 10, 35}, {12.5, 2, 10, 36},
                      {6.25, 2, 8, 29}, {25, 2, 10, 23},  {12.5, 1, 10, 4},  {12.5, 3, 10, 2},
                      {12.5, 2, 10, 5}, {25, 1, 10, 24},  {25, 3, 10, 25},   {25, 4, 10, 26}};
  std::vector<ExperimentConfig> grid;
  int i = 0;
  for (const auto& r : rows) {
    ++i;
    grid.push_back(make(numbered("T3-", i), r.c, r.plates, r.end, r.cycles, 100 + i));
  }
  return grid;
}

std::vector<ExperimentConfig> table4_grid() {
  struct Row {
    double c;
    int plates;
    double end;
    int cycles;
  };
  const Row rows[] = {{6.25, 2, 10, 24}, {12.5, 2, 10, 30}, {12.5, 2, 10, 11}, {12.5, 2, 10, 10},
                      {12.5, 2, 10, 9},  {12.5, 3, 10, 6},  {15, 2, 10, 7},    {15, 2, 10, 8}};
  std::vector<ExperimentConfig> grid;
  int i = 0;
  for (const auto& r : rows) {
    ++i;
    grid.push_back(make(numbered("T4-", i, "-val"), r.c, r.plates, r.end, r.cycles, 200 + i));
  }
  return grid;
}

std::vector<ExperimentConfig> builtin_grid(std::string_view name) {
  if (name == "table1") return table1_grid();
  if (name == "table3") return table3_grid();
  if (name == "table4") return table4_grid();
  throw DomainError("unknown built-in grid '" + std::string(name) + "'");
}

}  // namespace filtertwin
