#pragma once

// Corpus-to-model pipeline: target selection, stratified split, standardizer
// fit on the training rows, window construction and training.

#include <cstdint>
#include <vector>

#include "filtertwin/domain.hpp"
#include "filtertwin/neural.hpp"
#include "filtertwin/preprocess.hpp"

namespace filtertwin {

struct CorpusEntry {
  ExperimentConfig config;
  CycleSeries series;
};

struct PrepareOptions {
  double train_ratio = 0.8;
  /// Series are averaged over blocks of `stride` samples before training; LSTM
  /// windows step through consecutive block rows.
  std::size_t stride = 10;
  /// Training rows of an experiment with fewer rows than the median experiment
  /// are repeated round(median / rows) times, at most this many. 1 disables it.
  std::size_t balance_cap = 8;
  std::uint64_t seed = 0;
};

struct PreparedData {
  Standardizer standardizer;
  Dataset train;
  Dataset validation;
  TrainValSplit split;      // refs into the decimated series
  double window_dt = kNominalSampleInterval;
};

/// Builds standardized datasets for one target and architecture.
PreparedData prepare_data(const std::vector<CorpusEntry>& corpus, Target target, Architecture arch,
                          const PrepareOptions& options);

/// Standardized feature rows of one series.
std::vector<FeatureVector> standardized_rows(const Standardizer& s, const ExperimentConfig& config,
                                             const CycleSeries& series);

/// Prepares data and trains a regressor for one target.
TrainedModel train_model(const std::vector<CorpusEntry>& corpus, Target target, Architecture arch,
                         const TrainOptions& train_options, const PrepareOptions& prepare_options);

}  // namespace filtertwin
