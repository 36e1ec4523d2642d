#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "filtertwin/simulator.hpp"
#include "filtertwin/training.hpp"

using namespace filtertwin;

namespace {

std::vector<CorpusEntry> small_corpus(std::vector<ExperimentConfig> grid = {{"a", 12.5, 2, 10, 5, ""},
                                                                           {"b", 25, 2, 10, 20, ""},
                                                                           {"c", 6.25, 3, 8, 12, ""}}) {
  const auto series = generate_corpus(grid, SimParams{}, 3);
  std::vector<CorpusEntry> out;
  for (std::size_t i = 0; i < grid.size(); ++i) out.push_back({grid[i], series[i]});
  return out;
}

}  // namespace

TEST_CASE("prepare_data decimates, splits per experiment and standardizes on train rows") {
  const auto corpus = small_corpus();
  PrepareOptions po;
  po.seed = 1;
  po.balance_cap = 1;
  const auto d = prepare_data(corpus, Target::pressure, Architecture::ffnn, po);
  std::size_t total = 0;
  for (const auto& e : corpus) total += (e.series.samples.size() + 9) / 10;
  CHECK(d.train.size() + d.validation.size() == total);
  CHECK(d.window_dt == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(d.train.steps == 1);

  // Standardized train targets have zero mean and unit population variance.
  double mean = 0, var = 0;
  for (double y : d.train.targets) mean += y;
  mean /= static_cast<double>(d.train.size());
  for (double y : d.train.targets) var += (y - mean) * (y - mean);
  var /= static_cast<double>(d.train.size());
  CHECK(std::abs(mean) < 1e-9);
  CHECK(var == doctest::Approx(1.0).epsilon(1e-9));

  const auto again = prepare_data(corpus, Target::pressure, Architecture::ffnn, po);
  CHECK(again.train.inputs == d.train.inputs);
  CHECK(again.standardizer == d.standardizer);
}

TEST_CASE("lstm windows use consecutive decimated rows") {
  const auto corpus = small_corpus();
  PrepareOptions po;
  po.balance_cap = 1;
  const auto d = prepare_data(corpus, Target::flow, Architecture::lstm, po);
  CHECK(d.train.steps == kSequenceLength);
  const std::size_t time_col = feature::time;
  const double sigma_t = d.standardizer.sigma()[time_col];
  std::size_t checked = 0;
  for (std::size_t i = 0; i < d.split.train.size() && checked < 20; ++i) {
    const auto& ref = d.split.train[i];
    const std::size_t rows = (corpus[ref.experiment].series.samples.size() + 9) / 10;
    if (ref.index < kSequenceLength || ref.index + 1 >= rows) continue;
    const auto x = d.train.input(i);
    for (std::size_t j = 1; j < kSequenceLength; ++j) {
      const double gap = (x[j * kFeatureCount + time_col] - x[(j - 1) * kFeatureCount + time_col]) * sigma_t;
      CHECK(gap == doctest::Approx(1.0).epsilon(1e-9));
    }
    ++checked;
  }
  CHECK(checked == 20);
}

TEST_CASE("short experiments are repeated up to the balance cap") {
  const auto corpus = small_corpus({{"a", 12.5, 2, 10, 5, ""}, {"s", 25, 1, 6, 30, ""}, {"c", 6.25, 3, 8, 12, ""}});
  PrepareOptions po;
  po.seed = 2;
  po.balance_cap = 1;
  const auto plain = prepare_data(corpus, Target::pressure, Architecture::ffnn, po);
  std::vector<std::size_t> per(corpus.size(), 0);
  for (const auto& ref : plain.split.train) ++per[ref.experiment];
  auto sorted = per;
  std::sort(sorted.begin(), sorted.end());
  const double median = static_cast<double>(sorted[1]);
  REQUIRE(sorted[0] < sorted[2]);

  for (std::size_t cap : {2, 8}) {
    po.balance_cap = cap;
    const auto d = prepare_data(corpus, Target::pressure, Architecture::ffnn, po);
    CHECK(d.standardizer == plain.standardizer);
    CHECK(d.validation.targets == plain.validation.targets);
    std::size_t pos = 0;
    bool repeated = false;
    for (std::size_t i = 0; i < plain.split.train.size(); ++i) {
      const double ratio = median / static_cast<double>(per[plain.split.train[i].experiment]);
      const auto reps = std::min<std::size_t>(cap, std::max<long long>(1, std::llround(ratio)));
      repeated = repeated || reps > 1;
      for (std::size_t r = 0; r < reps; ++r, ++pos) {
        REQUIRE(pos < d.train.size());
        CHECK(d.train.targets[pos] == plain.train.targets[i]);
      }
    }
    CHECK(pos == d.train.size());
    CHECK(repeated);
  }
  po.balance_cap = 0;
  CHECK_THROWS_AS(prepare_data(corpus, Target::pressure, Architecture::ffnn, po), DomainError);
}

TEST_CASE("prepare_data rejects inconsistent corpora") {
  auto corpus = small_corpus();
  PrepareOptions po;
  po.stride = 0;
  CHECK_THROWS_AS(prepare_data(corpus, Target::flow, Architecture::ffnn, po), DomainError);
  CHECK_THROWS_AS(prepare_data({}, Target::flow, Architecture::ffnn, PrepareOptions{}), DomainError);
  corpus[1].series.experiment_id = "zzz";
  CHECK_THROWS_AS(prepare_data(corpus, Target::flow, Architecture::ffnn, PrepareOptions{}), DomainError);
}

TEST_CASE("a short training run produces usable models") {
  const auto corpus = small_corpus();
  TrainOptions to;
  to.epochs = 30;
  to.seed = 2;
  const auto p = train_model(corpus, Target::pressure, Architecture::ffnn, to, PrepareOptions{});
  const auto q = train_model(corpus, Target::flow, Architecture::ffnn, to, PrepareOptions{});
  CHECK(p.report.epochs.size() == 30);
  CHECK(p.report.epochs.back().val_r2 > 0.8);
  CHECK(p.window_dt == doctest::Approx(1.0));
  const auto s = predict_series(p, q, corpus[0].config, 1.0, 3600.0);
  for (const auto& x : s.series.samples) {
    CHECK(x.pressure >= 0.0);
    CHECK(x.flow >= 0.0);
  }
}
