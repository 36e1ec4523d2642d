#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <random>

#include "filtertwin/neural.hpp"
#include "support/gradcheck.hpp"

using namespace filtertwin;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Scalar recurrence for a 1-unit LSTM, written out gate by gate.
double lstm1_oracle(const LstmModel& m, const std::vector<double>& x_row, std::size_t steps) {
  const auto& p = m.params;
  const std::size_t I = m.input_size;
  double h = 0.0, c = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    double z[4];
    for (std::size_t g = 0; g < 4; ++g) {
      z[g] = p[m.bias_offset() + g] + p[m.wh_offset() + g] * h;
      for (std::size_t k = 0; k < I; ++k) z[g] += p[m.wx_offset() + g * I + k] * x_row[k];
    }
    const double i = sigmoid(z[0]), f = sigmoid(z[1]), g = std::tanh(z[2]), o = sigmoid(z[3]);
    c = f * c + i * g;
    h = o * std::tanh(c);
  }
  return p[m.out_offset()] * h + p[m.out_offset() + 1];
}

Dataset linear_dataset(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double w[kFeatureCount] = {0.5, -1.0, 0.25, 2.0, -0.75};
  Dataset d;
  std::vector<double> x(kFeatureCount);
  for (std::size_t i = 0; i < n; ++i) {
    double y = 0;
    for (std::size_t k = 0; k < kFeatureCount; ++k) {
      x[k] = u(rng);
      y += w[k] * x[k];
    }
    d.push_back(x, y);
  }
  return d;
}

}  // namespace

TEST_CASE("parameter counts") {
  CHECK(init_ffnn(1).parameter_count() == 2497);
  CHECK(init_ffnn(1).params.size() == 2497);
  CHECK(init_lstm(1).parameter_count() == 4 * 64 * (5 + 64) + 4 * 64 + 64 + 1);
  CHECK(init_lstm(1).params.size() == 17985);
  CHECK(input_steps(init_network(Architecture::ffnn, 0)) == 1);
  CHECK(input_steps(init_network(Architecture::lstm, 0)) == kSequenceLength);
}

TEST_CASE("initialization is deterministic and Glorot bounded") {
  const auto a = init_ffnn(3), b = init_ffnn(3), c = init_ffnn(4);
  CHECK(a.params == b.params);
  CHECK(a.params != c.params);
  const double bound0 = std::sqrt(6.0 / (5 + 64));
  for (std::size_t k = 0; k < 5 * 64; ++k) CHECK(std::abs(a.params[k]) <= bound0);
  for (std::size_t k = 5 * 64; k < 5 * 64 + 64; ++k) CHECK(a.params[k] == 0.0);
  const auto l = init_lstm(3);
  for (std::size_t j = 0; j < 64; ++j) {
    CHECK(l.params[l.bias_offset() + j] == 0.0);
    CHECK(l.params[l.bias_offset() + 64 + j] == 1.0);
  }
}

TEST_CASE("hand-set feed-forward network") {
  FfnnModel m = init_ffnn(0, {kFeatureCount, 1, 1});
  std::fill(m.params.begin(), m.params.end(), 0.0);
  m.params[0] = 1.0;  // w1 on the first input
  m.params[5] = 0.5;  // b1
  m.params[6] = 2.0;  // w2
  m.params[7] = -1.0; // b2
  CHECK(forward_ffnn(m, std::vector<double>{3, 9, 9, 9, 9}) == 6.0);
  CHECK(forward_ffnn(m, std::vector<double>{-3, 9, 9, 9, 9}) == -1.0);
  CHECK_THROWS_AS(forward_ffnn(m, std::vector<double>{1, 2}), DomainError);
  CHECK_THROWS_AS(forward_ffnn(m, std::vector<double>{NAN, 0, 0, 0, 0}), DomainError);
}

TEST_CASE("one-unit LSTM on a constant window matches the unrolled recurrence") {
  LstmModel m = init_lstm(11, 1);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (auto& p : m.params) p = u(rng);
  const std::vector<double> row{0.3, -1.2, 0.8, 0.1, -0.4};
  std::vector<double> window;
  for (std::size_t t = 0; t < kSequenceLength; ++t) window.insert(window.end(), row.begin(), row.end());
  CHECK(forward_lstm(m, window) == doctest::Approx(lstm1_oracle(m, row, kSequenceLength)).epsilon(1e-14));

  const auto tr = trace_lstm(m, window);
  CHECK(tr.hidden.size() == kSequenceLength);
  CHECK(tr.output == doctest::Approx(forward_lstm(m, window)).epsilon(1e-15));
  for (const auto& f : tr.forget_gate) {
    CHECK(f[0] > 0.0);
    CHECK(f[0] < 1.0);
  }
  CHECK_THROWS_AS(forward_lstm(m, std::span<const double>(window).first(20), 4), DomainError);
}

TEST_CASE("analytic gradients match finite differences") {
  for (std::uint64_t seed : {1u, 2u}) {
    CAPTURE(seed);
    const auto ff = gradcheck::check(init_ffnn(seed), gradcheck::random_dataset(4, 1, seed + 10));
    CHECK(ff.checked == 2497);
    CHECK(ff.failures == 0);
    CHECK(ff.relative_checked * 2 > ff.checked);
    const auto small = gradcheck::check(init_lstm(seed, 6), gradcheck::random_dataset(3, kSequenceLength, seed + 20));
    CHECK(small.failures == 0);
  }
}

TEST_CASE("batch gradients are the mean of per-example gradients") {
  for (const Network net : {Network{init_lstm(3)}, Network{init_ffnn(3)}}) {
    const auto d = gradcheck::random_dataset(150, input_steps(net), 5);
    std::vector<std::size_t> all(d.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::vector<double> batch, one, mean(parameters(net).size(), 0.0);
    const double loss = mse_gradients(net, d, all, batch);
    double loss_mean = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      const std::size_t idx[] = {i};
      loss_mean += mse_gradients(net, d, idx, one) / static_cast<double>(d.size());
      for (std::size_t k = 0; k < one.size(); ++k) mean[k] += one[k] / static_cast<double>(d.size());
    }
    CHECK(loss == doctest::Approx(loss_mean).epsilon(1e-12));
    double worst = 0.0;
    for (std::size_t k = 0; k < mean.size(); ++k)
      worst = std::max(worst, std::abs(batch[k] - mean[k]) / std::max(1e-8, std::abs(mean[k])));
    CHECK(worst < 1e-9);
    CHECK(mse_loss(net, d, all) == doctest::Approx(loss).epsilon(1e-13));

    // Duplicating the batch leaves the mean gradient unchanged.
    std::vector<std::size_t> twice(all);
    twice.insert(twice.end(), all.begin(), all.end());
    std::vector<double> dup;
    mse_gradients(net, d, twice, dup);
    for (std::size_t k = 0; k < dup.size(); ++k) CHECK(dup[k] == doctest::Approx(batch[k]).epsilon(1e-10));
  }
}

TEST_CASE("batch prediction matches one-at-a-time prediction across chunks") {
  for (const Network net : {Network{init_lstm(4)}, Network{init_ffnn(4)}}) {
    const auto d = gradcheck::random_dataset(150, input_steps(net), 6);
    const auto batch = predict_batch(net, d);
    REQUIRE(batch.size() == d.size());
    for (std::size_t i = 0; i < d.size(); ++i) CHECK(batch[i] == doctest::Approx(predict(net, d.input(i))).epsilon(1e-12));
  }
}

TEST_CASE("feed-forward fits a linear target") {
  const auto train = linear_dataset(256, 1), val = linear_dataset(64, 2);
  TrainOptions opt;
  opt.epochs = 200;
  opt.seed = 5;
  const auto r = train_network(Architecture::ffnn, train, val, opt);
  REQUIRE(r.report.epochs.size() == 200);
  CHECK(r.report.epochs.back().train_mse < 1e-3);
  CHECK(r.report.epochs.back().val_r2 > 0.99);
}

TEST_CASE("zero epochs returns the initialization") {
  const auto train = linear_dataset(16, 1);
  TrainOptions opt;
  opt.epochs = 0;
  opt.seed = 9;
  const auto r = train_network(Architecture::ffnn, train, train, opt);
  CHECK(std::get<FfnnModel>(r.network).params == init_ffnn(9).params);
  CHECK(r.report.epochs.empty());
}

TEST_CASE("training is deterministic and can stop early") {
  const auto train = linear_dataset(64, 3), val = linear_dataset(16, 4);
  TrainOptions opt;
  opt.epochs = 5;
  opt.seed = 1;
  const auto a = train_network(Architecture::ffnn, train, val, opt);
  const auto b = train_network(Architecture::ffnn, train, val, opt);
  CHECK(std::get<FfnnModel>(a.network).params == std::get<FfnnModel>(b.network).params);
  opt.on_epoch = [](const EpochRecord& r) { return r.epoch < 2; };
  CHECK(train_network(Architecture::ffnn, train, val, opt).report.epochs.size() == 2);
}

TEST_CASE("the lowest validation epoch is kept") {
  auto train = linear_dataset(64, 5), val = linear_dataset(32, 6);
  for (auto& y : val.targets) y += 0.3;  // biased validation targets make the curve non-monotone
  TrainOptions opt;
  opt.epochs = 40;
  opt.seed = 2;
  opt.learning_rate = 0.02;
  const auto best = train_network(Architecture::ffnn, train, val, opt);
  double lowest = INFINITY;
  std::size_t at = 0;
  for (const auto& e : best.report.epochs)
    if (e.val_mse < lowest) {
      lowest = e.val_mse;
      at = e.epoch;
    }
  CHECK(best.report.best_epoch == at);
  std::vector<std::size_t> all(val.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  CHECK(mse_loss(best.network, val, all) == doctest::Approx(lowest).epsilon(1e-12));

  opt.restore_best = false;
  const auto last = train_network(Architecture::ffnn, train, val, opt);
  CHECK(last.report.best_epoch == 40);
  CHECK(mse_loss(last.network, val, all) == doctest::Approx(last.report.epochs.back().val_mse).epsilon(1e-12));
  if (at != 40) CHECK(parameters(last.network)[0] != parameters(best.network)[0]);
}

TEST_CASE("divergence is reported") {
  auto train = linear_dataset(32, 3);
  for (auto& y : train.targets) y *= 1e200;
  TrainOptions opt;
  opt.epochs = 3;
  opt.learning_rate = 1e300;
  CHECK_THROWS_AS(train_network(Architecture::ffnn, train, train, opt), TrainingDiverged);
  opt.batch_size = 0;
  opt.learning_rate = 1e-3;
  CHECK_THROWS_AS(train_network(Architecture::ffnn, train, train, opt), DomainError);
}

TEST_CASE("model files round trip") {
  TrainedModel m;
  m.target = Target::flow;
  m.network = init_lstm(4);
  m.standardizer = Standardizer({2, 50, 12.5, 10, 9, 4, 15}, {1, 30, 5, 8, 1, 3, 6});
  m.seed = 4;
  m.version = 3;
  m.window_dt = 1.0;
  const auto path = (std::filesystem::temp_directory_path() / "filtertwin_model_rt.json").string();
  save_model(m, path);
  const auto back = load_model(path);
  std::filesystem::remove(path);
  CHECK(back.target == Target::flow);
  CHECK(back.version == 3);
  CHECK(back.window_dt == 1.0);
  CHECK(std::get<LstmModel>(back.network).params == std::get<LstmModel>(m.network).params);
  CHECK(back.standardizer == m.standardizer);
  const ExperimentConfig cfg{"x", 12.5, 2, 10, 5, ""};
  const std::vector<double> times{0, 10, 100};
  CHECK(back.predict_at(cfg, times) == m.predict_at(cfg, times));

  nlohmann::json j = m;
  j["format"] = "other";
  CHECK_THROWS_AS(j.get<TrainedModel>(), DomainError);
  CHECK_THROWS_AS(load_model("/nonexistent/model.json"), DomainError);
}

TEST_CASE("trajectory prediction grid and duration") {
  TrainedModel p, q;
  p.target = Target::pressure;
  q.target = Target::flow;
  FfnnModel lin = init_ffnn(0, {kFeatureCount, 1, 1});
  std::fill(lin.params.begin(), lin.params.end(), 0.0);
  // Standardized time passes straight through: pressure = t / 10 bar.
  lin.params[feature::time] = 1.0;
  lin.params[6] = 1.0;
  p.network = lin;
  std::vector<double> mu(kStandardizerColumns, 0.0), sigma(kStandardizerColumns, 1.0);
  sigma[kPressureColumn] = 0.1;
  p.standardizer = Standardizer(mu, sigma);
  FfnnModel flat = lin;
  flat.params[feature::time] = 0.0;
  flat.params[7] = 20.0;
  q.network = flat;
  q.standardizer = Standardizer(mu, sigma);
  const ExperimentConfig cfg{"x", 12.5, 2, 5, 5, ""};
  const auto s = predict_series(p, q, cfg, 1.0, 100.0);
  CHECK(s.series.samples.size() == 101);
  REQUIRE(s.duration.has_value());
  CHECK(*s.duration == 50.0);
  CHECK(s.max_flow == 20.0);
  CHECK(predict_series(p, q, cfg, 0.1, 1.0).series.samples.size() == 11);
  CHECK(predict_series(p, q, cfg, 1.0, 20.0).exceeds_horizon());
  CHECK_THROWS_AS(predict_series(q, p, cfg, 1.0, 10.0), DomainError);
  CHECK_THROWS_AS(predict_series(p, q, cfg, 0.0, 10.0), DomainError);
}
