#include "filtertwin/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <httplib.h>

#include "filtertwin/http_api.hpp"
#include "filtertwin/metrics.hpp"
#include "filtertwin/simulator.hpp"
#include "filtertwin/store.hpp"
#include "filtertwin/training.hpp"
#include "filtertwin/twin.hpp"

namespace filtertwin {

namespace fs = std::filesystem;

namespace {

/// Removes registered outputs unless the command finishes.
class OutputGuard {
public:
  ~OutputGuard() {
    if (committed_) return;
    std::error_code ec;
    for (auto it = paths_.rbegin(); it != paths_.rend(); ++it) fs::remove_all(*it, ec);
  }
  void add(fs::path p) { paths_.push_back(std::move(p)); }
  void commit() { committed_ = true; }

private:
  std::vector<fs::path> paths_;
  bool committed_ = false;
};

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DomainError("cannot read '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  out.flush();
  if (!out) throw DomainError("cannot write '" + path.string() + "'");
}

nlohmann::json read_json(const std::string& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw DomainError("'" + path + "' is not valid JSON: " + e.what());
  }
}

std::vector<ExperimentConfig> load_grid(const std::string& grid) {
  if (grid == "table1" || grid == "table3" || grid == "table4") return builtin_grid(grid);
  const auto j = read_json(grid);
  const auto& arr = j.is_array() ? j : j.at("experiments");
  std::vector<ExperimentConfig> out;
  for (const auto& c : arr) out.push_back(c.get<ExperimentConfig>());
  return out;
}

std::vector<CorpusEntry> load_corpus(const std::string& dir) {
  if (!fs::is_directory(dir)) throw DomainError("data directory '" + dir + "' does not exist");
  FileStore store(dir, FileStoreOptions{false, CrashPoint::none});
  std::vector<CorpusEntry> corpus;
  for (const auto& rec : store.list_experiments(SeriesStatus::complete)) {
    auto series = store.get_series(rec.config.experiment_id);
    if (!series.samples.empty()) corpus.push_back(CorpusEntry{rec.config, std::move(series)});
  }
  if (corpus.empty()) throw DomainError("no complete experiments in '" + dir + "'");
  return corpus;
}

struct ModelFiles {
  TrainedModel pressure;
  TrainedModel flow;
};

ModelFiles pair_models(std::vector<TrainedModel> models) {
  std::optional<TrainedModel> p, f;
  for (auto& m : models) {
    auto& slot = m.target == Target::pressure ? p : f;
    if (slot) throw DomainError("two " + std::string(to_string(m.target)) + " models given");
    slot = std::move(m);
  }
  if (!p || !f) throw DomainError("need one pressure model and one flow model");
  return {std::move(*p), std::move(*f)};
}

ModelFiles load_model_dir(const std::string& dir) {
  const fs::path d(dir);
  if (fs::exists(d / "current.json")) {
    const auto cur = read_json((d / "current.json").string());
    const auto v = [&](const char* t) { return (d / (std::string(t) + "-v" + std::to_string(cur.at(t).get<int>()) + ".json")).string(); };
    return pair_models({load_model(v("pressure")), load_model(v("flow"))});
  }
  return pair_models({load_model((d / "pressure.json").string()), load_model((d / "flow.json").string())});
}

void require_fresh_dir(const fs::path& dir, OutputGuard& guard) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir) || !fs::is_empty(dir))
      throw DomainError("output directory '" + dir.string() + "' exists and is not empty");
    for (const char* child : {"experiments", "index.json"}) guard.add(dir / child);
  } else {
    fs::create_directories(dir);
    guard.add(dir);
  }
}

int cmd_simulate(const std::string& grid_name, std::uint64_t seed, const std::string& out_dir, bool clean,
                 std::ostream& out) {
  OutputGuard guard;
  const auto grid = load_grid(grid_name);
  for (const auto& c : grid) require_valid(c);
  require_fresh_dir(out_dir, guard);
  auto params = clean ? SimParams{}.noiseless() : SimParams{};
  const auto corpus = generate_corpus(grid, params, seed);
  FileStore store(out_dir, FileStoreOptions{false, CrashPoint::none});
  for (std::size_t i = 0; i < grid.size(); ++i) store.import_series(grid[i], corpus[i]);
  guard.commit();
  out << "wrote " << grid.size() << " experiments to " << out_dir << '\n';
  return kExitOk;
}

int cmd_train(const std::string& data, const std::string& target_name, const std::string& arch_name,
              std::size_t epochs, std::size_t batch, std::uint64_t seed, std::size_t stride,
              std::size_t balance, const std::string& out_path, std::string report_path, std::ostream& out) {
  const auto target = target_from_string(target_name);
  const auto arch = architecture_from_string(arch_name);
  if (batch == 0) throw DomainError("batch must be >= 1");
  const auto corpus = load_corpus(data);
  if (report_path.empty()) report_path = fs::path(out_path).replace_extension(".report.csv").string();
  OutputGuard guard;
  TrainOptions to;
  to.epochs = epochs;
  to.batch_size = batch;
  to.seed = seed;
  PrepareOptions po;
  po.seed = seed;
  po.stride = stride;
  po.balance_cap = balance;
  auto model = train_model(corpus, target, arch, to, po);
  model.version = 1;
  guard.add(out_path);
  save_model(model, out_path);
  guard.add(report_path);
  write_text(report_path, train_report_csv(model.report));
  guard.commit();
  out << "trained " << to_string(arch) << ' ' << to_string(target) << " model on " << corpus.size()
      << " experiments";
  if (!model.report.epochs.empty()) {
    const auto& last = model.report.epochs.back();
    out << ": val_mse " << format_double(last.val_mse) << ", val_r2 " << format_double(last.val_r2);
  }
  out << '\n';
  return kExitOk;
}

int cmd_predict(const std::vector<std::string>& model_paths, const std::string& config_path, double dt,
                double horizon, const std::string& out_path, std::ostream& out) {
  std::vector<TrainedModel> models;
  for (const auto& p : model_paths) models.push_back(load_model(p));
  const auto pair = pair_models(std::move(models));
  auto cfg_json = read_json(config_path);
  if (!cfg_json.contains("experiment_id")) cfg_json["experiment_id"] = "forecast";
  const auto config = cfg_json.get<ExperimentConfig>();
  const auto pred = predict_series(pair.pressure, pair.flow, config, dt, horizon);
  OutputGuard guard;
  guard.add(out_path);
  write_text(out_path, series_csv(pred.series.samples));
  guard.commit();
  nlohmann::json summary{{"experiment_id", config.experiment_id},
                         {"points", pred.series.samples.size()},
                         {"duration", pred.duration ? nlohmann::json(*pred.duration) : nlohmann::json(nullptr)},
                         {"exceeds_horizon", pred.exceeds_horizon()},
                         {"max_flow", pred.max_flow}};
  out << summary.dump() << '\n';
  return kExitOk;
}

int cmd_evaluate(const std::string& data, const std::string& models_dir, std::size_t window,
                 const std::string& report_path, const std::string& json_path, std::ostream& out) {
  const auto models = load_model_dir(models_dir);
  const auto corpus = load_corpus(data);
  std::vector<ReportRow> rows;
  for (const auto& e : corpus) {
    const auto pred = predict_on_grid(models.pressure, models.flow, e.config, e.series.times());
    const auto ev = evaluate_experiment(e.series, pred.series, window);
    rows.push_back(ReportRow{e.config.experiment_id, ev.pressure, ev.flow});
  }
  OutputGuard guard;
  guard.add(report_path);
  write_text(report_path, report_csv(rows));
  if (!json_path.empty()) {
    guard.add(json_path);
    write_text(json_path, report_json(rows).dump(2) + "\n");
  }
  guard.commit();
  const auto m = mean_row(rows);
  out << "evaluated " << rows.size() << " experiments: mean pressure rl2n " << format_double(m.pressure.rl2n)
      << "%, mean flow rl2n " << format_double(m.flow.rl2n) << "%\n";
  return kExitOk;
}

struct UrlParts {
  std::string scheme_host_port;
  std::string base_path;
};

UrlParts split_url(const std::string& url) {
  const auto scheme = url.find("://");
  const auto path_start = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  if (path_start == std::string::npos) return {url, ""};
  auto base = url.substr(path_start);
  while (!base.empty() && base.back() == '/') base.pop_back();
  return {url.substr(0, path_start), base};
}

void check_response(const httplib::Result& r, const std::string& what) {
  if (!r) throw DomainError(what + ": " + httplib::to_string(r.error()));
  if (r->status >= 300) throw DomainError(what + ": HTTP " + std::to_string(r->status) + " " + r->body);
}

int cmd_replay(const std::string& series_path, double speedup, const std::string& url, std::string experiment,
               const std::string& config_path, std::size_t batch, bool complete, std::ostream& out) {
  if (batch == 0) throw DomainError("batch must be >= 1");
  CycleSeries series;
  series.samples = parse_series_csv(read_text(series_path));
  if (experiment.empty()) experiment = fs::path(series_path).parent_path().filename().string();
  std::optional<nlohmann::json> cfg;
  if (!config_path.empty()) {
    cfg = read_json(config_path);
    if (!cfg->contains("experiment_id")) (*cfg)["experiment_id"] = experiment;
    experiment = cfg->at("experiment_id").get<std::string>();
  }
  series.experiment_id = experiment;
  const auto parts = split_url(url);
  httplib::Client client(parts.scheme_host_port);
  client.set_connection_timeout(5);
  client.set_read_timeout(30);
  if (cfg) {
    check_response(client.Post(parts.base_path + "/experiments", cfg->dump(), "application/json"), "create experiment");
  }
  const auto samples_url = parts.base_path + "/experiments/" + experiment + "/samples";
  std::vector<Sample> pending;
  std::size_t posted = 0;
  auto flush = [&] {
    if (pending.empty()) return;
    const nlohmann::json body{{"samples", pending}};
    check_response(client.Post(samples_url, body.dump(), "application/json"), "post samples");
    posted += pending.size();
    pending.clear();
  };
  replay(series, speedup, [&](const Sample& s) {
    pending.push_back(s);
    if (pending.size() >= batch) flush();
  });
  flush();
  if (complete)
    check_response(client.Post(parts.base_path + "/experiments/" + experiment + "/complete", "", "application/json"),
                   "complete experiment");
  out << "replayed " << posted << " samples to " << experiment << '\n';
  return kExitOk;
}

int cmd_serve(const std::string& host, int port, const std::string& store_dir, std::ostream& out) {
  auto store = std::make_shared<FileStore>(store_dir);
  TwinService service(store, store->models_dir());
  HttpServer server(service);
  out << "serving " << store_dir << " on " << host << ':' << port << std::endl;
  server.run(host, port);
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Filter press digital twin: simulate, train, predict, evaluate, replay, serve"};
  app.name("filtertwin");
  app.require_subcommand(1);

  std::string grid, out_dir;
  std::uint64_t seed = 0;
  bool clean = false;
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic corpus in store layout");
  sim->add_option("--grid", grid, "Grid JSON file or table1|table3|table4")->required();
  sim->add_option("--seed", seed, "Corpus seed");
  sim->add_option("--out", out_dir, "Output store directory")->required();
  sim->add_flag("--clean", clean, "Disable measurement noise");

  std::string data, target, arch = "lstm", model_out, report;
  std::size_t epochs = 100, batch = 32, stride = 10, balance = PrepareOptions{}.balance_cap;
  auto* train = app.add_subcommand("train", "Train one regressor on the complete experiments of a store");
  train->add_option("--data", data, "Store directory")->required();
  train->add_option("--target", target, "pressure|flow")->required()->check(CLI::IsMember({"pressure", "flow"}));
  train->add_option("--arch", arch, "ffnn|lstm")->check(CLI::IsMember({"ffnn", "lstm"}));
  train->add_option("--epochs", epochs, "Epochs");
  train->add_option("--batch", batch, "Mini-batch size");
  train->add_option("--seed", seed, "Seed");
  train->add_option("--stride", stride, "Samples averaged per training row");
  train->add_option("--balance", balance, "Max repeats of a short experiment's rows (1 disables)")->check(CLI::PositiveNumber);
  train->add_option("--out", model_out, "Model JSON path")->required();
  train->add_option("--report", report, "Epoch report CSV (default: <out>.report.csv)");

  std::vector<std::string> model_paths;
  std::string config_path, pred_out;
  double dt = 1.0, horizon = 3600.0;
  auto* pred = app.add_subcommand("predict", "Predict pressure and flow trajectories for a config");
  pred->add_option("--model", model_paths, "Model JSON (one pressure, one flow)")->required()->expected(1, 2);
  pred->add_option("--config", config_path, "ExperimentConfig JSON")->required();
  pred->add_option("--dt", dt, "Grid spacing, s");
  pred->add_option("--horizon", horizon, "Horizon, s");
  pred->add_option("--out", pred_out, "Output series CSV")->required();

  std::string models_dir, json_report;
  std::size_t window = kDefaultBandWindow;
  auto* eval = app.add_subcommand("evaluate", "Score models against every complete experiment of a store");
  eval->add_option("--data", data, "Store directory")->required();
  eval->add_option("--models", models_dir, "Directory with pressure.json and flow.json, or a registry")->required();
  eval->add_option("--window", window, "Moving-average window, samples");
  eval->add_option("--report", report, "Report CSV")->required();
  eval->add_option("--json", json_report, "Also write the report as JSON");

  std::string series_path, url, experiment;
  double speedup = 1.0;
  std::size_t replay_batch = 10;
  bool complete = false;
  auto* rep = app.add_subcommand("replay", "Stream a series CSV to a running service");
  rep->add_option("--series", series_path, "Series CSV")->required();
  rep->add_option("--speedup", speedup, "Replay speed factor");
  rep->add_option("--url", url, "Service base URL")->required();
  rep->add_option("--experiment", experiment, "Experiment id (default: CSV parent directory name)");
  rep->add_option("--config", config_path, "Create the experiment from this config first");
  rep->add_option("--batch", replay_batch, "Samples per request");
  rep->add_flag("--complete", complete, "Mark the experiment complete afterwards");

  std::string host = "127.0.0.1", store_dir;
  int port = 8080;
  auto* serve = app.add_subcommand("serve", "Run the HTTP service");
  serve->add_option("--port", port, "TCP port");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--store", store_dir, "Store directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (sim->parsed()) return cmd_simulate(grid, seed, out_dir, clean, out);
    if (train->parsed())
      return cmd_train(data, target, arch, epochs, batch, seed, stride, balance, model_out, report, out);
    if (pred->parsed()) return cmd_predict(model_paths, config_path, dt, horizon, pred_out, out);
    if (eval->parsed()) return cmd_evaluate(data, models_dir, window, report, json_report, out);
    if (rep->parsed())
      return cmd_replay(series_path, speedup, url, experiment, config_path, replay_batch, complete, out);
    if (serve->parsed()) return cmd_serve(host, port, store_dir, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace filtertwin
