#include "filtertwin/store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace filtertwin {

namespace fs = std::filesystem;

namespace {

constexpr const char* kMetaFile = "meta.json";
constexpr const char* kSamplesFile = "samples.csv";
constexpr const char* kJournalFile = "pending.csv";
constexpr const char* kJournalTmpFile = "pending.csv.tmp";
constexpr const char* kIndexFile = "index.json";

[[noreturn]] void io_fail(const std::string& what, const fs::path& p) {
  throw StoreError(StoreErrorKind::io, what + " '" + p.string() + "': " + std::strerror(errno));
}

class Fd {
public:
  Fd(const fs::path& p, int flags) : fd_(::open(p.c_str(), flags | O_CLOEXEC, 0644)) {
    if (fd_ < 0) io_fail("cannot open", p);
  }
  ~Fd() {
    if (fd_ >= 0) ::close(fd_);
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;

  void write_all(std::string_view data, const fs::path& p) const {
    while (!data.empty()) {
      const auto n = ::write(fd_, data.data(), data.size());
      if (n < 0) {
        if (errno == EINTR) continue;
        io_fail("write failed for", p);
      }
      data.remove_prefix(static_cast<std::size_t>(n));
    }
  }
  void sync(const fs::path& p) const {
    if (::fsync(fd_) != 0) io_fail("fsync failed for", p);
  }

private:
  int fd_;
};

void sync_dir(const fs::path& dir, bool sync) {
  if (!sync) return;
  Fd fd(dir, O_RDONLY | O_DIRECTORY);
  fd.sync(dir);
}

void write_file(const fs::path& p, std::string_view data, bool sync) {
  Fd fd(p, O_WRONLY | O_CREAT | O_TRUNC);
  fd.write_all(data, p);
  if (sync) fd.sync(p);
}

void write_atomic(const fs::path& p, std::string_view data, bool sync) {
  auto tmp = p;
  tmp += ".tmp";
  write_file(tmp, data, sync);
  fs::rename(tmp, p);
  sync_dir(p.parent_path(), sync);
}

void append_file(const fs::path& p, std::string_view data, bool sync) {
  Fd fd(p, O_WRONLY | O_APPEND);
  fd.write_all(data, p);
  if (sync) fd.sync(p);
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) io_fail("cannot read", p);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string csv_rows(std::span<const Sample> batch) {
  std::string out;
  for (const auto& s : batch) {
    out += format_double(s.t);
    out += ',';
    out += format_double(s.pressure);
    out += ',';
    out += format_double(s.flow);
    out += '\n';
  }
  return out;
}

std::string meta_json(const ExperimentConfig& config, SeriesStatus status) {
  nlohmann::json j = config;
  j["status"] = to_string(status);
  return j.dump(2) + "\n";
}

}  // namespace

void to_json(nlohmann::json& j, const ExperimentRecord& r) {
  j = r.config;
  j["status"] = to_string(r.status);
  j["sample_count"] = r.sample_count;
  j["path"] = r.path;
}

std::string_view to_string(StoreErrorKind k) {
  switch (k) {
    case StoreErrorKind::not_found: return "not_found";
    case StoreErrorKind::duplicate: return "duplicate";
    case StoreErrorKind::invalid: return "invalid";
    case StoreErrorKind::closed: return "closed";
    case StoreErrorKind::time_regression: return "time_regression";
    case StoreErrorKind::io: return "io";
  }
  return "io";
}

struct FileStore::Entry {
  mutable std::shared_mutex data_mutex;  // guards record and samples
  std::mutex write_mutex;                // one writer per experiment
  ExperimentRecord record;
  std::vector<Sample> samples;
  std::uint64_t seq = 0;
};

FileStore::FileStore(fs::path root, FileStoreOptions options) : root_(std::move(root)), options_(options) {
  std::error_code ec;
  fs::create_directories(root_ / "experiments", ec);
  if (ec) throw StoreError(StoreErrorKind::io, "cannot create store at '" + root_.string() + "': " + ec.message());
  load();
}

FileStore::~FileStore() = default;

fs::path FileStore::dir_of(const std::string& id) const { return root_ / "experiments" / id; }

void FileStore::recover(Entry& e) const {
  const fs::path dir = e.record.path;
  std::error_code ec;
  fs::remove(dir / kJournalTmpFile, ec);
  const auto journal = dir / kJournalFile;
  if (!fs::exists(journal)) return;
  const auto text = read_file(journal);
  const auto nl = text.find('\n');
  const std::string_view head = std::string_view(text).substr(0, nl);
  constexpr std::string_view prefix = "prior_size=";
  if (nl == std::string::npos || head.substr(0, prefix.size()) != prefix)
    throw StoreError(StoreErrorKind::io, "corrupt journal '" + journal.string() + "'");
  const auto prior = std::stoull(std::string(head.substr(prefix.size())));
  const auto samples = dir / kSamplesFile;
  fs::resize_file(samples, prior);
  append_file(samples, std::string_view(text).substr(nl + 1), options_.sync);
  fs::remove(journal);
  sync_dir(dir, options_.sync);
}

void FileStore::load() {
  std::vector<std::string> order;
  const auto index_path = root_ / kIndexFile;
  if (fs::exists(index_path)) {
    try {
      const auto j = nlohmann::json::parse(read_file(index_path));
      for (const auto& id : j.at("experiments")) order.push_back(id.get<std::string>());
    } catch (const nlohmann::json::exception& ex) {
      throw StoreError(StoreErrorKind::io, "corrupt index '" + index_path.string() + "': " + ex.what());
    }
  }
  // Directories that made it to disk before an index update are adopted.
  std::vector<std::string> found;
  for (const auto& d : fs::directory_iterator(root_ / "experiments"))
    if (d.is_directory() && fs::exists(d.path() / kMetaFile)) found.push_back(d.path().filename().string());
  std::sort(found.begin(), found.end());
  bool index_stale = !fs::exists(index_path);
  for (const auto& id : found)
    if (std::find(order.begin(), order.end(), id) == order.end()) {
      order.push_back(id);
      index_stale = true;
    }

  for (const auto& id : order) {
    const auto dir = dir_of(id);
    if (!fs::exists(dir / kMetaFile)) {
      index_stale = true;
      continue;
    }
    auto e = std::make_shared<Entry>();
    e->record.path = dir.string();
    e->seq = next_seq_++;
    recover(*e);
    try {
      const auto meta = nlohmann::json::parse(read_file(dir / kMetaFile));
      e->record.config = meta.get<ExperimentConfig>();
      e->record.status = series_status_from_string(meta.at("status").get<std::string>());
      e->samples = parse_series_csv(read_file(dir / kSamplesFile));
    } catch (const std::exception& ex) {
      throw StoreError(StoreErrorKind::io, "cannot load experiment '" + id + "': " + ex.what());
    }
    if (e->record.config.experiment_id != id)
      throw StoreError(StoreErrorKind::io, "experiment directory '" + id + "' holds id '" +
                                               e->record.config.experiment_id + "'");
    if (auto bad = first_sample_violation(e->samples))
      throw StoreError(StoreErrorKind::io, "experiment '" + id + "' has an invalid sample at row " +
                                               std::to_string(*bad));
    e->record.sample_count = e->samples.size();
    entries_.emplace(id, std::move(e));
  }
  if (index_stale) write_index_locked();
}

void FileStore::write_index_locked() const {
  std::vector<std::pair<std::uint64_t, std::string>> ids;
  for (const auto& [id, e] : entries_) ids.emplace_back(e->seq, id);
  std::sort(ids.begin(), ids.end());
  nlohmann::json j;
  j["format"] = "filtertwin.store";
  j["experiments"] = nlohmann::json::array();
  for (const auto& [seq, id] : ids) j["experiments"].push_back(id);
  write_atomic(root_ / kIndexFile, j.dump(2) + "\n", options_.sync);
}

std::shared_ptr<FileStore::Entry> FileStore::find(const std::string& id) const {
  std::shared_lock lock(index_mutex_);
  auto it = entries_.find(id);
  if (it == entries_.end()) throw StoreError(StoreErrorKind::not_found, "unknown experiment '" + id + "'");
  return it->second;
}

ExperimentRecord FileStore::create_experiment(const ExperimentConfig& config) {
  auto violations = validate_config(config);
  if (!violations.empty())
    throw StoreError(StoreErrorKind::invalid, "invalid experiment config", std::move(violations));
  std::unique_lock lock(index_mutex_);
  const auto& id = config.experiment_id;
  if (entries_.count(id)) throw StoreError(StoreErrorKind::duplicate, "experiment '" + id + "' already exists");
  const auto dir = dir_of(id);
  std::error_code ec;
  fs::remove_all(dir, ec);  // leftovers of a creation that never reached meta.json
  fs::create_directories(dir, ec);
  if (ec) throw StoreError(StoreErrorKind::io, "cannot create '" + dir.string() + "': " + ec.message());
  write_atomic(dir / kSamplesFile, std::string(kSeriesCsvHeader) + "\n", options_.sync);
  write_atomic(dir / kMetaFile, meta_json(config, SeriesStatus::open), options_.sync);
  sync_dir(dir.parent_path(), options_.sync);

  auto e = std::make_shared<Entry>();
  e->record = ExperimentRecord{config, SeriesStatus::open, 0, dir.string()};
  e->seq = next_seq_++;
  entries_.emplace(id, e);
  write_index_locked();
  return e->record;
}

std::size_t FileStore::append_samples(const std::string& id, std::span<const Sample> batch) {
  auto e = find(id);
  std::lock_guard writer(e->write_mutex);
  std::optional<double> last_t;
  {
    std::shared_lock read(e->data_mutex);
    if (e->record.status != SeriesStatus::open)
      throw StoreError(StoreErrorKind::closed, "experiment '" + id + "' is complete");
    if (!e->samples.empty()) last_t = e->samples.back().t;
  }
  if (batch.empty()) return e->record.sample_count;
  if (auto bad = first_sample_violation(batch, last_t)) {
    const auto& s = batch[*bad];
    const double prev = *bad > 0 ? batch[*bad - 1].t : last_t.value_or(-1.0);
    const bool regression = std::isfinite(s.t) && s.t >= 0.0 && (*bad > 0 || last_t) && !(s.t > prev);
    const auto msg = "sample " + std::to_string(*bad) + " of batch for '" + id + "'";
    if (regression)
      throw StoreError(StoreErrorKind::time_regression, "time regression at " + msg,
                       {"t=" + format_double(s.t) + " does not exceed " + format_double(prev)}, *bad);
    throw StoreError(StoreErrorKind::invalid, "invalid " + msg,
                     {"t >= 0, pressure >= 0, flow >= 0 and all finite"}, *bad);
  }

  const fs::path dir = e->record.path;
  const auto samples_path = dir / kSamplesFile;
  const auto rows = csv_rows(batch);
  const auto prior = fs::file_size(samples_path);
  write_file(dir / kJournalTmpFile, "prior_size=" + std::to_string(prior) + "\n" + rows, options_.sync);
  if (options_.crash == CrashPoint::before_journal_commit) throw SimulatedCrash("crash before journal commit");
  fs::rename(dir / kJournalTmpFile, dir / kJournalFile);
  sync_dir(dir, options_.sync);
  if (options_.crash == CrashPoint::after_journal_commit) throw SimulatedCrash("crash after journal commit");
  if (options_.crash == CrashPoint::mid_append) {
    append_file(samples_path, std::string_view(rows).substr(0, rows.size() / 2), options_.sync);
    throw SimulatedCrash("crash during append");
  }
  append_file(samples_path, rows, options_.sync);
  fs::remove(dir / kJournalFile);
  sync_dir(dir, options_.sync);

  std::unique_lock write(e->data_mutex);
  e->samples.insert(e->samples.end(), batch.begin(), batch.end());
  e->record.sample_count = e->samples.size();
  return e->record.sample_count;
}

ExperimentRecord FileStore::mark_complete(const std::string& id) {
  auto e = find(id);
  std::lock_guard writer(e->write_mutex);
  ExperimentConfig config;
  {
    std::shared_lock read(e->data_mutex);
    if (e->record.status == SeriesStatus::complete)
      throw StoreError(StoreErrorKind::closed, "experiment '" + id + "' is already complete");
    config = e->record.config;
  }
  write_atomic(fs::path(e->record.path) / kMetaFile, meta_json(config, SeriesStatus::complete), options_.sync);
  std::unique_lock write(e->data_mutex);
  e->record.status = SeriesStatus::complete;
  return e->record;
}

ExperimentRecord FileStore::get_record(const std::string& id) const {
  auto e = find(id);
  std::shared_lock read(e->data_mutex);
  return e->record;
}

CycleSeries FileStore::get_series(const std::string& id) const {
  auto e = find(id);
  std::shared_lock read(e->data_mutex);
  CycleSeries s;
  s.experiment_id = id;
  s.samples = e->samples;
  s.status = e->record.status;
  return s;
}

std::vector<Sample> FileStore::samples_since(const std::string& id, double since) const {
  auto e = find(id);
  std::shared_lock read(e->data_mutex);
  auto it = std::upper_bound(e->samples.begin(), e->samples.end(), since,
                             [](double t, const Sample& s) { return t < s.t; });
  return {it, e->samples.end()};
}

std::vector<ExperimentRecord> FileStore::list_experiments(std::optional<SeriesStatus> status) const {
  std::vector<std::pair<std::uint64_t, ExperimentRecord>> rows;
  {
    std::shared_lock lock(index_mutex_);
    for (const auto& [id, e] : entries_) {
      std::shared_lock read(e->data_mutex);
      if (!status || e->record.status == *status) rows.emplace_back(e->seq, e->record);
    }
  }
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    if (a.second.config.created_at != b.second.config.created_at)
      return a.second.config.created_at < b.second.config.created_at;
    return a.first < b.first;
  });
  std::vector<ExperimentRecord> out;
  out.reserve(rows.size());
  for (auto& r : rows) out.push_back(std::move(r.second));
  return out;
}

ExperimentRecord FileStore::import_series(const ExperimentConfig& config, const CycleSeries& series) {
  create_experiment(config);
  append_samples(config.experiment_id, series.samples);
  return mark_complete(config.experiment_id);
}

}  // namespace filtertwin
