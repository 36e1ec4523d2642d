#pragma once

// File-backed experiment store: one directory per experiment with meta.json
// (config + status) and an append-only samples.csv, plus a store-level
// index.json listing the ids.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "filtertwin/domain.hpp"

namespace filtertwin {

struct ExperimentRecord {
  ExperimentConfig config;
  SeriesStatus status = SeriesStatus::open;
  std::size_t sample_count = 0;
  std::string path;
};

void to_json(nlohmann::json& j, const ExperimentRecord& r);

enum class StoreErrorKind { not_found, duplicate, invalid, closed, time_regression, io };
std::string_view to_string(StoreErrorKind k);

class StoreError : public std::runtime_error {
public:
  StoreError(StoreErrorKind kind, const std::string& what, std::vector<std::string> details = {},
             std::optional<std::size_t> index = std::nullopt)
      : std::runtime_error(what), kind_(kind), details_(std::move(details)), index_(index) {}
  [[nodiscard]] StoreErrorKind kind() const { return kind_; }
  [[nodiscard]] const std::vector<std::string>& details() const { return details_; }
  /// Offending batch position for time regressions and invalid samples.
  [[nodiscard]] std::optional<std::size_t> index() const { return index_; }

private:
  StoreErrorKind kind_;
  std::vector<std::string> details_;
  std::optional<std::size_t> index_;
};

/// Backend-neutral store interface.
class Storage {
public:
  virtual ~Storage() = default;
  virtual ExperimentRecord create_experiment(const ExperimentConfig& config) = 0;
  /// Returns the new sample count. Batch times must exceed the last stored time.
  virtual std::size_t append_samples(const std::string& id, std::span<const Sample> batch) = 0;
  virtual ExperimentRecord mark_complete(const std::string& id) = 0;
  virtual ExperimentRecord get_record(const std::string& id) const = 0;
  virtual CycleSeries get_series(const std::string& id) const = 0;
  /// Samples with t > since, in order.
  virtual std::vector<Sample> samples_since(const std::string& id, double since) const = 0;
  /// Sorted by created_at, ties by creation order.
  virtual std::vector<ExperimentRecord> list_experiments(std::optional<SeriesStatus> status = std::nullopt) const = 0;
};

/// Points at which a test can make an append stop as if the process died.
enum class CrashPoint { none, before_journal_commit, after_journal_commit, mid_append };

class SimulatedCrash : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct FileStoreOptions {
  bool sync = true;  // fsync files and directories on every write
  CrashPoint crash = CrashPoint::none;
};

/// Appends go through a journal: the batch and the prior samples.csv size are
/// written to pending.csv.tmp, renamed to pending.csv, appended, then the
/// journal is removed. Opening a store replays or discards leftover journals,
/// so a batch is either fully visible or fully absent.
class FileStore final : public Storage {
public:
  explicit FileStore(std::filesystem::path root, FileStoreOptions options = {});
  ~FileStore() override;

  FileStore(const FileStore&) = delete;
  FileStore& operator=(const FileStore&) = delete;

  ExperimentRecord create_experiment(const ExperimentConfig& config) override;
  std::size_t append_samples(const std::string& id, std::span<const Sample> batch) override;
  ExperimentRecord mark_complete(const std::string& id) override;
  ExperimentRecord get_record(const std::string& id) const override;
  CycleSeries get_series(const std::string& id) const override;
  std::vector<Sample> samples_since(const std::string& id, double since) const override;
  std::vector<ExperimentRecord> list_experiments(std::optional<SeriesStatus> status = std::nullopt) const override;

  [[nodiscard]] const std::filesystem::path& root() const { return root_; }
  [[nodiscard]] std::filesystem::path models_dir() const { return root_ / "models"; }
  void set_crash_point(CrashPoint p) { options_.crash = p; }

  /// Writes a complete series as a closed experiment in one step.
  ExperimentRecord import_series(const ExperimentConfig& config, const CycleSeries& series);

private:
  struct Entry;

  std::shared_ptr<Entry> find(const std::string& id) const;
  void load();
  void recover(Entry& e) const;
  void write_index_locked() const;
  std::filesystem::path dir_of(const std::string& id) const;

  std::filesystem::path root_;
  FileStoreOptions options_;
  mutable std::shared_mutex index_mutex_;
  std::map<std::string, std::shared_ptr<Entry>> entries_;
  std::uint64_t next_seq_ = 0;
};

}  // namespace filtertwin
