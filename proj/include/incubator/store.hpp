#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <optional>
#include <vector>

#include "incubator/wire.hpp"

namespace incubator::store {

/// {data_dir}/channel_{id}.ndjson
std::filesystem::path channel_log_path(const std::filesystem::path& data_dir, std::int64_t channel_id);

struct LogOptions {
  /// Refuse appends that would grow the file past this size (simulates a full disk).
  std::optional<std::uintmax_t> max_bytes;
};

struct RecoveryReport {
  std::size_t records = 0;
  bool truncated_tail = false;
  std::uintmax_t truncated_bytes = 0;
};

/// Last `last_n` entries, then restricted to created_at in [start, end] (inclusive).
/// `entries` must be ascending by entry_id.
std::vector<wire::FeedEntry> select_entries(const std::vector<wire::FeedEntry>& entries, std::size_t last_n,
                                            std::optional<Timestamp> start, std::optional<Timestamp> end);

/// Append-only NDJSON log for one channel. Not internally synchronized:
/// the owner serializes writers; const members are safe to call concurrently
/// with each other.
class ChannelLog {
 public:
  /// Opens (creating if absent) and recovers the log at `path`. A torn final
  /// line is truncated; any other malformed line throws StorageError.
  static ChannelLog open(const std::filesystem::path& path, LogOptions options = {});

  ChannelLog(ChannelLog&&) noexcept = default;
  ChannelLog& operator=(ChannelLog&&) noexcept = default;

  /// Writes one record and flushes it. entry.entry_id must equal next_entry_id()
  /// and created_at must not precede the previous record; throws
  /// PreconditionError otherwise and StorageError when the write fails, in
  /// which case the file and the counter are left unchanged.
  std::int64_t append(const wire::FeedEntry& entry);

  std::vector<wire::FeedEntry> query(std::size_t last_n, std::optional<Timestamp> start = std::nullopt,
                                     std::optional<Timestamp> end = std::nullopt) const;

  std::int64_t next_entry_id() const { return static_cast<std::int64_t>(entries_.size()) + 1; }
  std::size_t size() const { return entries_.size(); }
  const std::vector<wire::FeedEntry>& entries() const { return entries_; }
  std::optional<Timestamp> last_created_at() const;
  /// Byte offset of each record's first character, by entry_id - 1.
  const std::vector<std::uintmax_t>& offsets() const { return offsets_; }
  const std::filesystem::path& path() const { return path_; }
  const RecoveryReport& recovery() const { return recovery_; }

 private:
  struct FileCloser {
    void operator()(std::FILE* f) const {
      if (f) std::fclose(f);
    }
  };

  ChannelLog() = default;

  std::filesystem::path path_;
  LogOptions options_;
  std::unique_ptr<std::FILE, FileCloser> file_;
  std::uintmax_t size_bytes_ = 0;
  std::vector<wire::FeedEntry> entries_;
  std::vector<std::uintmax_t> offsets_;
  RecoveryReport recovery_;
};

/// Reads every record of a log file without modifying it. Same validation as
/// ChannelLog::open, but a torn tail is skipped rather than truncated.
std::vector<wire::FeedEntry> read_log(const std::filesystem::path& path);

}  // namespace incubator::store
