#include "incubator/store.hpp"

#include <fstream>
#include <iterator>
#include <string>

#include <fmt/format.h>
#include <spdlog/spdlog.h>
#include <unistd.h>

#include "incubator/error.hpp"

namespace incubator::store {

namespace {

struct ScanResult {
  std::vector<wire::FeedEntry> entries;
  std::vector<std::uintmax_t> offsets;
  std::uintmax_t valid_bytes = 0;
  std::uintmax_t total_bytes = 0;
};

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StorageError(fmt::format("cannot read {}", path.string()));
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::optional<wire::FeedEntry> parse_record(std::string_view line) {
  try {
    return wire::feed_entry_from_json(nlohmann::json::parse(line));
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  } catch (const FormatError&) {
    return std::nullopt;
  }
}

ScanResult scan(const std::filesystem::path& path, const std::string& data) {
  ScanResult out;
  out.total_bytes = data.size();
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < data.size()) {
    ++line_no;
    const auto nl = data.find('\n', pos);
    const bool complete = nl != std::string::npos;
    const std::size_t line_end = complete ? nl : data.size();
    const bool is_last = !complete || nl + 1 == data.size();
    const std::string_view line(data.data() + pos, line_end - pos);

    auto entry = complete ? parse_record(line) : std::nullopt;
    const auto expected_id = static_cast<std::int64_t>(out.entries.size()) + 1;
    bool ok = entry && entry->entry_id == expected_id;
    if (ok && !out.entries.empty() && entry->created_at < out.entries.back().created_at) ok = false;

    if (!ok) {
      if (is_last) break;  // torn tail
      throw StorageError(fmt::format("{}: corrupt record at line {}", path.string(), line_no));
    }
    out.offsets.push_back(pos);
    out.entries.push_back(std::move(*entry));
    pos = line_end + 1;
    out.valid_bytes = pos;
  }
  return out;
}

}  // namespace

std::filesystem::path channel_log_path(const std::filesystem::path& data_dir, std::int64_t channel_id) {
  return data_dir / fmt::format("channel_{}.ndjson", channel_id);
}

std::vector<wire::FeedEntry> select_entries(const std::vector<wire::FeedEntry>& entries, std::size_t last_n,
                                            std::optional<Timestamp> start, std::optional<Timestamp> end) {
  const std::size_t first = entries.size() > last_n ? entries.size() - last_n : 0;
  std::vector<wire::FeedEntry> out;
  for (std::size_t i = first; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (start && e.created_at < *start) continue;
    if (end && e.created_at > *end) continue;
    out.push_back(e);
  }
  return out;
}

ChannelLog ChannelLog::open(const std::filesystem::path& path, LogOptions options) {
  ChannelLog log;
  log.path_ = path;
  log.options_ = options;

  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }

  if (std::filesystem::exists(path)) {
    const std::string data = read_all(path);
    ScanResult scanned = scan(path, data);
    if (scanned.valid_bytes < scanned.total_bytes) {
      const auto dropped = scanned.total_bytes - scanned.valid_bytes;
      spdlog::warn("{}: truncating torn final record ({} bytes)", path.string(), dropped);
      std::filesystem::resize_file(path, scanned.valid_bytes);
      log.recovery_.truncated_tail = true;
      log.recovery_.truncated_bytes = dropped;
    }
    log.entries_ = std::move(scanned.entries);
    log.offsets_ = std::move(scanned.offsets);
    log.size_bytes_ = scanned.valid_bytes;
  }
  log.recovery_.records = log.entries_.size();

  log.file_.reset(std::fopen(path.c_str(), "ab"));
  if (!log.file_) throw StorageError(fmt::format("cannot open {} for append", path.string()));
  return log;
}

std::int64_t ChannelLog::append(const wire::FeedEntry& entry) {
  if (entry.entry_id != next_entry_id()) {
    throw PreconditionError(
        fmt::format("append expected entry_id {}, got {}", next_entry_id(), entry.entry_id));
  }
  if (!entries_.empty() && entry.created_at < entries_.back().created_at) {
    throw PreconditionError("append would make created_at decrease");
  }

  const std::string line = wire::encode_feed_entry(entry) + "\n";
  if (options_.max_bytes && size_bytes_ + line.size() > *options_.max_bytes) {
    throw StorageError(fmt::format("{}: storage quota exhausted", path_.string()));
  }

  std::FILE* f = file_.get();
  const std::size_t written = std::fwrite(line.data(), 1, line.size(), f);
  if (written != line.size() || std::fflush(f) != 0) {
    std::clearerr(f);
    // Drop whatever part of the record reached the file.
    if (::ftruncate(::fileno(f), static_cast<off_t>(size_bytes_)) != 0) {
      spdlog::error("{}: failed to roll back partial write", path_.string());
    }
    throw StorageError(fmt::format("{}: write failed", path_.string()));
  }

  offsets_.push_back(size_bytes_);
  size_bytes_ += line.size();
  entries_.push_back(entry);
  return entry.entry_id;
}

std::vector<wire::FeedEntry> ChannelLog::query(std::size_t last_n, std::optional<Timestamp> start,
                                               std::optional<Timestamp> end) const {
  return select_entries(entries_, last_n, start, end);
}

std::optional<Timestamp> ChannelLog::last_created_at() const {
  if (entries_.empty()) return std::nullopt;
  return entries_.back().created_at;
}

std::vector<wire::FeedEntry> read_log(const std::filesystem::path& path) {
  return scan(path, read_all(path)).entries;
}

}  // namespace incubator::store
