#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "incubator/alert.hpp"
#include "incubator/wire.hpp"

namespace incubator::report {

struct FieldStats {
  std::size_t count = 0;
  double mean = 0.0;
  double min = 0.0;
  double max = 0.0;
  double stddev = 0.0;  // population
};

struct ReportSummary {
  std::int64_t channel_id = 0;
  double window_s = 0.0;
  std::size_t entries = 0;
  std::array<std::optional<FieldStats>, wire::kFieldCount> fields;
  std::optional<double> mean_heater_duty;
  /// label -> severity -> number of alerts raised in the window.
  std::map<std::string, std::map<std::string, int>> alerts;
};

/// Statistics over entries with created_at in (last - window_s, last].
/// Alerts are re-derived by running `rules` over the window from a clean state.
ReportSummary summarize(std::int64_t channel_id, const std::vector<wire::FeedEntry>& entries, double window_s,
                        const std::vector<alert::AlertRule>& rules);

std::string to_json(const ReportSummary& summary);

/// Reads {data_dir}/channel_{id}.ndjson and summarizes it.
ReportSummary report_channel(const std::filesystem::path& data_dir, std::int64_t channel_id, double window_s,
                             const std::vector<alert::AlertRule>& rules);

}  // namespace incubator::report
