#include "incubator/report.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "incubator/error.hpp"
#include "incubator/store.hpp"

namespace incubator::report {

ReportSummary summarize(std::int64_t channel_id, const std::vector<wire::FeedEntry>& entries, double window_s,
                        const std::vector<alert::AlertRule>& rules) {
  if (!(window_s >= 0.0)) throw ValidationError("window must be non-negative");
  ReportSummary out;
  out.channel_id = channel_id;
  if (entries.empty()) return out;

  const auto first_ts = entries.front().created_at.seconds;
  const auto last_ts = entries.back().created_at.seconds;
  out.window_s = std::min(window_s, static_cast<double>(last_ts - first_ts));

  std::vector<wire::FeedEntry> window;
  for (const auto& e : entries) {
    if (static_cast<double>(e.created_at.seconds) > static_cast<double>(last_ts) - window_s) window.push_back(e);
  }
  out.entries = window.size();

  for (std::size_t f = 0; f < wire::kFieldCount; ++f) {
    std::vector<double> values;
    for (const auto& e : window) {
      if (!e.fields[f]) continue;
      if (const auto v = wire::parse_number(*e.fields[f])) values.push_back(*v);
    }
    if (values.empty()) continue;
    FieldStats s;
    s.count = values.size();
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(values.size());
    s.min = *std::min_element(values.begin(), values.end());
    s.max = *std::max_element(values.begin(), values.end());
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(sq / static_cast<double>(values.size()));
    out.fields[f] = s;
  }
  if (const auto& duty = out.fields[wire::index_of(wire::Field::heater_duty)]) out.mean_heater_duty = duty->mean;

  alert::AlertBook book(channel_id, rules);
  for (const auto& e : window) {
    for (const auto& t : book.on_entry(e)) {
      if (t.state == alert::AlertState::active) {
        ++out.alerts[t.alert.label][std::string(alert::to_string(t.alert.severity))];
      }
    }
  }
  return out;
}

std::string to_json(const ReportSummary& s) {
  nlohmann::ordered_json j;
  j["channel_id"] = s.channel_id;
  j["window_s"] = s.window_s;
  j["entries"] = s.entries;
  j["fields"] = nlohmann::ordered_json::object();
  for (std::size_t f = 0; f < wire::kFieldCount; ++f) {
    if (!s.fields[f]) continue;
    const auto& st = *s.fields[f];
    j["fields"][wire::field_name(f)] = {
        {"count", st.count}, {"mean", st.mean}, {"min", st.min}, {"max", st.max}, {"stddev", st.stddev}};
  }
  j["mean_heater_duty"] = s.mean_heater_duty ? nlohmann::ordered_json(*s.mean_heater_duty) : nlohmann::ordered_json();
  j["alerts"] = nlohmann::ordered_json::object();
  for (const auto& [label, by_sev] : s.alerts) {
    for (const auto& [sev, n] : by_sev) j["alerts"][label][sev] = n;
  }
  return j.dump(2) + "\n";
}

ReportSummary report_channel(const std::filesystem::path& data_dir, std::int64_t channel_id, double window_s,
                             const std::vector<alert::AlertRule>& rules) {
  const auto path = store::channel_log_path(data_dir, channel_id);
  if (!std::filesystem::exists(path)) throw ConfigError(fmt::format("no log at {}", path.string()));
  return summarize(channel_id, store::read_log(path), window_s, rules);
}

}  // namespace incubator::report
