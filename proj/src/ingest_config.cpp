#include <fstream>
#include <set>

#include <fmt/format.h>

#include "incubator/error.hpp"
#include "incubator/ingest.hpp"

namespace incubator::ingest {

namespace {

const wire::FieldValues& default_field_names() {
  static const wire::FieldValues names = {
      "Air temperature (C)", "Relative humidity (%)", "Pulse (bpm)", "Gas (ADC)",
      "Light (lux)",         "Skin temperature (C)",  "Heater duty", std::nullopt,
  };
  return names;
}

ChannelConfig parse_channel(const nlohmann::json& doc) {
  ChannelConfig ch;
  ch.channel_id = doc.at("channel_id").get<std::int64_t>();
  if (ch.channel_id < 1) throw ConfigError("channel_id must be positive");
  ch.name = doc.value("name", fmt::format("Incubator {}", ch.channel_id));
  ch.write_key = doc.at("write_key").get<std::string>();
  ch.read_key = doc.at("read_key").get<std::string>();
  if (ch.write_key.empty() || ch.read_key.empty()) throw ConfigError("channel keys must be nonempty");
  if (ch.write_key == ch.read_key) {
    throw ConfigError(fmt::format("channel {}: write_key and read_key must differ", ch.channel_id));
  }
  ch.min_update_interval_s = doc.value("min_update_interval_s", 1.0);
  if (!(ch.min_update_interval_s >= 0.0)) throw ConfigError("min_update_interval_s must be >= 0");

  const std::string created = doc.value("created_at", std::string("2024-01-01T00:00:00Z"));
  const auto ts = parse_iso8601(created);
  if (!ts) throw ConfigError(fmt::format("channel {}: bad created_at '{}'", ch.channel_id, created));
  ch.created_at = *ts;

  ch.field_names = default_field_names();
  if (doc.contains("field_names")) {
    for (const auto& [key, value] : doc.at("field_names").items()) {
      ch.field_names[wire::parse_field_name(key)] = value.is_null() ? std::nullopt
                                                                     : std::optional(value.get<std::string>());
    }
  }

  if (doc.contains("alert_rules")) {
    for (const auto& r : doc.at("alert_rules")) ch.alert_rules.push_back(alert::parse_rule(r));
  } else {
    ch.alert_rules = alert::default_rules();
  }
  return ch;
}

}  // namespace

ServerConfig parse_server_config(const nlohmann::json& doc) {
  ServerConfig cfg;
  try {
    if (!doc.is_object()) throw ConfigError("server config must be a JSON object");
    cfg.host = doc.value("host", cfg.host);
    cfg.port = doc.value("port", cfg.port);
    if (cfg.port < 0 || cfg.port > 65535) throw ConfigError("port out of range");
    cfg.data_dir = doc.value("data_dir", cfg.data_dir.string());
    if (doc.contains("webhook_url") && !doc.at("webhook_url").is_null()) {
      cfg.webhook_url = doc.at("webhook_url").get<std::string>();
    }
    if (doc.contains("alert_log") && !doc.at("alert_log").is_null()) {
      cfg.alert_log = doc.at("alert_log").get<std::string>();
    }
    if (doc.contains("static_dir") && !doc.at("static_dir").is_null()) {
      cfg.static_dir = doc.at("static_dir").get<std::string>();
    }
    std::set<std::int64_t> ids;
    std::set<std::string> write_keys;
    for (const auto& c : doc.value("channels", nlohmann::json::array())) {
      ChannelConfig ch = parse_channel(c);
      if (!ids.insert(ch.channel_id).second) throw ConfigError(fmt::format("duplicate channel {}", ch.channel_id));
      if (!write_keys.insert(ch.write_key).second) {
        throw ConfigError(fmt::format("channel {}: write_key shared with another channel", ch.channel_id));
      }
      cfg.channels.push_back(std::move(ch));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("server config: {}", e.what()));
  } catch (const ValidationError& e) {
    throw ConfigError(fmt::format("server config: {}", e.what()));
  }
  return cfg;
}

ServerConfig load_server_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config {}", path.string()));
  try {
    return parse_server_config(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(fmt::format("config {}: {}", path.string(), e.what()));
  }
}

}  // namespace incubator::ingest
