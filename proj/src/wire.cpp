#include "incubator/wire.hpp"

#include <cctype>
#include <charconv>
#include <cmath>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "incubator/error.hpp"

namespace incubator::wire {

namespace {

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

}  // namespace

std::size_t parse_field_name(std::string_view name) {
  if (name.size() == 6 && name.substr(0, 5) == "field" && name[5] >= '1' && name[5] <= '8') {
    return static_cast<std::size_t>(name[5] - '1');
  }
  throw ValidationError(fmt::format("'{}' is not one of field1..field8", name));
}

std::string field_name(std::size_t index) { return fmt::format("field{}", index + 1); }

std::optional<double> parse_number(std::string_view text) {
  if (text.empty()) return std::nullopt;
  // from_chars rejects a leading '+'; accept it for form inputs.
  if (text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value, std::chars_format::general);
  if (ec != std::errc{} || ptr != end || !std::isfinite(value)) return std::nullopt;
  return value;
}

std::string format_decimal1(double value) {
  std::string out = fmt::format("{:.1f}", value);
  if (out == "-0.0") out = "0.0";
  return out;
}

std::string percent_encode(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (unsigned char c : text) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~' || c == ':') {
      out.push_back(static_cast<char>(c));
    } else {
      out += fmt::format("%{:02X}", c);
    }
  }
  return out;
}

std::string percent_decode(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '+') {
      out.push_back(' ');
    } else if (c == '%' && i + 2 < text.size() && hex_value(text[i + 1]) >= 0 && hex_value(text[i + 2]) >= 0) {
      out.push_back(static_cast<char>(hex_value(text[i + 1]) * 16 + hex_value(text[i + 2])));
      i += 2;
    } else {
      out.push_back(c);
    }
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> split_form(std::string_view body) {
  std::vector<std::pair<std::string, std::string>> pairs;
  while (!body.empty()) {
    const auto amp = body.find('&');
    const std::string_view pair = body.substr(0, amp);
    body = amp == std::string_view::npos ? std::string_view{} : body.substr(amp + 1);
    if (pair.empty()) continue;
    const auto eq = pair.find('=');
    if (eq == std::string_view::npos) {
      pairs.emplace_back(percent_decode(pair), std::string{});
    } else {
      pairs.emplace_back(percent_decode(pair.substr(0, eq)), percent_decode(pair.substr(eq + 1)));
    }
  }
  return pairs;
}

void validate(const SensorFrame& f) {
  for (double v : {f.air_temp_c, f.rh_pct, f.skin_temp_c, f.heater_duty}) {
    if (!std::isfinite(v)) throw ValidationError("sensor frame has a non-finite reading");
  }
}

FieldValues frame_fields(const SensorFrame& f) {
  FieldValues fields;
  fields[index_of(Field::air_temp)] = format_decimal1(f.air_temp_c);
  fields[index_of(Field::rh)] = format_decimal1(f.rh_pct);
  fields[index_of(Field::pulse)] = std::to_string(f.pulse_bpm);
  fields[index_of(Field::gas)] = std::to_string(f.gas_adc);
  fields[index_of(Field::light)] = std::to_string(f.light_lux);
  fields[index_of(Field::skin_temp)] = format_decimal1(f.skin_temp_c);
  fields[index_of(Field::heater_duty)] = format_decimal1(f.heater_duty);
  return fields;
}

HttpRequestSpec encode_update(const SensorFrame& frame, std::string_view api_key, bool with_created_at) {
  if (api_key.empty()) throw ValidationError("api_key must not be empty");
  validate(frame);
  const FieldValues fields = frame_fields(frame);
  std::string body = "api_key=" + percent_encode(api_key);
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (fields[i]) body += fmt::format("&{}={}", field_name(i), *fields[i]);
  }
  if (with_created_at) body += "&created_at=" + format_iso8601(frame.created_at);
  return {"POST", "/update", std::move(body)};
}

HttpRequestSpec encode_entry_update(const FeedEntry& entry, std::string_view api_key) {
  if (api_key.empty()) throw ValidationError("api_key must not be empty");
  std::string body = "api_key=" + percent_encode(api_key);
  for (std::size_t i = 0; i < entry.fields.size(); ++i) {
    if (entry.fields[i]) body += fmt::format("&{}={}", field_name(i), percent_encode(*entry.fields[i]));
  }
  body += "&created_at=" + format_iso8601(entry.created_at);
  return {"POST", "/update", std::move(body)};
}

std::optional<double> ParsedUpdate::numeric(std::size_t index) const {
  if (index >= fields.size() || !fields[index]) return std::nullopt;
  return parse_number(*fields[index]);
}

ParsedUpdate parse_update(std::string_view body) {
  ParsedUpdate out;
  bool have_key = false;
  for (auto& [key, value] : split_form(body)) {
    if (key == "api_key") {
      out.api_key = std::move(value);
      have_key = true;
    } else if (key == "created_at") {
      auto ts = parse_iso8601(value);
      if (!ts) throw FormatError(fmt::format("created_at '{}' is not YYYY-MM-DDTHH:MM:SSZ", value));
      out.created_at = ts;
    } else if (key.size() == 6 && key.starts_with("field") && key[5] >= '1' && key[5] <= '8') {
      out.fields[static_cast<std::size_t>(key[5] - '1')] = std::move(value);
    }
  }
  if (!have_key || out.api_key.empty()) throw AuthError("missing api_key");
  return out;
}

nlohmann::ordered_json feed_entry_to_json(const FeedEntry& entry) {
  nlohmann::ordered_json j;
  j["created_at"] = format_iso8601(entry.created_at);
  j["entry_id"] = entry.entry_id;
  for (std::size_t i = 0; i < entry.fields.size(); ++i) {
    if (entry.fields[i]) {
      j[field_name(i)] = *entry.fields[i];
    } else {
      j[field_name(i)] = nullptr;
    }
  }
  return j;
}

FeedEntry feed_entry_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw FormatError("feed entry must be a JSON object");
  FeedEntry entry;
  const auto id = doc.find("entry_id");
  if (id == doc.end() || !id->is_number_integer() || id->get<std::int64_t>() < 1) {
    throw FormatError("feed entry needs a positive integer entry_id");
  }
  entry.entry_id = id->get<std::int64_t>();
  const auto ts = doc.find("created_at");
  if (ts == doc.end() || !ts->is_string()) throw FormatError("feed entry needs created_at");
  const auto parsed = parse_iso8601(ts->get<std::string>());
  if (!parsed) throw FormatError("feed entry created_at is malformed");
  entry.created_at = *parsed;
  for (std::size_t i = 0; i < kFieldCount; ++i) {
    const auto it = doc.find(field_name(i));
    if (it == doc.end() || it->is_null()) continue;
    if (!it->is_string()) throw FormatError(fmt::format("{} must be a string or null", field_name(i)));
    entry.fields[i] = it->get<std::string>();
  }
  return entry;
}

std::string encode_feed_entry(const FeedEntry& entry) { return feed_entry_to_json(entry).dump(); }

std::string encode_feeds(const ChannelMeta& meta, const std::vector<FeedEntry>& entries) {
  nlohmann::ordered_json doc;
  doc["channel"]["id"] = meta.id;
  doc["channel"]["name"] = meta.name;
  doc["channel"]["created_at"] = format_iso8601(meta.created_at);
  doc["feeds"] = nlohmann::ordered_json::array();
  for (const auto& e : entries) doc["feeds"].push_back(feed_entry_to_json(e));
  return doc.dump();
}

CommandSettings parse_command_body(std::string_view body) {
  CommandSettings out;
  for (const auto& [key, value] : split_form(body)) {
    if (key == "setpoint") {
      const auto v = parse_number(value);
      if (!v) throw ValidationError(fmt::format("setpoint '{}' is not a number", value));
      if (*v < kMinSetpointC || *v > kMaxSetpointC) {
        throw ValidationError(fmt::format("setpoint must lie in [{}, {}] C", kMinSetpointC, kMaxSetpointC));
      }
      out.setpoint_c = v;
    } else if (key == "hum_setpoint") {
      const auto v = parse_number(value);
      if (!v) throw ValidationError(fmt::format("hum_setpoint '{}' is not a number", value));
      if (*v < kMinHumSetpointPct || *v > kMaxHumSetpointPct) {
        throw ValidationError(
            fmt::format("hum_setpoint must lie in [{}, {}] %", kMinHumSetpointPct, kMaxHumSetpointPct));
      }
      out.hum_setpoint_pct = v;
    } else if (key == "servo") {
      out.servo = control::parse_servo(value);
    } else if (key == "mode") {
      out.mode = control::parse_mode(value);
    } else {
      throw ValidationError(fmt::format("unknown command key '{}'", key));
    }
  }
  if (out.empty()) throw ValidationError("command body has no settings");
  return out;
}

std::string encode_command_body(const CommandSettings& s) {
  std::vector<std::string> parts;
  if (s.setpoint_c) parts.push_back(fmt::format("setpoint={}", *s.setpoint_c));
  if (s.servo) parts.push_back(fmt::format("servo={}", control::to_string(*s.servo)));
  if (s.mode) parts.push_back(fmt::format("mode={}", control::to_string(*s.mode)));
  if (s.hum_setpoint_pct) parts.push_back(fmt::format("hum_setpoint={}", *s.hum_setpoint_pct));
  return fmt::format("{}", fmt::join(parts, "&"));
}

nlohmann::ordered_json command_to_json(const Command& cmd) {
  nlohmann::ordered_json j;
  j["command_id"] = cmd.command_id;
  j["body"] = cmd.body;
  j["created_at"] = format_iso8601(cmd.created_at);
  j["consumed"] = cmd.consumed;
  return j;
}

Command command_from_json(const nlohmann::json& doc) {
  try {
    Command cmd;
    cmd.command_id = doc.at("command_id").get<std::int64_t>();
    cmd.body = doc.at("body").get<std::string>();
    const auto ts = parse_iso8601(doc.at("created_at").get<std::string>());
    if (!ts) throw FormatError("command created_at is malformed");
    cmd.created_at = *ts;
    cmd.consumed = doc.value("consumed", false);
    return cmd;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(fmt::format("bad command document: {}", e.what()));
  }
}

}  // namespace incubator::wire
