#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "incubator/control.hpp"
#include "incubator/sensor_frame.hpp"
#include "incubator/time.hpp"

namespace incubator::wire {

inline constexpr std::size_t kFieldCount = 8;

/// field1..field8 of a channel. Index 0 is field1.
using FieldValues = std::array<std::optional<std::string>, kFieldCount>;

// Fixed field assignment on every incubator channel.
enum class Field : std::size_t {
  air_temp = 0,
  rh = 1,
  pulse = 2,
  gas = 3,
  light = 4,
  skin_temp = 5,
  heater_duty = 6,
  reserved = 7,
};

inline constexpr std::size_t index_of(Field f) { return static_cast<std::size_t>(f); }

/// "field1".."field8"; throws ValidationError for anything else.
std::size_t parse_field_name(std::string_view name);
std::string field_name(std::size_t index);

/// Strict decimal parse of a whole string; nullopt on junk or non-finite.
std::optional<double> parse_number(std::string_view text);

/// One decimal place, never "-0.0".
std::string format_decimal1(double value);

std::string percent_encode(std::string_view text);
std::string percent_decode(std::string_view text);

/// Splits an application/x-www-form-urlencoded body into decoded pairs, in order.
std::vector<std::pair<std::string, std::string>> split_form(std::string_view body);

struct HttpRequestSpec {
  std::string method;
  std::string path;
  std::string body;
};

void validate(const SensorFrame& frame);

/// POST /update body: api_key, field1..field7 and optionally created_at.
HttpRequestSpec encode_update(const SensorFrame& frame, std::string_view api_key, bool with_created_at = true);

FieldValues frame_fields(const SensorFrame& frame);

struct ParsedUpdate {
  std::string api_key;
  FieldValues fields;
  std::optional<Timestamp> created_at;

  /// Numeric view of a field; nullopt when absent or not a finite number.
  std::optional<double> numeric(std::size_t index) const;
};

/// Throws AuthError when api_key is missing and FormatError on a bad created_at.
ParsedUpdate parse_update(std::string_view body);

struct FeedEntry {
  std::int64_t entry_id = 0;
  Timestamp created_at;
  FieldValues fields;

  bool operator==(const FeedEntry&) const = default;
};

/// Re-encodes a stored entry as an /update body, created_at included.
HttpRequestSpec encode_entry_update(const FeedEntry& entry, std::string_view api_key);

struct ChannelMeta {
  std::int64_t id = 0;
  std::string name;
  Timestamp created_at;
};

nlohmann::ordered_json feed_entry_to_json(const FeedEntry& entry);

/// Throws FormatError when the object does not follow the entry schema.
FeedEntry feed_entry_from_json(const nlohmann::json& doc);

/// Compact single-line JSON of one entry (the NDJSON record).
std::string encode_feed_entry(const FeedEntry& entry);

std::string encode_feeds(const ChannelMeta& meta, const std::vector<FeedEntry>& entries);

/// Validated remote-control settings; each key is optional.
struct CommandSettings {
  std::optional<double> setpoint_c;
  std::optional<double> hum_setpoint_pct;
  std::optional<control::Servo> servo;
  std::optional<control::Mode> mode;

  bool empty() const { return !setpoint_c && !hum_setpoint_pct && !servo && !mode; }
  bool operator==(const CommandSettings&) const = default;
};

inline constexpr double kMinSetpointC = 20.0;
inline constexpr double kMaxSetpointC = 40.0;
inline constexpr double kMinHumSetpointPct = 20.0;
inline constexpr double kMaxHumSetpointPct = 80.0;

/// Parses "setpoint=35.5&servo=air&..." and validates every key and range.
/// Throws ValidationError on unknown keys, bad values or an empty body.
CommandSettings parse_command_body(std::string_view body);

/// Form serializer for CommandSettings, key order setpoint, servo, mode, hum_setpoint.
std::string encode_command_body(const CommandSettings& settings);

struct Command {
  std::int64_t command_id = 0;
  std::string body;
  Timestamp created_at;
  bool consumed = false;
};

nlohmann::ordered_json command_to_json(const Command& cmd);
Command command_from_json(const nlohmann::json& doc);

}  // namespace incubator::wire
