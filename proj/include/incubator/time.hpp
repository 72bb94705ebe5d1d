#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace incubator {

/// UTC instant at one-second resolution.
struct Timestamp {
  std::int64_t seconds = 0;

  auto operator<=>(const Timestamp&) const = default;
};

/// Renders YYYY-MM-DDTHH:MM:SSZ.
std::string format_iso8601(Timestamp ts);

/// Accepts only YYYY-MM-DDTHH:MM:SSZ (no offsets, no fractional seconds).
std::optional<Timestamp> parse_iso8601(std::string_view text);

Timestamp now_utc();

}  // namespace incubator
