#pragma once

#include <chrono>
#include <string>
#include <string_view>

#include "greentwin/common.hpp"

namespace greentwin {

/// Calendar date of a UTC timestamp.
std::chrono::year_month_day utc_date(Timestamp t);

/// Midnight UTC of the given date.
Timestamp midnight_utc(std::chrono::year_month_day date);

/// Parses `YYYY-MM-DD`; throws Error on malformed input.
std::chrono::year_month_day parse_date(std::string_view text);

std::string format_date(std::chrono::year_month_day date);

/// `YYYY-MM` of the timestamp's UTC date.
std::string format_year_month(Timestamp t);

/// Three-letter weekday name (Mon..Sun).
std::string_view weekday_name(std::chrono::year_month_day date);

/// Largest multiple of `grid` not greater than `t` (grid anchored at the epoch).
Timestamp floor_to_grid(Timestamp t, Duration grid);

}  // namespace greentwin
