#include "greentwin/common.hpp"

#include <cmath>
#include <cstdio>
#include <fmt/format.h>

#include "greentwin/time_util.hpp"

namespace greentwin {

std::string_view to_string(Color c) {
    switch (c) {
        case Color::red: return "red";
        case Color::yellow: return "yellow";
        case Color::green: return "green";
    }
    return "red";
}

std::optional<Color> parse_color(std::string_view text) {
    if (text == "red" || text == "0") return Color::red;
    if (text == "yellow" || text == "1") return Color::yellow;
    if (text == "green" || text == "2") return Color::green;
    return std::nullopt;
}

std::chrono::year_month_day utc_date(Timestamp t) {
    using namespace std::chrono;
    const auto days_since_epoch = static_cast<long long>(std::floor(t / 86400.0));
    return year_month_day{sys_days{days{days_since_epoch}}};
}

Timestamp midnight_utc(std::chrono::year_month_day date) {
    using namespace std::chrono;
    return static_cast<Timestamp>(sys_days{date}.time_since_epoch().count()) * 86400.0;
}

std::chrono::year_month_day parse_date(std::string_view text) {
    using namespace std::chrono;
    int y = 0;
    unsigned m = 0, d = 0;
    char tail = 0;
    const std::string s{text};
    if (std::sscanf(s.c_str(), "%4d-%2u-%2u%c", &y, &m, &d, &tail) != 3) {
        throw Error(fmt::format("invalid date '{}', expected YYYY-MM-DD", text));
    }
    year_month_day ymd{year{y}, month{m}, day{d}};
    if (!ymd.ok()) throw Error(fmt::format("invalid date '{}'", text));
    return ymd;
}

std::string format_date(std::chrono::year_month_day date) {
    return fmt::format("{:04d}-{:02d}-{:02d}", static_cast<int>(date.year()),
                       static_cast<unsigned>(date.month()), static_cast<unsigned>(date.day()));
}

std::string format_year_month(Timestamp t) {
    const auto date = utc_date(t);
    return fmt::format("{:04d}-{:02d}", static_cast<int>(date.year()),
                       static_cast<unsigned>(date.month()));
}

std::string_view weekday_name(std::chrono::year_month_day date) {
    static constexpr std::string_view names[] = {"Sun", "Mon", "Tue", "Wed", "Thu", "Fri", "Sat"};
    return names[std::chrono::weekday{std::chrono::sys_days{date}}.c_encoding()];
}

Timestamp floor_to_grid(Timestamp t, Duration grid) {
    return std::floor(t / grid) * grid;
}

}  // namespace greentwin
