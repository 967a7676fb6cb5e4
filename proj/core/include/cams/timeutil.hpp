#pragma once

#include <cstdint>
#include <optional>
#include <string>

namespace cams {

// Proleptic Gregorian calendar date. All trajectory "days" are civil dates in
// a fixed-offset local timezone (default UTC+8, see MobilityConfig).
struct CivilDate {
    int year = 1970;
    int month = 1;  // 1..12
    int day = 1;    // 1..31

    auto operator<=>(const CivilDate&) const = default;
    std::string to_string() const;  // YYYY-MM-DD
};

// Days since 1970-01-01 (Howard Hinnant's algorithm).
std::int64_t days_from_civil(const CivilDate& d);
CivilDate civil_from_days(std::int64_t z);

std::optional<CivilDate> parse_civil(const std::string& s);  // YYYY-MM-DD

// ISO8601 timestamps with a numeric offset or 'Z', e.g.
// "2019-10-01T08:30:00+08:00". Seconds are optional. Returns UTC epoch
// seconds.
std::optional<std::int64_t> parse_iso8601(const std::string& s);
std::string format_iso8601(std::int64_t epoch_s, int utc_offset_s);

// Local civil date / second-of-day / hour-of-day for a fixed offset.
CivilDate local_date(std::int64_t epoch_s, int utc_offset_s);
int local_second_of_day(std::int64_t epoch_s, int utc_offset_s);
int local_hour(std::int64_t epoch_s, int utc_offset_s);

// Epoch seconds of local midnight opening the given civil date.
std::int64_t day_start_epoch(const CivilDate& d, int utc_offset_s);

}  // namespace cams
