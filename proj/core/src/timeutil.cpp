#include "cams/timeutil.hpp"

#include <cstdio>

namespace cams {

namespace {

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    std::int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

}  // namespace

std::string CivilDate::to_string() const {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", year, month, day);
    return buf;
}

std::int64_t days_from_civil(const CivilDate& d) {
    std::int64_t y = d.year;
    unsigned m = static_cast<unsigned>(d.month);
    unsigned dd = static_cast<unsigned>(d.day);
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + dd - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

CivilDate civil_from_days(std::int64_t z) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    const unsigned d = doy - (153 * mp + 2) / 5 + 1;
    const unsigned m = mp + (mp < 10 ? 3 : -9);
    return CivilDate{static_cast<int>(y + (m <= 2)), static_cast<int>(m), static_cast<int>(d)};
}

std::optional<CivilDate> parse_civil(const std::string& s) {
    int y, m, d;
    if (std::sscanf(s.c_str(), "%d-%d-%d", &y, &m, &d) != 3) return std::nullopt;
    if (m < 1 || m > 12 || d < 1 || d > 31) return std::nullopt;
    return CivilDate{y, m, d};
}

std::optional<std::int64_t> parse_iso8601(const std::string& s) {
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
    int consumed = 0;
    if (std::sscanf(s.c_str(), "%d-%d-%dT%d:%d:%d%n", &y, &mo, &d, &h, &mi, &sec, &consumed) < 6) {
        sec = 0;
        if (std::sscanf(s.c_str(), "%d-%d-%dT%d:%d%n", &y, &mo, &d, &h, &mi, &consumed) < 5)
            return std::nullopt;
    }
    if (mo < 1 || mo > 12 || d < 1 || d > 31 || h < 0 || h > 23 || mi < 0 || mi > 59 || sec < 0 ||
        sec > 60)
        return std::nullopt;

    int offset_s = 0;
    const char* rest = s.c_str() + consumed;
    if (*rest == 'Z') {
        offset_s = 0;
    } else if (*rest == '+' || *rest == '-') {
        int oh = 0, om = 0;
        int sign = (*rest == '-') ? -1 : 1;
        if (std::sscanf(rest + 1, "%d:%d", &oh, &om) == 2 ||
            std::sscanf(rest + 1, "%2d%2d", &oh, &om) == 2) {
            offset_s = sign * (oh * 3600 + om * 60);
        } else if (std::sscanf(rest + 1, "%d", &oh) == 1) {
            offset_s = sign * oh * 3600;
        } else {
            return std::nullopt;
        }
    } else if (*rest != '\0') {
        return std::nullopt;
    }
    // no suffix: treat as UTC

    std::int64_t days = days_from_civil(CivilDate{y, mo, d});
    return days * 86400 + h * 3600 + mi * 60 + sec - offset_s;
}

std::string format_iso8601(std::int64_t epoch_s, int utc_offset_s) {
    std::int64_t local = epoch_s + utc_offset_s;
    std::int64_t days = floor_div(local, 86400);
    int sod = static_cast<int>(local - days * 86400);
    CivilDate d = civil_from_days(days);
    char buf[40];
    char sign = utc_offset_s < 0 ? '-' : '+';
    int off = utc_offset_s < 0 ? -utc_offset_s : utc_offset_s;
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02d%c%02d:%02d", d.year, d.month,
                  d.day, sod / 3600, (sod / 60) % 60, sod % 60, sign, off / 3600, (off / 60) % 60);
    return buf;
}

CivilDate local_date(std::int64_t epoch_s, int utc_offset_s) {
    return civil_from_days(floor_div(epoch_s + utc_offset_s, 86400));
}

int local_second_of_day(std::int64_t epoch_s, int utc_offset_s) {
    std::int64_t local = epoch_s + utc_offset_s;
    std::int64_t days = floor_div(local, 86400);
    return static_cast<int>(local - days * 86400);
}

int local_hour(std::int64_t epoch_s, int utc_offset_s) {
    return local_second_of_day(epoch_s, utc_offset_s) / 3600;
}

std::int64_t day_start_epoch(const CivilDate& d, int utc_offset_s) {
    return days_from_civil(d) * 86400 - utc_offset_s;
}

}  // namespace cams
