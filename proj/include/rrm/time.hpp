#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>

namespace rrm {

using UtcTime = std::chrono::sys_seconds;

inline constexpr std::int64_t kSecondsPerHour = 3600;

inline std::int64_t to_unix(UtcTime t) { return t.time_since_epoch().count(); }
inline UtcTime from_unix(std::int64_t s) { return UtcTime{std::chrono::seconds{s}}; }

inline UtcTime floor_hour(UtcTime t) { return std::chrono::floor<std::chrono::hours>(t); }

// First full hour strictly after t.
inline UtcTime next_full_hour(UtcTime t) { return floor_hour(t) + std::chrono::hours{1}; }

struct CalendarParts {
    int year = 1970;
    unsigned month = 1;     // 1..12
    unsigned day = 1;       // 1..31
    unsigned hour = 0;      // 0..23
    unsigned minute = 0;
    unsigned second = 0;
    unsigned iso_dow = 0;   // 0 = Monday .. 6 = Sunday
};

inline CalendarParts calendar(UtcTime t) {
    using namespace std::chrono;
    const auto day = floor<days>(t);
    const year_month_day ymd{day};
    const hh_mm_ss hms{t - day};
    CalendarParts p;
    p.year = static_cast<int>(ymd.year());
    p.month = static_cast<unsigned>(ymd.month());
    p.day = static_cast<unsigned>(ymd.day());
    p.hour = static_cast<unsigned>(hms.hours().count());
    p.minute = static_cast<unsigned>(hms.minutes().count());
    p.second = static_cast<unsigned>(hms.seconds().count());
    p.iso_dow = weekday{day}.iso_encoding() - 1;
    return p;
}

inline UtcTime make_utc(int year, unsigned month, unsigned day, unsigned hour = 0, unsigned minute = 0,
                        unsigned second = 0) {
    using namespace std::chrono;
    const sys_days d = std::chrono::year{year} / std::chrono::month{month} / std::chrono::day{day};
    return UtcTime{d} + hours{hour} + minutes{minute} + seconds{second};
}

inline UtcTime year_start(int year) { return make_utc(year, 1, 1); }

// RFC 3339 subset: YYYY-MM-DDTHH:MM[:SS[.frac]](Z|+00:00|-00:00). Inputs are UTC by contract, so
// any nonzero offset is rejected.
inline std::optional<UtcTime> parse_rfc3339(std::string_view s) {
    auto digits = [&](std::size_t pos, std::size_t n, unsigned& out) {
        if (pos + n > s.size()) return false;
        unsigned v = 0;
        for (std::size_t i = pos; i < pos + n; ++i) {
            if (s[i] < '0' || s[i] > '9') return false;
            v = v * 10 + static_cast<unsigned>(s[i] - '0');
        }
        out = v;
        return true;
    };
    unsigned y, mo, d, h, mi, sec = 0;
    if (!digits(0, 4, y) || s.size() < 16 || s[4] != '-' || !digits(5, 2, mo) || s[7] != '-' ||
        !digits(8, 2, d) || (s[10] != 'T' && s[10] != 't' && s[10] != ' ') || !digits(11, 2, h) ||
        s[13] != ':' || !digits(14, 2, mi))
        return std::nullopt;
    std::size_t pos = 16;
    if (pos < s.size() && s[pos] == ':') {
        if (!digits(pos + 1, 2, sec)) return std::nullopt;
        pos += 3;
        if (pos < s.size() && s[pos] == '.') {
            ++pos;
            while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') ++pos;
        }
    }
    const std::string_view zone = s.substr(pos);
    if (zone != "Z" && zone != "z" && zone != "+00:00" && zone != "-00:00") return std::nullopt;
    using namespace std::chrono;
    const year_month_day ymd{std::chrono::year{static_cast<int>(y)}, std::chrono::month{mo}, std::chrono::day{d}};
    if (!ymd.ok() || h > 23 || mi > 59 || sec > 60) return std::nullopt;
    return UtcTime{sys_days{ymd}} + hours{h} + minutes{mi} + seconds{sec};
}

inline std::string format_rfc3339(UtcTime t) {
    const auto p = calendar(t);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02u:%02u:%02uZ", p.year, p.month, p.day, p.hour, p.minute,
                  p.second);
    return buf;
}

inline UtcTime now_utc() { return std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now()); }

} // namespace rrm
