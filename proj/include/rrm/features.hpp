#pragma once

// Training-example assembly: history tables, the 16-slot cell-hour and 26-slot
// segment-hour feature schedules, negative sampling and year splits.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "rrm/cellgrid.hpp"
#include "rrm/detail/csv.hpp"
#include "rrm/error.hpp"
#include "rrm/ingest.hpp"
#include "rrm/rng.hpp"
#include "rrm/segments.hpp"
#include "rrm/time.hpp"

namespace rrm::features {

inline constexpr std::size_t kBaselineFeatureCount = 16;
inline constexpr std::size_t kSegmentFeatureCount = 26;
inline constexpr int kHoursPerWeek = 168;
inline constexpr double kRecencyScaleDays = 30.0;

inline const std::vector<std::string> kBaselineFeatureNames = {
    "lat_norm",         "lon_norm",          "hour_sin",    "hour_cos",          "dow_sin",
    "dow_cos",          "month_sin",         "month_cos",   "log_cell_total",    "log_cell_same_how",
    "temp_c",           "dewpoint_c",        "rel_humidity", "wind_ms",          "wet_hour",
    "precip_mm"};

inline const std::vector<std::string> kSegmentFeatureNames = {
    "log_length_m",     "sinuosity",         "bearing_sin",  "bearing_cos",      "class_primary",
    "class_secondary",  "class_other",       "mid_lat_norm", "mid_lon_norm",     "hour_sin",
    "hour_cos",         "dow_sin",           "dow_cos",      "month_sin",        "month_cos",
    "log_segment_total", "log_segment_same_how", "log_cell_total", "severity_mean", "recency",
    "temp_c",           "dewpoint_c",        "rel_humidity", "wind_ms",          "wet_hour",
    "precip_mm"};

struct Cyclic {
    double sin = 0.0;
    double cos = 1.0;
};

inline Cyclic cyc_encode(double value, double period) {
    if (!(period > 0.0)) throw Error("INVALID_ARGUMENT", "period must be positive");
    const double a = 2.0 * std::numbers::pi * value / period;
    return {std::sin(a), std::cos(a)};
}

// 0 = Monday 00:00 UTC .. 167 = Sunday 23:00 UTC.
struct HourOfWeek {
    int value = 0;
    int dow() const { return value / 24; }
    int hour() const { return value % 24; }
};

inline HourOfWeek hour_of_week(UtcTime t) {
    const auto p = calendar(t);
    return {static_cast<int>(p.iso_dow * 24 + p.hour)};
}

// Calendar slots a feature vector needs. The weekly overlay has no real date, so it
// supplies these directly.
struct TimeParts {
    int hour = 0;   // 0..23
    int dow = 0;    // 0 = Monday
    int month = 1;  // 1..12
    std::int64_t unix_hour = 0; // floor(t / 3600); drives the recency slot

    static TimeParts of(UtcTime t) {
        const auto p = calendar(t);
        return {static_cast<int>(p.hour), static_cast<int>(p.iso_dow), static_cast<int>(p.month),
                to_unix(floor_hour(t)) / kSecondsPerHour};
    }
    int how() const { return dow * 24 + hour; }
};

// Half-open [begin, end).
struct Period {
    UtcTime begin;
    UtcTime end;
    bool contains(UtcTime t) const { return t >= begin && t < end; }
};

struct CellHistory {
    std::unordered_map<cellgrid::CellId, std::array<std::uint32_t, kHoursPerWeek>, cellgrid::CellHash> by_how;
    std::unordered_map<cellgrid::CellId, std::uint32_t, cellgrid::CellHash> total;

    std::uint32_t total_of(cellgrid::CellId c) const {
        const auto it = total.find(c);
        return it == total.end() ? 0 : it->second;
    }
    std::uint32_t same_how(cellgrid::CellId c, int how) const {
        const auto it = by_how.find(c);
        return it == by_how.end() ? 0 : it->second[static_cast<std::size_t>(how)];
    }
};

struct CellEvent {
    cellgrid::CellId cell;
    UtcTime at;
};

inline CellHistory build_cell_history(const std::vector<CellEvent>& events, const Period& train) {
    CellHistory h;
    for (const auto& e : events) {
        if (!train.contains(e.at)) continue;
        ++h.total[e.cell];
        auto [it, fresh] = h.by_how.try_emplace(e.cell);
        if (fresh) it->second.fill(0);
        ++it->second[static_cast<std::size_t>(hour_of_week(e.at).value)];
    }
    return h;
}

struct SegmentStats {
    std::uint32_t total = 0;
    double severity_sum = 0.0;
    std::array<std::uint32_t, kHoursPerWeek> by_how{};
    std::vector<std::int64_t> event_hours; // sorted unix hours of training events

    double severity_mean() const { return total ? severity_sum / total : 0.0; }
    std::optional<std::int64_t> last_event_hour() const {
        if (event_hours.empty()) return std::nullopt;
        return event_hours.back();
    }
    // Latest training event strictly before the given hour.
    std::optional<std::int64_t> last_before(std::int64_t unix_hour) const {
        const auto it = std::lower_bound(event_hours.begin(), event_hours.end(), unix_hour);
        if (it == event_hours.begin()) return std::nullopt;
        return *(it - 1);
    }
};

struct SegmentHistory {
    std::unordered_map<std::string, SegmentStats> by_segment;
    CellHistory cells; // events by the cell containing the event, same period

    const SegmentStats* find(const std::string& id) const {
        const auto it = by_segment.find(id);
        return it == by_segment.end() ? nullptr : &it->second;
    }
};

struct SegmentEvent {
    std::string segment_id;
    UtcTime at;
    int severity = 1;
    cellgrid::CellId cell;
};

inline SegmentHistory build_segment_history(const std::vector<SegmentEvent>& events, const Period& train) {
    SegmentHistory h;
    std::vector<CellEvent> cell_events;
    for (const auto& e : events) {
        if (!train.contains(e.at)) continue;
        auto& s = h.by_segment[e.segment_id];
        ++s.total;
        s.severity_sum += e.severity;
        ++s.by_how[static_cast<std::size_t>(hour_of_week(e.at).value)];
        s.event_hours.push_back(to_unix(floor_hour(e.at)) / kSecondsPerHour);
        cell_events.push_back({e.cell, e.at});
    }
    for (auto& [id, s] : h.by_segment) std::sort(s.event_hours.begin(), s.event_hours.end());
    h.cells = build_cell_history(cell_events, train);
    return h;
}

// Training events that fall inside the example's own hour. Training rows subtract them so a
// positive never counts its own label in its history features.
struct OwnHour {
    std::uint32_t events = 0;      // the unit's own events in the hour
    double severity_sum = 0.0;     // their severity total
    std::uint32_t cell_events = 0; // events in the containing cell in the hour
};

inline double wet_indicator(const ingest::WeatherValues& w) { return w.precip_mm > 0.0 ? 1.0 : 0.0; }

using BaselineVector = std::array<double, kBaselineFeatureCount>;
using SegmentVector = std::array<double, kSegmentFeatureCount>;

inline BaselineVector baseline_features(cellgrid::CellId cell, const TimeParts& t, const CellHistory& history,
                                        const cellgrid::GridSpec& grid, const ingest::WeatherValues& w,
                                        const OwnHour& own = {}) {
    const auto c = grid.cell_center(cell);
    const auto hr = cyc_encode(t.hour, 24);
    const auto dw = cyc_encode(t.dow, 7);
    const auto mo = cyc_encode(t.month - 1, 12);
    return {c.lat / 90.0,
            c.lon / 180.0,
            hr.sin,
            hr.cos,
            dw.sin,
            dw.cos,
            mo.sin,
            mo.cos,
            std::log1p(static_cast<double>(history.total_of(cell) - own.events)),
            std::log1p(static_cast<double>(history.same_how(cell, t.how()) - own.events)),
            w.temp_c,
            w.dewpoint_c,
            w.rel_humidity,
            w.wind_ms,
            wet_indicator(w),
            w.precip_mm};
}

inline SegmentVector segment_features(const segments::RoadSegment& seg, const TimeParts& t,
                                      const SegmentHistory& history, const cellgrid::GridSpec& grid,
                                      const ingest::WeatherValues& w, const OwnHour& own = {}) {
    const auto br = cyc_encode(seg.bearing_deg, 360.0);
    const auto hr = cyc_encode(t.hour, 24);
    const auto dw = cyc_encode(t.dow, 7);
    const auto mo = cyc_encode(t.month - 1, 12);
    const SegmentStats* st = history.find(seg.segment_id);
    double total = 0.0, same_how = 0.0, sev = 0.0, recency = 0.0;
    if (st) {
        total = st->total - own.events;
        same_how = st->by_how[static_cast<std::size_t>(t.how())] - own.events;
        sev = total > 0.0 ? (st->severity_sum - own.severity_sum) / total : 0.0;
        if (const auto last = st->last_before(t.unix_hour))
            recency = std::exp(-static_cast<double>(t.unix_hour - *last) / 24.0 / kRecencyScaleDays);
    }
    const auto cell = grid.cell_of(seg.midpoint);
    return {std::log1p(seg.length_m),
            seg.sinuosity,
            br.sin,
            br.cos,
            seg.cls == ingest::RoadClass::primary ? 1.0 : 0.0,
            seg.cls == ingest::RoadClass::secondary ? 1.0 : 0.0,
            seg.cls == ingest::RoadClass::other ? 1.0 : 0.0,
            seg.midpoint.lat / 90.0,
            seg.midpoint.lon / 180.0,
            hr.sin,
            hr.cos,
            dw.sin,
            dw.cos,
            mo.sin,
            mo.cos,
            std::log1p(total),
            std::log1p(same_how),
            std::log1p(static_cast<double>(history.cells.total_of(cell) - own.cell_events)),
            sev,
            recency,
            w.temp_c,
            w.dewpoint_c,
            w.rel_humidity,
            w.wind_ms,
            wet_indicator(w),
            w.precip_mm};
}

// ---- negative sampling ----------------------------------------------------

struct LabeledKey {
    std::uint64_t key = 0;
    int label = 0;
    friend bool operator==(const LabeledKey&, const LabeledKey&) = default;
};

// Keys in [0, space_size). Every positive key is kept with label 1; k * |positives|
// negatives are drawn uniformly without replacement from the remaining keys. The result
// is shuffled with the same seed.
inline std::vector<LabeledKey> build_examples(std::vector<std::uint64_t> positives, std::uint64_t space_size,
                                              std::uint32_t k, std::uint64_t seed) {
    if (k < 1) throw Error("INVALID_ARGUMENT", "negative ratio must be >= 1");
    std::sort(positives.begin(), positives.end());
    positives.erase(std::unique(positives.begin(), positives.end()), positives.end());
    for (auto p : positives)
        if (p >= space_size) throw Error("INVALID_ARGUMENT", "positive key outside candidate space");
    const std::uint64_t need = static_cast<std::uint64_t>(k) * positives.size();
    const std::uint64_t free = space_size - positives.size();
    if (need > free)
        throw Error("CANDIDATES_TOO_SMALL", "negative sampling needs at least " +
                                                std::to_string(positives.size() + need) + " candidate keys, have " +
                                                std::to_string(space_size));
    Rng rng(seed);
    std::vector<LabeledKey> out;
    out.reserve(positives.size() + need);
    for (auto p : positives) out.push_back({p, 1});
    if (need * 2 <= free) {
        // Sparse draw: rejection against positives and already drawn keys.
        std::unordered_set<std::uint64_t> taken(positives.begin(), positives.end());
        taken.reserve(positives.size() + need);
        while (out.size() < positives.size() + need) {
            const std::uint64_t key = rng.below(space_size);
            if (taken.insert(key).second) out.push_back({key, 0});
        }
    } else {
        // Dense draw: partial Fisher-Yates over the explicit complement.
        std::vector<std::uint64_t> pool;
        pool.reserve(free);
        std::size_t pi = 0;
        for (std::uint64_t key = 0; key < space_size; ++key) {
            if (pi < positives.size() && positives[pi] == key) {
                ++pi;
                continue;
            }
            pool.push_back(key);
        }
        for (std::uint64_t i = 0; i < need; ++i) {
            const auto j = i + rng.below(pool.size() - i);
            std::swap(pool[i], pool[j]);
            out.push_back({pool[i], 0});
        }
    }
    rng.shuffle(out);
    return out;
}

// ---- examples and splits ----------------------------------------------------

struct Example {
    std::string key; // cell token or segment id
    UtcTime at;
    std::vector<double> features;
    int label = 0;
};

struct Split {
    std::vector<Example> train;
    std::vector<Example> eval;
};

// eval = examples in eval_year, train = earlier years. Later years are an error.
inline Split split_by_year(std::vector<Example> examples, int eval_year) {
    Split s;
    for (auto& e : examples) {
        const int y = calendar(e.at).year;
        if (y > eval_year)
            throw Error("SPLIT_INVALID", "example " + e.key + " at " + format_rfc3339(e.at) + " is after eval year " +
                                             std::to_string(eval_year));
        (y == eval_year ? s.eval : s.train).push_back(std::move(e));
    }
    if (s.train.empty()) throw Error("SPLIT_EMPTY", "no training examples before " + std::to_string(eval_year));
    if (s.eval.empty()) throw Error("SPLIT_EMPTY", "no examples in eval year " + std::to_string(eval_year));
    return s;
}

inline constexpr const char* kExamplesFormat = "rrm-examples-v1";

inline std::string fmt_exact(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_examples(const std::string& path, const std::string& layer, const std::vector<std::string>& names,
                           const std::vector<Example>& examples) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("FILE_UNWRITABLE", "cannot write " + path);
    out << '#' << kExamplesFormat << " layer=" << layer << '\n';
    out << "key,at,label";
    for (const auto& n : names) out << ',' << n;
    out << '\n';
    for (const auto& e : examples) {
        if (e.features.size() != names.size()) throw Error("FEATURE_LENGTH", "example " + e.key + " has wrong length");
        out << detail::csv_escape(e.key) << ',' << format_rfc3339(e.at) << ',' << e.label;
        for (double v : e.features) out << ',' << fmt_exact(v);
        out << '\n';
    }
}

struct ExamplesFile {
    std::string layer;
    std::vector<std::string> feature_names;
    std::vector<Example> examples;
};

inline ExamplesFile read_examples(const std::string& path) {
    auto in = detail::open_input(path);
    std::string line;
    ExamplesFile f;
    if (!std::getline(in, line) || line.rfind(std::string("#") + kExamplesFormat, 0) != 0)
        throw Error("EXAMPLES_FORMAT", path + ": missing " + kExamplesFormat + " header");
    if (const auto p = line.find("layer="); p != std::string::npos) f.layer = line.substr(p + 6);
    if (!std::getline(in, line)) throw Error("EXAMPLES_FORMAT", path + ": missing column header");
    auto cols = detail::split_csv(line);
    if (cols.size() < 3 || cols[0] != "key" || cols[1] != "at" || cols[2] != "label")
        throw Error("EXAMPLES_FORMAT", path + ": bad column header");
    f.feature_names.assign(cols.begin() + 3, cols.end());
    std::size_t lineno = 2;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto v = detail::split_csv(line);
        if (v.size() != cols.size()) throw Error("EXAMPLES_FORMAT", path + ":" + std::to_string(lineno) + ": field count");
        Example e;
        e.key = v[0];
        const auto at = parse_rfc3339(v[1]);
        const auto label = detail::parse_int(v[2]);
        if (!at || !label || (*label != 0 && *label != 1))
            throw Error("EXAMPLES_FORMAT", path + ":" + std::to_string(lineno) + ": bad timestamp or label");
        e.at = *at;
        e.label = static_cast<int>(*label);
        e.features.reserve(f.feature_names.size());
        for (std::size_t i = 3; i < v.size(); ++i) {
            const auto x = detail::parse_double(v[i]);
            if (!x || !std::isfinite(*x))
                throw Error("EXAMPLES_FORMAT", path + ":" + std::to_string(lineno) + ": non-finite feature");
            e.features.push_back(*x);
        }
        f.examples.push_back(std::move(e));
    }
    return f;
}

} // namespace rrm::features
