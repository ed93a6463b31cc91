#pragma once

// Parsing and cleaning of the neutral incident / weather / station / road formats, plus
// representative-station selection and hourly weather climatology.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "rrm/cellgrid.hpp"
#include "rrm/detail/csv.hpp"
#include "rrm/error.hpp"
#include "rrm/geo.hpp"
#include "rrm/time.hpp"

namespace rrm::ingest {

using geo::GeoPoint;

inline const std::vector<std::string> kIncidentColumns = {"id", "timestamp_utc", "lat", "lon", "severity", "source"};
inline const std::vector<std::string> kWeatherColumns = {"station_id",     "timestamp_utc",  "temp_tenths_c",
                                                         "dewpoint_tenths_c", "rh_tenths_pct", "wind_tenths_ms",
                                                         "precip_tenths_mm"};
inline const std::vector<std::string> kStationColumns = {"station_id", "lat", "lon", "name"};
inline constexpr long long kMissingSentinel = -9999;

struct IncidentRecord {
    std::string id;
    UtcTime at;
    GeoPoint loc;
    int severity = 1; // 1..4, 4 = fatal
    std::string source;
    std::size_t line = 0; // source line, 0 when not read from a file
};

struct Station {
    std::string id;
    GeoPoint loc;
    std::string name;
};

struct WeatherHour {
    std::string station_id;
    UtcTime at;
    std::optional<double> temp_c;
    std::optional<double> dewpoint_c;
    std::optional<double> rel_humidity; // fraction
    std::optional<double> wind_ms;
    std::optional<double> precip_mm;
};

// Complete weather covariates as consumed by feature builders.
struct WeatherValues {
    double temp_c = 0.0;
    double dewpoint_c = 0.0;
    double rel_humidity = 0.0;
    double wind_ms = 0.0;
    double precip_mm = 0.0;

    friend bool operator==(const WeatherValues&, const WeatherValues&) = default;
};

inline std::optional<WeatherValues> complete(const WeatherHour& w) {
    if (!w.temp_c || !w.dewpoint_c || !w.rel_humidity || !w.wind_ms || !w.precip_mm) return std::nullopt;
    return WeatherValues{*w.temp_c, *w.dewpoint_c, *w.rel_humidity, *w.wind_ms, *w.precip_mm};
}

enum class RoadClass { primary, secondary, other };

inline const char* to_string(RoadClass c) {
    switch (c) {
    case RoadClass::primary: return "primary";
    case RoadClass::secondary: return "secondary";
    case RoadClass::other: return "other";
    }
    return "other";
}

inline std::optional<RoadClass> parse_road_class(std::string_view s) {
    if (s == "primary") return RoadClass::primary;
    if (s == "secondary") return RoadClass::secondary;
    if (s == "other") return RoadClass::other;
    return std::nullopt;
}

struct RoadFeature {
    std::string road_id;
    RoadClass cls = RoadClass::other;
    geo::Polyline geometry;
};

struct Rejection {
    std::size_t line = 0;
    std::string reason;
    std::string detail;
};

struct Report {
    std::size_t input = 0;
    std::size_t kept = 0;
    std::vector<Rejection> rejections;
    std::map<std::string, std::size_t> by_reason;

    void reject(std::size_t line, std::string reason, std::string detail = {}) {
        ++by_reason[reason];
        rejections.push_back({line, std::move(reason), std::move(detail)});
    }
};

inline nlohmann::json to_json(const Report& r) {
    nlohmann::json rej = nlohmann::json::array();
    for (const auto& x : r.rejections) rej.push_back({{"line", x.line}, {"reason", x.reason}, {"detail", x.detail}});
    return {{"input", r.input}, {"kept", r.kept}, {"dropped", r.input - r.kept}, {"by_reason", r.by_reason},
            {"rejections", rej}};
}

// Each rule can be switched off independently.
struct CleaningConfig {
    int year_min = 1970;
    int year_max = 2100;
    bool drop_out_of_range = true;
    bool drop_null_island = true;
    bool drop_outside_years = true;
    bool drop_duplicates = true;
};

template <class T>
struct Parsed {
    std::vector<T> records;
    Report report;
};

// Drops out-of-range coordinates, (0,0), timestamps outside the year range and repeated ids.
// Order is stable; kept + dropped == input.
inline Parsed<IncidentRecord> clean_incidents(std::vector<IncidentRecord> records, const CleaningConfig& cfg = {}) {
    Parsed<IncidentRecord> out;
    out.report.input = records.size();
    std::unordered_set<std::string> seen;
    for (auto& r : records) {
        const bool in_range = std::isfinite(r.loc.lat) && std::isfinite(r.loc.lon) && r.loc.lat >= -90.0 &&
                              r.loc.lat <= 90.0 && r.loc.lon >= -180.0 && r.loc.lon <= 180.0;
        if (cfg.drop_out_of_range && !in_range) {
            out.report.reject(r.line, "out_of_range", r.id);
            continue;
        }
        if (cfg.drop_null_island && r.loc.lat == 0.0 && r.loc.lon == 0.0) {
            out.report.reject(r.line, "null island", r.id);
            continue;
        }
        const int year = calendar(r.at).year;
        if (cfg.drop_outside_years && (year < cfg.year_min || year > cfg.year_max)) {
            out.report.reject(r.line, "outside_years", r.id);
            continue;
        }
        if (cfg.drop_duplicates && !seen.insert(r.id).second) {
            out.report.reject(r.line, "duplicate", r.id);
            continue;
        }
        if (in_range) r.loc.lon = geo::normalize_lon(r.loc.lon);
        out.records.push_back(std::move(r));
    }
    out.report.kept = out.records.size();
    return out;
}

// Parses incidents.csv and applies the cleaning rules. Malformed rows are itemized in the
// report; a missing file or wrong header throws.
inline Parsed<IncidentRecord> parse_incidents(const std::string& path, const CleaningConfig& cfg = {}) {
    auto in = detail::open_input(path);
    detail::expect_header(in, path, kIncidentColumns);
    Report syntax;
    std::vector<IncidentRecord> raw;
    std::string line;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        detail::strip_cr(line);
        if (line.empty()) continue;
        ++syntax.input;
        const auto f = detail::split_csv(line);
        if (f.size() != kIncidentColumns.size()) {
            syntax.reject(lineno, "field_count", std::to_string(f.size()) + " fields");
            continue;
        }
        IncidentRecord r;
        r.id = f[0];
        r.line = lineno;
        if (r.id.empty()) {
            syntax.reject(lineno, "empty_id");
            continue;
        }
        const auto at = parse_rfc3339(f[1]);
        if (!at) {
            syntax.reject(lineno, "bad_timestamp", f[1]);
            continue;
        }
        r.at = std::chrono::floor<std::chrono::minutes>(*at);
        const auto lat = detail::parse_double(f[2]);
        const auto lon = detail::parse_double(f[3]);
        if (!lat || !lon) {
            syntax.reject(lineno, "malformed_number", f[2] + "," + f[3]);
            continue;
        }
        r.loc = {*lat, *lon};
        const auto sev = detail::parse_int(f[4]);
        if (!sev || *sev < 1 || *sev > 4) {
            syntax.reject(lineno, "bad_severity", f[4]);
            continue;
        }
        r.severity = static_cast<int>(*sev);
        r.source = f[5];
        raw.push_back(std::move(r));
    }
    auto cleaned = clean_incidents(std::move(raw), cfg);
    // Merge syntax rejections with cleaning rejections, ordered by line.
    cleaned.report.input = syntax.input;
    for (const auto& rj : syntax.rejections) ++cleaned.report.by_reason[rj.reason];
    cleaned.report.rejections.insert(cleaned.report.rejections.end(), syntax.rejections.begin(),
                                     syntax.rejections.end());
    std::stable_sort(cleaned.report.rejections.begin(), cleaned.report.rejections.end(),
                     [](const Rejection& a, const Rejection& b) { return a.line < b.line; });
    return cleaned;
}

inline Parsed<Station> parse_stations(const std::string& path) {
    auto in = detail::open_input(path);
    detail::expect_header(in, path, kStationColumns);
    Parsed<Station> out;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        detail::strip_cr(line);
        if (line.empty()) continue;
        ++out.report.input;
        const auto f = detail::split_csv(line);
        if (f.size() != kStationColumns.size()) {
            out.report.reject(lineno, "field_count");
            continue;
        }
        const auto lat = detail::parse_double(f[1]);
        const auto lon = detail::parse_double(f[2]);
        if (f[0].empty() || !lat || !lon) {
            out.report.reject(lineno, "malformed");
            continue;
        }
        if (*lat < -90 || *lat > 90 || *lon < -180 || *lon > 180) {
            out.report.reject(lineno, "out_of_range", f[0]);
            continue;
        }
        if (!seen.insert(f[0]).second) {
            out.report.reject(lineno, "duplicate", f[0]);
            continue;
        }
        out.records.push_back({f[0], GeoPoint{*lat, geo::normalize_lon(*lon)}, f[3]});
    }
    out.report.kept = out.records.size();
    return out;
}

namespace detail_ {
// Tenths-scaled integer field; -9999 means missing. Returns false when unparseable.
inline bool tenths(const std::string& s, std::optional<double>& out) {
    const auto v = rrm::detail::parse_int(s);
    if (!v) return false;
    if (*v == kMissingSentinel)
        out.reset();
    else
        out = static_cast<double>(*v) / 10.0;
    return true;
}
} // namespace detail_

inline Parsed<WeatherHour> parse_weather(const std::string& path) {
    auto in = detail::open_input(path);
    detail::expect_header(in, path, kWeatherColumns);
    Parsed<WeatherHour> out;
    std::string line;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        detail::strip_cr(line);
        if (line.empty()) continue;
        ++out.report.input;
        const auto f = detail::split_csv(line);
        if (f.size() != kWeatherColumns.size()) {
            out.report.reject(lineno, "field_count");
            continue;
        }
        WeatherHour w;
        w.station_id = f[0];
        const auto at = parse_rfc3339(f[1]);
        if (w.station_id.empty() || !at) {
            out.report.reject(lineno, "malformed", f[1]);
            continue;
        }
        w.at = floor_hour(*at);
        std::optional<double> rh_pct;
        if (!detail_::tenths(f[2], w.temp_c) || !detail_::tenths(f[3], w.dewpoint_c) ||
            !detail_::tenths(f[4], rh_pct) || !detail_::tenths(f[5], w.wind_ms) ||
            !detail_::tenths(f[6], w.precip_mm)) {
            out.report.reject(lineno, "malformed_number");
            continue;
        }
        if (rh_pct) w.rel_humidity = *rh_pct / 100.0;
        auto bad = [](const std::optional<double>& v, double lo, double hi) { return v && (*v < lo || *v > hi); };
        if (bad(w.temp_c, -90.0, 60.0) || bad(w.dewpoint_c, -90.0, 60.0) || bad(w.rel_humidity, 0.0, 1.0) ||
            (w.wind_ms && (*w.wind_ms < 0.0 || *w.wind_ms >= 120.0)) || bad(w.precip_mm, 0.0, 1e6)) {
            out.report.reject(lineno, "out_of_range");
            continue;
        }
        out.records.push_back(std::move(w));
    }
    out.report.kept = out.records.size();
    return out;
}

// True when some consecutive pair jumps more than 180 degrees in longitude.
inline bool crosses_antimeridian(const geo::Polyline& p) {
    for (std::size_t i = 1; i < p.points.size(); ++i)
        if (std::abs(p.points[i].lon - p.points[i - 1].lon) > 180.0) return true;
    return false;
}

inline Parsed<RoadFeature> parse_roads(const std::string& path) {
    auto in = detail::open_input(path);
    Parsed<RoadFeature> out;
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        detail::strip_cr(line);
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        ++out.report.input;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            out.report.reject(lineno, "malformed_json", e.what());
            continue;
        }
        if (!j.is_object() || !j.contains("road_id") || !j["road_id"].is_string() || !j.contains("class") ||
            !j["class"].is_string() || !j.contains("coords") || !j["coords"].is_array()) {
            out.report.reject(lineno, "schema");
            continue;
        }
        RoadFeature r;
        r.road_id = j["road_id"].get<std::string>();
        const auto cls = parse_road_class(j["class"].get<std::string>());
        if (r.road_id.empty() || !cls) {
            out.report.reject(lineno, "bad_class", j["class"].get<std::string>());
            continue;
        }
        r.cls = *cls;
        bool ok = true;
        for (const auto& c : j["coords"]) {
            if (!c.is_array() || c.size() != 2 || !c[0].is_number() || !c[1].is_number()) {
                ok = false;
                break;
            }
            const double lon = c[0].get<double>();
            const double lat = c[1].get<double>();
            if (!std::isfinite(lat) || !std::isfinite(lon) || lat < -90 || lat > 90 || lon < -180 || lon > 180) {
                ok = false;
                break;
            }
            r.geometry.points.push_back({lat, lon});
        }
        if (!ok || !r.geometry.valid()) {
            out.report.reject(lineno, "bad_geometry", r.road_id);
            continue;
        }
        if (crosses_antimeridian(r.geometry)) {
            out.report.reject(lineno, "antimeridian", r.road_id);
            continue;
        }
        for (auto& p : r.geometry.points) p.lon = geo::normalize_lon(p.lon);
        if (!seen.insert(r.road_id).second) {
            out.report.reject(lineno, "duplicate", r.road_id);
            continue;
        }
        out.records.push_back(std::move(r));
    }
    out.report.kept = out.records.size();
    return out;
}

// ---- writers (the same neutral formats) ---------------------------------

inline std::ofstream open_output(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("FILE_UNWRITABLE", "cannot write " + path);
    return out;
}

inline std::string fmt_coord(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.7f", v);
    return buf;
}

inline void write_incidents(const std::string& path, const std::vector<IncidentRecord>& rs) {
    auto out = open_output(path);
    out << "id,timestamp_utc,lat,lon,severity,source\n";
    for (const auto& r : rs)
        out << detail::csv_escape(r.id) << ',' << format_rfc3339(r.at) << ',' << fmt_coord(r.loc.lat) << ','
            << fmt_coord(r.loc.lon) << ',' << r.severity << ',' << detail::csv_escape(r.source) << '\n';
}

inline void write_stations(const std::string& path, const std::vector<Station>& ss) {
    auto out = open_output(path);
    out << "station_id,lat,lon,name\n";
    for (const auto& s : ss)
        out << detail::csv_escape(s.id) << ',' << fmt_coord(s.loc.lat) << ',' << fmt_coord(s.loc.lon) << ','
            << detail::csv_escape(s.name) << '\n';
}

inline long long to_tenths(const std::optional<double>& v, double scale = 10.0) {
    return v ? std::llround(*v * scale) : kMissingSentinel;
}

inline void write_weather(const std::string& path, const std::vector<WeatherHour>& ws) {
    auto out = open_output(path);
    out << "station_id,timestamp_utc,temp_tenths_c,dewpoint_tenths_c,rh_tenths_pct,wind_tenths_ms,precip_tenths_mm\n";
    for (const auto& w : ws)
        out << detail::csv_escape(w.station_id) << ',' << format_rfc3339(w.at) << ',' << to_tenths(w.temp_c) << ','
            << to_tenths(w.dewpoint_c) << ',' << to_tenths(w.rel_humidity, 1000.0) << ',' << to_tenths(w.wind_ms)
            << ',' << to_tenths(w.precip_mm) << '\n';
}

inline void write_roads(const std::string& path, const std::vector<RoadFeature>& rs) {
    auto out = open_output(path);
    for (const auto& r : rs) {
        nlohmann::json coords = nlohmann::json::array();
        for (const auto& p : r.geometry.points) coords.push_back({p.lon, p.lat});
        out << nlohmann::json{{"road_id", r.road_id}, {"class", to_string(r.cls)}, {"coords", coords}}.dump()
            << '\n';
    }
}

// ---- representative stations -------------------------------------------

struct StationSelection {
    std::vector<Station> selected;
    std::map<cellgrid::CellId, std::string> cell_station;
};

inline std::size_t nearest_station(const std::vector<Station>& stations, GeoPoint q) {
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t i = 0; i < stations.size(); ++i) {
        const double d = geo::haversine_m(q, stations[i].loc);
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

// Greedy farthest-point selection seeded at the station nearest the centroid of the candidate
// cell centers; each candidate cell is then assigned its nearest selected station.
inline StationSelection representative_stations(const std::vector<Station>& stations,
                                                const std::vector<cellgrid::CellId>& candidate_cells,
                                                const cellgrid::GridSpec& grid, std::size_t max_n) {
    if (stations.empty()) throw Error("NO_STATIONS", "station list is empty");
    GeoPoint centroid{0.0, 0.0};
    if (!candidate_cells.empty()) {
        for (const auto& c : candidate_cells) {
            const auto p = grid.cell_center(c);
            centroid.lat += p.lat;
            centroid.lon += p.lon;
        }
        centroid.lat /= static_cast<double>(candidate_cells.size());
        centroid.lon /= static_cast<double>(candidate_cells.size());
    } else {
        for (const auto& s : stations) {
            centroid.lat += s.loc.lat;
            centroid.lon += s.loc.lon;
        }
        centroid.lat /= static_cast<double>(stations.size());
        centroid.lon /= static_cast<double>(stations.size());
    }
    const std::size_t n = std::min(std::max<std::size_t>(max_n, 1), stations.size());
    std::vector<bool> taken(stations.size(), false);
    std::vector<double> dist(stations.size(), INFINITY);
    std::vector<std::size_t> order;
    std::size_t next = nearest_station(stations, centroid);
    while (order.size() < n) {
        const std::size_t cur = next;
        order.push_back(cur);
        taken[cur] = true;
        double far = -1.0;
        for (std::size_t i = 0; i < stations.size(); ++i) {
            if (taken[i]) continue;
            dist[i] = std::min(dist[i], geo::haversine_m(stations[i].loc, stations[cur].loc));
            if (dist[i] > far) {
                far = dist[i];
                next = i;
            }
        }
        if (far < 0.0) break;
    }
    StationSelection sel;
    for (auto i : order) sel.selected.push_back(stations[i]);
    for (const auto& c : candidate_cells)
        sel.cell_station[c] = sel.selected[nearest_station(sel.selected, grid.cell_center(c))].id;
    return sel;
}

// ---- climatology ---------------------------------------------------------

struct ClimatologyBucket {
    // temp, dewpoint, rh, wind, precip
    std::array<double, 5> mean{};
    std::array<std::size_t, 5> count{};
    std::size_t hours = 0;
    std::size_t wet_hours = 0; // precip_mm > 0 among hours with precip present

    double wet_rate() const { return count[4] ? static_cast<double>(wet_hours) / static_cast<double>(count[4]) : 0.0; }
};

class Climatology {
  public:
    struct Key {
        std::string station;
        unsigned month; // 1..12
        unsigned hour;  // 0..23
        auto operator<=>(const Key&) const = default;
    };

    const std::map<Key, ClimatologyBucket>& buckets() const { return buckets_; }
    std::map<Key, ClimatologyBucket>& buckets() { return buckets_; }

    const ClimatologyBucket* find(const std::string& station, unsigned month, unsigned hour) const {
        const auto it = buckets_.find({station, month, hour});
        return it == buckets_.end() ? nullptr : &it->second;
    }

    // Complete values for (station, month, hour). Variables absent from the bucket are
    // taken from the station's same-month mean, then its all-time mean; nullopt when the
    // station has never reported some variable.
    std::optional<WeatherValues> values(const std::string& station, unsigned month, unsigned hour) const {
        std::array<double, 5> v{};
        std::array<bool, 5> have{};
        if (const auto* b = find(station, month, hour))
            for (int i = 0; i < 5; ++i)
                if (b->count[i]) {
                    v[i] = b->mean[i];
                    have[i] = true;
                }
        auto fill = [&](bool same_month) {
            std::array<double, 5> sum{};
            std::array<std::size_t, 5> cnt{};
            for (auto it = buckets_.lower_bound({station, 0, 0}); it != buckets_.end() && it->first.station == station;
                 ++it) {
                if (same_month && it->first.month != month) continue;
                for (int i = 0; i < 5; ++i) {
                    sum[i] += it->second.mean[i] * static_cast<double>(it->second.count[i]);
                    cnt[i] += it->second.count[i];
                }
            }
            for (int i = 0; i < 5; ++i)
                if (!have[i] && cnt[i]) {
                    v[i] = sum[i] / static_cast<double>(cnt[i]);
                    have[i] = true;
                }
        };
        if (!std::all_of(have.begin(), have.end(), [](bool b) { return b; })) fill(true);
        if (!std::all_of(have.begin(), have.end(), [](bool b) { return b; })) fill(false);
        if (!std::all_of(have.begin(), have.end(), [](bool b) { return b; })) return std::nullopt;
        return WeatherValues{v[0], v[1], v[2], v[3], v[4]};
    }

  private:
    std::map<Key, ClimatologyBucket> buckets_;
};

// Per (station, month, hour-of-day) mean of each present variable plus the wet-hour rate.
// Rows from stations not in `stations` are ignored.
inline Climatology build_climatology(const std::vector<WeatherHour>& weather, const std::vector<Station>& stations) {
    std::unordered_set<std::string> known;
    for (const auto& s : stations) known.insert(s.id);
    std::map<Climatology::Key, std::pair<std::array<double, 5>, ClimatologyBucket>> acc;
    for (const auto& w : weather) {
        if (!known.count(w.station_id)) continue;
        const auto p = calendar(w.at);
        auto& [sum, b] = acc[{w.station_id, p.month, p.hour}];
        ++b.hours;
        const std::array<const std::optional<double>*, 5> vals = {&w.temp_c, &w.dewpoint_c, &w.rel_humidity,
                                                                  &w.wind_ms, &w.precip_mm};
        for (int i = 0; i < 5; ++i)
            if (*vals[i]) {
                sum[i] += **vals[i];
                ++b.count[i];
            }
        if (w.precip_mm && *w.precip_mm > 0.0) ++b.wet_hours;
    }
    Climatology c;
    for (auto& [k, v] : acc) {
        auto& [sum, b] = v;
        for (int i = 0; i < 5; ++i)
            if (b.count[i]) b.mean[i] = sum[i] / static_cast<double>(b.count[i]);
        c.buckets().emplace(k, b);
    }
    return c;
}

inline nlohmann::json to_json(const Climatology& c) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& [k, b] : c.buckets())
        arr.push_back({{"station", k.station}, {"month", k.month}, {"hour", k.hour}, {"mean", b.mean},
                       {"count", b.count}, {"hours", b.hours}, {"wet_hours", b.wet_hours}});
    return arr;
}

inline Climatology climatology_from_json(const nlohmann::json& j) {
    Climatology c;
    for (const auto& e : j) {
        ClimatologyBucket b;
        b.mean = e.at("mean").get<std::array<double, 5>>();
        b.count = e.at("count").get<std::array<std::size_t, 5>>();
        b.hours = e.at("hours").get<std::size_t>();
        b.wet_hours = e.at("wet_hours").get<std::size_t>();
        c.buckets().emplace(Climatology::Key{e.at("station").get<std::string>(), e.at("month").get<unsigned>(),
                                             e.at("hour").get<unsigned>()},
                            b);
    }
    return c;
}

// Observed hourly weather keyed by (station, hour) for exact-hour lookups.
class WeatherArchive {
  public:
    WeatherArchive() = default;
    explicit WeatherArchive(const std::vector<WeatherHour>& rows) {
        for (const auto& w : rows)
            if (auto v = complete(w)) rows_[w.station_id][to_unix(w.at)] = *v;
    }

    std::optional<WeatherValues> at(const std::string& station, UtcTime hour) const {
        const auto s = rows_.find(station);
        if (s == rows_.end()) return std::nullopt;
        const auto it = s->second.find(to_unix(floor_hour(hour)));
        if (it == s->second.end()) return std::nullopt;
        return it->second;
    }

  private:
    std::unordered_map<std::string, std::unordered_map<std::int64_t, WeatherValues>> rows_;
};

} // namespace rrm::ingest
