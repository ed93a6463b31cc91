#pragma once

// Seeded synthetic world: random-walk roads, a jittered station layout with hourly
// weather, and incidents from an hourly Poisson process whose rate carries road class,
// planted hot cells, rain and an hour-of-week profile.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "rrm/cellgrid.hpp"
#include "rrm/error.hpp"
#include "rrm/geo.hpp"
#include "rrm/ingest.hpp"
#include "rrm/rng.hpp"
#include "rrm/time.hpp"

namespace rrm::synth {

using geo::GeoPoint;

struct HotCell {
    GeoPoint at; // any point inside the cell
    double multiplier = 10.0;
};

struct WorldSpec {
    std::uint64_t seed = 42;
    geo::BBox bbox{39.0, -77.0, 41.0, -74.0};
    int road_count = 200;
    double road_len_km_min = 2.0;
    double road_len_km_max = 25.0;
    double road_step_m = 250.0;
    int station_count = 9;
    int first_year = 2019;
    int last_year = 2022;
    double base_rate = 2.0e-4; // incidents per km-hour before multipliers
    int hot_cell_count = 3;    // planted automatically when hot_cells is empty
    double hot_multiplier = 10.0;
    std::vector<HotCell> hot_cells;
    double rain_multiplier = 3.0;
    double grid_res_deg = 0.2;
    double hour_amplitude = 1.3;
    double weekend_factor = 0.7;
    double road_sigma = 1.5; // lognormal spread of per-road rate
    double lateral_sigma_m = 15.0;
    double p_wet_after_dry = 0.03;
    double p_wet_after_wet = 0.7;
    double p_missing = 0.002;
};

inline void validate(const WorldSpec& s) {
    auto bad = [](const std::string& m) { return Error("SPEC_INVALID", m); };
    if (!s.bbox.valid() || !(s.bbox.max_lat > s.bbox.min_lat) || !(s.bbox.max_lon > s.bbox.min_lon))
        throw bad("region bbox is empty");
    if (s.road_count < 1 || s.station_count < 1) throw bad("need at least one road and one station");
    if (!(s.road_len_km_min > 0.0) || s.road_len_km_max < s.road_len_km_min) throw bad("bad road length range");
    if (!(s.road_step_m > 0.0)) throw bad("road step must be positive");
    if (s.last_year < s.first_year) throw bad("year range is empty");
    if (!(s.base_rate > 0.0)) throw bad("base rate must be positive");
    if (s.rain_multiplier < 1.0 || s.hot_multiplier < 1.0) throw bad("multipliers must be >= 1");
    for (const auto& h : s.hot_cells)
        if (h.multiplier < 1.0) throw bad("multipliers must be >= 1");
    if (s.p_wet_after_dry < 0 || s.p_wet_after_dry > 1 || s.p_wet_after_wet < 0 || s.p_wet_after_wet > 1)
        throw bad("precipitation transition probabilities must be in [0,1]");
}

inline WorldSpec spec_from_json(const nlohmann::json& j) {
    WorldSpec s;
    try {
        s.seed = j.value("seed", s.seed);
        if (j.contains("bbox")) {
            const auto b = j["bbox"].get<std::vector<double>>();
            if (b.size() != 4) throw Error("SPEC_INVALID", "bbox is [min_lat, min_lon, max_lat, max_lon]");
            s.bbox = {b[0], b[1], b[2], b[3]};
        }
        s.road_count = j.value("road_count", s.road_count);
        s.road_len_km_min = j.value("road_len_km_min", s.road_len_km_min);
        s.road_len_km_max = j.value("road_len_km_max", s.road_len_km_max);
        s.road_step_m = j.value("road_step_m", s.road_step_m);
        s.station_count = j.value("station_count", s.station_count);
        s.first_year = j.value("first_year", s.first_year);
        s.last_year = j.value("last_year", s.last_year);
        s.base_rate = j.value("base_rate", s.base_rate);
        s.hot_cell_count = j.value("hot_cell_count", s.hot_cell_count);
        s.hot_multiplier = j.value("hot_multiplier", s.hot_multiplier);
        if (j.contains("hot_cells"))
            for (const auto& h : j["hot_cells"])
                s.hot_cells.push_back({{h.at("lat").get<double>(), h.at("lon").get<double>()},
                                       h.value("multiplier", s.hot_multiplier)});
        s.rain_multiplier = j.value("rain_multiplier", s.rain_multiplier);
        s.grid_res_deg = j.value("grid_res_deg", s.grid_res_deg);
        s.hour_amplitude = j.value("hour_amplitude", s.hour_amplitude);
        s.weekend_factor = j.value("weekend_factor", s.weekend_factor);
        s.road_sigma = j.value("road_sigma", s.road_sigma);
        s.lateral_sigma_m = j.value("lateral_sigma_m", s.lateral_sigma_m);
        s.p_wet_after_dry = j.value("p_wet_after_dry", s.p_wet_after_dry);
        s.p_wet_after_wet = j.value("p_wet_after_wet", s.p_wet_after_wet);
        s.p_missing = j.value("p_missing", s.p_missing);
    } catch (const nlohmann::json::exception& e) {
        throw Error("SPEC_INVALID", e.what());
    }
    validate(s);
    return s;
}

struct World {
    std::vector<ingest::RoadFeature> roads;
    std::vector<ingest::Station> stations;
    std::vector<ingest::WeatherHour> weather;
    std::vector<ingest::IncidentRecord> incidents;
    std::vector<HotCell> hot_cells;                       // as planted
    std::vector<std::size_t> source_road;                 // per incident
    std::map<cellgrid::CellId, double> road_km_by_cell;   // exposure per cell
};

inline double round_to(double v, double q) { return std::round(v / q) * q; }

// Hour-of-week rate profile; peak at 17:00 UTC, damped on weekends.
inline double hour_profile(const WorldSpec& s, int how) {
    const int hod = how % 24;
    const int dow = how / 24;
    const double f = std::exp(s.hour_amplitude * std::cos(2.0 * std::numbers::pi * (hod - 17) / 24.0));
    return dow >= 5 ? f * s.weekend_factor : f;
}

namespace detail_ {

inline double class_factor(ingest::RoadClass c) {
    switch (c) {
    case ingest::RoadClass::primary: return 2.0;
    case ingest::RoadClass::secondary: return 1.0;
    case ingest::RoadClass::other: return 0.5;
    }
    return 1.0;
}

inline GeoPoint offset_m(GeoPoint p, double north_m, double east_m) {
    const double lat = p.lat + north_m / geo::kMetersPerDegree;
    const double lon = p.lon + east_m / (geo::kMetersPerDegree * std::cos(p.lat * geo::kDegToRad));
    return {lat, lon};
}

inline ingest::RoadFeature random_road(const WorldSpec& s, Rng& rng, int index) {
    ingest::RoadFeature r;
    char id[16];
    std::snprintf(id, sizeof id, "R%04d", index);
    r.road_id = id;
    const double u = rng.uniform();
    r.cls = u < 0.2 ? ingest::RoadClass::primary : u < 0.55 ? ingest::RoadClass::secondary : ingest::RoadClass::other;
    const double len_m = 1000.0 * rng.uniform(s.road_len_km_min, s.road_len_km_max);
    const int steps = std::max(1, static_cast<int>(std::lround(len_m / s.road_step_m)));
    GeoPoint p{rng.uniform(s.bbox.min_lat, s.bbox.max_lat), rng.uniform(s.bbox.min_lon, s.bbox.max_lon)};
    double heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
    auto quant = [](GeoPoint q) { return GeoPoint{round_to(q.lat, 1e-7), round_to(q.lon, 1e-7)}; };
    r.geometry.points.push_back(quant(p));
    for (int i = 0; i < steps; ++i) {
        heading += rng.normal(0.0, 15.0 * geo::kDegToRad);
        GeoPoint q = offset_m(p, s.road_step_m * std::cos(heading), s.road_step_m * std::sin(heading));
        // Reflect off the region boundary.
        if (q.lat < s.bbox.min_lat || q.lat > s.bbox.max_lat) {
            heading = std::numbers::pi - heading;
            q = offset_m(p, s.road_step_m * std::cos(heading), s.road_step_m * std::sin(heading));
        }
        if (q.lon < s.bbox.min_lon || q.lon > s.bbox.max_lon) {
            heading = -heading;
            q = offset_m(p, s.road_step_m * std::cos(heading), s.road_step_m * std::sin(heading));
        }
        q.lat = std::clamp(q.lat, s.bbox.min_lat, s.bbox.max_lat);
        q.lon = std::clamp(q.lon, s.bbox.min_lon, s.bbox.max_lon);
        p = q;
        r.geometry.points.push_back(quant(p));
    }
    return r;
}

inline std::vector<ingest::Station> station_layout(const WorldSpec& s, Rng& rng) {
    const int n = s.station_count;
    const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
    const int rows = (n + cols - 1) / cols;
    const double h = s.bbox.max_lat - s.bbox.min_lat;
    const double w = s.bbox.max_lon - s.bbox.min_lon;
    std::vector<ingest::Station> out;
    for (int i = 0; i < n; ++i) {
        const int r = i / cols, c = i % cols;
        const double lat = s.bbox.min_lat + h * (r + 0.5 + rng.uniform(-0.2, 0.2)) / rows;
        const double lon = s.bbox.min_lon + w * (c + 0.5 + rng.uniform(-0.2, 0.2)) / cols;
        char id[16];
        std::snprintf(id, sizeof id, "ST%02d", i + 1);
        out.push_back({id, {round_to(lat, 1e-7), round_to(lon, 1e-7)}, "Synthetic station " + std::to_string(i + 1)});
    }
    return out;
}

inline double rel_humidity(double t, double td) {
    auto es = [](double x) { return std::exp(17.625 * x / (243.04 + x)); };
    return std::clamp(es(td) / es(t), 0.0, 1.0);
}

} // namespace detail_

// One station's hourly series over [begin, end).
inline std::vector<ingest::WeatherHour> station_weather(const WorldSpec& s, const ingest::Station& st, int index,
                                                        UtcTime begin, UtcTime end) {
    Rng rng(mix_seed(s.seed, 1000 + static_cast<std::uint64_t>(index)));
    const double offset = rng.normal(0.0, 1.0);
    std::vector<ingest::WeatherHour> out;
    bool wet = false;
    double anomaly = 0.0;
    for (UtcTime t = begin; t < end; t += std::chrono::hours{1}) {
        const auto p = calendar(t);
        const double doy = static_cast<double>((t - year_start(p.year)).count()) / 86400.0;
        anomaly = 0.9 * anomaly + rng.normal(0.0, 0.6);
        const double temp = 12.0 - 12.0 * std::cos(2.0 * std::numbers::pi * (doy - 15.0) / 365.25) +
                            4.0 * std::cos(2.0 * std::numbers::pi * (static_cast<double>(p.hour) - 19.0) / 24.0) +
                            offset + anomaly;
        const double spread = 2.0 + 6.0 * rng.uniform();
        wet = rng.bernoulli(wet ? s.p_wet_after_wet : s.p_wet_after_dry);
        const double precip = wet ? std::max(0.1, round_to(rng.exponential(1.2), 0.1)) : 0.0;
        const double wind = round_to(std::abs(rng.normal(4.0, 2.0)), 0.1);
        ingest::WeatherHour w;
        w.station_id = st.id;
        w.at = t;
        const double tq = round_to(temp, 0.1);
        const double dq = round_to(temp - spread - (wet ? 0.0 : 1.0), 0.1);
        if (!rng.bernoulli(s.p_missing)) w.temp_c = tq;
        if (!rng.bernoulli(s.p_missing)) w.dewpoint_c = dq;
        if (w.temp_c && w.dewpoint_c) w.rel_humidity = round_to(detail_::rel_humidity(tq, dq), 0.001);
        w.wind_ms = wind;
        w.precip_mm = precip;
        out.push_back(std::move(w));
    }
    return out;
}

inline World generate(const WorldSpec& spec) {
    validate(spec);
    const cellgrid::GridSpec grid(spec.grid_res_deg);
    World w;
    Rng road_rng(mix_seed(spec.seed, 1));
    for (int i = 0; i < spec.road_count; ++i) w.roads.push_back(detail_::random_road(spec, road_rng, i));
    Rng st_rng(mix_seed(spec.seed, 2));
    w.stations = detail_::station_layout(spec, st_rng);

    const UtcTime begin = year_start(spec.first_year);
    const UtcTime end = year_start(spec.last_year + 1);
    for (std::size_t i = 0; i < w.stations.size(); ++i) {
        auto sw = station_weather(spec, w.stations[i], static_cast<int>(i), begin, end);
        w.weather.insert(w.weather.end(), std::make_move_iterator(sw.begin()), std::make_move_iterator(sw.end()));
    }

    // Exposure pieces: one per random-walk step.
    struct Piece {
        std::size_t road;
        GeoPoint a, b;
        double km;
        cellgrid::CellId cell;
        double weight; // before hot-cell multiplier
    };
    std::vector<Piece> pieces;
    Rng factor_rng(mix_seed(spec.seed, 3));
    for (std::size_t r = 0; r < w.roads.size(); ++r) {
        const double road_factor =
            std::exp(factor_rng.normal(0.0, spec.road_sigma) - 0.5 * spec.road_sigma * spec.road_sigma);
        const double cf = detail_::class_factor(w.roads[r].cls);
        const auto& pts = w.roads[r].geometry.points;
        for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
            const double km = geo::haversine_m(pts[i], pts[i + 1]) / 1000.0;
            if (km <= 0.0) continue;
            const auto cell = grid.cell_of(geo::lerp(pts[i], pts[i + 1], 0.5));
            pieces.push_back({r, pts[i], pts[i + 1], km, cell, km * cf * road_factor});
            w.road_km_by_cell[cell] += km;
        }
    }

    w.hot_cells = spec.hot_cells;
    if (w.hot_cells.empty() && spec.hot_cell_count > 0) {
        // Plant among the better-covered half of road cells.
        std::vector<std::pair<double, cellgrid::CellId>> ranked;
        for (const auto& [c, km] : w.road_km_by_cell) ranked.push_back({km, c});
        std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
            return a.first != b.first ? a.first > b.first : a.second < b.second;
        });
        ranked.resize(std::max<std::size_t>(ranked.size() / 2, std::min<std::size_t>(ranked.size(), 1)));
        Rng hot_rng(mix_seed(spec.seed, 4));
        hot_rng.shuffle(ranked);
        for (int i = 0; i < spec.hot_cell_count && i < static_cast<int>(ranked.size()); ++i)
            w.hot_cells.push_back({grid.cell_center(ranked[static_cast<std::size_t>(i)].second), spec.hot_multiplier});
    }
    std::map<cellgrid::CellId, double> hot;
    for (const auto& h : w.hot_cells) hot[grid.cell_of(h.at)] = h.multiplier;

    // Group pieces by the station whose precipitation drives them.
    const std::size_t ns = w.stations.size();
    std::vector<std::vector<std::size_t>> by_station(ns);
    std::vector<std::vector<double>> cum(ns);
    for (std::size_t i = 0; i < pieces.size(); ++i) {
        auto& p = pieces[i];
        if (const auto it = hot.find(p.cell); it != hot.end()) p.weight *= it->second;
        const auto s = ingest::nearest_station(w.stations, geo::lerp(p.a, p.b, 0.5));
        by_station[s].push_back(i);
        cum[s].push_back((cum[s].empty() ? 0.0 : cum[s].back()) + p.weight);
    }
    std::array<double, 168> profile{};
    for (int h = 0; h < 168; ++h) profile[static_cast<std::size_t>(h)] = hour_profile(spec, h);

    const std::size_t hours = static_cast<std::size_t>((end - begin) / std::chrono::hours{1});
    Rng inc_rng(mix_seed(spec.seed, 5));
    std::size_t next_id = 1;
    for (std::size_t h = 0; h < hours; ++h) {
        const UtcTime t = begin + std::chrono::hours{static_cast<long>(h)};
        const int how = static_cast<int>(calendar(t).iso_dow) * 24 + static_cast<int>(calendar(t).hour);
        for (std::size_t s = 0; s < ns; ++s) {
            if (cum[s].empty()) continue;
            const auto& wx = w.weather[s * hours + h];
            const bool wet = wx.precip_mm && *wx.precip_mm > 0.0;
            const double lambda = spec.base_rate * cum[s].back() * profile[static_cast<std::size_t>(how)] *
                                  (wet ? spec.rain_multiplier : 1.0);
            const auto n = inc_rng.poisson(lambda);
            for (std::uint32_t k = 0; k < n; ++k) {
                const double target = inc_rng.uniform() * cum[s].back();
                const auto pos = static_cast<std::size_t>(
                    std::upper_bound(cum[s].begin(), cum[s].end(), target) - cum[s].begin());
                const auto& piece = pieces[by_station[s][std::min(pos, by_station[s].size() - 1)]];
                const GeoPoint on = geo::lerp(piece.a, piece.b, inc_rng.uniform());
                // Perpendicular offset to the piece direction.
                const double dn = (piece.b.lat - piece.a.lat) * geo::kMetersPerDegree;
                const double de =
                    (piece.b.lon - piece.a.lon) * geo::kMetersPerDegree * std::cos(piece.a.lat * geo::kDegToRad);
                const double norm = std::hypot(dn, de);
                const double lateral = inc_rng.normal(0.0, spec.lateral_sigma_m);
                GeoPoint loc = detail_::offset_m(on, -de / norm * lateral, dn / norm * lateral);
                loc = {round_to(loc.lat, 1e-7), round_to(loc.lon, 1e-7)};
                const int minute = static_cast<int>(inc_rng.below(60));
                const double u = inc_rng.uniform();
                const int severity = u < 0.55 ? 1 : u < 0.85 ? 2 : u < 0.97 ? 3 : 4;
                char id[16];
                std::snprintf(id, sizeof id, "I%07zu", next_id++);
                w.incidents.push_back({id, t + std::chrono::minutes{minute}, loc, severity,
                                       loc.lon < (spec.bbox.min_lon + spec.bbox.max_lon) / 2 ? "west" : "east", 0});
                w.source_road.push_back(piece.road);
            }
        }
    }
    return w;
}

struct OutputPaths {
    std::string roads, stations, weather, incidents, summary;
};

inline OutputPaths output_paths(const std::string& dir) {
    const std::filesystem::path d(dir);
    return {(d / "roads.ndjson").string(), (d / "stations.csv").string(), (d / "weather.csv").string(),
            (d / "incidents.csv").string(), (d / "world.json").string()};
}

inline nlohmann::json summary_json(const WorldSpec& s, const World& w) {
    nlohmann::json hot = nlohmann::json::array();
    const cellgrid::GridSpec grid(s.grid_res_deg);
    for (const auto& h : w.hot_cells)
        hot.push_back({{"cell", cellgrid::to_token(grid.cell_of(h.at))}, {"multiplier", h.multiplier}});
    return {{"seed", s.seed},
            {"roads", w.roads.size()},
            {"stations", w.stations.size()},
            {"weather_rows", w.weather.size()},
            {"incidents", w.incidents.size()},
            {"years", {s.first_year, s.last_year}},
            {"hot_cells", hot},
            {"rain_multiplier", s.rain_multiplier}};
}

inline OutputPaths write_world(const WorldSpec& s, const World& w, const std::string& dir) {
    std::filesystem::create_directories(dir);
    const auto p = output_paths(dir);
    ingest::write_roads(p.roads, w.roads);
    ingest::write_stations(p.stations, w.stations);
    ingest::write_weather(p.weather, w.weather);
    ingest::write_incidents(p.incidents, w.incidents);
    std::ofstream(p.summary, std::ios::binary | std::ios::trunc) << summary_json(s, w).dump(2) << '\n';
    return p;
}

} // namespace rrm::synth
