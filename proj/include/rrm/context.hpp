#pragma once

// Serving-side state derived during dataset construction: what the overlay build, the
// road forecast and the HTTP service need besides the model bundles.

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "rrm/cellgrid.hpp"
#include "rrm/detail/digest.hpp"
#include "rrm/error.hpp"
#include "rrm/features.hpp"
#include "rrm/ingest.hpp"
#include "rrm/time.hpp"

namespace rrm::context {

using cellgrid::CellId;

inline constexpr const char* kBaselineContextFormat = "rrm-baseline-context-v1";
inline constexpr const char* kSegmentContextFormat = "rrm-segment-context-v1";

struct BaselineContext {
    double grid_res_deg = 0.2;
    int ring = 1;
    features::Period train;
    int eval_year = 0;
    std::vector<CellId> candidate_cells; // ascending
    features::CellHistory history;
    std::vector<ingest::Station> stations; // representative selection, in selection order
    std::map<CellId, std::string> cell_station;
    ingest::Climatology climatology;
};

struct SegmentContext {
    features::Period train;
    int eval_year = 0;
    std::vector<features::SegmentEvent> events; // training-period matched events
};

inline nlohmann::json period_json(const features::Period& p) {
    return {{"begin", format_rfc3339(p.begin)}, {"end", format_rfc3339(p.end)}};
}

inline features::Period period_from(const nlohmann::json& j, const char* code) {
    const auto b = parse_rfc3339(j.at("begin").get<std::string>());
    const auto e = parse_rfc3339(j.at("end").get<std::string>());
    if (!b || !e) throw Error(code, "bad training period");
    return {*b, *e};
}

inline nlohmann::json to_json(const BaselineContext& c) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& cell : c.candidate_cells) cells.push_back(cellgrid::to_token(cell));
    // Sparse history: only cells with events, in cell order.
    std::map<CellId, std::uint32_t> totals(c.history.total.begin(), c.history.total.end());
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& [cell, total] : totals) {
        const auto& how = c.history.by_how.at(cell);
        hist.push_back({{"cell", cellgrid::to_token(cell)}, {"total", total}, {"by_how", how}});
    }
    nlohmann::json stations = nlohmann::json::array();
    for (const auto& s : c.stations) stations.push_back({{"id", s.id}, {"lat", s.loc.lat}, {"lon", s.loc.lon}, {"name", s.name}});
    nlohmann::json map = nlohmann::json::object();
    for (const auto& [cell, st] : c.cell_station) map[cellgrid::to_token(cell)] = st;
    return {{"format", kBaselineContextFormat},
            {"grid_res_deg", c.grid_res_deg},
            {"ring", c.ring},
            {"train", period_json(c.train)},
            {"eval_year", c.eval_year},
            {"candidate_cells", cells},
            {"history", hist},
            {"stations", stations},
            {"cell_station", map},
            {"climatology", ingest::to_json(c.climatology)}};
}

inline CellId cell_from(const nlohmann::json& j, const char* code) {
    const auto c = cellgrid::parse_token(j.get<std::string>());
    if (!c) throw Error(code, "bad cell token " + j.get<std::string>());
    return *c;
}

inline BaselineContext baseline_context_from_json(const nlohmann::json& j) {
    constexpr const char* code = "MODEL_CORRUPT";
    try {
        if (j.at("format") != kBaselineContextFormat) throw Error(code, "unknown baseline context format");
        BaselineContext c;
        c.grid_res_deg = j.at("grid_res_deg").get<double>();
        c.ring = j.at("ring").get<int>();
        c.train = period_from(j.at("train"), code);
        c.eval_year = j.at("eval_year").get<int>();
        for (const auto& t : j.at("candidate_cells")) c.candidate_cells.push_back(cell_from(t, code));
        std::sort(c.candidate_cells.begin(), c.candidate_cells.end());
        for (const auto& h : j.at("history")) {
            const auto cell = cell_from(h.at("cell"), code);
            c.history.total[cell] = h.at("total").get<std::uint32_t>();
            c.history.by_how[cell] = h.at("by_how").get<std::array<std::uint32_t, features::kHoursPerWeek>>();
        }
        for (const auto& s : j.at("stations"))
            c.stations.push_back({s.at("id").get<std::string>(),
                                  {s.at("lat").get<double>(), s.at("lon").get<double>()},
                                  s.value("name", std::string{})});
        for (const auto& [tok, st] : j.at("cell_station").items())
            c.cell_station[cell_from(nlohmann::json(tok), code)] = st.get<std::string>();
        c.climatology = ingest::climatology_from_json(j.at("climatology"));
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw Error(code, std::string("baseline context: ") + e.what());
    }
}

inline nlohmann::json to_json(const SegmentContext& c) {
    nlohmann::json ev = nlohmann::json::array();
    for (const auto& e : c.events)
        ev.push_back({e.segment_id, format_rfc3339(e.at), e.severity, cellgrid::to_token(e.cell)});
    return {{"format", kSegmentContextFormat},
            {"train", period_json(c.train)},
            {"eval_year", c.eval_year},
            {"events", ev}};
}

inline SegmentContext segment_context_from_json(const nlohmann::json& j) {
    constexpr const char* code = "SEGMENTS_CORRUPT";
    try {
        if (j.at("format") != kSegmentContextFormat) throw Error(code, "unknown segment context format");
        SegmentContext c;
        c.train = period_from(j.at("train"), code);
        c.eval_year = j.at("eval_year").get<int>();
        for (const auto& e : j.at("events")) {
            const auto at = parse_rfc3339(e.at(1).get<std::string>());
            if (!at) throw Error(code, "bad event timestamp");
            c.events.push_back({e.at(0).get<std::string>(), *at, e.at(2).get<int>(), cell_from(e.at(3), code)});
        }
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw Error(code, std::string("segment context: ") + e.what());
    }
}

inline void save_json(const nlohmann::json& j, const std::string& path) { detail::write_file(path, j.dump(1) + "\n"); }

inline nlohmann::json load_json(const std::string& path, const char* missing_code, const char* corrupt_code) {
    std::string text;
    try {
        text = detail::read_file(path);
    } catch (const Error&) {
        throw Error(missing_code, "cannot read " + path);
    }
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(corrupt_code, path + ": " + e.what());
    }
}

} // namespace rrm::context
