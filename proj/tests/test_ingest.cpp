#include <gtest/gtest.h>

#include "rrm/ingest.hpp"
#include "tmpdir.hpp"

using namespace rrm;
using namespace rrm::ingest;

namespace {

const char* kIncHeader = "id,timestamp_utc,lat,lon,severity,source\n";
const char* kWxHeader = "station_id,timestamp_utc,temp_tenths_c,dewpoint_tenths_c,rh_tenths_pct,wind_tenths_ms,precip_tenths_mm\n";

IncidentRecord rec(std::string id, double lat, double lon, int year = 2020) {
    return {std::move(id), make_utc(year, 3, 1, 12), {lat, lon}, 2, "x", 0};
}

} // namespace

TEST(Incidents, WellFormedRow) {
    TempDir d("inc");
    const auto p = d.file("i.csv", std::string(kIncHeader) + "A1,2020-05-01T13:45:00Z,40.5,-75.25,3,west\n");
    const auto r = parse_incidents(p);
    ASSERT_EQ(r.records.size(), 1u);
    EXPECT_EQ(r.records[0].id, "A1");
    EXPECT_EQ(format_rfc3339(r.records[0].at), "2020-05-01T13:45:00Z");
    EXPECT_EQ(r.records[0].loc, (GeoPoint{40.5, -75.25}));
    EXPECT_EQ(r.records[0].severity, 3);
    EXPECT_EQ(r.records[0].source, "west");
}

TEST(Incidents, RejectionsAreItemized) {
    TempDir d("inc");
    const auto p = d.file("i.csv", std::string(kIncHeader) +
                                       "A1,2020-05-01T13:45:00Z,0,0,3,w\n"
                                       "A2,2020-05-01T13:45:00Z,40,-75,3,w\n"
                                       "A2,2020-05-02T13:45:00Z,41,-75,3,w\n"
                                       "A3,not-a-time,40,-75,3,w\n"
                                       "A4,2020-05-01T13:45:00Z,95,-75,3,w\n"
                                       "A5,2020-05-01T13:45:00Z,40,-75,9,w\n"
                                       "A6,2020-05-01T13:45:00Z,40\n");
    const auto r = parse_incidents(p);
    ASSERT_EQ(r.records.size(), 1u);
    EXPECT_EQ(r.records[0].id, "A2");
    EXPECT_EQ(r.report.input, 7u);
    EXPECT_EQ(r.report.kept + r.report.rejections.size(), r.report.input);
    EXPECT_EQ(r.report.by_reason.at("null island"), 1u);
    EXPECT_EQ(r.report.by_reason.at("duplicate"), 1u);
    EXPECT_EQ(r.report.by_reason.at("out_of_range"), 1u);
    EXPECT_EQ(r.report.by_reason.at("bad_timestamp"), 1u);
    EXPECT_EQ(r.report.by_reason.at("bad_severity"), 1u);
    EXPECT_EQ(r.report.by_reason.at("field_count"), 1u);
}

TEST(Incidents, FatalErrors) {
    TempDir d("inc");
    try {
        parse_incidents(d / "nope.csv");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "FILE_MISSING");
    }
    const auto p = d.file("bad.csv", "id,when,lat,lon,severity,source\n");
    try {
        parse_incidents(p);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "MALFORMED_HEADER");
        EXPECT_NE(std::string(e.what()).find(":1:2"), std::string::npos);
    }
}

TEST(Clean, AllValidUnchanged) {
    std::vector<IncidentRecord> rs{rec("a", 40, -75), rec("b", 41, -74), rec("c", -30, 150)};
    const auto out = clean_incidents(rs);
    ASSERT_EQ(out.records.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(out.records[i].id, rs[i].id);
}

TEST(Clean, RulesAndConservation) {
    std::vector<IncidentRecord> rs{rec("a", 95, -75), rec("b", 0, 0), rec("c", 40, -75, 1960), rec("d", 40, -75),
                                   rec("d", 41, -75), rec("e", 40, -75)};
    CleaningConfig cfg;
    cfg.year_min = 2000;
    const auto out = clean_incidents(rs, cfg);
    EXPECT_EQ(out.records.size(), 2u);
    EXPECT_EQ(out.report.kept + out.report.rejections.size(), rs.size());
    cfg.drop_null_island = false;
    EXPECT_EQ(clean_incidents(rs, cfg).records.size(), 3u);
}

TEST(Weather, TenthsAndSentinel) {
    TempDir d("wx");
    const auto p = d.file("w.csv", std::string(kWxHeader) +
                                       "S1,2020-01-01T05:00:00Z,215,-9999,875,31,2\n"
                                       "S1,2020-01-01T06:30:00Z,-50,-80,1000,0,0\n"
                                       "S1,2020-01-01T07:00:00Z,900,0,0,0,0\n"
                                       "S1,2020-01-01T08:00:00Z,abc,0,0,0,0\n");
    const auto r = parse_weather(p);
    ASSERT_EQ(r.records.size(), 2u);
    const auto& w = r.records[0];
    EXPECT_DOUBLE_EQ(*w.temp_c, 21.5);
    EXPECT_FALSE(w.dewpoint_c);
    EXPECT_DOUBLE_EQ(*w.rel_humidity, 0.875);
    EXPECT_DOUBLE_EQ(*w.wind_ms, 3.1);
    EXPECT_DOUBLE_EQ(*w.precip_mm, 0.2);
    EXPECT_EQ(format_rfc3339(r.records[1].at), "2020-01-01T06:00:00Z");
    EXPECT_EQ(r.report.by_reason.at("out_of_range"), 1u);
    EXPECT_EQ(r.report.by_reason.at("malformed_number"), 1u);
}

TEST(Stations, Parse) {
    TempDir d("st");
    const auto p = d.file("s.csv", "station_id,lat,lon,name\nS1,40,-75,One\nS1,41,-75,Dup\nS2,x,-75,Bad\n");
    const auto r = parse_stations(p);
    ASSERT_EQ(r.records.size(), 1u);
    EXPECT_EQ(r.records[0].name, "One");
    EXPECT_EQ(r.report.kept + r.report.rejections.size(), r.report.input);
}

TEST(Roads, ParseAndReject) {
    TempDir d("rd");
    const auto p = d.file("r.ndjson",
                          R"({"road_id":"R1","class":"primary","coords":[[-75,40],[-75,40.01]]})" "\n"
                          R"({"road_id":"R2","class":"freeway","coords":[[-75,40],[-75,40.01]]})" "\n"
                          R"({"road_id":"R3","class":"other","coords":[[-75,40]]})" "\n"
                          R"({"road_id":"R4","class":"other","coords":[[179.9,10],[-179.9,10]]})" "\n"
                          R"(not json)" "\n"
                          R"({"road_id":"R1","class":"secondary","coords":[[-75,40],[-75,40.01]]})" "\n");
    const auto r = parse_roads(p);
    ASSERT_EQ(r.records.size(), 1u);
    EXPECT_EQ(r.records[0].geometry.points.size(), 2u);
    EXPECT_EQ(r.records[0].cls, RoadClass::primary);
    EXPECT_EQ(r.report.by_reason.at("bad_class"), 1u);
    EXPECT_EQ(r.report.by_reason.at("bad_geometry"), 1u);
    EXPECT_EQ(r.report.by_reason.at("antimeridian"), 1u);
    EXPECT_EQ(r.report.by_reason.at("malformed_json"), 1u);
    EXPECT_EQ(r.report.by_reason.at("duplicate"), 1u);
}

TEST(Writers, RoundTrip) {
    TempDir d("wr");
    std::vector<IncidentRecord> inc{rec("a", 40.1234567, -75.7654321), rec("b", 41, -74)};
    write_incidents(d / "i.csv", inc);
    const auto back = parse_incidents(d / "i.csv");
    ASSERT_EQ(back.records.size(), 2u);
    EXPECT_EQ(back.records[0].loc, inc[0].loc);
    std::vector<WeatherHour> wx{{"S", make_utc(2020, 1, 1, 3), 1.5, std::nullopt, 0.5, 2.0, 0.0}};
    write_weather(d / "w.csv", wx);
    const auto wb = parse_weather(d / "w.csv");
    ASSERT_EQ(wb.records.size(), 1u);
    EXPECT_EQ(wb.records[0].temp_c, 1.5);
    EXPECT_FALSE(wb.records[0].dewpoint_c);
    EXPECT_EQ(wb.records[0].rel_humidity, 0.5);
}

TEST(RepresentativeStations, Cases) {
    const cellgrid::GridSpec g(0.2);
    const std::vector<cellgrid::CellId> cells{g.cell_of({40, -75}), g.cell_of({40.5, -75}), g.cell_of({41, -75})};
    std::vector<Station> one{{"A", {40, -70}, "a"}};
    auto s = representative_stations(one, cells, g, 5);
    EXPECT_EQ(s.selected.size(), 1u);
    for (const auto& [c, id] : s.cell_station) EXPECT_EQ(id, "A");
    EXPECT_EQ(s.cell_station.size(), cells.size());

    // Collinear: start at the middle (nearest the centroid); the farthest from it is the
    // first of the two equidistant ends in input order, then the other end, then nothing.
    std::vector<Station> line{{"W", {40.5, -76}, ""}, {"M", {40.5, -75}, ""}, {"E", {40.5, -74}, ""}};
    s = representative_stations(line, cells, g, 3);
    EXPECT_EQ(s.selected.size(), 3u);
    s = representative_stations(line, cells, g, 10);
    EXPECT_EQ(s.selected.size(), 3u);
    EXPECT_THROW(representative_stations({}, cells, g, 3), Error);
}

TEST(RepresentativeStations, CollinearPicksEndpointsWhenCentroidAtEnd) {
    // Hand trace: candidate centroid sits on the west end, so the greedy start is W and the
    // farthest remaining station is E.
    const cellgrid::GridSpec g(0.2);
    const std::vector<cellgrid::CellId> cells{g.cell_of({40.5, -76.0})};
    std::vector<Station> line{{"W", {40.5, -76.0}, ""}, {"M", {40.5, -75.0}, ""}, {"E", {40.5, -74.0}, ""}};
    const auto s = representative_stations(line, cells, g, 2);
    ASSERT_EQ(s.selected.size(), 2u);
    EXPECT_EQ(s.selected[0].id, "W");
    EXPECT_EQ(s.selected[1].id, "E");
}

TEST(RepresentativeStations, Deterministic) {
    const cellgrid::GridSpec g(0.2);
    Rng rng(4);
    std::vector<Station> st;
    for (int i = 0; i < 40; ++i) st.push_back({"S" + std::to_string(i), {rng.uniform(39, 41), rng.uniform(-77, -74)}, ""});
    std::vector<cellgrid::CellId> cells;
    for (int i = 0; i < 50; ++i) cells.push_back(g.cell_of({rng.uniform(39, 41), rng.uniform(-77, -74)}));
    const auto a = representative_stations(st, cells, g, 9), b = representative_stations(st, cells, g, 9);
    EXPECT_EQ(a.cell_station, b.cell_station);
    ASSERT_EQ(a.selected.size(), 9u);
}

TEST(Climatology, Means) {
    std::vector<Station> st{{"S", {40, -75}, ""}};
    std::vector<WeatherHour> one{{"S", make_utc(2020, 1, 1, 3), 10.0, 5.0, 0.5, 2.0, 0.0}};
    auto c = build_climatology(one, st);
    auto v = c.values("S", 1, 3);
    ASSERT_TRUE(v);
    EXPECT_EQ(v->temp_c, 10.0);
    EXPECT_EQ(v->dewpoint_c, 5.0);

    std::vector<WeatherHour> two{{"S", make_utc(2020, 1, 1, 3), 10.0, std::nullopt, 0.5, 2.0, 0.0},
                                 {"S", make_utc(2021, 1, 9, 3), 20.0, 4.0, 0.7, 2.0, 1.2}};
    c = build_climatology(two, st);
    const auto* b = c.find("S", 1, 3);
    ASSERT_TRUE(b);
    EXPECT_DOUBLE_EQ(b->mean[0], 15.0);
    EXPECT_EQ(b->count[0], 2u);
    EXPECT_DOUBLE_EQ(b->mean[1], 4.0);
    EXPECT_EQ(b->count[1], 1u);
    EXPECT_DOUBLE_EQ(b->wet_rate(), 0.5);
    EXPECT_FALSE(c.values("T", 1, 3));
}

TEST(Climatology, MeansBoundedByObservations) {
    std::vector<Station> st{{"S", {40, -75}, ""}};
    Rng rng(8);
    std::vector<WeatherHour> wx;
    for (int d = 0; d < 60; ++d)
        for (unsigned h = 0; h < 24; ++h)
            wx.push_back({"S", make_utc(2020, 1, 1, h) + std::chrono::hours{24 * d}, rng.uniform(-20, 30), rng.uniform(-25, 20),
                          rng.uniform(), rng.uniform(0, 15), rng.below(5) ? 0.0 : rng.uniform(0, 5)});
    const auto c = build_climatology(wx, st);
    for (const auto& [k, b] : c.buckets()) {
        double lo = 1e9, hi = -1e9;
        for (const auto& w : wx) {
            const auto p = calendar(w.at);
            if (p.month == k.month && p.hour == k.hour) {
                lo = std::min(lo, *w.temp_c);
                hi = std::max(hi, *w.temp_c);
            }
        }
        EXPECT_GE(b.mean[0], lo - 1e-9);
        EXPECT_LE(b.mean[0], hi + 1e-9);
    }
}
