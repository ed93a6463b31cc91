#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "rrm/pipeline.hpp"
#include "rrm/synth.hpp"

using namespace rrm;
using namespace rrm::features;
using geo::GeoPoint;

namespace {

ingest::WeatherValues dry() { return {10.0, 5.0, 0.6, 3.0, 0.0}; }

segments::RoadSegment seg_at(GeoPoint a, GeoPoint b, ingest::RoadClass cls = ingest::RoadClass::secondary) {
    ingest::RoadFeature r{"R", cls, geo::Polyline{{a, b}}};
    return segments::segment_road(r, 1e9)[0];
}

synth::WorldSpec small_world(std::uint64_t seed) {
    synth::WorldSpec s;
    s.seed = seed;
    s.bbox = {39.0, -76.0, 39.6, -75.4};
    s.road_count = 25;
    s.station_count = 3;
    s.first_year = 2019;
    s.last_year = 2021;
    s.base_rate = 1e-3;
    return s;
}

} // namespace

TEST(Cyc, Examples) {
    auto c = cyc_encode(0, 24);
    EXPECT_EQ(c.sin, 0.0);
    EXPECT_EQ(c.cos, 1.0);
    c = cyc_encode(6, 24);
    EXPECT_NEAR(c.sin, 1.0, 1e-15);
    EXPECT_NEAR(c.cos, 0.0, 1e-15);
    c = cyc_encode(3, 12);
    EXPECT_NEAR(c.sin, 1.0, 1e-15);
    EXPECT_NEAR(c.cos, 0.0, 1e-15);
    EXPECT_THROW(cyc_encode(1, 0), Error);
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
        const auto e = cyc_encode(rng.uniform(-1000, 1000), rng.uniform(0.1, 400));
        EXPECT_NEAR(e.sin * e.sin + e.cos * e.cos, 1.0, 1e-12);
    }
}

TEST(HourOfWeekTest, CalendarChecks) {
    EXPECT_EQ(hour_of_week(make_utc(2023, 1, 2, 0)).value, 0);
    EXPECT_EQ(hour_of_week(make_utc(2023, 1, 8, 23)).value, 167);
    EXPECT_EQ(hour_of_week(make_utc(2024, 2, 29, 13, 59)).value, 3 * 24 + 13);
    for (int h = 0; h < 24 * 30; ++h) {
        const auto t = make_utc(2021, 6, 1, 0) + std::chrono::hours{h};
        const auto v = hour_of_week(t).value;
        EXPECT_GE(v, 0);
        EXPECT_LT(v, 168);
        EXPECT_EQ(v % 24, static_cast<int>(calendar(t).hour));
    }
}

TEST(History, Examples) {
    const cellgrid::CellId c{10, 20}, d{11, 20};
    const Period train{year_start(2019), year_start(2021)};
    EXPECT_TRUE(build_cell_history({}, train).total.empty());
    // 2023-01-02 is a Monday, so 05:00 is HOW 5.
    const Period wide{year_start(2019), year_start(2024)};
    std::vector<CellEvent> ev{{c, make_utc(2023, 1, 2, 5, 30)}};
    auto h = build_cell_history(ev, wide);
    EXPECT_EQ(h.total_of(c), 1u);
    EXPECT_EQ(h.same_how(c, 5), 1u);
    EXPECT_EQ(h.same_how(c, 6), 0u);
    EXPECT_EQ(h.total_of(d), 0u);
    h = build_cell_history(ev, train);
    EXPECT_EQ(h.total_of(c), 0u);
}

TEST(History, SameHowBoundedByTotal) {
    Rng rng(2);
    std::vector<CellEvent> ev;
    for (int i = 0; i < 2000; ++i)
        ev.push_back({{static_cast<std::int32_t>(rng.below(5)), 0}, year_start(2019) + std::chrono::hours{rng.below(24 * 365 * 2)}});
    const auto h = build_cell_history(ev, {year_start(2019), year_start(2021)});
    std::uint32_t all = 0;
    for (const auto& [c, t] : h.total) {
        std::uint32_t s = 0;
        for (int w = 0; w < 168; ++w) {
            EXPECT_LE(h.same_how(c, w), t);
            s += h.same_how(c, w);
        }
        EXPECT_EQ(s, t);
        all += t;
    }
    EXPECT_EQ(all, 2000u);
}

TEST(Baseline, LayoutAndZeroHistory) {
    const cellgrid::GridSpec g(0.2);
    const auto cell = g.cell_of({40.05, -75.05});
    const auto f = baseline_features(cell, TimeParts::of(make_utc(2023, 1, 2, 0)), CellHistory{}, g, dry());
    ASSERT_EQ(f.size(), 16u);
    EXPECT_EQ(kBaselineFeatureNames.size(), 16u);
    const auto ctr = g.cell_center(cell);
    EXPECT_DOUBLE_EQ(f[0], ctr.lat / 90);
    EXPECT_DOUBLE_EQ(f[1], ctr.lon / 180);
    const double want[] = {0, 1, 0, 1};
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(f[2 + i], want[i], 1e-15);
    EXPECT_EQ(f[8], 0.0);
    EXPECT_EQ(f[9], 0.0);
    EXPECT_EQ(f[10], 10.0);
    EXPECT_EQ(f[14], 0.0);
    auto wet = dry();
    wet.precip_mm = 0.2;
    const auto g2 = baseline_features(cell, TimeParts::of(make_utc(2023, 1, 2, 0)), CellHistory{}, g, wet);
    EXPECT_EQ(g2[14], 1.0);
    EXPECT_EQ(g2[15], 0.2);
}

TEST(Baseline, HistorySlots) {
    const cellgrid::GridSpec g(0.2);
    const auto cell = g.cell_of({40.05, -75.05});
    std::vector<CellEvent> ev;
    for (int i = 0; i < 3; ++i) ev.push_back({cell, make_utc(2020, 1, 6, 5) + std::chrono::hours{168 * i}});
    ev.push_back({cell, make_utc(2020, 1, 6, 9)});
    const auto h = build_cell_history(ev, {year_start(2019), year_start(2021)});
    const auto t = TimeParts::of(make_utc(2020, 3, 2, 5)); // Monday 05:00
    auto f = baseline_features(cell, t, h, g, dry());
    EXPECT_DOUBLE_EQ(f[8], std::log(5.0));
    EXPECT_DOUBLE_EQ(f[9], std::log(4.0));
    f = baseline_features(cell, t, h, g, dry(), OwnHour{1, 0, 0});
    EXPECT_DOUBLE_EQ(f[8], std::log(4.0));
    EXPECT_DOUBLE_EQ(f[9], std::log(3.0));
}

TEST(Segment, LayoutAndNeverHit) {
    const cellgrid::GridSpec g(0.2);
    const auto s = seg_at({40.0, -75.0}, {40.01, -75.0}, ingest::RoadClass::primary);
    const auto f = segment_features(s, TimeParts::of(make_utc(2022, 4, 1, 12)), SegmentHistory{}, g, dry());
    ASSERT_EQ(f.size(), 26u);
    EXPECT_EQ(kSegmentFeatureNames.size(), 26u);
    EXPECT_DOUBLE_EQ(f[0], std::log1p(s.length_m));
    EXPECT_EQ(f[4] + f[5] + f[6], 1.0);
    EXPECT_EQ(f[4], 1.0);
    for (int i : {15, 16, 18, 19}) EXPECT_EQ(f[static_cast<std::size_t>(i)], 0.0);
    EXPECT_NEAR(f[2], 0.0, 1e-9); // due north
    EXPECT_NEAR(f[3], 1.0, 1e-9);
}

TEST(Segment, HistorySlots) {
    const cellgrid::GridSpec g(0.2);
    const auto s = seg_at({40.0, -75.0}, {40.01, -75.0});
    const auto cell = g.cell_of(s.midpoint);
    std::vector<SegmentEvent> ev{{s.segment_id, make_utc(2020, 1, 6, 5), 2, cell},
                                 {s.segment_id, make_utc(2020, 1, 13, 5), 4, cell},
                                 {"other", make_utc(2020, 1, 13, 5), 1, cell},
                                 {s.segment_id, make_utc(2021, 1, 13, 5), 4, cell}};
    const auto h = build_segment_history(ev, {year_start(2019), year_start(2021)});
    const auto t = TimeParts::of(make_utc(2020, 1, 23, 5)); // 10 days after the last event
    const auto f = segment_features(s, t, h, g, dry());
    EXPECT_DOUBLE_EQ(f[15], std::log(3.0));
    EXPECT_DOUBLE_EQ(f[16], 0.0); // Thursday
    EXPECT_DOUBLE_EQ(f[17], std::log(4.0));
    EXPECT_DOUBLE_EQ(f[18], 3.0);
    EXPECT_NEAR(f[19], std::exp(-10.0 / 30.0), 1e-12);
    // Before any event the recency slot is empty.
    const auto f0 = segment_features(s, TimeParts::of(make_utc(2019, 6, 1, 0)), h, g, dry());
    EXPECT_EQ(f0[19], 0.0);
    // At the event hour itself only the earlier event counts.
    const auto f1 = segment_features(s, TimeParts::of(make_utc(2020, 1, 13, 5)), h, g, dry(), OwnHour{1, 4, 2});
    EXPECT_DOUBLE_EQ(f1[15], std::log(2.0));
    EXPECT_DOUBLE_EQ(f1[16], std::log(2.0));
    EXPECT_DOUBLE_EQ(f1[17], std::log(2.0));
    EXPECT_DOUBLE_EQ(f1[18], 2.0);
    EXPECT_NEAR(f1[19], std::exp(-7.0 / 30.0), 1e-12);
}

TEST(Features, AlwaysFinite) {
    const cellgrid::GridSpec g(0.2);
    Rng rng(6);
    for (int i = 0; i < 500; ++i) {
        const GeoPoint a{rng.uniform(-80, 80), rng.uniform(-179, 179)};
        const auto s = seg_at(a, {a.lat + rng.uniform(-0.01, 0.01), a.lon + rng.uniform(-0.01, 0.01)});
        const auto t = TimeParts::of(year_start(2000) + std::chrono::hours{rng.below(24 * 365 * 30)});
        const ingest::WeatherValues w{rng.uniform(-40, 45), rng.uniform(-40, 30), rng.uniform(), rng.uniform(0, 30),
                                      rng.uniform(0, 50)};
        for (double v : segment_features(s, t, SegmentHistory{}, g, w)) EXPECT_TRUE(std::isfinite(v));
        for (double v : baseline_features(g.cell_of(a), t, CellHistory{}, g, w)) EXPECT_TRUE(std::isfinite(v));
    }
}

TEST(Sampling, RatioExclusionDeterminism) {
    Rng rng(7);
    std::vector<std::uint64_t> pos;
    for (int i = 0; i < 300; ++i) pos.push_back(rng.below(10000));
    std::set<std::uint64_t> ps(pos.begin(), pos.end());
    for (std::uint64_t space : {10000ull, 2000ull}) {
        if (space < ps.size() * 6 || *ps.rbegin() >= space) continue;
        const auto a = build_examples(pos, space, 5, 99);
        std::size_t np = 0, nn = 0;
        std::set<std::uint64_t> negs;
        for (const auto& k : a) {
            if (k.label) {
                ++np;
                EXPECT_TRUE(ps.count(k.key));
            } else {
                ++nn;
                EXPECT_FALSE(ps.count(k.key));
                EXPECT_TRUE(negs.insert(k.key).second);
                EXPECT_LT(k.key, space);
            }
        }
        EXPECT_EQ(np, ps.size());
        EXPECT_EQ(nn, 5 * ps.size());
        EXPECT_EQ(a, build_examples(pos, space, 5, 99));
        EXPECT_NE(a, build_examples(pos, space, 5, 100));
    }
}

TEST(Sampling, DensePathAndTooSmall) {
    const auto a = build_examples({0, 1}, 12, 5, 1);
    EXPECT_EQ(a.size(), 12u);
    try {
        build_examples({0, 1}, 11, 5, 1);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "CANDIDATES_TOO_SMALL");
        EXPECT_NE(std::string(e.what()).find("12"), std::string::npos);
    }
    EXPECT_THROW(build_examples({0}, 10, 0, 1), Error);
}

TEST(Sampling, UniformInclusion) {
    // 100-key space, 5 positives, k=1 so 5 of 95 free keys are drawn per run.
    const std::vector<std::uint64_t> pos{3, 17, 42, 60, 99};
    std::vector<int> hits(100, 0);
    const int runs = 1000;
    for (int r = 0; r < runs; ++r)
        for (const auto& k : build_examples(pos, 100, 1, static_cast<std::uint64_t>(r) * 7919 + 1))
            if (!k.label) ++hits[k.key];
    const double p = 5.0 / 95.0, mu = runs * p, sd = std::sqrt(runs * p * (1 - p));
    for (std::uint64_t key = 0; key < 100; ++key) {
        if (std::count(pos.begin(), pos.end(), key)) {
            EXPECT_EQ(hits[key], 0);
            continue;
        }
        EXPECT_NEAR(hits[key], mu, 3 * sd + 1) << key;
    }
}

TEST(Split, ByYear) {
    std::vector<Example> ex;
    for (int y = 2016; y <= 2020; ++y) ex.push_back({"k", make_utc(y, 7, 1, 0), {}, 1});
    const auto s = split_by_year(ex, 2020);
    EXPECT_EQ(s.train.size(), 4u);
    ASSERT_EQ(s.eval.size(), 1u);
    EXPECT_EQ(calendar(s.eval[0].at).year, 2020);
    for (const auto& e : s.train) EXPECT_LT(calendar(e.at).year, 2020);
    EXPECT_THROW(split_by_year(ex, 2019), Error);
    try {
        split_by_year(ex, 2015);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "SPLIT_INVALID");
    }
    try {
        split_by_year({ex[4]}, 2020);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), "SPLIT_EMPTY");
    }
}

TEST(Leakage, EvalYearEventsNeverTouchTrainingRows) {
    const auto spec = small_world(13);
    const auto world = synth::generate(spec);
    pipeline::PipelineConfig cfg;
    cfg.first_year = 2019;
    cfg.last_year = 2021;
    cfg.max_stations = 3;
    auto mutated = world.incidents;
    Rng rng(77);
    std::size_t moved = 0;
    for (auto& r : mutated)
        if (calendar(r.at).year == 2021) {
            r.loc = {r.loc.lat + rng.uniform(-0.05, 0.05), r.loc.lon + rng.uniform(-0.05, 0.05)};
            r.at = r.at + std::chrono::hours{rng.below(200)} - std::chrono::hours{100};
            if (calendar(r.at).year != 2021) r.at = make_utc(2021, 6, 1, 3);
            ++moved;
        }
    ASSERT_GT(moved, 10u);
    const auto a = pipeline::build_baseline_dataset(cfg, world.incidents, world.stations, world.weather);
    const auto b = pipeline::build_baseline_dataset(cfg, mutated, world.stations, world.weather);
    const auto sa = split_by_year(a.examples, 2021), sb = split_by_year(b.examples, 2021);
    ASSERT_EQ(sa.train.size(), sb.train.size());
    for (std::size_t i = 0; i < sa.train.size(); ++i) {
        ASSERT_EQ(sa.train[i].key, sb.train[i].key);
        ASSERT_EQ(sa.train[i].at, sb.train[i].at);
        ASSERT_EQ(sa.train[i].label, sb.train[i].label);
        ASSERT_EQ(sa.train[i].features, sb.train[i].features);
    }
    // Eval rows read history from the training years only.
    for (const auto& e : sa.eval) EXPECT_LE(e.features[8], std::log1p(static_cast<double>(world.incidents.size())));
}

TEST(Leakage, EvalYearEventsAbsentFromHistory) {
    const auto world = synth::generate(small_world(5));
    pipeline::PipelineConfig cfg;
    cfg.first_year = 2019;
    cfg.last_year = 2021;
    cfg.max_stations = 3;
    const auto ds = pipeline::build_baseline_dataset(cfg, world.incidents, world.stations, world.weather);
    std::uint64_t hist = 0, train_events = 0;
    for (const auto& [c, n] : ds.context.history.total) hist += n;
    for (const auto& r : world.incidents) train_events += calendar(r.at).year < 2021;
    EXPECT_EQ(hist, train_events);
}

TEST(Dataset, TrainingPositivesExcludeOwnHour) {
    const auto world = synth::generate(small_world(9));
    pipeline::PipelineConfig cfg;
    cfg.first_year = 2019;
    cfg.last_year = 2021;
    cfg.max_stations = 3;
    const auto ds = pipeline::build_baseline_dataset(cfg, world.incidents, world.stations, world.weather);
    const cellgrid::GridSpec g(cfg.grid_res_deg);
    std::map<std::pair<std::string, std::int64_t>, std::uint32_t> own;
    for (const auto& r : world.incidents)
        if (calendar(r.at).year < 2021) ++own[{cellgrid::to_token(g.cell_of(r.loc)), pipeline::unix_hour(r.at)}];
    std::size_t checked = 0;
    for (const auto& e : ds.examples) {
        if (calendar(e.at).year >= 2021) continue;
        const auto cell = *cellgrid::parse_token(e.key);
        const auto it = own.find({e.key, pipeline::unix_hour(e.at)});
        const double n = it == own.end() ? 0 : it->second;
        EXPECT_EQ(e.label, n > 0 ? 1 : 0);
        EXPECT_DOUBLE_EQ(e.features[8], std::log1p(ds.context.history.total_of(cell) - n));
        ++checked;
    }
    EXPECT_GT(checked, 100u);
    EXPECT_EQ(ds.positives * cfg.neg_ratio, ds.negatives);
}
