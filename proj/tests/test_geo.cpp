#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rrm/geo.hpp"

using namespace rrm;
using geo::GeoPoint;
using geo::Polyline;

TEST(Haversine, IdentityIsZero) { EXPECT_EQ(geo::haversine_m({40, -75}, {40, -75}), 0.0); }

TEST(Haversine, OneDegreeOfEquator) {
    // 2*pi*R/360
    EXPECT_NEAR(geo::haversine_m({0, 0}, {0, 1}), 2 * std::numbers::pi * 6371008.8 / 360, 1e-6);
    EXPECT_NEAR(geo::haversine_m({0, 0}, {0, 1}), 111195, 1);
}

TEST(Haversine, PoleToPoleIsHalfCircumference) {
    // pi * R with R = 6,371,008.8 m is 20,015,114.4 m.
    EXPECT_NEAR(geo::haversine_m({90, 0}, {-90, 0}), std::numbers::pi * 6371008.8, 1e-6);
}

TEST(Haversine, SymmetricAndTriangle) {
    Rng rng(11);
    for (int i = 0; i < 2000; ++i) {
        GeoPoint a{rng.uniform(-89, 89), rng.uniform(-180, 180)};
        GeoPoint b{rng.uniform(-89, 89), rng.uniform(-180, 180)};
        GeoPoint c{rng.uniform(-89, 89), rng.uniform(-180, 180)};
        const double ab = geo::haversine_m(a, b);
        EXPECT_DOUBLE_EQ(ab, geo::haversine_m(b, a));
        EXPECT_GE(ab, 0.0);
        const double ac = geo::haversine_m(a, c), cb = geo::haversine_m(c, b);
        EXPECT_LE(ab, (ac + cb) * (1 + 1e-6));
    }
}

TEST(PolylineLength, Cases) {
    EXPECT_EQ(geo::polyline_length_m(Polyline{{{1, 1}, {1, 1}}}), 0.0);
    EXPECT_NEAR(geo::polyline_length_m(Polyline{{{0, 0}, {0, 1}}}), 111195, 1);
    EXPECT_NEAR(geo::polyline_length_m(Polyline{{{0, 0}, {0, 1}, {0, 2}}}), 222390, 2);
}

TEST(PointToPolyline, OnVertexIsZero) {
    Polyline p{{{40, -75}, {40.01, -75}, {40.01, -74.99}}};
    EXPECT_NEAR(geo::point_to_polyline_m({40.01, -75}, p).distance_m, 0.0, 1e-9);
}

TEST(PointToPolyline, PerpendicularFromSpanMidpoint) {
    // 1 km north-south span; q is 100 m due east of its midpoint.
    const double dlat = 1000.0 / (6371008.8 * std::numbers::pi / 180);
    Polyline p{{{40.0, -75.0}, {40.0 + dlat, -75.0}}};
    const double mid = 40.0 + dlat / 2;
    const double dlon = 100.0 / (6371008.8 * std::numbers::pi / 180 * std::cos(mid * std::numbers::pi / 180));
    const auto r = geo::point_to_polyline_m({mid, -75.0 + dlon}, p);
    EXPECT_NEAR(r.distance_m, 100.0, 0.1);
    EXPECT_EQ(r.span, 0u);
}

TEST(PointToPolyline, PastEndpointMatchesHaversine) {
    Polyline p{{{40.0, -75.0}, {40.01, -75.0}}};
    const GeoPoint q{40.02, -75.0};
    const double expect = oracle::great_circle_m(q, {40.01, -75.0});
    EXPECT_NEAR(geo::point_to_polyline_m(q, p).distance_m, expect, expect * 1e-3);
    EXPECT_NEAR(oracle::dense_distance_m(q, p), expect, expect * 1e-3);
}

TEST(PointToPolyline, TieGoesToLowestSpan) {
    // q equidistant from two spans of a symmetric V.
    Polyline p{{{40.0, -75.01}, {40.0, -75.0}, {40.0, -74.99}}};
    const auto r = geo::point_to_polyline_m({40.001, -75.0}, p);
    EXPECT_EQ(r.span, 0u);
}

TEST(PointToPolyline, NeverExceedsVertexDistance) {
    Rng rng(5);
    for (int i = 0; i < 500; ++i) {
        const GeoPoint s{rng.uniform(-60, 60), rng.uniform(-170, 170)};
        const auto p = oracle::random_polyline(rng, s, 2 + static_cast<int>(rng.below(6)), 800);
        const GeoPoint q{s.lat + rng.uniform(-0.02, 0.02), s.lon + rng.uniform(-0.02, 0.02)};
        const double d = geo::point_to_polyline_m(q, p).distance_m;
        for (const auto& v : p.points) EXPECT_LE(d, geo::haversine_m(q, v) * (1 + 2e-3) + 1e-9);
    }
}

TEST(PointToPolyline, DenseOracleAgreement) {
    Rng rng(77);
    int checked = 0;
    while (checked < 300) {
        const GeoPoint s{rng.uniform(-60, 60), rng.uniform(-170, 170)};
        const auto p = oracle::random_polyline(rng, s, 2 + static_cast<int>(rng.below(5)), 1500);
        const GeoPoint q{s.lat + rng.uniform(-0.03, 0.03), s.lon + rng.uniform(-0.03, 0.03)};
        const double truth = oracle::dense_distance_m(q, p);
        if (truth < 20 || truth >= 5000) continue;
        EXPECT_NEAR(geo::point_to_polyline_m(q, p).distance_m, truth, truth * 0.005);
        ++checked;
    }
}

TEST(Bearing, Cardinals) {
    EXPECT_NEAR(geo::bearing_deg({0, 0}, {1, 0}).degrees, 0.0, 1e-12);
    EXPECT_NEAR(geo::bearing_deg({0, 0}, {0, 1}).degrees, 90.0, 0.01);
    EXPECT_NEAR(geo::bearing_deg({0, 0}, {-1, 0}).degrees, 180.0, 1e-9);
    EXPECT_NEAR(geo::bearing_deg({0, 0}, {0, -1}).degrees, 270.0, 0.01);
    const auto d = geo::bearing_deg({3, 4}, {3, 4});
    EXPECT_EQ(d.degrees, 0.0);
    EXPECT_TRUE(d.degenerate);
}

TEST(Bearing, AlwaysInRange) {
    Rng rng(3);
    for (int i = 0; i < 5000; ++i) {
        const auto b = geo::bearing_deg({rng.uniform(-80, 80), rng.uniform(-180, 180)},
                                        {rng.uniform(-80, 80), rng.uniform(-180, 180)});
        EXPECT_GE(b.degrees, 0.0);
        EXPECT_LT(b.degrees, 360.0);
    }
}

TEST(Tiles, KnownCoordinates) {
    EXPECT_EQ(geo::tile_for({0, 0}, 0).tile, (geo::TileCoord{0, 0, 0}));
    EXPECT_EQ(geo::tile_for({0, 0}, 1).tile, (geo::TileCoord{1, 1, 1}));
    EXPECT_EQ(geo::tile_for({85.0511, -180}, 2).tile, (geo::TileCoord{2, 0, 0}));
}

TEST(Tiles, ClampFlag) {
    const auto t = geo::tile_for({89.0, 10.0}, 3);
    EXPECT_TRUE(t.clamped);
    EXPECT_EQ(t.tile.y, 0u);
    EXPECT_FALSE(geo::tile_for({45.0, 10.0}, 3).clamped);
    EXPECT_THROW(geo::tile_for({0, 0}, 23), Error);
}

TEST(Tiles, BoundsOfZoomZeroCoverWorld) {
    const auto b = geo::tile_bounds({0, 0, 0});
    EXPECT_NEAR(b.min_lon, -180, 1e-12);
    EXPECT_NEAR(b.max_lon, 180, 1e-12);
    EXPECT_NEAR(b.max_lat, 85.0511287798, 1e-9);
    EXPECT_NEAR(b.min_lat, -85.0511287798, 1e-9);
}

TEST(Tiles, RoundTripProperty) {
    Rng rng(99);
    for (int i = 0; i < 10000; ++i) {
        const GeoPoint q{rng.uniform(-85.05, 85.05), rng.uniform(-180, 180)};
        const int z = static_cast<int>(rng.below(23));
        const auto t = geo::tile_for(q, z).tile;
        EXPECT_TRUE(geo::tile_bounds(t).contains(q)) << q.lat << "," << q.lon << " z" << z;
        EXPECT_EQ(geo::tile_for(geo::tile_bounds(t).center(), z).tile, t);
    }
}

TEST(GeoPoint, MakeNormalizesAndValidates) {
    EXPECT_DOUBLE_EQ(GeoPoint::make(10, 180).lon, -180);
    EXPECT_DOUBLE_EQ(GeoPoint::make(10, 190).lon, -170);
    EXPECT_THROW(GeoPoint::make(91, 0), Error);
    EXPECT_THROW(GeoPoint::make(NAN, 0), Error);
}
