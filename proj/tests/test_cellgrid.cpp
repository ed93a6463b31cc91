#include <gtest/gtest.h>

#include <set>

#include "rrm/cellgrid.hpp"
#include "rrm/rng.hpp"

using namespace rrm;
using cellgrid::CellId;
using cellgrid::GridSpec;

TEST(CellOf, FloorFormula) {
    const GridSpec g(0.2);
    EXPECT_EQ(g.cell_of({40.0, -75.0}), (CellId{650, 525}));
    EXPECT_EQ(g.cell_of({-90, -180}), (CellId{0, 0}));
    EXPECT_EQ(g.cell_of({90, 0}).row, 899);
    EXPECT_EQ(g.rows(), 900);
    EXPECT_EQ(g.cols(), 1800);
}

TEST(CellOf, EdgeGoesToHigherCell) { EXPECT_EQ(GridSpec(0.2).cell_of({40.0, 0.0}).row, 650); }

TEST(Grid, RejectsUnevenResolution) {
    EXPECT_THROW(GridSpec(0.7), Error);
    EXPECT_THROW(GridSpec(0.0), Error);
    EXPECT_NO_THROW(GridSpec(0.25));
}

TEST(CellCenter, OriginCell) {
    const auto c = GridSpec(0.2).cell_center({0, 0});
    EXPECT_NEAR(c.lat, -89.9, 1e-12);
    EXPECT_NEAR(c.lon, -179.9, 1e-12);
    const auto b = GridSpec(0.2).cell_bbox({650, 525});
    EXPECT_NEAR(b.max_lon - b.min_lon, 0.2, 1e-12);
    EXPECT_NEAR(b.max_lat - b.min_lat, 0.2, 1e-12);
}

TEST(CellCenter, RoundTrip) {
    const GridSpec g(0.2);
    Rng rng(1);
    for (int i = 0; i < 10000; ++i) {
        const CellId c{static_cast<int>(rng.below(900)), static_cast<int>(rng.below(1800))};
        EXPECT_EQ(g.cell_of(g.cell_center(c)), c);
    }
}

TEST(Neighbors, InteriorWrapAndPole) {
    const GridSpec g(0.2);
    EXPECT_EQ(g.neighbors({450, 900}, 1).size(), 8u);
    const auto w = g.neighbors({450, 0}, 1);
    EXPECT_EQ(w.size(), 8u);
    EXPECT_TRUE(std::count(w.begin(), w.end(), CellId{450, 1799}));
    const auto p = g.neighbors({0, 900}, 1);
    // Hand enumeration: same row cols 899 and 901, row 1 cols 899..901.
    const std::vector<CellId> expect{{0, 899}, {0, 901}, {1, 899}, {1, 900}, {1, 901}};
    EXPECT_EQ(p, expect);
    EXPECT_THROW(g.neighbors({1, 1}, 0), Error);
}

TEST(Neighbors, Symmetric) {
    const GridSpec g(1.0);
    Rng rng(2);
    for (int i = 0; i < 300; ++i) {
        const CellId a{static_cast<int>(rng.below(180)), static_cast<int>(rng.below(360))};
        const int k = 1 + static_cast<int>(rng.below(2));
        for (const auto& b : g.neighbors(a, k)) {
            const auto back = g.neighbors(b, k);
            EXPECT_TRUE(std::count(back.begin(), back.end(), a));
        }
    }
}

TEST(Neighbors, CountIsFiveOrEight) {
    const GridSpec g(0.2);
    Rng rng(4);
    for (int i = 0; i < 2000; ++i) {
        const CellId c{static_cast<int>(rng.below(900)), static_cast<int>(rng.below(1800))};
        const auto n = g.neighbors(c, 1).size();
        EXPECT_TRUE(n == 8 || ((c.row == 0 || c.row == 899) && n == 5));
    }
}

TEST(Expand, Cases) {
    const GridSpec g(0.2);
    EXPECT_EQ(g.expand_candidates({{400, 400}}, 1).size(), 9u);
    EXPECT_TRUE(g.expand_candidates({}, 1).empty());
    EXPECT_EQ(g.expand_candidates({{400, 400}, {400, 401}}, 1).size(), 12u);
    EXPECT_EQ(g.expand_candidates({{400, 400}, {400, 401}}, 0).size(), 2u);
}

TEST(Expand, SupersetSortedAndMonotone) {
    const GridSpec g(0.2);
    Rng rng(8);
    for (int t = 0; t < 100; ++t) {
        std::vector<CellId> a;
        for (int i = 0; i < 10; ++i) a.push_back({300 + static_cast<int>(rng.below(20)), 700 + static_cast<int>(rng.below(20))});
        auto b = a;
        for (int i = 0; i < 5; ++i) b.push_back({300 + static_cast<int>(rng.below(20)), 700 + static_cast<int>(rng.below(20))});
        const auto ea = g.expand_candidates(a, 1), eb = g.expand_candidates(b, 1);
        EXPECT_TRUE(std::is_sorted(ea.begin(), ea.end()));
        EXPECT_TRUE(std::includes(eb.begin(), eb.end(), ea.begin(), ea.end()));
        const std::set<CellId> sa(ea.begin(), ea.end());
        for (const auto& c : a) EXPECT_TRUE(sa.count(c));
    }
}

TEST(Token, RoundTrip) {
    EXPECT_EQ(cellgrid::to_token({650, 525}), "r650c525");
    EXPECT_EQ(cellgrid::parse_token("r650c525"), (CellId{650, 525}));
    EXPECT_FALSE(cellgrid::parse_token("r65c"));
    EXPECT_FALSE(cellgrid::parse_token("x1c2"));
}
