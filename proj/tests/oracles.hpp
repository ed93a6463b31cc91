#pragma once

// Brute-force references shared by the unit tests and the acceptance binary. None of these
// reuse the library routine they check.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "rrm/geo.hpp"
#include "rrm/rng.hpp"
#include "rrm/segments.hpp"

namespace oracle {

inline constexpr double kR = 6371008.8;

// Great-circle distance written out from the spherical law of haversines, independently of
// rrm::geo so the geometry tests do not check a function against itself.
inline double great_circle_m(rrm::geo::GeoPoint a, rrm::geo::GeoPoint b) {
    constexpr double R = 6371008.8;
    constexpr double d2r = std::numbers::pi / 180.0;
    const double s1 = std::sin((b.lat - a.lat) * d2r / 2);
    const double s2 = std::sin((b.lon - a.lon) * d2r / 2);
    const double h = s1 * s1 + std::cos(a.lat * d2r) * std::cos(b.lat * d2r) * s2 * s2;
    return 2 * R * std::asin(std::sqrt(std::min(1.0, h)));
}

// Minimum great-circle distance from q to `samples` points spread evenly over the polyline's
// vertex-parameter range (every span receives samples in proportion to its length).
inline double dense_distance_m(rrm::geo::GeoPoint q, const rrm::geo::Polyline& p, int samples = 10000) {
    std::vector<double> cum{0.0};
    for (std::size_t i = 1; i < p.points.size(); ++i) cum.push_back(cum.back() + great_circle_m(p.points[i - 1], p.points[i]));
    const double total = cum.back();
    double best = std::numeric_limits<double>::infinity();
    for (const auto& v : p.points) best = std::min(best, great_circle_m(q, v));
    if (total <= 0.0) return best;
    std::size_t span = 0;
    for (int k = 0; k < samples; ++k) {
        const double s = total * k / (samples - 1);
        while (span + 2 < cum.size() && cum[span + 1] < s) ++span;
        const double len = cum[span + 1] - cum[span];
        const double t = len > 0 ? std::clamp((s - cum[span]) / len, 0.0, 1.0) : 0.0;
        const auto& a = p.points[span];
        const auto& b = p.points[span + 1];
        best = std::min(best, great_circle_m(q, {a.lat + (b.lat - a.lat) * t, a.lon + (b.lon - a.lon) * t}));
    }
    return best;
}

// Fraction of (positive, negative) pairs ranked correctly, ties counting one half.
inline double auroc_pairs(const std::vector<double>& s, const std::vector<int>& y) {
    double good = 0;
    double pairs = 0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (y[i] == 1 && y[j] == 0) {
                pairs += 1;
                if (s[i] > s[j]) good += 1;
                else if (s[i] == s[j]) good += 0.5;
            }
    return good / pairs;
}

// Precision at each positive, walking items by descending score; among equal scores the item
// that came first in the input is ranked first. Selection sort, no library sort.
inline double ap_walk(const std::vector<double>& s, const std::vector<int>& y) {
    std::vector<bool> used(s.size(), false);
    double sum = 0;
    int hits = 0;
    for (std::size_t rank = 1; rank <= s.size(); ++rank) {
        std::size_t pick = s.size();
        for (std::size_t i = 0; i < s.size(); ++i)
            if (!used[i] && (pick == s.size() || s[i] > s[pick])) pick = i;
        used[pick] = true;
        if (y[pick] == 1) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(rank);
        }
    }
    return sum / hits;
}

struct BruteMatch {
    bool matched = false;
    std::string segment_id;
    double distance_m = 0.0;
};

// O(N*M) matcher: every segment is scored for every event.
inline BruteMatch brute_match(rrm::geo::GeoPoint q, const std::vector<rrm::segments::RoadSegment>& segs, double cutoff) {
    BruteMatch best;
    for (const auto& s : segs) {
        const double d = rrm::geo::point_to_polyline_m(q, s.geometry).distance_m;
        if (d > cutoff) continue;
        if (!best.matched || d < best.distance_m || (d == best.distance_m && s.segment_id < best.segment_id))
            best = {true, s.segment_id, d};
    }
    return best;
}

// Random polyline of `n` vertices wandering from `start` with steps up to `step_m` metres.
inline rrm::geo::Polyline random_polyline(rrm::Rng& rng, rrm::geo::GeoPoint start, int n, double step_m) {
    rrm::geo::Polyline p;
    p.points.push_back(start);
    for (int i = 1; i < n; ++i) {
        const double ang = rng.uniform(0, 2 * std::numbers::pi);
        const double d = rng.uniform(0.1, 1.0) * step_m;
        const auto& b = p.points.back();
        const double dlat = d * std::cos(ang) / 111195.0;
        const double dlon = d * std::sin(ang) / (111195.0 * std::cos(b.lat * std::numbers::pi / 180));
        p.points.push_back({b.lat + dlat, b.lon + dlon});
    }
    return p;
}

} // namespace oracle

namespace oracle {

// Mean cross-entropy plus (l2/2)|w|^2, written from the textbook definition.
inline double logloss(const std::vector<double>& w, double b, const std::vector<std::vector<double>>& X,
                      const std::vector<int>& y, const std::vector<std::size_t>& batch, double l2) {
    double total = 0;
    for (auto i : batch) {
        double z = b;
        for (std::size_t j = 0; j < w.size(); ++j) z += w[j] * X[i][j];
        const double p = 1.0 / (1.0 + std::exp(-z));
        total += y[i] ? -std::log(p) : -std::log(1.0 - p);
    }
    double wn = 0;
    for (double v : w) wn += v * v;
    return total / static_cast<double>(batch.size()) + 0.5 * l2 * wn;
}

struct GradCheck {
    double max_rel_error = 0;
};

// Central differences with step h against the library's analytic gradient.
template <class Analytic>
GradCheck check_gradient(Analytic analytic, const std::vector<double>& w, double b,
                         const std::vector<std::vector<double>>& X, const std::vector<int>& y,
                         const std::vector<std::size_t>& batch, double l2, double h = 1e-5) {
    const auto [gw, gb] = analytic(w, b);
    GradCheck out;
    auto rel = [](double a, double n) { return std::abs(a - n) / std::max({1e-8, std::abs(a), std::abs(n)}); };
    for (std::size_t j = 0; j <= w.size(); ++j) {
        auto wp = w, wm = w;
        double bp = b, bm = b;
        if (j < w.size()) {
            wp[j] += h;
            wm[j] -= h;
        } else {
            bp += h;
            bm -= h;
        }
        const double num = (logloss(wp, bp, X, y, batch, l2) - logloss(wm, bm, X, y, batch, l2)) / (2 * h);
        out.max_rel_error = std::max(out.max_rel_error, rel(j < w.size() ? gw[j] : gb, num));
    }
    return out;
}

} // namespace oracle
