#pragma once

// Spherical geometry and Web Mercator tile math.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "rrm/error.hpp"

namespace rrm::geo {

inline constexpr double kEarthRadiusM = 6371008.8;
inline constexpr double kDegToRad = std::numbers::pi / 180.0;
inline constexpr double kRadToDeg = 180.0 / std::numbers::pi;
// Meters per degree of arc on the sphere.
inline constexpr double kMetersPerDegree = kEarthRadiusM * kDegToRad;
inline constexpr double kMercatorMaxLat = 85.05113;
inline constexpr int kMaxZoom = 22;

// Wraps longitude into [-180, 180).
inline double normalize_lon(double lon) {
    double r = std::fmod(lon + 180.0, 360.0);
    if (r < 0) r += 360.0;
    return r - 180.0;
}

struct GeoPoint {
    double lat = 0.0;
    double lon = 0.0;

    bool valid() const {
        return std::isfinite(lat) && std::isfinite(lon) && lat >= -90.0 && lat <= 90.0 && lon >= -180.0 &&
               lon < 180.0;
    }

    // Validating constructor; longitude is normalized, anything non-finite or with |lat| > 90 throws.
    static GeoPoint make(double lat, double lon) {
        if (!std::isfinite(lat) || !std::isfinite(lon) || lat < -90.0 || lat > 90.0)
            throw Error("INVALID_POINT", "coordinates out of range");
        return GeoPoint{lat, normalize_lon(lon)};
    }

    friend bool operator==(const GeoPoint&, const GeoPoint&) = default;
};

struct BBox {
    double min_lat = 0.0;
    double min_lon = 0.0;
    double max_lat = 0.0;
    double max_lon = 0.0;

    bool valid() const { return min_lat <= max_lat && min_lon <= max_lon; }

    bool contains(GeoPoint p) const {
        return p.lat >= min_lat && p.lat <= max_lat && p.lon >= min_lon && p.lon <= max_lon;
    }

    // Closed-interval intersection: touching boxes intersect.
    bool intersects(const BBox& o) const {
        return min_lat <= o.max_lat && o.min_lat <= max_lat && min_lon <= o.max_lon && o.min_lon <= max_lon;
    }

    GeoPoint center() const { return {(min_lat + max_lat) / 2.0, (min_lon + max_lon) / 2.0}; }

    void extend(GeoPoint p) {
        min_lat = std::min(min_lat, p.lat);
        max_lat = std::max(max_lat, p.lat);
        min_lon = std::min(min_lon, p.lon);
        max_lon = std::max(max_lon, p.lon);
    }

    friend bool operator==(const BBox&, const BBox&) = default;
};

struct Polyline {
    std::vector<GeoPoint> points;

    bool valid() const {
        return points.size() >= 2 && std::all_of(points.begin(), points.end(), [](GeoPoint p) {
                   return std::isfinite(p.lat) && std::isfinite(p.lon);
               });
    }

    static Polyline make(std::vector<GeoPoint> pts) {
        Polyline p{std::move(pts)};
        if (!p.valid()) throw Error("INVALID_POLYLINE", "polyline needs at least 2 finite points");
        return p;
    }

    BBox bbox() const {
        BBox b{points.front().lat, points.front().lon, points.front().lat, points.front().lon};
        for (const auto& p : points) b.extend(p);
        return b;
    }

    friend bool operator==(const Polyline&, const Polyline&) = default;
};

inline double haversine_m(GeoPoint a, GeoPoint b) {
    const double p1 = a.lat * kDegToRad;
    const double p2 = b.lat * kDegToRad;
    const double dp = p2 - p1;
    const double dl = (b.lon - a.lon) * kDegToRad;
    const double s1 = std::sin(dp / 2.0);
    const double s2 = std::sin(dl / 2.0);
    const double h = std::min(1.0, s1 * s1 + std::cos(p1) * std::cos(p2) * s2 * s2);
    return 2.0 * kEarthRadiusM * std::asin(std::sqrt(h));
}

inline double polyline_length_m(const Polyline& p) {
    double total = 0.0;
    for (std::size_t i = 1; i < p.points.size(); ++i) total += haversine_m(p.points[i - 1], p.points[i]);
    return total;
}

struct PolylineDistance {
    double distance_m = 0.0;
    std::size_t span = 0; // index i of the span points[i] -> points[i+1]
};

// Distance from q to the nearest span, evaluated in a local equirectangular
// frame centered at q with the foot of the perpendicular clamped to the span.
inline PolylineDistance point_to_polyline_m(GeoPoint q, const Polyline& p) {
    const double kx = std::cos(q.lat * kDegToRad) * kMetersPerDegree;
    constexpr double ky = kMetersPerDegree;
    PolylineDistance best{INFINITY, 0};
    double ax = (p.points[0].lon - q.lon) * kx;
    double ay = (p.points[0].lat - q.lat) * ky;
    for (std::size_t i = 0; i + 1 < p.points.size(); ++i) {
        const double bx = (p.points[i + 1].lon - q.lon) * kx;
        const double by = (p.points[i + 1].lat - q.lat) * ky;
        const double dx = bx - ax;
        const double dy = by - ay;
        const double len2 = dx * dx + dy * dy;
        double t = 0.0;
        if (len2 > 0.0) t = std::clamp(-(ax * dx + ay * dy) / len2, 0.0, 1.0);
        const double px = ax + t * dx;
        const double py = ay + t * dy;
        const double d = std::sqrt(px * px + py * py);
        if (d < best.distance_m) best = {d, i};
        ax = bx;
        ay = by;
    }
    return best;
}

struct Bearing {
    double degrees = 0.0;
    bool degenerate = false;
};

// Initial great-circle bearing, 0 = north, clockwise.
inline Bearing bearing_deg(GeoPoint a, GeoPoint b) {
    if (a == b) return {0.0, true};
    const double p1 = a.lat * kDegToRad;
    const double p2 = b.lat * kDegToRad;
    const double dl = (b.lon - a.lon) * kDegToRad;
    const double y = std::sin(dl) * std::cos(p2);
    const double x = std::cos(p1) * std::sin(p2) - std::sin(p1) * std::cos(p2) * std::cos(dl);
    double deg = std::atan2(y, x) * kRadToDeg;
    if (deg < 0) deg += 360.0;
    if (deg >= 360.0) deg -= 360.0;
    return {deg, false};
}

// Linear interpolation in lat/lon.
inline GeoPoint lerp(GeoPoint a, GeoPoint b, double t) {
    return {a.lat + (b.lat - a.lat) * t, a.lon + (b.lon - a.lon) * t};
}

// Point at arclength s (meters) along p, clamped to the ends.
inline GeoPoint point_at_m(const Polyline& p, double s) {
    if (s <= 0.0) return p.points.front();
    for (std::size_t i = 1; i < p.points.size(); ++i) {
        const double len = haversine_m(p.points[i - 1], p.points[i]);
        if (s <= len && len > 0.0) return lerp(p.points[i - 1], p.points[i], s / len);
        s -= len;
    }
    return p.points.back();
}

// ---- Web Mercator slippy tiles ------------------------------------------

struct TileCoord {
    int z = 0;
    std::uint32_t x = 0;
    std::uint32_t y = 0;

    bool valid() const {
        if (z < 0 || z > kMaxZoom) return false;
        const std::uint64_t n = std::uint64_t{1} << z;
        return x < n && y < n;
    }

    friend bool operator==(const TileCoord&, const TileCoord&) = default;
};

struct TileLookup {
    TileCoord tile;
    bool clamped = false; // latitude was outside the Mercator range
};

inline TileLookup tile_for(GeoPoint q, int z) {
    if (z < 0 || z > kMaxZoom) throw Error("INVALID_ZOOM", "zoom must be in [0, 22]");
    TileLookup out;
    double lat = q.lat;
    if (lat > kMercatorMaxLat) {
        lat = kMercatorMaxLat;
        out.clamped = true;
    } else if (lat < -kMercatorMaxLat) {
        lat = -kMercatorMaxLat;
        out.clamped = true;
    }
    const double n = std::ldexp(1.0, z);
    const double lon = normalize_lon(q.lon);
    const double phi = lat * kDegToRad;
    const double fx = (lon + 180.0) / 360.0 * n;
    const double fy = (1.0 - std::log(std::tan(phi) + 1.0 / std::cos(phi)) / std::numbers::pi) / 2.0 * n;
    const double maxi = n - 1.0;
    out.tile.z = z;
    out.tile.x = static_cast<std::uint32_t>(std::clamp(std::floor(fx), 0.0, maxi));
    out.tile.y = static_cast<std::uint32_t>(std::clamp(std::floor(fy), 0.0, maxi));
    return out;
}

// Latitude of the northern edge of tile row y (fractional rows allowed).
inline double tile_row_lat(double y, int z) {
    const double n = std::ldexp(1.0, z);
    return std::atan(std::sinh(std::numbers::pi * (1.0 - 2.0 * y / n))) * kRadToDeg;
}

inline double tile_col_lon(double x, int z) { return x / std::ldexp(1.0, z) * 360.0 - 180.0; }

inline BBox tile_bounds(TileCoord t) {
    return BBox{tile_row_lat(t.y + 1.0, t.z), tile_col_lon(t.x, t.z), tile_row_lat(t.y, t.z),
                tile_col_lon(t.x + 1.0, t.z)};
}

} // namespace rrm::geo
