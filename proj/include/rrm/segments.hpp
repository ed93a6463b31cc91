#pragma once

// Road segmentation, a bucket-grid spatial index and point-to-segment matching.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "rrm/cellgrid.hpp"
#include "rrm/detail/binio.hpp"
#include "rrm/error.hpp"
#include "rrm/geo.hpp"
#include "rrm/ingest.hpp"

namespace rrm::segments {

using geo::GeoPoint;
using ingest::RoadClass;

struct RoadSegment {
    std::string segment_id; // "{road_id}#{part_index}"
    std::string road_id;
    std::uint32_t part_index = 0;
    geo::Polyline geometry;
    double length_m = 0.0;
    RoadClass cls = RoadClass::other;
    GeoPoint midpoint;
    double bearing_deg = 0.0; // endpoint to endpoint
    double sinuosity = 1.0;
    bool degenerate = false;
};

inline std::string make_segment_id(const std::string& road_id, std::uint32_t part) {
    return road_id + "#" + std::to_string(part);
}

// Point at exactly `dist` meters (haversine) from a along the lat/lon chord a->b.
inline GeoPoint point_on_span(GeoPoint a, GeoPoint b, double dist, double span_len) {
    if (span_len <= 0.0 || dist <= 0.0) return a;
    if (dist >= span_len) return b;
    double lo = 0.0, hi = 1.0;
    double t = dist / span_len;
    for (int it = 0; it < 60; ++it) {
        const double d = geo::haversine_m(a, geo::lerp(a, b, t));
        if (d < dist)
            lo = t;
        else
            hi = t;
        t = 0.5 * (lo + hi);
        if (hi - lo < 1e-15) break;
    }
    return geo::lerp(a, b, t);
}

// Point at arclength s along p.
inline GeoPoint point_along(const geo::Polyline& p, double s) {
    if (s <= 0.0) return p.points.front();
    for (std::size_t i = 1; i < p.points.size(); ++i) {
        const double len = geo::haversine_m(p.points[i - 1], p.points[i]);
        if (s <= len && len > 0.0) return point_on_span(p.points[i - 1], p.points[i], s, len);
        s -= len;
    }
    return p.points.back();
}

inline void finish_segment(RoadSegment& s) {
    s.segment_id = make_segment_id(s.road_id, s.part_index);
    s.length_m = geo::polyline_length_m(s.geometry);
    s.midpoint = point_along(s.geometry, s.length_m / 2.0);
    const auto& a = s.geometry.points.front();
    const auto& b = s.geometry.points.back();
    s.bearing_deg = geo::bearing_deg(a, b).degrees;
    const double chord = geo::haversine_m(a, b);
    s.sinuosity = chord > 0.0 ? std::max(1.0, s.length_m / chord) : 1.0;
}

// Splits r into ceil(length / max_len_m) parts of equal arclength. A zero-length road
// yields one segment flagged degenerate.
inline std::vector<RoadSegment> segment_road(const ingest::RoadFeature& r, double max_len_m) {
    if (!(max_len_m > 0.0)) throw Error("INVALID_ARGUMENT", "max segment length must be positive");
    if (!r.geometry.valid()) throw Error("INVALID_POLYLINE", "road " + r.road_id + " has invalid geometry");
    const auto& pts = r.geometry.points;
    std::vector<double> cum(pts.size(), 0.0);
    for (std::size_t i = 1; i < pts.size(); ++i) cum[i] = cum[i - 1] + geo::haversine_m(pts[i - 1], pts[i]);
    const double total = cum.back();

    std::vector<RoadSegment> out;
    if (total <= 0.0) {
        RoadSegment s;
        s.road_id = r.road_id;
        s.cls = r.cls;
        s.geometry = r.geometry;
        s.degenerate = true;
        finish_segment(s);
        out.push_back(std::move(s));
        return out;
    }
    // The tolerance keeps an exact multiple (500 m at max 500 m) at one part.
    const auto n = static_cast<std::uint32_t>(std::max(1.0, std::ceil(total / max_len_m - 1e-9)));
    const double part = total / n;

    auto locate = [&](double s) {
        // Point at arclength s using the precomputed cumulative lengths.
        if (s <= 0.0) return pts.front();
        if (s >= total) return pts.back();
        const auto it = std::upper_bound(cum.begin(), cum.end(), s);
        const std::size_t j = static_cast<std::size_t>(it - cum.begin()); // cum[j-1] <= s < cum[j]
        return point_on_span(pts[j - 1], pts[j], s - cum[j - 1], cum[j] - cum[j - 1]);
    };

    for (std::uint32_t k = 0; k < n; ++k) {
        const double s0 = part * k;
        const double s1 = (k + 1 == n) ? total : part * (k + 1);
        RoadSegment seg;
        seg.road_id = r.road_id;
        seg.part_index = k;
        seg.cls = r.cls;
        seg.geometry.points.push_back(k == 0 ? pts.front() : locate(s0));
        for (std::size_t i = 1; i + 1 < pts.size(); ++i)
            if (cum[i] > s0 && cum[i] < s1) seg.geometry.points.push_back(pts[i]);
        seg.geometry.points.push_back(k + 1 == n ? pts.back() : locate(s1));
        finish_segment(seg);
        out.push_back(std::move(seg));
    }
    return out;
}

inline std::vector<RoadSegment> segment_roads(const std::vector<ingest::RoadFeature>& roads, double max_len_m) {
    std::vector<RoadSegment> out;
    for (const auto& r : roads) {
        auto parts = segment_road(r, max_len_m);
        out.insert(out.end(), std::make_move_iterator(parts.begin()), std::make_move_iterator(parts.end()));
    }
    return out;
}

// ---- spatial index --------------------------------------------------------

class SegmentIndex {
  public:
    static constexpr double kDefaultBucketDeg = 0.05;

    SegmentIndex() : grid_(kDefaultBucketDeg) {}

    SegmentIndex(std::vector<RoadSegment> segments, double bucket_res_deg = kDefaultBucketDeg)
        : grid_(bucket_res_deg), segments_(std::move(segments)) {
        boxes_.reserve(segments_.size());
        for (std::uint32_t i = 0; i < segments_.size(); ++i) {
            const auto& s = segments_[i];
            if (!by_id_.emplace(s.segment_id, i).second) throw Error("DUPLICATE_SEGMENT", s.segment_id);
            const auto box = s.geometry.bbox();
            boxes_.push_back(box);
            const auto lo = grid_.cell_of({box.min_lat, box.min_lon});
            const auto hi = grid_.cell_of({box.max_lat, box.max_lon});
            for (auto r = lo.row; r <= hi.row; ++r)
                for (auto c = lo.col; c <= hi.col; ++c) buckets_[cellgrid::CellId{r, c}.packed()].push_back(i);
        }
    }

    const std::vector<RoadSegment>& segments() const { return segments_; }
    const cellgrid::GridSpec& grid() const { return grid_; }
    const geo::BBox& bbox(std::size_t i) const { return boxes_[i]; }
    std::size_t size() const { return segments_.size(); }

    const RoadSegment* find(const std::string& id) const {
        const auto it = by_id_.find(id);
        return it == by_id_.end() ? nullptr : &segments_[it->second];
    }
    std::optional<std::size_t> index_of(const std::string& id) const {
        const auto it = by_id_.find(id);
        if (it == by_id_.end()) return std::nullopt;
        return it->second;
    }

    std::vector<std::uint32_t> bucket(cellgrid::CellId c) const {
        const auto it = buckets_.find(c.packed());
        return it == buckets_.end() ? std::vector<std::uint32_t>{} : it->second;
    }

    // Indices (ascending) of every segment listed in a bucket overlapping the box
    // that contains all points within radius_m of q in q's local projection.
    std::vector<std::uint32_t> candidates(GeoPoint q, double radius_m) const {
        const double dlat = radius_m / geo::kMetersPerDegree * (1.0 + 1e-9) + 1e-12;
        const double coslat = std::max(std::cos(q.lat * geo::kDegToRad), 1e-12);
        const double dlon = std::min(360.0, dlat / coslat);
        return in_box({q.lat - dlat, q.lon - dlon, q.lat + dlat, q.lon + dlon});
    }

    // Indices (ascending) of segments listed in buckets the box touches. A superset of the
    // segments whose bbox intersects `box`.
    std::vector<std::uint32_t> in_box(const geo::BBox& box) const {
        const auto lo = grid_.cell_of({std::clamp(box.min_lat, -90.0, 90.0), std::max(box.min_lon, -180.0)});
        const auto hi = grid_.cell_of({std::clamp(box.max_lat, -90.0, 90.0), std::min(box.max_lon, 179.9999999999)});
        std::vector<std::uint32_t> out;
        for (auto r = lo.row; r <= hi.row; ++r)
            for (auto c = lo.col; c <= hi.col; ++c) {
                const auto it = buckets_.find(cellgrid::CellId{r, c}.packed());
                if (it != buckets_.end()) out.insert(out.end(), it->second.begin(), it->second.end());
            }
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

  private:
    cellgrid::GridSpec grid_;
    std::vector<RoadSegment> segments_;
    std::vector<geo::BBox> boxes_;
    std::unordered_map<std::string, std::uint32_t> by_id_;
    std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> buckets_;
};

inline SegmentIndex build_index(std::vector<RoadSegment> segments,
                                double bucket_res_deg = SegmentIndex::kDefaultBucketDeg) {
    return SegmentIndex(std::move(segments), bucket_res_deg);
}

struct MatchResult {
    std::string event_id;
    std::optional<std::string> segment_id;
    std::optional<double> distance_m;
    bool matched = false;
};

// Nearest segment within cutoff_m; ties go to the lexicographically smallest id.
inline MatchResult match_point(GeoPoint q, const SegmentIndex& idx, double cutoff_m, std::string event_id = {}) {
    MatchResult r{std::move(event_id), std::nullopt, std::nullopt, false};
    const RoadSegment* best = nullptr;
    double best_d = INFINITY;
    for (auto i : idx.candidates(q, cutoff_m)) {
        const auto& s = idx.segments()[i];
        const double d = geo::point_to_polyline_m(q, s.geometry).distance_m;
        if (d < best_d || (d == best_d && best && s.segment_id < best->segment_id)) {
            best_d = d;
            best = &s;
        }
    }
    if (best && best_d <= cutoff_m) {
        r.segment_id = best->segment_id;
        r.distance_m = best_d;
        r.matched = true;
    }
    return r;
}

struct MatchStats {
    double median_m = 0.0;
    double mean_m = 0.0;
    double p95_m = 0.0;
    std::size_t matched = 0;
    std::size_t total = 0;
    std::map<std::string, std::size_t> by_tag; // matched events per source tag
};

// Median, mean and p95 (value at index ceil(0.95 n) - 1 of the sorted distances).
inline MatchStats summarize(const std::vector<MatchResult>& results, const std::vector<std::string>& tags = {}) {
    MatchStats st;
    st.total = results.size();
    std::vector<double> d;
    for (std::size_t i = 0; i < results.size(); ++i) {
        if (!results[i].matched) continue;
        d.push_back(*results[i].distance_m);
        if (i < tags.size()) ++st.by_tag[tags[i]];
    }
    st.matched = d.size();
    if (d.empty()) return st;
    std::sort(d.begin(), d.end());
    const std::size_t n = d.size();
    st.median_m = (n % 2) ? d[n / 2] : 0.5 * (d[n / 2 - 1] + d[n / 2]);
    double sum = 0.0;
    for (double v : d) sum += v; // ascending order keeps the sum permutation-invariant
    st.mean_m = sum / static_cast<double>(n);
    const std::size_t k = (95 * n + 99) / 100; // ceil(0.95 n) in integers
    st.p95_m = d[std::max<std::size_t>(k, 1) - 1];
    return st;
}

inline nlohmann::json to_json(const MatchStats& s) {
    return {{"median_m", s.median_m}, {"mean_m", s.mean_m}, {"p95_m", s.p95_m},
            {"matched", s.matched},   {"total", s.total},   {"by_tag", s.by_tag}};
}

struct MatchOutput {
    std::vector<MatchResult> results; // input order
    MatchStats stats;
};

inline MatchOutput match_events(const std::vector<ingest::IncidentRecord>& events, const SegmentIndex& idx,
                                double cutoff_m) {
    MatchOutput out;
    out.results.reserve(events.size());
    std::vector<std::string> tags;
    tags.reserve(events.size());
    for (const auto& e : events) {
        out.results.push_back(match_point(e.loc, idx, cutoff_m, e.id));
        tags.push_back(e.source);
    }
    out.stats = summarize(out.results, tags);
    return out;
}

// ---- segments store ------------------------------------------------------

inline constexpr char kSegmentsMagic[5] = {'R', 'R', 'M', 'S', '1'};

inline void save_segments(const std::string& path, const std::vector<RoadSegment>& segs) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("FILE_UNWRITABLE", "cannot write " + path);
    out.write(kSegmentsMagic, 5);
    detail::put<std::uint64_t>(out, segs.size());
    for (const auto& s : segs) {
        detail::put_string(out, s.road_id);
        detail::put<std::uint32_t>(out, s.part_index);
        detail::put<std::uint8_t>(out, static_cast<std::uint8_t>(s.cls));
        detail::put<std::uint8_t>(out, s.degenerate ? 1 : 0);
        detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(s.geometry.points.size()));
        for (const auto& p : s.geometry.points) {
            detail::put<double>(out, p.lat);
            detail::put<double>(out, p.lon);
        }
    }
    if (!out) throw Error("FILE_UNWRITABLE", "short write to " + path);
}

inline std::vector<RoadSegment> load_segments(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("SEGMENTS_MISSING", "cannot open " + path);
    char magic[5];
    if (!in.read(magic, 5) || !std::equal(magic, magic + 5, kSegmentsMagic))
        throw Error("SEGMENTS_CORRUPT", path + ": bad magic");
    const auto n = detail::get<std::uint64_t>(in, "SEGMENTS_CORRUPT");
    std::vector<RoadSegment> out;
    out.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(n, 1u << 24)));
    for (std::uint64_t i = 0; i < n; ++i) {
        RoadSegment s;
        s.road_id = detail::get_string(in, "SEGMENTS_CORRUPT");
        s.part_index = detail::get<std::uint32_t>(in, "SEGMENTS_CORRUPT");
        const auto cls = detail::get<std::uint8_t>(in, "SEGMENTS_CORRUPT");
        if (cls > 2) throw Error("SEGMENTS_CORRUPT", "bad road class");
        s.cls = static_cast<RoadClass>(cls);
        s.degenerate = detail::get<std::uint8_t>(in, "SEGMENTS_CORRUPT") != 0;
        const auto np = detail::get<std::uint32_t>(in, "SEGMENTS_CORRUPT");
        if (np < 2 || np > (1u << 20)) throw Error("SEGMENTS_CORRUPT", "bad point count");
        s.geometry.points.resize(np);
        for (auto& p : s.geometry.points) {
            p.lat = detail::get<double>(in, "SEGMENTS_CORRUPT");
            p.lon = detail::get<double>(in, "SEGMENTS_CORRUPT");
        }
        finish_segment(s);
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace rrm::segments
