#pragma once

// Equal-angle lat/lon cell grid used as the spatial unit of the baseline layer.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rrm/error.hpp"
#include "rrm/geo.hpp"

namespace rrm::cellgrid {

struct CellId {
    std::int32_t row = 0;
    std::int32_t col = 0;

    auto operator<=>(const CellId&) const = default;

    std::uint64_t packed() const {
        return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(row)) << 32) |
               static_cast<std::uint32_t>(col);
    }
};

inline std::string to_token(CellId c) { return "r" + std::to_string(c.row) + "c" + std::to_string(c.col); }

inline std::optional<CellId> parse_token(std::string_view s) {
    if (s.size() < 4 || s[0] != 'r') return std::nullopt;
    const auto cpos = s.find('c');
    if (cpos == std::string_view::npos || cpos == 1 || cpos + 1 >= s.size()) return std::nullopt;
    auto parse_int = [](std::string_view t, std::int32_t& out) {
        if (t.empty()) return false;
        std::int64_t v = 0;
        for (char ch : t) {
            if (ch < '0' || ch > '9') return false;
            v = v * 10 + (ch - '0');
            if (v > INT32_MAX) return false;
        }
        out = static_cast<std::int32_t>(v);
        return true;
    };
    CellId c;
    if (!parse_int(s.substr(1, cpos - 1), c.row) || !parse_int(s.substr(cpos + 1), c.col)) return std::nullopt;
    return c;
}

struct CellHash {
    std::size_t operator()(CellId c) const noexcept { return std::hash<std::uint64_t>{}(c.packed()); }
};

class GridSpec {
  public:
    // Guards floor() against representation error when a coordinate sits on a cell edge.
    static constexpr double kEdgeEpsilon = 1e-9;

    explicit GridSpec(double resolution_deg = 0.2) : res_(resolution_deg) {
        if (!(resolution_deg > 0.0) || !std::isfinite(resolution_deg))
            throw Error("GRID_INVALID", "resolution must be positive");
        const double r = 180.0 / res_;
        const double c = 360.0 / res_;
        if (std::abs(r - std::round(r)) > 1e-9 || std::abs(c - std::round(c)) > 1e-9)
            throw Error("GRID_INVALID", "resolution must divide 180 and 360 evenly");
        rows_ = static_cast<std::int32_t>(std::llround(r));
        cols_ = static_cast<std::int32_t>(std::llround(c));
    }

    double resolution_deg() const { return res_; }
    std::int32_t rows() const { return rows_; }
    std::int32_t cols() const { return cols_; }

    bool contains(CellId c) const { return c.row >= 0 && c.row < rows_ && c.col >= 0 && c.col < cols_; }

    CellId cell_of(geo::GeoPoint q) const {
        const double lon = geo::normalize_lon(q.lon);
        auto r = static_cast<std::int64_t>(std::floor((q.lat + 90.0) / res_ + kEdgeEpsilon));
        auto c = static_cast<std::int64_t>(std::floor((lon + 180.0) / res_ + kEdgeEpsilon));
        r = std::clamp<std::int64_t>(r, 0, rows_ - 1);
        c = std::clamp<std::int64_t>(c, 0, cols_ - 1);
        return {static_cast<std::int32_t>(r), static_cast<std::int32_t>(c)};
    }

    geo::BBox cell_bbox(CellId c) const {
        return {-90.0 + c.row * res_, -180.0 + c.col * res_, -90.0 + (c.row + 1) * res_,
                -180.0 + (c.col + 1) * res_};
    }

    geo::GeoPoint cell_center(CellId c) const { return cell_bbox(c).center(); }

    // Cells within Chebyshev distance `ring` of c, excluding c. Columns wrap, rows clip at the poles.
    std::vector<CellId> neighbors(CellId c, int ring) const {
        if (ring < 1) throw Error("INVALID_RING", "neighbor ring must be >= 1");
        std::vector<CellId> out;
        for (int dr = -ring; dr <= ring; ++dr) {
            const std::int32_t r = c.row + dr;
            if (r < 0 || r >= rows_) continue;
            for (int dc = -ring; dc <= ring; ++dc) {
                std::int32_t col = (c.col + dc) % cols_;
                if (col < 0) col += cols_;
                const CellId n{r, col};
                if (n != c) out.push_back(n);
            }
        }
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

    // Union of each input cell with its ring neighbors, in CellId order.
    std::vector<CellId> expand_candidates(std::vector<CellId> event_cells, int ring) const {
        if (ring < 0) throw Error("INVALID_RING", "expansion ring must be >= 0");
        std::vector<CellId> out = event_cells;
        if (ring > 0)
            for (const auto& c : event_cells) {
                auto n = neighbors(c, ring);
                out.insert(out.end(), n.begin(), n.end());
            }
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

  private:
    double res_;
    std::int32_t rows_ = 0;
    std::int32_t cols_ = 0;
};

} // namespace rrm::cellgrid
