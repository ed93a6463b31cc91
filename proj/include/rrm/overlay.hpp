#pragma once

// Precomputed serving artifacts: the weekly cell overlay, the rolling 24-hour road
// forecast, their tile renderings and the refresh controller.

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "rrm/cellgrid.hpp"
#include "rrm/detail/binio.hpp"
#include "rrm/detail/png.hpp"
#include "rrm/error.hpp"
#include "rrm/features.hpp"
#include "rrm/geo.hpp"
#include "rrm/ingest.hpp"
#include "rrm/model.hpp"
#include "rrm/segments.hpp"
#include "rrm/snapshot.hpp"
#include "rrm/time.hpp"
#include "rrm/weather_live.hpp"

namespace rrm::overlay {

using cellgrid::CellId;
using weather_live::ForecastHour;
using weather_live::Source;

inline constexpr int kHoursPerWeek = 168;
inline constexpr int kForecastHorizon = 24;
inline constexpr int kTileSize = 256;
inline constexpr int kDefaultMinRoadZoom = 10;
inline constexpr double kCoordQuantum = 1e-5;

// ---- weekly overlay ---------------------------------------------------------

struct OverlayTensor {
    std::vector<CellId> cells;  // ascending
    std::vector<float> scores;  // row-major cells x 168
    double grid_res_deg = 0.2;
    nlohmann::json meta = nlohmann::json::object();

    float score(std::size_t row, int how) const { return scores[row * kHoursPerWeek + static_cast<std::size_t>(how)]; }

    std::optional<std::size_t> row_of(CellId c) const {
        const auto it = std::lower_bound(cells.begin(), cells.end(), c);
        if (it == cells.end() || *it != c) return std::nullopt;
        return static_cast<std::size_t>(it - cells.begin());
    }
};

struct OverlayInputs {
    std::vector<CellId> cells;
    const features::CellHistory* history = nullptr;
    const ingest::Climatology* climatology = nullptr;
    const std::map<CellId, std::string>* station_map = nullptr;
    const model::ModelBundle* bundle = nullptr;
    cellgrid::GridSpec grid{0.2};
    unsigned month = 1;               // climatology month for the whole week
    std::string model_digest;
    std::string built_at;
};

inline OverlayTensor build_weekly_overlay(const OverlayInputs& in) {
    if (!in.history || !in.climatology || !in.station_map || !in.bundle)
        throw Error("INVALID_ARGUMENT", "overlay inputs incomplete");
    if (in.bundle->meta.layer != "baseline") throw Error("LAYER_MISMATCH", "weekly overlay needs a baseline bundle");
    if (in.month < 1 || in.month > 12) throw Error("INVALID_ARGUMENT", "month must be 1..12");
    OverlayTensor t;
    t.cells = in.cells;
    std::sort(t.cells.begin(), t.cells.end());
    t.cells.erase(std::unique(t.cells.begin(), t.cells.end()), t.cells.end());
    t.grid_res_deg = in.grid.resolution_deg();
    t.scores.resize(t.cells.size() * kHoursPerWeek);
    for (std::size_t r = 0; r < t.cells.size(); ++r) {
        const auto st = in.station_map->find(t.cells[r]);
        if (st == in.station_map->end())
            throw Error("STATION_MAP_INCOMPLETE", "cell " + cellgrid::to_token(t.cells[r]) + " has no station");
        for (int how = 0; how < kHoursPerWeek; ++how) {
            const features::TimeParts tp{how % 24, how / 24, static_cast<int>(in.month), 0};
            const auto w = in.climatology->values(st->second, in.month, static_cast<unsigned>(tp.hour));
            if (!w) throw Error("NO_WEATHER", "no climatology for station " + st->second);
            const auto f = features::baseline_features(t.cells[r], tp, *in.history, in.grid, *w);
            t.scores[r * kHoursPerWeek + static_cast<std::size_t>(how)] =
                static_cast<float>(model::predict_proba(*in.bundle, f));
        }
    }
    t.meta = {{"model_digest", in.model_digest},
              {"built_at", in.built_at},
              {"grid_res_deg", t.grid_res_deg},
              {"week_anchor", "Monday 00:00 UTC"},
              {"climatology_month", in.month},
              {"cells", t.cells.size()}};
    return t;
}

inline constexpr char kOverlayMagic[5] = {'R', 'R', 'M', 'O', '1'};

// Binary tensor plus "<path>.json" metadata sidecar.
inline void save_overlay(const OverlayTensor& t, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("FILE_UNWRITABLE", "cannot write " + path);
    out.write(kOverlayMagic, 5);
    detail::put<std::uint64_t>(out, t.cells.size());
    detail::put<double>(out, t.grid_res_deg);
    for (const auto& c : t.cells) {
        detail::put<std::int32_t>(out, c.row);
        detail::put<std::int32_t>(out, c.col);
    }
    for (float s : t.scores) detail::put<float>(out, s);
    if (!out) throw Error("FILE_UNWRITABLE", "short write to " + path);
    std::ofstream meta(path + ".json", std::ios::binary | std::ios::trunc);
    meta << t.meta.dump(2) << '\n';
}

inline OverlayTensor load_overlay(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("OVERLAY_MISSING", "cannot open " + path);
    char magic[5];
    if (!in.read(magic, 5) || !std::equal(magic, magic + 5, kOverlayMagic))
        throw Error("OVERLAY_CORRUPT", path + ": bad magic");
    OverlayTensor t;
    const auto n = detail::get<std::uint64_t>(in, "OVERLAY_CORRUPT");
    if (n > (1ull << 26)) throw Error("OVERLAY_CORRUPT", "cell count out of range");
    t.grid_res_deg = detail::get<double>(in, "OVERLAY_CORRUPT");
    t.cells.resize(n);
    for (auto& c : t.cells) {
        c.row = detail::get<std::int32_t>(in, "OVERLAY_CORRUPT");
        c.col = detail::get<std::int32_t>(in, "OVERLAY_CORRUPT");
    }
    t.scores.resize(n * kHoursPerWeek);
    for (auto& s : t.scores) {
        s = detail::get<float>(in, "OVERLAY_CORRUPT");
        if (!(s >= 0.0f && s <= 1.0f)) throw Error("OVERLAY_CORRUPT", "score outside [0,1]");
    }
    if (!std::is_sorted(t.cells.begin(), t.cells.end())) throw Error("OVERLAY_CORRUPT", "cell table not sorted");
    std::ifstream meta(path + ".json");
    if (meta) {
        try {
            meta >> t.meta;
        } catch (const nlohmann::json::exception&) {
            t.meta = nlohmann::json::object();
        }
    }
    return t;
}

// ---- road forecast ----------------------------------------------------------

struct SegmentForecast {
    std::array<double, kForecastHorizon> scores{};
    std::array<Source, kForecastHorizon> sources{};
    friend bool operator==(const SegmentForecast&, const SegmentForecast&) = default;
};

struct RoadForecast {
    UtcTime generated_at;
    int horizon = kForecastHorizon;
    std::array<UtcTime, kForecastHorizon> hours{};
    std::map<std::string, SegmentForecast> segments; // keyed and ordered by segment id
    std::uint64_t build_id = 0;
};

using WeatherLookup = std::function<std::vector<ForecastHour>(geo::GeoPoint)>;

// Scores every active segment for the 24 hours after `now`.
inline RoadForecast build_road_forecast(const std::vector<segments::RoadSegment>& active,
                                        const features::SegmentHistory& history, const cellgrid::GridSpec& grid,
                                        const WeatherLookup& weather, const model::ModelBundle& bundle, UtcTime now) {
    if (bundle.meta.layer != "segment") throw Error("LAYER_MISMATCH", "road forecast needs a segment bundle");
    RoadForecast f;
    f.generated_at = floor_hour(now);
    const UtcTime start = next_full_hour(now);
    for (int i = 0; i < kForecastHorizon; ++i) f.hours[static_cast<std::size_t>(i)] = start + std::chrono::hours{i};
    for (const auto& seg : active) {
        const auto wx = weather(seg.midpoint);
        if (wx.size() != kForecastHorizon) throw Error("NO_WEATHER", "weather source returned a partial horizon");
        SegmentForecast sf;
        for (std::size_t i = 0; i < kForecastHorizon; ++i) {
            const auto tp = features::TimeParts::of(f.hours[i]);
            const auto x = features::segment_features(seg, tp, history, grid, wx[i].values);
            sf.scores[i] = model::predict_proba(bundle, x);
            sf.sources[i] = wx[i].source;
        }
        f.segments.emplace(seg.segment_id, sf);
    }
    return f;
}

inline Source parse_source(const std::string& s) {
    if (s == "live-primary") return Source::live_primary;
    if (s == "live-secondary") return Source::live_secondary;
    if (s == "climatology") return Source::climatology;
    throw Error("FORECAST_CORRUPT", "unknown weather source " + s);
}

inline nlohmann::json to_json(const RoadForecast& f) {
    nlohmann::json hours = nlohmann::json::array();
    for (const auto& h : f.hours) hours.push_back(format_rfc3339(h));
    nlohmann::json segs = nlohmann::json::array();
    for (const auto& [id, s] : f.segments) {
        nlohmann::json src = nlohmann::json::array();
        for (auto x : s.sources) src.push_back(weather_live::to_string(x));
        segs.push_back({{"id", id}, {"scores", s.scores}, {"sources", src}});
    }
    return {{"format", "rrm-forecast-v1"}, {"generated_at", format_rfc3339(f.generated_at)},
            {"horizon", f.horizon},        {"hours", hours},
            {"segments", segs}};
}

inline RoadForecast forecast_from_json(const nlohmann::json& j) {
    try {
        if (j.at("format") != "rrm-forecast-v1") throw Error("FORECAST_CORRUPT", "unknown forecast format");
        RoadForecast f;
        const auto g = parse_rfc3339(j.at("generated_at").get<std::string>());
        if (!g) throw Error("FORECAST_CORRUPT", "bad generated_at");
        f.generated_at = *g;
        if (j.at("horizon").get<int>() != kForecastHorizon) throw Error("FORECAST_CORRUPT", "horizon must be 24");
        const auto& hours = j.at("hours");
        if (hours.size() != kForecastHorizon) throw Error("FORECAST_CORRUPT", "need 24 hour stamps");
        for (std::size_t i = 0; i < kForecastHorizon; ++i) {
            const auto t = parse_rfc3339(hours[i].get<std::string>());
            if (!t) throw Error("FORECAST_CORRUPT", "bad hour stamp");
            f.hours[i] = *t;
        }
        for (const auto& s : j.at("segments")) {
            SegmentForecast sf;
            const auto scores = s.at("scores").get<std::vector<double>>();
            const auto sources = s.at("sources").get<std::vector<std::string>>();
            if (scores.size() != kForecastHorizon || sources.size() != kForecastHorizon)
                throw Error("FORECAST_CORRUPT", "segment entry must have 24 hours");
            for (std::size_t i = 0; i < kForecastHorizon; ++i) {
                if (!(scores[i] >= 0.0 && scores[i] <= 1.0)) throw Error("FORECAST_CORRUPT", "score outside [0,1]");
                sf.scores[i] = scores[i];
                sf.sources[i] = parse_source(sources[i]);
            }
            f.segments.emplace(s.at("id").get<std::string>(), sf);
        }
        return f;
    } catch (const nlohmann::json::exception& e) {
        throw Error("FORECAST_CORRUPT", e.what());
    }
}

// ---- colors and raster tiles ---------------------------------------------------

struct Rgba {
    std::uint8_t r = 0, g = 0, b = 0, a = 0;
    friend bool operator==(const Rgba&, const Rgba&) = default;
};

struct ColorRamp {
    std::vector<std::pair<double, Rgba>> stops;

    bool valid() const {
        if (stops.empty() || stops.front().first != 0.0) return false;
        for (std::size_t i = 1; i < stops.size(); ++i)
            if (!(stops[i].first > stops[i - 1].first) || stops[i].first > 1.0) return false;
        return true;
    }

    // Piecewise-linear between stops, channels rounded half away from zero; flat past the last stop.
    Rgba color(double score) const {
        const double s = std::clamp(score, 0.0, 1.0);
        if (s >= stops.back().first) return stops.back().second;
        std::size_t i = 1;
        while (i < stops.size() && stops[i].first <= s) ++i;
        const auto& [t0, c0] = stops[i - 1];
        const auto& [t1, c1] = stops[i];
        const double f = (s - t0) / (t1 - t0);
        auto mix = [f](std::uint8_t a, std::uint8_t b) {
            return static_cast<std::uint8_t>(std::lround(a + (static_cast<double>(b) - a) * f));
        };
        return {mix(c0.r, c1.r), mix(c0.g, c1.g), mix(c0.b, c1.b), mix(c0.a, c1.a)};
    }

    // transparent -> yellow -> orange -> red -> dark red
    static ColorRamp standard() {
        return ColorRamp{{{0.00, {255, 255, 178, 0}},
                          {0.25, {254, 204, 92, 160}},
                          {0.50, {253, 141, 60, 190}},
                          {0.75, {240, 59, 32, 215}},
                          {0.90, {189, 0, 38, 235}}}};
    }
};

// Geographic location of the center of pixel (px, py) within tile t.
inline geo::GeoPoint pixel_center(geo::TileCoord t, int px, int py) {
    const double x = t.x + (px + 0.5) / kTileSize;
    const double y = t.y + (py + 0.5) / kTileSize;
    return {geo::tile_row_lat(y, t.z), geo::tile_col_lon(x, t.z)};
}

// 256x256 RGBA PNG. Pixels whose center falls in a candidate cell take the ramp color of
// that cell's score; all others are transparent.
inline std::string render_raster_tile(geo::TileCoord t, const OverlayTensor& overlay, int how, const ColorRamp& ramp) {
    if (!t.valid()) throw Error("INVALID_TILE", "tile coordinates out of range");
    if (how < 0 || how >= kHoursPerWeek) throw Error("INVALID_ARGUMENT", "hour of week must be 0..167");
    const cellgrid::GridSpec grid(overlay.grid_res_deg);
    std::vector<std::uint8_t> px(static_cast<std::size_t>(kTileSize) * kTileSize * 4, 0);
    const auto bounds = geo::tile_bounds(t);
    const auto lo = grid.cell_of({std::max(bounds.min_lat, -90.0), bounds.min_lon});
    const auto hi = grid.cell_of({std::min(bounds.max_lat, 90.0), bounds.max_lon});
    const bool any = std::any_of(overlay.cells.begin(), overlay.cells.end(), [&](CellId c) {
        return c.row >= lo.row && c.row <= hi.row && c.col >= lo.col && c.col <= hi.col;
    });
    if (any) {
        for (int py = 0; py < kTileSize; ++py) {
            const double lat = geo::tile_row_lat(t.y + (py + 0.5) / kTileSize, t.z);
            for (int pxi = 0; pxi < kTileSize; ++pxi) {
                const double lon = geo::tile_col_lon(t.x + (pxi + 0.5) / kTileSize, t.z);
                const auto row = overlay.row_of(grid.cell_of({lat, lon}));
                if (!row) continue;
                const Rgba c = ramp.color(overlay.score(*row, how));
                auto* p = &px[(static_cast<std::size_t>(py) * kTileSize + pxi) * 4];
                p[0] = c.r;
                p[1] = c.g;
                p[2] = c.b;
                p[3] = c.a;
            }
        }
    }
    return detail::encode_png_rgba(kTileSize, kTileSize, px);
}

// ---- JSON road tiles ------------------------------------------------------------

inline double quantize(double deg) { return std::round(deg / kCoordQuantum) * kCoordQuantum; }

// Active segments whose bbox intersects the tile, sorted by id. `index` holds the active segments.
inline nlohmann::json build_road_tile_json(geo::TileCoord t, const RoadForecast& forecast, int hour_offset,
                                           const segments::SegmentIndex& index, int min_zoom = kDefaultMinRoadZoom) {
    if (!t.valid()) throw Error("INVALID_TILE", "tile coordinates out of range");
    if (hour_offset < 0 || hour_offset >= kForecastHorizon) throw Error("INVALID_ARGUMENT", "hour offset must be 0..23");
    nlohmann::json doc = {{"tile", {{"z", t.z}, {"x", t.x}, {"y", t.y}}},
                          {"hour_offset", hour_offset},
                          {"generated_at", format_rfc3339(forecast.generated_at)},
                          {"segments", nlohmann::json::array()}};
    if (t.z < min_zoom) {
        doc["note"] = "zoom_too_low";
        return doc;
    }
    const auto bounds = geo::tile_bounds(t);
    std::vector<std::uint32_t> hits;
    for (auto i : index.in_box(bounds))
        if (index.bbox(i).intersects(bounds)) hits.push_back(i);
    std::sort(hits.begin(), hits.end(), [&](auto a, auto b) {
        return index.segments()[a].segment_id < index.segments()[b].segment_id;
    });
    for (auto i : hits) {
        const auto& s = index.segments()[i];
        const auto f = forecast.segments.find(s.segment_id);
        if (f == forecast.segments.end()) continue;
        nlohmann::json coords = nlohmann::json::array();
        for (const auto& p : s.geometry.points) coords.push_back({quantize(p.lon), quantize(p.lat)});
        doc["segments"].push_back({{"id", s.segment_id},
                                   {"class", ingest::to_string(s.cls)},
                                   {"score", f->second.scores[static_cast<std::size_t>(hour_offset)]},
                                   {"coords", coords}});
    }
    return doc;
}

// ---- refresh controller ---------------------------------------------------------

enum class RefreshAction { none, rebuild, coalesce };

// Lazy refresh rule: rebuild once the forecast is at least `interval` old (or on an explicit
// trigger); requests during a build join it.
inline RefreshAction plan_refresh(std::optional<UtcTime> generated_at, UtcTime now, std::chrono::seconds interval,
                                  bool building, bool forced) {
    const bool stale = !generated_at || now - *generated_at >= interval;
    if (!stale && !forced) return RefreshAction::none;
    return building ? RefreshAction::coalesce : RefreshAction::rebuild;
}

// Holds the served forecast and runs at most one background rebuild at a time. A failed
// build leaves the previous forecast in place.
class ForecastManager {
  public:
    using Builder = std::function<RoadForecast(UtcTime now)>;

    ForecastManager(Builder builder, std::chrono::seconds interval, std::function<UtcTime()> clock = now_utc)
        : builder_(std::move(builder)), interval_(interval), clock_(std::move(clock)) {}

    ~ForecastManager() {
        std::unique_lock lk(mu_);
        cv_.wait(lk, [&] { return !building_; });
        lk.unlock();
        if (worker_.joinable()) worker_.join();
    }

    ForecastManager(const ForecastManager&) = delete;
    ForecastManager& operator=(const ForecastManager&) = delete;

    std::shared_ptr<const RoadForecast> current() const { return snapshot_.load(); }

    void install(RoadForecast f) {
        std::lock_guard lk(mu_);
        f.build_id = ++next_id_;
        snapshot_.store(std::make_shared<const RoadForecast>(std::move(f)));
    }

    // Synchronous build on the caller's thread; throws on failure.
    void rebuild_now() {
        auto f = builder_(clock_());
        install(std::move(f));
    }

    // Starts a build when stale; returns the id of the build started or joined.
    std::optional<std::uint64_t> maybe_refresh() { return request(false); }

    // Forces a build (or joins the running one) and returns its id.
    std::uint64_t trigger() { return *request(true); }

    void wait_idle() {
        std::unique_lock lk(mu_);
        cv_.wait(lk, [&] { return !building_; });
    }

    std::chrono::seconds interval() const { return interval_; }

    std::optional<std::chrono::seconds> age() const {
        const auto f = current();
        if (!f) return std::nullopt;
        return std::chrono::duration_cast<std::chrono::seconds>(clock_() - f->generated_at);
    }

    nlohmann::json status() const {
        std::lock_guard lk(mu_);
        const auto f = snapshot_.load();
        return {{"building", building_},
                {"builds_completed", completed_},
                {"builds_failed", failed_},
                {"last_error", last_error_},
                {"current_build_id", f ? f->build_id : 0},
                {"generated_at", f ? format_rfc3339(f->generated_at) : ""}};
    }

  private:
    std::optional<std::uint64_t> request(bool forced) {
        std::unique_lock lk(mu_);
        const auto f = snapshot_.load();
        const auto action = plan_refresh(f ? std::optional(f->generated_at) : std::nullopt, clock_(), interval_,
                                         building_, forced);
        if (action == RefreshAction::none) return std::nullopt;
        if (action == RefreshAction::coalesce) return pending_id_;
        if (worker_.joinable()) worker_.join(); // previous build already finished
        building_ = true;
        pending_id_ = ++next_id_;
        const auto id = pending_id_;
        worker_ = std::thread([this, id] { run(id); });
        return id;
    }

    void run(std::uint64_t id) {
        std::optional<RoadForecast> built;
        std::string err;
        try {
            built = builder_(clock_());
        } catch (const std::exception& e) {
            err = e.what();
        }
        std::lock_guard lk(mu_);
        if (built) {
            built->build_id = id;
            snapshot_.store(std::make_shared<const RoadForecast>(std::move(*built)));
            ++completed_;
            last_error_.clear();
        } else {
            ++failed_;
            last_error_ = err;
        }
        building_ = false;
        cv_.notify_all();
    }

    Builder builder_;
    std::chrono::seconds interval_;
    std::function<UtcTime()> clock_;
    Snapshot<RoadForecast> snapshot_;
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::thread worker_;
    bool building_ = false;
    std::uint64_t next_id_ = 0;
    std::uint64_t pending_id_ = 0;
    std::size_t completed_ = 0;
    std::size_t failed_ = 0;
    std::string last_error_;
};

} // namespace rrm::overlay
