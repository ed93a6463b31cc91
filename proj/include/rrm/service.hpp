#pragma once

// HTTP application: four HTML pages and ten machine endpoints over immutable snapshots
// of the loaded bundles, overlay and road forecast.

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "rrm/bundle.hpp"
#include "rrm/cellgrid.hpp"
#include "rrm/config.hpp"
#include "rrm/context.hpp"
#include "rrm/detail/digest.hpp"
#include "rrm/error.hpp"
#include "rrm/features.hpp"
#include "rrm/model.hpp"
#include "rrm/overlay.hpp"
#include "rrm/pipeline.hpp"
#include "rrm/segments.hpp"
#include "rrm/snapshot.hpp"
#include "rrm/weather_live.hpp"

namespace rrm::service {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- route census ---------------------------------------------------------------

enum class RouteKind { page, machine };

struct RouteSpec {
    std::string method;
    std::string path;    // documented form
    std::string pattern; // regex registered with the server
    RouteKind kind;
};

inline const std::vector<RouteSpec>& route_table() {
    static const std::vector<RouteSpec> routes = {
        {"GET", "/", "/", RouteKind::page},
        {"GET", "/about", "/about", RouteKind::page},
        {"GET", "/contact", "/contact", RouteKind::page},
        {"POST", "/contact", "/contact", RouteKind::page},
        {"GET", "/health", "/health", RouteKind::machine},
        {"GET", "/api/risk", "/api/risk", RouteKind::machine},
        {"GET", "/api/roads", "/api/roads", RouteKind::machine},
        {"GET", "/api/segments/{id}", "/api/segments/(.+)", RouteKind::machine},
        {"GET", "/api/timeline", "/api/timeline", RouteKind::machine},
        {"GET", "/tiles/overlay/{how}/{z}/{x}/{y}.png", R"(/tiles/overlay/([^/]+)/([^/]+)/([^/]+)/([^/]+)\.png)",
         RouteKind::machine},
        {"GET", "/tiles/roads/{hour}/{z}/{x}/{y}.json", R"(/tiles/roads/([^/]+)/([^/]+)/([^/]+)/([^/]+)\.json)",
         RouteKind::machine},
        {"GET", "/api/meta", "/api/meta", RouteKind::machine},
        {"GET", "/api/stations", "/api/stations", RouteKind::machine},
        {"POST", "/api/refresh", "/api/refresh", RouteKind::machine},
    };
    return routes;
}

inline json route_census() {
    json routes = json::array();
    std::size_t pages = 0, machine = 0;
    for (const auto& r : route_table()) {
        (r.kind == RouteKind::page ? pages : machine)++;
        routes.push_back({{"method", r.method}, {"path", r.path}, {"kind", r.kind == RouteKind::page ? "page" : "machine"}});
    }
    return {{"pages", pages}, {"machine", machine}, {"total", pages + machine}, {"routes", routes}};
}

// ---- contact flow ------------------------------------------------------------------

struct ContactMessage {
    std::string name;
    std::string email;
    std::string body;
    std::string received_at;
};

inline std::map<std::string, std::string> validate_contact(const ContactMessage& m) {
    std::map<std::string, std::string> errors;
    if (m.body.find_first_not_of(" \t\r\n") == std::string::npos) errors["body"] = "message body is required";
    if (m.email.find('@') == std::string::npos) errors["email"] = "email address must contain @";
    return errors;
}

class MailTransport {
  public:
    virtual ~MailTransport() = default;
    // false with `error` set when delivery did not happen.
    virtual bool send(const ContactMessage& m, std::string& error) = 0;
};

// Stands in when SMTP settings exist but no delivery backend is linked.
class UnavailableTransport : public MailTransport {
  public:
    bool send(const ContactMessage&, std::string& error) override {
        error = "no smtp transport available";
        return false;
    }
};

class FallbackLog {
  public:
    explicit FallbackLog(std::string path) : path_(std::move(path)) {}

    void append(const ContactMessage& m, const std::string& reason) {
        std::lock_guard lk(mu_);
        if (const auto dir = fs::path(path_).parent_path(); !dir.empty()) fs::create_directories(dir);
        std::ofstream out(path_, std::ios::app | std::ios::binary);
        if (!out) throw Error("CONTACT_LOG_UNWRITABLE", "cannot append to " + path_);
        out << json{{"received_at", m.received_at}, {"name", m.name}, {"email", m.email}, {"body", m.body},
                    {"reason", reason}}
                   .dump()
            << '\n';
    }

    const std::string& path() const { return path_; }

  private:
    std::string path_;
    std::mutex mu_;
};

// ---- HTML ------------------------------------------------------------------------

inline std::string html_escape(const std::string& s) {
    std::string o;
    for (char c : s) {
        switch (c) {
        case '&': o += "&amp;"; break;
        case '<': o += "&lt;"; break;
        case '>': o += "&gt;"; break;
        case '"': o += "&quot;"; break;
        default: o += c;
        }
    }
    return o;
}

inline std::string page(const std::string& title, const std::string& body) {
    return "<!doctype html>\n<html lang=\"en\"><head><meta charset=\"utf-8\"><title>" + html_escape(title) +
           "</title></head>\n<body>\n<nav><a href=\"/\">Map</a> | <a href=\"/about\">About</a> | <a "
           "href=\"/contact\">Contact</a></nav>\n" +
           body + "\n</body></html>\n";
}

inline std::string contact_form(const ContactMessage& m, const std::map<std::string, std::string>& errors) {
    std::string err;
    for (const auto& [field, msg] : errors)
        err += "<p class=\"error\" data-field=\"" + field + "\">" + html_escape(field + ": " + msg) + "</p>\n";
    return page("Contact", "<h1>Contact</h1>\n" + err +
                               "<form method=\"post\" action=\"/contact\">\n"
                               "<label>Name <input name=\"name\" value=\"" + html_escape(m.name) + "\"></label>\n"
                               "<label>Email <input name=\"email\" value=\"" + html_escape(m.email) + "\"></label>\n"
                               "<label>Message <textarea name=\"body\">" + html_escape(m.body) + "</textarea></label>\n"
                               "<button type=\"submit\">Send</button>\n</form>");
}

// ---- serving state -------------------------------------------------------------------

struct Models {
    model::ModelBundle baseline;
    model::ModelBundle segment;
    std::string baseline_digest;
    std::string segment_digest;
};

struct Geography {
    context::BaselineContext baseline;
    cellgrid::GridSpec grid{0.2};
    std::set<cellgrid::CellId> candidates;
    features::SegmentHistory segment_history;
    std::vector<segments::RoadSegment> active;
    segments::SegmentIndex active_index;
    std::size_t segments_total = 0;
};

struct Options {
    weather_live::Fetcher fetcher = weather_live::provider_fetch;
    std::function<UtcTime()> clock = now_utc;
    std::shared_ptr<MailTransport> transport; // used when SMTP is configured
    std::ostream* access_log = &std::cerr;
    bool build_forecast_at_start = true;
};

struct HttpError {
    int status;
    std::string code;
    std::string message;
    json fields = json::array();
};

class App {
  public:
    App(config::AppConfig cfg, Options opt = {}) : cfg_(std::move(cfg)), opt_(std::move(opt)), log_(cfg_.contact.fallback_log) {
        models_.baseline = model::load_bundle(cfg_.baseline_bundle);
        models_.segment = model::load_bundle(cfg_.segment_bundle);
        models_.baseline_digest = detail::sha256_file(cfg_.baseline_bundle);
        models_.segment_digest = detail::sha256_file(cfg_.segment_bundle);
        if (models_.baseline.meta.layer != "baseline" || models_.segment.meta.layer != "segment")
            throw Error("MODEL_CORRUPT", "bundle layers do not match their config slots");

        geo_.baseline = pipeline::load_baseline_context(cfg_.baseline_context);
        geo_.grid = cellgrid::GridSpec(geo_.baseline.grid_res_deg);
        geo_.candidates.insert(geo_.baseline.candidate_cells.begin(), geo_.baseline.candidate_cells.end());
        const auto sctx = pipeline::load_segment_context(cfg_.segment_context);
        geo_.segment_history = pipeline::history_of(sctx);
        const auto all = segments::load_segments(cfg_.segments);
        geo_.segments_total = all.size();
        geo_.active = pipeline::active_segments(all, geo_.segment_history);
        geo_.active_index = segments::build_index(geo_.active);

        if (!cfg_.overlay.empty() && fs::is_regular_file(cfg_.overlay)) {
            try {
                overlay_.store(std::make_shared<const overlay::OverlayTensor>(overlay::load_overlay(cfg_.overlay)));
            } catch (const Error& e) {
                overlay_error_ = e.what();
            }
        }

        weather_live::WeatherChain::Options wopt;
        wopt.cache_grid_deg = geo_.baseline.grid_res_deg;
        wopt.ttl = std::chrono::seconds{cfg_.weather_ttl_s};
        wopt.capacity = cfg_.weather_cache_capacity;
        chain_ = std::make_unique<weather_live::WeatherChain>(cfg_.providers, geo_.baseline.climatology,
                                                              geo_.baseline.stations, wopt, opt_.fetcher, opt_.clock);
        forecasts_ = std::make_unique<overlay::ForecastManager>(
            [this](UtcTime now) { return build_forecast(now); }, std::chrono::seconds{cfg_.refresh_interval_s},
            opt_.clock);
        if (!cfg_.forecast.empty() && fs::is_regular_file(cfg_.forecast)) {
            try {
                forecasts_->install(pipeline::load_forecast(cfg_.forecast));
            } catch (const Error& e) {
                forecast_error_ = e.what();
            }
        }
        if (!forecasts_->current() && opt_.build_forecast_at_start) {
            try {
                forecasts_->rebuild_now();
            } catch (const Error& e) {
                forecast_error_ = e.what();
            }
        }
        if (cfg_.contact.smtp) transport_ = opt_.transport ? opt_.transport : std::make_shared<UnavailableTransport>();
        install_routes();
    }

    ~App() { stop(); }

    App(const App&) = delete;
    App& operator=(const App&) = delete;

    httplib::Server& server() { return server_; }
    overlay::ForecastManager& forecasts() { return *forecasts_; }
    weather_live::WeatherChain& weather() { return *chain_; }
    const Geography& geography() const { return geo_; }
    const config::AppConfig& config() const { return cfg_; }

    overlay::RoadForecast build_forecast(UtcTime now) {
        return overlay::build_road_forecast(
            geo_.active, geo_.segment_history, geo_.grid, [this](geo::GeoPoint p) { return chain_->cached(p); },
            models_.segment, now);
    }

    // Binds (port 0 = any free port) and serves on a background thread; returns the port.
    int start() {
        int port = cfg_.port;
        if (port == 0) port = server_.bind_to_any_port(cfg_.host);
        else if (!server_.bind_to_port(cfg_.host, port)) port = -1;
        if (port < 0) throw Error("BIND_FAILED", "cannot bind " + cfg_.host + ":" + std::to_string(cfg_.port));
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        return port;
    }

    // Blocking variant for the CLI.
    bool listen() { return server_.listen(cfg_.host, cfg_.port); }

    void stop() {
        if (server_.is_running()) server_.stop();
        if (thread_.joinable()) thread_.join();
    }

  private:
    // ---- helpers ----

    static void send_json(httplib::Response& res, int status, const json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    static void send_error(httplib::Response& res, const HttpError& e) {
        json err = {{"code", e.code}, {"message", e.message}};
        if (!e.fields.empty()) err["fields"] = e.fields;
        send_json(res, e.status, {{"error", err}});
    }

    static HttpError validation(const std::string& field, const std::string& message) {
        return {422, "VALIDATION_ERROR", message, json::array({field})};
    }

    static double number_param(const httplib::Request& req, const std::string& name, std::optional<double> fallback,
                               double lo, double hi) {
        if (!req.has_param(name)) {
            if (fallback) return *fallback;
            throw validation(name, "missing required parameter " + name);
        }
        const auto v = detail::parse_double(req.get_param_value(name));
        if (!v || !std::isfinite(*v)) throw validation(name, name + " must be a number");
        if (*v < lo || *v > hi)
            throw validation(name, name + " must be within [" + features::fmt_exact(lo) + ", " + features::fmt_exact(hi) + "]");
        return *v;
    }

    static long int_segment(const std::string& s, const std::string& name, long lo, long hi) {
        const auto v = detail::parse_int(s);
        if (!v || *v < lo || *v > hi)
            throw validation(name, name + " must be an integer in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
        return static_cast<long>(*v);
    }

    static geo::TileCoord tile_param(const httplib::Match& m, std::size_t first) {
        const int z = static_cast<int>(int_segment(m[first], "z", 0, geo::kMaxZoom));
        const long n = 1L << z;
        const auto x = static_cast<std::uint32_t>(int_segment(m[first + 1], "x", 0, n - 1));
        const auto y = static_cast<std::uint32_t>(int_segment(m[first + 2], "y", 0, n - 1));
        return {z, x, y};
    }

    long cache_max_age() const {
        const auto age = forecasts_->age();
        const long interval = cfg_.refresh_interval_s;
        if (!age) return 0;
        return std::clamp<long>(interval - static_cast<long>(age->count()), 0, interval);
    }

    std::shared_ptr<const overlay::RoadForecast> forecast() {
        forecasts_->maybe_refresh();
        return forecasts_->current();
    }

    std::string static_page(const std::string& file, const std::string& title, const std::string& fallback) const {
        if (!cfg_.static_dir.empty()) {
            const auto p = fs::path(cfg_.static_dir) / file;
            if (fs::is_regular_file(p)) return detail::read_file(p.string());
        }
        return page(title, fallback);
    }

    // Weather for the cell of q: the cached 24-hour forecast, or a one-hour lookup when
    // `at` lies outside it.
    std::vector<weather_live::ForecastHour> weather_for(geo::GeoPoint q, UtcTime hour) {
        auto hours = chain_->cached(q);
        for (const auto& h : hours)
            if (h.valid_at == hour) return {h};
        return chain_->get_point_forecast(geo_.grid.cell_center(geo_.grid.cell_of(q)), hour - std::chrono::seconds{1}, 1);
    }

    double baseline_score(cellgrid::CellId cell, UtcTime t, const ingest::WeatherValues& w) const {
        const auto f = features::baseline_features(cell, features::TimeParts::of(t), geo_.baseline.history, geo_.grid, w);
        return model::predict_proba(models_.baseline, f);
    }

    json forecast_json(const overlay::RoadForecast& f) const {
        return {{"generated_at", format_rfc3339(f.generated_at)}, {"build_id", f.build_id}, {"horizon", f.horizon}};
    }

    // ---- handlers ----

    void health(const httplib::Request&, httplib::Response& res) {
        const auto ov = overlay_.load();
        const auto f = forecasts_->current();
        const auto age = forecasts_->age();
        const bool ok = ov && f;
        send_json(res, 200,
                  {{"status", ok ? "ok" : "degraded"},
                   {"model_loaded", true},
                   {"overlay_loaded", static_cast<bool>(ov)},
                   {"forecast_loaded", static_cast<bool>(f)},
                   {"forecast_age_s", age ? json(age->count()) : json(nullptr)}});
    }

    void risk(const httplib::Request& req, httplib::Response& res) {
        const double lat = number_param(req, "lat", std::nullopt, -90.0, 90.0);
        const double lon = number_param(req, "lon", std::nullopt, -180.0, 180.0);
        UtcTime at = next_full_hour(opt_.clock());
        if (req.has_param("at")) {
            const auto t = parse_rfc3339(req.get_param_value("at"));
            if (!t) throw validation("at", "at must be an RFC 3339 UTC timestamp");
            at = floor_hour(*t);
        }
        const geo::GeoPoint q{lat, lon};
        const auto cell = geo_.grid.cell_of(q);
        const auto wx = weather_for(q, at);
        const auto& w = wx.front();
        json nearest = nullptr;
        const auto m = segments::match_point(q, geo_.active_index, cfg_.match_cutoff_m);
        if (m.matched) {
            const auto* seg = geo_.active_index.find(*m.segment_id);
            const auto f = features::segment_features(*seg, features::TimeParts::of(at), geo_.segment_history, geo_.grid,
                                                      w.values);
            nearest = {{"id", *m.segment_id},
                       {"distance_m", *m.distance_m},
                       {"segment_score", model::predict_proba(models_.segment, f)}};
        }
        send_json(res, 200,
                  {{"cell_id", cellgrid::to_token(cell)},
                   {"covered", geo_.candidates.count(cell) > 0},
                   {"at", format_rfc3339(at)},
                   {"baseline_score", baseline_score(cell, at, w.values)},
                   {"nearest_segment", nearest},
                   {"weather", weather_live::to_json(w)},
                   {"sources", json::array({weather_live::to_string(w.source)})}});
    }

    void roads(const httplib::Request& req, httplib::Response& res) {
        const double min_lat = number_param(req, "min_lat", std::nullopt, -90.0, 90.0);
        const double min_lon = number_param(req, "min_lon", std::nullopt, -180.0, 180.0);
        const double max_lat = number_param(req, "max_lat", std::nullopt, -90.0, 90.0);
        const double max_lon = number_param(req, "max_lon", std::nullopt, -180.0, 180.0);
        const double hour = number_param(req, "hour_offset", 0.0, 0.0, 23.0);
        if (hour != std::floor(hour)) throw validation("hour_offset", "hour_offset must be an integer in [0, 23]");
        if (min_lat > max_lat || min_lon > max_lon)
            throw HttpError{422, "VALIDATION_ERROR", "bbox is inverted", json::array({"min_lat", "min_lon", "max_lat", "max_lon"})};
        const auto f = forecast();
        if (!f) throw HttpError{503, "FORECAST_UNAVAILABLE", "no road forecast has been built yet"};
        const geo::BBox box{min_lat, min_lon, max_lat, max_lon};
        std::vector<std::uint32_t> hits;
        for (auto i : geo_.active_index.in_box(box))
            if (geo_.active_index.bbox(i).intersects(box)) hits.push_back(i);
        const auto& segs = geo_.active_index.segments();
        std::sort(hits.begin(), hits.end(), [&](auto a, auto b) { return segs[a].segment_id < segs[b].segment_id; });
        const bool truncated = hits.size() > cfg_.max_results;
        if (truncated) hits.resize(cfg_.max_results);
        json out = json::array();
        const auto h = static_cast<std::size_t>(hour);
        for (auto i : hits) {
            const auto& s = segs[i];
            const auto it = f->segments.find(s.segment_id);
            if (it == f->segments.end()) continue;
            out.push_back({{"id", s.segment_id},
                           {"class", ingest::to_string(s.cls)},
                           {"length_m", s.length_m},
                           {"midpoint", {s.midpoint.lon, s.midpoint.lat}},
                           {"score", it->second.scores[h]},
                           {"source", weather_live::to_string(it->second.sources[h])}});
        }
        send_json(res, 200,
                  {{"hour_offset", h}, {"valid_at", format_rfc3339(f->hours[h])}, {"forecast", forecast_json(*f)},
                   {"count", out.size()}, {"truncated", truncated}, {"segments", out}});
    }

    void segment_detail(const httplib::Request& req, httplib::Response& res) {
        const std::string id = req.matches[1];
        const auto* seg = geo_.active_index.find(id);
        if (!seg) throw HttpError{404, "SEGMENT_NOT_FOUND", "no active segment " + id};
        const auto f = forecast();
        if (!f) throw HttpError{503, "FORECAST_UNAVAILABLE", "no road forecast has been built yet"};
        const auto* st = geo_.segment_history.find(id);
        json coords = json::array();
        for (const auto& p : seg->geometry.points) coords.push_back({p.lon, p.lat});
        json series = json::array();
        if (const auto it = f->segments.find(id); it != f->segments.end())
            for (std::size_t i = 0; i < overlay::kForecastHorizon; ++i)
                series.push_back({{"valid_at", format_rfc3339(f->hours[i])},
                                  {"score", it->second.scores[i]},
                                  {"source", weather_live::to_string(it->second.sources[i])}});
        send_json(res, 200,
                  {{"id", id},
                   {"road_id", seg->road_id},
                   {"part_index", seg->part_index},
                   {"class", ingest::to_string(seg->cls)},
                   {"length_m", seg->length_m},
                   {"geometry", coords},
                   {"history",
                    {{"total_events", st ? st->total : 0},
                     {"severity_mean", st ? st->severity_mean() : 0.0},
                     {"same_how", st ? json(st->by_how) : json(std::array<std::uint32_t, 168>{})}}},
                   {"forecast", forecast_json(*f)},
                   {"series", series}});
    }

    void timeline(const httplib::Request& req, httplib::Response& res) {
        const double lat = number_param(req, "lat", std::nullopt, -90.0, 90.0);
        const double lon = number_param(req, "lon", std::nullopt, -180.0, 180.0);
        const auto cell = geo_.grid.cell_of({lat, lon});
        json doc = {{"cell_id", cellgrid::to_token(cell)}, {"series", json::array()}};
        if (!geo_.candidates.count(cell)) {
            doc["note"] = "no_coverage";
            send_json(res, 200, doc);
            return;
        }
        for (const auto& h : chain_->cached({lat, lon}))
            doc["series"].push_back({{"valid_at", format_rfc3339(h.valid_at)},
                                     {"score", baseline_score(cell, h.valid_at, h.values)},
                                     {"source", weather_live::to_string(h.source)}});
        send_json(res, 200, doc);
    }

    void overlay_tile(const httplib::Request& req, httplib::Response& res) {
        const int how = static_cast<int>(int_segment(req.matches[1], "how", 0, overlay::kHoursPerWeek - 1));
        const auto t = tile_param(req.matches, 2);
        const auto ov = overlay_.load();
        if (!ov) throw HttpError{503, "OVERLAY_UNAVAILABLE", "weekly overlay is not loaded"};
        res.status = 200;
        res.set_header("Cache-Control", "public, max-age=" + std::to_string(cache_max_age()));
        res.set_content(overlay::render_raster_tile(t, *ov, how, ramp_), "image/png");
    }

    void road_tile(const httplib::Request& req, httplib::Response& res) {
        const int hour = static_cast<int>(int_segment(req.matches[1], "hour", 0, overlay::kForecastHorizon - 1));
        const auto t = tile_param(req.matches, 2);
        const auto f = forecast();
        if (!f) throw HttpError{503, "FORECAST_UNAVAILABLE", "no road forecast has been built yet"};
        const auto doc = overlay::build_road_tile_json(t, *f, hour, geo_.active_index, cfg_.min_road_zoom);
        res.status = 200;
        res.set_header("Cache-Control", "public, max-age=" + std::to_string(cache_max_age()));
        res.set_content(doc.dump(), "application/json");
    }

    void meta(const httplib::Request&, httplib::Response& res) {
        auto model_json = [](const model::ModelBundle& b, const std::string& digest) {
            return json{{"digest", digest},
                        {"layer", b.meta.layer},
                        {"trained_at", b.meta.trained_at},
                        {"format_version", b.meta.format_version},
                        {"train_years", b.meta.train_years},
                        {"eval_year", b.meta.eval_year},
                        {"features", b.feature_names.size()},
                        {"metrics", model::to_json(b.metrics)}};
        };
        const auto ov = overlay_.load();
        const auto age = forecasts_->age();
        auto fstatus = forecasts_->status();
        if (fstatus["last_error"].get<std::string>().empty() && !forecast_error_.empty())
            fstatus["last_error"] = forecast_error_;
        send_json(res, 200,
                  {{"models", {{"baseline", model_json(models_.baseline, models_.baseline_digest)},
                               {"segment", model_json(models_.segment, models_.segment_digest)}}},
                   {"overlay", ov ? ov->meta : json(nullptr)},
                   {"overlay_error", overlay_error_},
                   {"forecast",
                    {{"age_s", age ? json(age->count()) : json(nullptr)},
                     {"refresh_interval_s", cfg_.refresh_interval_s},
                     {"status", fstatus}}},
                   {"providers", chain_->health()},
                   {"weather_cache", {{"entries", chain_->cache_size()}, {"hits", chain_->cache_hits()},
                                      {"misses", chain_->cache_misses()}}},
                   {"grid", {{"kind", "equal-angle"}, {"resolution_deg", geo_.grid.resolution_deg()},
                             {"candidate_cells", geo_.candidates.size()}}},
                   {"segments", {{"total", geo_.segments_total}, {"active", geo_.active.size()}}},
                   {"routes", route_census()}});
    }

    void stations(const httplib::Request&, httplib::Response& res) {
        std::map<std::string, std::size_t> counts;
        for (const auto& [cell, st] : geo_.baseline.cell_station) ++counts[st];
        json list = json::array();
        for (const auto& s : geo_.baseline.stations)
            list.push_back({{"id", s.id}, {"name", s.name}, {"lat", s.loc.lat}, {"lon", s.loc.lon},
                            {"assigned_cells", counts[s.id]}});
        send_json(res, 200, {{"count", list.size()}, {"stations", list}});
    }

    void refresh(const httplib::Request& req, httplib::Response& res) {
        const auto token = req.get_header_value("X-Admin-Token");
        if (cfg_.admin_token.empty() || token != cfg_.admin_token)
            throw HttpError{403, "FORBIDDEN", "missing or invalid X-Admin-Token"};
        const auto id = forecasts_->trigger();
        send_json(res, 202, {{"status", "accepted"}, {"build_id", id}});
    }

    void contact_post(const httplib::Request& req, httplib::Response& res) {
        ContactMessage m;
        auto field = [&](const char* k) { return req.has_param(k) ? req.get_param_value(k) : std::string{}; };
        m.name = field("name");
        m.email = field("email");
        m.body = field("body");
        m.received_at = format_rfc3339(opt_.clock());
        const auto errors = validate_contact(m);
        if (!errors.empty()) {
            res.status = 422;
            res.set_content(contact_form(m, errors), "text/html; charset=utf-8");
            return;
        }
        std::string why = "smtp not configured";
        bool delivered = false;
        if (transport_) {
            std::string err;
            delivered = transport_->send(m, err);
            why = delivered ? "" : "smtp failed: " + err;
        }
        if (!delivered) log_.append(m, why);
        res.status = 200;
        res.set_content(page("Thanks", "<h1>Thank you</h1><p>Your message was received.</p>"),
                        "text/html; charset=utf-8");
    }

    using Handler = void (App::*)(const httplib::Request&, httplib::Response&);

    httplib::Server::Handler wrap(Handler h) {
        return [this, h](const httplib::Request& req, httplib::Response& res) {
            try {
                (this->*h)(req, res);
            } catch (const HttpError& e) {
                send_error(res, e);
            } catch (const Error& e) {
                send_error(res, {e.code() == "INVALID_TILE" || e.code() == "INVALID_ARGUMENT" ? 422 : 500, e.code(),
                                 e.what()});
            } catch (const std::exception& e) {
                send_error(res, {500, "INTERNAL", e.what()});
            }
        };
    }

    void install_routes() {
        const std::map<std::string, Handler> handlers = {
            {"GET /", nullptr},
            {"GET /about", nullptr},
            {"GET /contact", nullptr},
            {"POST /contact", &App::contact_post},
            {"GET /health", &App::health},
            {"GET /api/risk", &App::risk},
            {"GET /api/roads", &App::roads},
            {"GET /api/segments/{id}", &App::segment_detail},
            {"GET /api/timeline", &App::timeline},
            {"GET /tiles/overlay/{how}/{z}/{x}/{y}.png", &App::overlay_tile},
            {"GET /tiles/roads/{hour}/{z}/{x}/{y}.json", &App::road_tile},
            {"GET /api/meta", &App::meta},
            {"GET /api/stations", &App::stations},
            {"POST /api/refresh", &App::refresh},
        };
        for (const auto& r : route_table()) {
            const auto key = r.method + " " + r.path;
            httplib::Server::Handler fn;
            if (r.path == "/")
                fn = [this](const httplib::Request&, httplib::Response& res) {
                    res.set_content(static_page("index.html", "Road risk map",
                                                "<h1>Road risk map</h1><p>The map client is not built; the API is "
                                                "available under /api.</p>"),
                                    "text/html; charset=utf-8");
                };
            else if (r.path == "/about")
                fn = [this](const httplib::Request&, httplib::Response& res) {
                    res.set_content(static_page("about.html", "About",
                                                "<h1>About</h1><p>Weekly cell risk overlay and 24-hour road-segment "
                                                "forecasts from incident history and weather.</p>"),
                                    "text/html; charset=utf-8");
                };
            else if (r.method == "GET" && r.path == "/contact")
                fn = [](const httplib::Request&, httplib::Response& res) {
                    res.set_content(contact_form({}, {}), "text/html; charset=utf-8");
                };
            else
                fn = wrap(handlers.at(key));
            if (r.method == "GET") server_.Get(r.pattern, fn);
            else server_.Post(r.pattern, fn);
        }
        server_.set_error_handler([](const httplib::Request&, httplib::Response& res) {
            if (!res.body.empty()) return httplib::Server::HandlerResponse::Unhandled;
            send_error(res, {res.status, res.status == 404 ? "NOT_FOUND" : "HTTP_" + std::to_string(res.status),
                             httplib::status_message(res.status)});
            return httplib::Server::HandlerResponse::Handled;
        });
        server_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr) {
            send_error(res, {500, "INTERNAL", "unhandled failure"});
        });
        server_.set_pre_routing_handler([](const httplib::Request&, httplib::Response&) {
            request_start() = std::chrono::steady_clock::now();
            return httplib::Server::HandlerResponse::Unhandled;
        });
        server_.set_logger([this](const httplib::Request& req, const httplib::Response& res) {
            if (!opt_.access_log) return;
            const double ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - request_start()).count();
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.2f", ms);
            std::lock_guard lk(log_mu_);
            *opt_.access_log << req.method << ' ' << req.path << ' ' << res.status << ' ' << buf << "ms\n";
        });
    }

    static std::chrono::steady_clock::time_point& request_start() {
        thread_local std::chrono::steady_clock::time_point t;
        return t;
    }

    config::AppConfig cfg_;
    Options opt_;
    Models models_;
    Geography geo_;
    Snapshot<overlay::OverlayTensor> overlay_;
    std::string overlay_error_;
    std::string forecast_error_;
    std::unique_ptr<weather_live::WeatherChain> chain_;
    std::unique_ptr<overlay::ForecastManager> forecasts_;
    std::shared_ptr<MailTransport> transport_;
    FallbackLog log_;
    overlay::ColorRamp ramp_ = overlay::ColorRamp::standard();
    httplib::Server server_;
    std::thread thread_;
    std::mutex log_mu_;
};

} // namespace rrm::service
