#pragma once

// Live point forecasts: an ordered provider chain with climatology fallback and a
// per-cell TTL/LRU cache with request coalescing.

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <functional>
#include <future>
#include <list>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "rrm/cellgrid.hpp"
#include "rrm/error.hpp"
#include "rrm/geo.hpp"
#include "rrm/ingest.hpp"
#include "rrm/time.hpp"

namespace rrm::weather_live {

using geo::GeoPoint;
using ingest::WeatherValues;

inline constexpr int kDefaultHorizon = 24;

enum class Source { live_primary, live_secondary, climatology };

inline const char* to_string(Source s) {
    switch (s) {
    case Source::live_primary: return "live-primary";
    case Source::live_secondary: return "live-secondary";
    case Source::climatology: return "climatology";
    }
    return "climatology";
}

struct ForecastHour {
    UtcTime valid_at;
    WeatherValues values;
    Source source = Source::climatology;
    friend bool operator==(const ForecastHour&, const ForecastHour&) = default;
};

inline nlohmann::json to_json(const ForecastHour& h) {
    return {{"valid_at", format_rfc3339(h.valid_at)}, {"temp_c", h.values.temp_c},
            {"dewpoint_c", h.values.dewpoint_c},      {"rel_humidity", h.values.rel_humidity},
            {"wind_ms", h.values.wind_ms},            {"precip_mm", h.values.precip_mm},
            {"source", to_string(h.source)}};
}

struct ProviderConfig {
    std::string name;
    std::string base_url;
    int timeout_ms = 2000;
    bool enabled = true;
    int priority = 0; // lower runs first
};

inline ProviderConfig provider_from_json(const nlohmann::json& j, int default_priority) {
    ProviderConfig p;
    p.name = j.at("name").get<std::string>();
    p.base_url = j.value("base_url", std::string{});
    p.timeout_ms = j.value("timeout_ms", 2000);
    p.enabled = j.value("enabled", true);
    p.priority = j.value("priority", default_priority);
    return p;
}

// RRM_PROVIDER_<NAME>_URL overrides base_url; NAME is upper-cased with non-alphanumerics as '_'.
inline std::string env_override_name(const std::string& provider) {
    std::string n = "RRM_PROVIDER_";
    for (char c : provider) n.push_back(std::isalnum(static_cast<unsigned char>(c)) ? static_cast<char>(std::toupper(c)) : '_');
    return n + "_URL";
}

inline std::vector<ProviderConfig> apply_env_overrides(std::vector<ProviderConfig> ps) {
    for (auto& p : ps)
        if (const char* v = std::getenv(env_override_name(p.name).c_str()); v && *v) p.base_url = v;
    return ps;
}

// Enabled providers in priority order. Duplicate priorities among enabled providers are rejected.
inline std::vector<ProviderConfig> chain_order(const std::vector<ProviderConfig>& ps) {
    std::vector<ProviderConfig> out;
    for (const auto& p : ps)
        if (p.enabled) out.push_back(p);
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.priority < b.priority; });
    for (std::size_t i = 1; i < out.size(); ++i)
        if (out[i].priority == out[i - 1].priority)
            throw Error("CONFIG_INVALID", "providers " + out[i - 1].name + " and " + out[i].name + " share priority " +
                                              std::to_string(out[i].priority));
    return out;
}

struct FetchFailure {
    std::string reason; // timeout | connection | http_status | schema | incomplete
    std::string detail;
};

struct FetchResult {
    std::vector<ForecastHour> hours; // source left at default; the chain assigns it
    std::optional<FetchFailure> failure;
    bool ok() const { return !failure.has_value(); }

    static FetchResult fail(std::string reason, std::string detail = {}) {
        return {{}, FetchFailure{std::move(reason), std::move(detail)}};
    }
};

// Interprets a neutral payload: needs every hour start, start+1h, ... start+(horizon-1)h.
inline FetchResult parse_payload(const std::string& body, UtcTime start, int horizon) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
        return FetchResult::fail("schema", e.what());
    }
    if (!j.is_object() || !j.contains("hours") || !j["hours"].is_array())
        return FetchResult::fail("schema", "missing hours array");
    std::map<std::int64_t, WeatherValues> by_hour;
    for (const auto& h : j["hours"]) {
        if (!h.is_object()) return FetchResult::fail("schema", "hour entry is not an object");
        for (const char* k : {"valid_at", "temp_c", "dewpoint_c", "rel_humidity", "wind_ms", "precip_mm"})
            if (!h.contains(k)) return FetchResult::fail("schema", std::string("missing field ") + k);
        if (!h["valid_at"].is_string()) return FetchResult::fail("schema", "valid_at must be a string");
        const auto at = parse_rfc3339(h["valid_at"].get<std::string>());
        if (!at) return FetchResult::fail("schema", "bad valid_at");
        WeatherValues v;
        double* dst[] = {&v.temp_c, &v.dewpoint_c, &v.rel_humidity, &v.wind_ms, &v.precip_mm};
        const char* keys[] = {"temp_c", "dewpoint_c", "rel_humidity", "wind_ms", "precip_mm"};
        for (int i = 0; i < 5; ++i) {
            if (!h[keys[i]].is_number()) return FetchResult::fail("schema", std::string(keys[i]) + " must be a number");
            *dst[i] = h[keys[i]].get<double>();
            if (!std::isfinite(*dst[i])) return FetchResult::fail("schema", std::string(keys[i]) + " not finite");
        }
        by_hour[to_unix(floor_hour(*at))] = v;
    }
    FetchResult r;
    for (int i = 0; i < horizon; ++i) {
        const UtcTime t = start + std::chrono::hours{i};
        const auto it = by_hour.find(to_unix(t));
        if (it == by_hour.end())
            return FetchResult::fail("incomplete", "missing hour " + format_rfc3339(t));
        r.hours.push_back({t, it->second, Source::climatology});
    }
    return r;
}

struct ParsedUrl {
    std::string origin; // scheme://host[:port]
    std::string prefix; // path without trailing slash
};

inline std::optional<ParsedUrl> split_url(const std::string& url) {
    const auto scheme = url.find("://");
    if (scheme == std::string::npos) return std::nullopt;
    const auto path = url.find('/', scheme + 3);
    ParsedUrl u;
    u.origin = url.substr(0, path);
    u.prefix = path == std::string::npos ? "" : url.substr(path);
    while (!u.prefix.empty() && u.prefix.back() == '/') u.prefix.pop_back();
    return u;
}

// GET {base_url}/forecast?lat=..&lon=..&hours=..; every failure comes back as a value.
inline FetchResult provider_fetch(const ProviderConfig& p, GeoPoint q, int horizon, UtcTime start) {
    const auto url = split_url(p.base_url);
    if (!url) return FetchResult::fail("connection", "bad base_url '" + p.base_url + "'");
    try {
        httplib::Client cli(url->origin);
        const auto ms = std::chrono::milliseconds{std::max(1, p.timeout_ms)};
        cli.set_connection_timeout(ms);
        cli.set_read_timeout(ms);
        cli.set_write_timeout(ms);
        char query[160];
        std::snprintf(query, sizeof query, "/forecast?lat=%.6f&lon=%.6f&hours=%d", q.lat, q.lon, horizon);
        const auto started = std::chrono::steady_clock::now();
        auto res = cli.Get(url->prefix + query);
        if (!res) {
            const auto err = res.error();
            const bool slow = std::chrono::steady_clock::now() - started >= ms;
            if (err == httplib::Error::ConnectionTimeout || (err == httplib::Error::Read && slow))
                return FetchResult::fail("timeout", httplib::to_string(err));
            return FetchResult::fail("connection", httplib::to_string(err));
        }
        if (res->status < 200 || res->status >= 300)
            return FetchResult::fail("http_status", std::to_string(res->status));
        return parse_payload(res->body, start, horizon);
    } catch (const std::exception& e) {
        return FetchResult::fail("connection", e.what());
    }
}

using Fetcher = std::function<FetchResult(const ProviderConfig&, GeoPoint, int, UtcTime)>;

struct ProviderHealth {
    std::size_t successes = 0;
    std::size_t failures = 0;
    std::string last_failure;
};

// Climatology for each hour's (month, hour-of-day) at the given station.
inline std::vector<ForecastHour> climatology_forecast(const ingest::Climatology& clim, const std::string& station,
                                                      UtcTime start, int horizon) {
    std::vector<ForecastHour> out;
    for (int i = 0; i < horizon; ++i) {
        const UtcTime t = start + std::chrono::hours{i};
        const auto p = calendar(t);
        const auto v = clim.values(station, p.month, p.hour);
        if (!v)
            throw Error("NO_WEATHER", "no climatology for station " + station + " month " + std::to_string(p.month) +
                                          " hour " + std::to_string(p.hour));
        out.push_back({t, *v, Source::climatology});
    }
    return out;
}

class WeatherChain {
  public:
    struct Options {
        double cache_grid_deg = 0.2;
        std::chrono::seconds ttl{1800};
        std::size_t capacity = 10000;
    };

    WeatherChain(std::vector<ProviderConfig> providers, ingest::Climatology climatology,
                 std::vector<ingest::Station> stations, Options opt, Fetcher fetcher = provider_fetch,
                 std::function<UtcTime()> clock = now_utc)
        : providers_(chain_order(providers)), climatology_(std::move(climatology)), stations_(std::move(stations)),
          opt_(opt), grid_(opt.cache_grid_deg), fetcher_(std::move(fetcher)), clock_(std::move(clock)) {
        if (opt_.ttl.count() <= 0) throw Error("CONFIG_INVALID", "cache ttl must be positive");
        if (opt_.capacity == 0) throw Error("CONFIG_INVALID", "cache capacity must be positive");
    }

    WeatherChain(std::vector<ProviderConfig> providers, ingest::Climatology climatology,
                 std::vector<ingest::Station> stations)
        : WeatherChain(std::move(providers), std::move(climatology), std::move(stations), Options{}) {}

    const std::vector<ProviderConfig>& providers() const { return providers_; }
    const ingest::Climatology& climatology() const { return climatology_; }
    const std::vector<ingest::Station>& stations() const { return stations_; }

    const ingest::Station& nearest_station(GeoPoint q) const {
        if (stations_.empty()) throw Error("NO_WEATHER", "no representative stations");
        return stations_[ingest::nearest_station(stations_, q)];
    }

    // Exactly `horizon` consecutive hours from the first full hour after `now`. The first
    // provider to supply every hour wins; otherwise the nearest station's climatology.
    std::vector<ForecastHour> get_point_forecast(GeoPoint q, UtcTime now, int horizon = kDefaultHorizon) {
        const UtcTime start = next_full_hour(now);
        for (std::size_t i = 0; i < providers_.size(); ++i) {
            FetchResult r;
            try {
                r = fetcher_(providers_[i], q, horizon, start);
            } catch (const std::exception& e) {
                r = FetchResult::fail("connection", e.what());
            }
            if (r.ok() && static_cast<int>(r.hours.size()) != horizon) r = FetchResult::fail("incomplete");
            record(providers_[i].name, r);
            if (!r.ok()) continue;
            const Source tag = i == 0 ? Source::live_primary : Source::live_secondary;
            for (auto& h : r.hours) h.source = tag;
            return r.hours;
        }
        auto out = climatology_forecast(climatology_, nearest_station(q).id, start, horizon);
        {
            std::lock_guard lk(health_mu_);
            ++fallbacks_[nearest_station(q).id];
        }
        return out;
    }

    // Cached by (cell of q, current hour) with TTL and LRU eviction. Concurrent misses on
    // one key share a single upstream fetch.
    std::vector<ForecastHour> cached(GeoPoint q) {
        const UtcTime now = clock_();
        const auto cell = grid_.cell_of(q);
        const Key key{cell.packed(), to_unix(floor_hour(now))};
        std::shared_future<std::vector<ForecastHour>> fut;
        std::promise<std::vector<ForecastHour>> promise;
        bool owner = false;
        {
            std::lock_guard lk(cache_mu_);
            if (auto it = entries_.find(key); it != entries_.end()) {
                if (now - it->second.stored < opt_.ttl) {
                    lru_.splice(lru_.begin(), lru_, it->second.pos);
                    ++hits_;
                    return it->second.value;
                }
                lru_.erase(it->second.pos);
                entries_.erase(it);
            }
            if (auto it = inflight_.find(key); it != inflight_.end()) {
                fut = it->second;
            } else {
                fut = promise.get_future().share();
                inflight_.emplace(key, fut);
                owner = true;
                ++misses_;
            }
        }
        if (!owner) return fut.get();
        try {
            // Fetch for the cell center so every point in the cell shares one value.
            auto value = get_point_forecast(grid_.cell_center(cell), now);
            {
                std::lock_guard lk(cache_mu_);
                inflight_.erase(key);
                lru_.push_front(key);
                entries_[key] = Entry{value, now, lru_.begin()};
                while (entries_.size() > opt_.capacity) {
                    entries_.erase(lru_.back());
                    lru_.pop_back();
                }
            }
            promise.set_value(value);
            return value;
        } catch (...) {
            {
                std::lock_guard lk(cache_mu_);
                inflight_.erase(key);
            }
            promise.set_exception(std::current_exception());
            throw;
        }
    }

    std::size_t cache_size() const {
        std::lock_guard lk(cache_mu_);
        return entries_.size();
    }
    std::size_t cache_hits() const {
        std::lock_guard lk(cache_mu_);
        return hits_;
    }
    std::size_t cache_misses() const {
        std::lock_guard lk(cache_mu_);
        return misses_;
    }

    nlohmann::json health() const {
        std::lock_guard lk(health_mu_);
        nlohmann::json p = nlohmann::json::object();
        for (const auto& pc : providers_) {
            const auto it = health_.find(pc.name);
            const ProviderHealth h = it == health_.end() ? ProviderHealth{} : it->second;
            p[pc.name] = {{"priority", pc.priority},
                          {"successes", h.successes},
                          {"failures", h.failures},
                          {"last_failure", h.last_failure}};
        }
        return {{"providers", p}, {"climatology_fallbacks_by_station", fallbacks_}};
    }

  private:
    struct Key {
        std::uint64_t cell;
        std::int64_t hour;
        bool operator==(const Key&) const = default;
    };
    struct KeyHash {
        std::size_t operator()(const Key& k) const noexcept {
            return std::hash<std::uint64_t>{}(k.cell * 0x9E3779B97F4A7C15ULL ^ static_cast<std::uint64_t>(k.hour));
        }
    };
    struct Entry {
        std::vector<ForecastHour> value;
        UtcTime stored;
        std::list<Key>::iterator pos;
    };

    void record(const std::string& name, const FetchResult& r) {
        std::lock_guard lk(health_mu_);
        auto& h = health_[name];
        if (r.ok()) {
            ++h.successes;
        } else {
            ++h.failures;
            h.last_failure = r.failure->reason;
        }
    }

    std::vector<ProviderConfig> providers_;
    ingest::Climatology climatology_;
    std::vector<ingest::Station> stations_;
    Options opt_;
    cellgrid::GridSpec grid_;
    Fetcher fetcher_;
    std::function<UtcTime()> clock_;

    mutable std::mutex cache_mu_;
    std::list<Key> lru_;
    std::unordered_map<Key, Entry, KeyHash> entries_;
    std::unordered_map<Key, std::shared_future<std::vector<ForecastHour>>, KeyHash> inflight_;
    std::size_t hits_ = 0;
    std::size_t misses_ = 0;

    mutable std::mutex health_mu_;
    std::map<std::string, ProviderHealth> health_;
    std::map<std::string, std::size_t> fallbacks_;
};

} // namespace rrm::weather_live
