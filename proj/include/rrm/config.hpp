#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rrm/error.hpp"
#include "rrm/weather_live.hpp"

namespace rrm::config {

namespace fs = std::filesystem;

struct SmtpSettings {
    std::string host;
    int port = 25;
    std::string from;
    std::string to;
};

struct ContactSettings {
    std::optional<SmtpSettings> smtp;
    std::string fallback_log;
};

struct AppConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string baseline_bundle;
    std::string segment_bundle;
    std::string segments;
    std::string baseline_context;
    std::string segment_context;
    std::string overlay;  // optional
    std::string forecast; // optional initial forecast
    std::string tiles_dir;  // optional
    std::string static_dir; // optional
    std::vector<weather_live::ProviderConfig> providers;
    ContactSettings contact;
    std::string admin_token;
    int refresh_interval_s = 3600;
    double match_cutoff_m = 1000.0;
    std::size_t max_results = 5000;
    int min_road_zoom = 10;
    int weather_ttl_s = 1800;
    std::size_t weather_cache_capacity = 10000;
    std::string source_path; // file the config was read from, if any
};

inline std::string resolve(const fs::path& base, const std::string& p) {
    if (p.empty()) return p;
    const fs::path path(p);
    return path.is_absolute() ? p : (base / path).lexically_normal().string();
}

// Validates shape and types; relative paths are resolved against base_dir.
inline AppConfig parse_app_config(const nlohmann::json& j, const fs::path& base_dir) {
    auto fail = [](const std::string& m) { return Error("CONFIG_INVALID", m); };
    if (!j.is_object()) throw fail("config must be a JSON object");
    AppConfig c;
    auto str = [&](const char* key, std::string& out, bool required) {
        if (!j.contains(key)) {
            if (required) throw fail(std::string("missing required field \"") + key + "\"");
            return;
        }
        if (!j[key].is_string()) throw fail(std::string("field \"") + key + "\" must be a string");
        out = j[key].get<std::string>();
        if (required && out.empty()) throw fail(std::string("field \"") + key + "\" is empty");
    };
    auto num = [&](const char* key, auto& out, double lo, double hi) {
        if (!j.contains(key)) return;
        if (!j[key].is_number()) throw fail(std::string("field \"") + key + "\" must be a number");
        const double v = j[key].get<double>();
        if (!(v >= lo && v <= hi)) throw fail(std::string("field \"") + key + "\" out of range");
        out = static_cast<std::remove_reference_t<decltype(out)>>(v);
    };
    str("host", c.host, false);
    num("port", c.port, 0, 65535);
    str("baseline_bundle", c.baseline_bundle, true);
    str("segment_bundle", c.segment_bundle, true);
    str("segments", c.segments, true);
    str("baseline_context", c.baseline_context, true);
    str("segment_context", c.segment_context, true);
    str("overlay", c.overlay, false);
    str("forecast", c.forecast, false);
    str("tiles_dir", c.tiles_dir, false);
    str("static_dir", c.static_dir, false);
    str("admin_token", c.admin_token, false);
    num("refresh_interval_s", c.refresh_interval_s, 1, 7 * 24 * 3600);
    num("match_cutoff_m", c.match_cutoff_m, 1, 100000);
    num("max_results", c.max_results, 1, 1e7);
    num("min_road_zoom", c.min_road_zoom, 0, 22);
    num("weather_ttl_s", c.weather_ttl_s, 1, 7 * 24 * 3600);
    num("weather_cache_capacity", c.weather_cache_capacity, 1, 1e8);
    if (j.contains("providers")) {
        if (!j["providers"].is_array()) throw fail("\"providers\" must be an array");
        int i = 0;
        for (const auto& p : j["providers"]) {
            if (!p.is_object() || !p.contains("name") || !p["name"].is_string())
                throw fail("provider entries need a string \"name\"");
            try {
                c.providers.push_back(weather_live::provider_from_json(p, i++));
            } catch (const nlohmann::json::exception& e) {
                throw fail(std::string("provider entry: ") + e.what());
            }
        }
        weather_live::chain_order(c.providers); // duplicate priorities
    }
    if (j.contains("contact")) {
        const auto& ct = j["contact"];
        if (!ct.is_object()) throw fail("\"contact\" must be an object");
        if (ct.contains("fallback_log")) {
            if (!ct["fallback_log"].is_string()) throw fail("\"contact.fallback_log\" must be a string");
            c.contact.fallback_log = ct["fallback_log"].get<std::string>();
        }
        if (ct.contains("smtp") && !ct["smtp"].is_null()) {
            const auto& s = ct["smtp"];
            if (!s.is_object() || !s.contains("host") || !s["host"].is_string())
                throw fail("\"contact.smtp\" needs a string \"host\"");
            SmtpSettings smtp;
            smtp.host = s["host"].get<std::string>();
            smtp.port = s.value("port", 25);
            smtp.from = s.value("from", std::string{});
            smtp.to = s.value("to", std::string{});
            c.contact.smtp = smtp;
        }
    }
    if (c.contact.fallback_log.empty()) c.contact.fallback_log = "contact_log.jsonl";
    for (auto* p : {&c.baseline_bundle, &c.segment_bundle, &c.segments, &c.baseline_context, &c.segment_context,
                    &c.overlay, &c.forecast, &c.tiles_dir, &c.static_dir, &c.contact.fallback_log})
        *p = resolve(base_dir, *p);
    return c;
}

// RRM_PORT and RRM_ADMIN_TOKEN override the file; provider URLs via their own variables.
inline AppConfig apply_env(AppConfig c) {
    if (const char* p = std::getenv("RRM_PORT"); p && *p) {
        char* end = nullptr;
        const long v = std::strtol(p, &end, 10);
        if (*end != '\0' || v < 0 || v > 65535) throw Error("CONFIG_INVALID", "RRM_PORT must be 0..65535");
        c.port = static_cast<int>(v);
    }
    if (const char* t = std::getenv("RRM_ADMIN_TOKEN"); t && *t) c.admin_token = t;
    c.providers = weather_live::apply_env_overrides(c.providers);
    return c;
}

inline AppConfig load_app_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("CONFIG_INVALID", "cannot read config " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error("CONFIG_INVALID", path + ": " + e.what());
    }
    auto c = parse_app_config(j, fs::absolute(fs::path(path)).parent_path());
    c.source_path = path;
    return apply_env(std::move(c));
}

} // namespace rrm::config
