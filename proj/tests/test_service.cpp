#include <gtest/gtest.h>

#include <atomic>
#include <sstream>
#include <thread>

#include "deployment.hpp"
#include "rrm/service.hpp"

using namespace rrm;
using namespace rrm::service;
using nlohmann::json;

namespace {

struct Server {
    std::ostringstream access;
    std::unique_ptr<App> app;
    int port = 0;
    std::unique_ptr<httplib::Client> cli;

    explicit Server(std::function<void(config::AppConfig&)> tweak = {}, Options opt = {}) {
        auto cfg = config::load_app_config(shared_deployment().config_path);
        cfg.port = 0;
        cfg.admin_token = "s3cret";
        if (tweak) tweak(cfg);
        if (!opt.fetcher || opt.fetcher.target_type() == typeid(&weather_live::provider_fetch)) opt.fetcher = failing_fetch;
        opt.access_log = &access;
        app = std::make_unique<App>(cfg, opt);
        port = app->start();
        cli = std::make_unique<httplib::Client>("127.0.0.1", port);
        cli->set_read_timeout(std::chrono::seconds{20});
    }
    ~Server() { app->stop(); }

    httplib::Result get(const std::string& path) { return cli->Get(path); }
    json get_json(const std::string& path, int expect_status = 200) {
        auto r = get(path);
        EXPECT_TRUE(r) << path;
        if (!r) return {};
        EXPECT_EQ(r->status, expect_status) << path << " " << r->body;
        return json::parse(r->body);
    }
};

Server& shared_server() {
    static Server s;
    return s;
}

std::string first_active_id() { return shared_server().app->geography().active.front().segment_id; }

std::string url_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '#') out += "%23";
        else out.push_back(c);
    }
    return out;
}

} // namespace

TEST(Routes, CensusFourPagesTenMachine) {
    const auto c = route_census();
    EXPECT_EQ(c["pages"], 4);
    EXPECT_EQ(c["machine"], 10);
    EXPECT_EQ(c["total"], 14);
    auto& s = shared_server();
    // Every route answers (no 404 for a documented route).
    for (const auto& r : route_table()) {
        if (r.method != "GET" || r.path.find('{') != std::string::npos) continue;
        auto res = s.get(r.path);
        ASSERT_TRUE(res);
        EXPECT_NE(res->status, 404) << r.path;
    }
    EXPECT_EQ(s.get_json("/api/meta")["routes"]["total"], 14);
}

TEST(Pages, PlaceholdersServeHtml) {
    auto& s = shared_server();
    for (const char* p : {"/", "/about", "/contact"}) {
        auto r = s.get(p);
        ASSERT_TRUE(r);
        EXPECT_EQ(r->status, 200);
        EXPECT_NE(r->get_header_value("Content-Type").find("text/html"), std::string::npos);
        EXPECT_NE(r->body.find("<html"), std::string::npos);
    }
}

TEST(Health, OkAfterStartup) {
    const auto j = shared_server().get_json("/health");
    EXPECT_EQ(j["status"], "ok");
    EXPECT_EQ(j["model_loaded"], true);
    EXPECT_EQ(j["overlay_loaded"], true);
}

TEST(Health, DegradedWithoutOverlay) {
    Server s([](config::AppConfig& c) { c.overlay = c.overlay + ".absent"; });
    const auto j = s.get_json("/health");
    EXPECT_EQ(j["status"], "degraded");
    EXPECT_EQ(j["overlay_loaded"], false);
    EXPECT_EQ(s.get_json("/tiles/overlay/0/6/18/24.png", 503)["error"]["code"], "OVERLAY_UNAVAILABLE");
}

TEST(Risk, ValidationAndFallback) {
    auto& s = shared_server();
    auto j = s.get_json("/api/risk?lat=95&lon=0", 422);
    EXPECT_EQ(j["error"]["code"], "VALIDATION_ERROR");
    EXPECT_EQ(j["error"]["fields"], json::array({"lat"}));
    j = s.get_json("/api/risk?lat=abc&lon=0", 422);
    EXPECT_EQ(j["error"]["fields"], json::array({"lat"}));
    j = s.get_json("/api/risk?lon=0", 422);
    EXPECT_EQ(j["error"]["fields"], json::array({"lat"}));
    j = s.get_json("/api/risk?lat=39.3&lon=-75.7&at=yesterday", 422);
    EXPECT_EQ(j["error"]["fields"], json::array({"at"}));

    const auto& seg = s.app->geography().active.front();
    j = s.get_json("/api/risk?lat=" + std::to_string(seg.midpoint.lat) + "&lon=" + std::to_string(seg.midpoint.lon));
    EXPECT_EQ(j["sources"], json::array({"climatology"}));
    EXPECT_EQ(j["weather"]["source"], "climatology");
    EXPECT_GE(j["baseline_score"].get<double>(), 0.0);
    EXPECT_LE(j["baseline_score"].get<double>(), 1.0);
    ASSERT_FALSE(j["nearest_segment"].is_null());
    EXPECT_LT(j["nearest_segment"]["distance_m"].get<double>(), 1.0);

    j = s.get_json("/api/risk?lat=10&lon=10");
    EXPECT_TRUE(j["nearest_segment"].is_null());
    EXPECT_EQ(j["covered"], false);
}

TEST(Roads, BboxQueries) {
    auto& s = shared_server();
    auto j = s.get_json("/api/roads?min_lat=39&min_lon=-76&max_lat=39.6&max_lon=-75.4&hour_offset=3");
    EXPECT_GT(j["count"].get<int>(), 0);
    EXPECT_EQ(j["count"].get<std::size_t>(), s.app->geography().active.size());
    EXPECT_EQ(j["truncated"], false);
    for (const auto& seg : j["segments"]) EXPECT_EQ(seg["source"], "climatology");
    j = s.get_json("/api/roads?min_lat=10&min_lon=10&max_lat=11&max_lon=11");
    EXPECT_EQ(j["count"], 0);
    j = s.get_json("/api/roads?min_lat=39&min_lon=-76&max_lat=39.6&max_lon=-75.4&hour_offset=24", 422);
    EXPECT_EQ(j["error"]["fields"], json::array({"hour_offset"}));
    j = s.get_json("/api/roads?min_lat=40&min_lon=-76&max_lat=39&max_lon=-75", 422);
    EXPECT_EQ(j["error"]["code"], "VALIDATION_ERROR");
}

TEST(Roads, CapAndTruncatedFlag) {
    Server s([](config::AppConfig& c) { c.max_results = 3; });
    const auto j = s.get_json("/api/roads?min_lat=39&min_lon=-76&max_lat=39.6&max_lon=-75.4");
    EXPECT_EQ(j["count"], 3);
    EXPECT_EQ(j["truncated"], true);
}

TEST(Segments, DetailHas24Entries) {
    auto& s = shared_server();
    const auto id = first_active_id();
    const auto j = s.get_json("/api/segments/" + url_escape(id));
    EXPECT_EQ(j["id"], id);
    ASSERT_EQ(j["series"].size(), 24u);
    const auto t0 = parse_rfc3339(j["series"][0]["valid_at"].get<std::string>());
    for (std::size_t i = 0; i < 24; ++i) {
        EXPECT_EQ(parse_rfc3339(j["series"][i]["valid_at"].get<std::string>()), *t0 + std::chrono::hours{i});
        EXPECT_EQ(j["series"][i]["source"], "climatology");
    }
    EXPECT_GT(j["history"]["total_events"].get<int>(), 0);
}

TEST(Segments, UnknownAndNeverHitAre404) {
    auto& s = shared_server();
    EXPECT_EQ(s.get_json("/api/segments/NOPE%230", 404)["error"]["code"], "SEGMENT_NOT_FOUND");
    const auto all = segments::load_segments(s.app->config().segments);
    std::set<std::string> active;
    for (const auto& a : s.app->geography().active) active.insert(a.segment_id);
    for (const auto& seg : all)
        if (!active.count(seg.segment_id)) {
            EXPECT_EQ(s.get_json("/api/segments/" + url_escape(seg.segment_id), 404)["error"]["code"], "SEGMENT_NOT_FOUND");
            break;
        }
}

TEST(Timeline, CoveredAndUncovered) {
    auto& s = shared_server();
    const auto c = s.app->geography().grid.cell_center(*s.app->geography().candidates.begin());
    auto j = s.get_json("/api/timeline?lat=" + std::to_string(c.lat) + "&lon=" + std::to_string(c.lon));
    ASSERT_EQ(j["series"].size(), 24u);
    for (std::size_t i = 1; i < 24; ++i)
        EXPECT_EQ(*parse_rfc3339(j["series"][i]["valid_at"].get<std::string>()) - std::chrono::hours{1},
                  *parse_rfc3339(j["series"][i - 1]["valid_at"].get<std::string>()));
    j = s.get_json("/api/timeline?lat=-30&lon=-20");
    EXPECT_EQ(j["note"], "no_coverage");
    EXPECT_TRUE(j["series"].empty());
}

TEST(Tiles, OverlayAndRoads) {
    auto& s = shared_server();
    const auto t = geo::tile_for({39.3, -75.7}, 8).tile;
    const auto path = "/tiles/overlay/5/8/" + std::to_string(t.x) + "/" + std::to_string(t.y) + ".png";
    auto a = s.get(path), b = s.get(path);
    ASSERT_TRUE(a && b);
    EXPECT_EQ(a->status, 200);
    EXPECT_EQ(a->get_header_value("Content-Type"), "image/png");
    EXPECT_EQ(a->body, b->body);
    EXPECT_NE(a->get_header_value("Cache-Control").find("max-age="), std::string::npos);
    EXPECT_EQ(s.get_json("/tiles/overlay/168/8/1/1.png", 422)["error"]["code"], "VALIDATION_ERROR");
    EXPECT_EQ(s.get_json("/tiles/overlay/0/3/9/0.png", 422)["error"]["code"], "VALIDATION_ERROR");

    const auto rt = geo::tile_for(s.app->geography().active.front().midpoint, 12).tile;
    const auto rpath = "/tiles/roads/0/12/" + std::to_string(rt.x) + "/" + std::to_string(rt.y) + ".json";
    auto ra = s.get(rpath), rb = s.get(rpath);
    ASSERT_TRUE(ra && rb);
    EXPECT_EQ(ra->body, rb->body);
    EXPECT_EQ(ra->get_header_value("Content-Type"), "application/json");
    EXPECT_FALSE(json::parse(ra->body)["segments"].empty());
    const auto empty = s.get_json("/tiles/roads/0/12/0/0.json");
    EXPECT_TRUE(empty["segments"].empty());
    EXPECT_EQ(s.get_json("/tiles/roads/24/12/0/0.json", 422)["error"]["fields"], json::array({"hour"}));
}

TEST(Meta, DigestsAndStations) {
    auto& s = shared_server();
    const auto j = s.get_json("/api/meta");
    EXPECT_EQ(j["models"]["baseline"]["digest"], detail::sha256_file(s.app->config().baseline_bundle));
    EXPECT_EQ(j["models"]["segment"]["digest"], detail::sha256_file(s.app->config().segment_bundle));
    EXPECT_EQ(j["models"]["baseline"]["features"], 16);
    EXPECT_EQ(j["models"]["segment"]["features"], 26);
    const auto st = s.get_json("/api/stations");
    EXPECT_EQ(st["count"].get<std::size_t>(), s.app->geography().baseline.stations.size());
    std::size_t assigned = 0;
    for (const auto& x : st["stations"]) assigned += x["assigned_cells"].get<std::size_t>();
    EXPECT_EQ(assigned, s.app->geography().candidates.size());
}

TEST(Refresh, TokenRequired) {
    auto& s = shared_server();
    auto r = s.cli->Post("/api/refresh");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 403);
    EXPECT_EQ(json::parse(r->body)["error"]["code"], "FORBIDDEN");
    r = s.cli->Post("/api/refresh", httplib::Headers{{"X-Admin-Token", "wrong"}}, "", "text/plain");
    EXPECT_EQ(r->status, 403);
    const auto before = s.app->forecasts().current()->build_id;
    r = s.cli->Post("/api/refresh", httplib::Headers{{"X-Admin-Token", "s3cret"}}, "", "text/plain");
    ASSERT_EQ(r->status, 202);
    const auto j = json::parse(r->body);
    EXPECT_EQ(j["status"], "accepted");
    s.app->forecasts().wait_idle();
    EXPECT_EQ(s.app->forecasts().current()->build_id, j["build_id"].get<std::uint64_t>());
    EXPECT_GT(j["build_id"].get<std::uint64_t>(), before);
}

TEST(Contact, FallbackLogAndValidation) {
    TempDir d("contact");
    const auto log = d / "logs/contact.jsonl";
    Server s([&](config::AppConfig& c) { c.contact.fallback_log = log; });
    auto r = s.cli->Post("/contact", "name=Ana&email=ana%40example.org&body=Hello+there",
                         "application/x-www-form-urlencoded");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 200);
    std::ifstream in(log);
    std::string line;
    ASSERT_TRUE(std::getline(in, line));
    const auto j = json::parse(line);
    EXPECT_EQ(j["email"], "ana@example.org");
    EXPECT_EQ(j["body"], "Hello there");
    EXPECT_EQ(j["reason"], "smtp not configured");

    r = s.cli->Post("/contact", "name=Ana&email=ana%40example.org&body=", "application/x-www-form-urlencoded");
    EXPECT_EQ(r->status, 422);
    EXPECT_NE(r->body.find("message body is required"), std::string::npos);
    r = s.cli->Post("/contact", "email=nope&body=%3Cscript%3E", "application/x-www-form-urlencoded");
    EXPECT_EQ(r->status, 422);
    EXPECT_EQ(r->body.find("<script>"), std::string::npos);
}

TEST(Contact, SmtpFailureFallsBack) {
    struct Failing : MailTransport {
        bool send(const ContactMessage&, std::string& e) override {
            e = "relay refused";
            return false;
        }
    };
    struct Ok : MailTransport {
        int sent = 0;
        bool send(const ContactMessage&, std::string&) override { return ++sent > 0; }
    };
    TempDir d("contact");
    const auto log = d / "c.jsonl";
    Options o;
    o.transport = std::make_shared<Failing>();
    {
        Server s([&](config::AppConfig& c) {
            c.contact.fallback_log = log;
            c.contact.smtp = config::SmtpSettings{"mail.local", 25, "a@b", "c@d"};
        }, o);
        s.cli->Post("/contact", "email=a%40b&body=x", "application/x-www-form-urlencoded");
    }
    std::ifstream in(log);
    std::string line;
    ASSERT_TRUE(std::getline(in, line));
    EXPECT_EQ(json::parse(line)["reason"], "smtp failed: relay refused");

    auto ok = std::make_shared<Ok>();
    o.transport = ok;
    TempDir d2("contact");
    Server s([&](config::AppConfig& c) {
        c.contact.fallback_log = d2 / "c.jsonl";
        c.contact.smtp = config::SmtpSettings{"mail.local", 25, "a@b", "c@d"};
    }, o);
    s.cli->Post("/contact", "email=a%40b&body=x", "application/x-www-form-urlencoded");
    EXPECT_EQ(ok->sent, 1);
    EXPECT_FALSE(std::filesystem::exists(d2 / "c.jsonl"));
}

TEST(Errors, StructuredEverywhere) {
    auto& s = shared_server();
    const auto j = s.get_json("/no/such/route", 404);
    EXPECT_EQ(j["error"]["code"], "NOT_FOUND");
    EXPECT_NE(s.access.str().find("GET /no/such/route 404"), std::string::npos);
}

TEST(Forecast, FailingProvidersGiveClimatologyEverywhere) {
    auto& s = shared_server();
    const auto f = s.app->forecasts().current();
    ASSERT_TRUE(f);
    EXPECT_EQ(f->segments.size(), s.app->geography().active.size());
    for (const auto& [id, sf] : f->segments)
        for (auto src : sf.sources) ASSERT_EQ(src, weather_live::Source::climatology);
}

TEST(Forecast, LiveProviderTagsPrimary) {
    Options o;
    o.fetcher = [](const weather_live::ProviderConfig&, geo::GeoPoint, int h, UtcTime start) {
        weather_live::FetchResult r;
        for (int i = 0; i < h; ++i) r.hours.push_back({start + std::chrono::hours{i}, {20, 10, 0.5, 3, 0}, {}});
        return r;
    };
    Server s([](config::AppConfig& c) {
        c.providers = {{"live", "http://unused", 100, true, 0}};
        c.forecast.clear();
    }, o);
    const auto f = s.app->forecasts().current();
    ASSERT_TRUE(f);
    for (const auto& [id, sf] : f->segments)
        for (auto src : sf.sources) ASSERT_EQ(src, weather_live::Source::live_primary);
    const auto j = s.get_json("/api/risk?lat=39.3&lon=-75.7");
    EXPECT_EQ(j["sources"], json::array({"live-primary"}));
}

TEST(Concurrency, NoTornReadsDuringSwap) {
    Server s;
    const auto id = first_active_id();
    const auto base = *s.app->forecasts().current();
    std::atomic<bool> done{false};
    std::mutex mu;
    std::map<std::uint64_t, double> value_of_build;

    std::thread writer([&] {
        for (int k = 1; k <= 200; ++k) {
            auto f = base;
            const double v = k / 1000.0;
            for (auto& [sid, sf] : f.segments) sf.scores.fill(v);
            s.app->forecasts().install(f);
            {
                std::lock_guard lk(mu);
                value_of_build[s.app->forecasts().current()->build_id] = v;
            }
            std::this_thread::sleep_for(std::chrono::microseconds{300});
        }
        done = true;
    });
    std::vector<std::pair<std::uint64_t, std::vector<double>>> seen;
    std::vector<std::thread> readers;
    std::mutex seen_mu;
    for (int r = 0; r < 4; ++r)
        readers.emplace_back([&] {
            httplib::Client c("127.0.0.1", s.port);
            while (!done) {
                auto res = c.Get("/api/segments/" + url_escape(id));
                if (!res || res->status != 200) continue;
                const auto j = json::parse(res->body);
                std::vector<double> v;
                for (const auto& e : j["series"]) v.push_back(e["score"]);
                std::lock_guard lk(seen_mu);
                seen.push_back({j["forecast"]["build_id"], v});
            }
        });
    writer.join();
    for (auto& t : readers) t.join();
    ASSERT_GT(seen.size(), 20u);
    std::size_t checked = 0;
    for (const auto& [b, v] : seen) {
        ASSERT_EQ(v.size(), 24u);
        // Only installed builds are uniform; the startup build varies by hour.
        if (const auto it = value_of_build.find(b); it != value_of_build.end()) {
            for (double x : v) ASSERT_EQ(x, it->second) << "build " << b;
            ++checked;
        }
    }
    EXPECT_GT(checked, 0u);
}

TEST(Html, Escape) {
    EXPECT_EQ(html_escape("<a href=\"x\">&"), "&lt;a href=&quot;x&quot;&gt;&amp;");
    EXPECT_EQ(validate_contact({"", "x", " ", ""}).size(), 2u);
    EXPECT_TRUE(validate_contact({"", "a@b", "hi", ""}).empty());
}
