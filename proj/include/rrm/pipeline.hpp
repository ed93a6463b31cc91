#pragma once

// Pipeline stages over a workspace directory. Each stage reads the previous stages'
// outputs from fixed locations and writes its own outputs plus reports/<stage>.json.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "rrm/cellgrid.hpp"
#include "rrm/config.hpp"
#include "rrm/context.hpp"
#include "rrm/detail/digest.hpp"
#include "rrm/error.hpp"
#include "rrm/features.hpp"
#include "rrm/ingest.hpp"
#include "rrm/model.hpp"
#include "rrm/overlay.hpp"
#include "rrm/segments.hpp"
#include "rrm/time.hpp"
#include "rrm/weather_live.hpp"

namespace rrm::pipeline {

namespace fs = std::filesystem;
using cellgrid::CellId;

struct PipelineConfig {
    std::uint64_t seed = 42;
    int first_year = 2019;
    int last_year = 2022;
    int eval_year = 0; // 0 = last_year
    double grid_res_deg = 0.2;
    int ring = 1;
    std::size_t max_stations = 149;
    double max_segment_len_m = 500.0;
    double match_cutoff_m = 1000.0;
    double bucket_deg = segments::SegmentIndex::kDefaultBucketDeg;
    std::uint32_t neg_ratio = 5;
    model::TrainConfig train;
    std::string build_time;   // RFC 3339; empty = first hour after the last incident
    int overlay_month = 0;    // 0 = month of build_time
    std::string forecast_now; // RFC 3339; empty = build_time
    std::vector<weather_live::ProviderConfig> providers;
    int render_z_min = 4;
    int render_z_max = 8;
    std::vector<int> render_hours; // empty = all 168

    int eval() const { return eval_year ? eval_year : last_year; }
};

inline PipelineConfig config_from_json(const nlohmann::json& j) {
    PipelineConfig c;
    try {
        c.seed = j.value("seed", c.seed);
        c.first_year = j.value("first_year", c.first_year);
        c.last_year = j.value("last_year", c.last_year);
        c.eval_year = j.value("eval_year", c.eval_year);
        c.grid_res_deg = j.value("grid_res_deg", c.grid_res_deg);
        c.ring = j.value("ring", c.ring);
        c.max_stations = j.value("max_stations", c.max_stations);
        c.max_segment_len_m = j.value("max_segment_len_m", c.max_segment_len_m);
        c.match_cutoff_m = j.value("match_cutoff_m", c.match_cutoff_m);
        c.bucket_deg = j.value("bucket_deg", c.bucket_deg);
        c.neg_ratio = j.value("neg_ratio", c.neg_ratio);
        if (j.contains("train")) {
            const auto& t = j["train"];
            c.train.lr = t.value("lr", c.train.lr);
            c.train.epochs = t.value("epochs", c.train.epochs);
            c.train.batch = t.value("batch", c.train.batch);
            c.train.l2_lambda = t.value("l2_lambda", c.train.l2_lambda);
        }
        c.build_time = j.value("build_time", c.build_time);
        c.overlay_month = j.value("overlay_month", c.overlay_month);
        c.forecast_now = j.value("forecast_now", c.forecast_now);
        if (j.contains("providers")) {
            int i = 0;
            for (const auto& p : j["providers"]) c.providers.push_back(weather_live::provider_from_json(p, i++));
        }
        c.render_z_min = j.value("render_z_min", c.render_z_min);
        c.render_z_max = j.value("render_z_max", c.render_z_max);
        c.render_hours = j.value("render_hours", c.render_hours);
    } catch (const nlohmann::json::exception& e) {
        throw Error("CONFIG_INVALID", e.what());
    }
    if (c.last_year < c.first_year || c.eval() < c.first_year || c.eval() > c.last_year || c.eval() == c.first_year)
        throw Error("CONFIG_INVALID", "eval year must lie after first_year and within the year range");
    if (c.neg_ratio < 1) throw Error("CONFIG_INVALID", "neg_ratio must be >= 1");
    if (!(c.max_segment_len_m > 0.0) || !(c.match_cutoff_m > 0.0)) throw Error("CONFIG_INVALID", "lengths must be positive");
    if (c.overlay_month < 0 || c.overlay_month > 12) throw Error("CONFIG_INVALID", "overlay_month must be 0..12");
    c.train.seed = c.seed;
    return c;
}

inline nlohmann::json to_json(const PipelineConfig& c) {
    nlohmann::json providers = nlohmann::json::array();
    for (const auto& p : c.providers)
        providers.push_back({{"name", p.name}, {"base_url", p.base_url}, {"timeout_ms", p.timeout_ms},
                             {"enabled", p.enabled}, {"priority", p.priority}});
    return {{"seed", c.seed},
            {"first_year", c.first_year},
            {"last_year", c.last_year},
            {"eval_year", c.eval()},
            {"grid_res_deg", c.grid_res_deg},
            {"ring", c.ring},
            {"max_stations", c.max_stations},
            {"max_segment_len_m", c.max_segment_len_m},
            {"match_cutoff_m", c.match_cutoff_m},
            {"bucket_deg", c.bucket_deg},
            {"neg_ratio", c.neg_ratio},
            {"train",
             {{"lr", c.train.lr}, {"epochs", c.train.epochs}, {"batch", c.train.batch}, {"l2_lambda", c.train.l2_lambda}}},
            {"build_time", c.build_time},
            {"overlay_month", c.overlay_month},
            {"forecast_now", c.forecast_now},
            {"providers", providers},
            {"render_z_min", c.render_z_min},
            {"render_z_max", c.render_z_max},
            {"render_hours", c.render_hours}};
}

// ---- workspace -------------------------------------------------------------

struct Workspace {
    fs::path root;

    std::string at(const std::string& rel) const { return (root / rel).string(); }
    std::string dir(const std::string& rel) const {
        fs::create_directories(root / rel);
        return (root / rel).string();
    }

    std::string incidents() const { return at("ingest/incidents.csv"); }
    std::string stations() const { return at("ingest/stations.csv"); }
    std::string weather() const { return at("ingest/weather.csv"); }
    std::string roads() const { return at("ingest/roads.ndjson"); }
    std::string ingest_meta() const { return at("ingest/ingest_report.json"); }
    std::string baseline_examples() const { return at("dataset/examples.csv"); }
    std::string baseline_context() const { return at("dataset/baseline_context.json"); }
    std::string baseline_bundle() const { return at("models/baseline.json"); }
    std::string segment_bundle() const { return at("models/segment.json"); }
    std::string segments() const { return at("segments/segments.bin"); }
    std::string matches() const { return at("segments/matches.csv"); }
    std::string match_stats() const { return at("segments/match_stats.json"); }
    std::string segment_examples() const { return at("segment_dataset/examples.csv"); }
    std::string segment_context() const { return at("segment_dataset/segment_context.json"); }
    std::string overlay() const { return at("overlay/overlay.bin"); }
    std::string forecast() const { return at("forecast/forecast.json"); }
    std::string tiles() const { return at("tiles"); }
    std::string report(const std::string& stage) const { return at("reports/" + stage + ".json"); }
    std::string app_config() const { return at("config.json"); }
};

// ---- run reports -----------------------------------------------------------

struct RunReport {
    std::string command;
    std::vector<std::pair<std::string, std::string>> inputs;  // workspace-relative path, sha256
    std::vector<std::pair<std::string, std::string>> outputs;
    nlohmann::json counts = nlohmann::json::object();
    double duration_ms = 0.0;

    // Everything except timing; equal across reruns over identical inputs.
    nlohmann::json digests() const {
        nlohmann::json in = nlohmann::json::object(), out = nlohmann::json::object();
        for (const auto& [p, d] : inputs) in[p] = d;
        for (const auto& [p, d] : outputs) out[p] = d;
        return {{"command", command}, {"inputs", in}, {"outputs", out}, {"counts", counts}};
    }
};

inline nlohmann::json to_json(const RunReport& r) {
    auto j = r.digests();
    j["duration_ms"] = r.duration_ms;
    return j;
}

class Stage {
  public:
    Stage(const Workspace& ws, std::string command)
        : ws_(ws), start_(std::chrono::steady_clock::now()) {
        report_.command = std::move(command);
    }

    void input(const std::string& path) { report_.inputs.push_back({rel(path), detail::sha256_file(path)}); }
    void output(const std::string& path) { report_.outputs.push_back({rel(path), detail::sha256_file(path)}); }
    nlohmann::json& counts() { return report_.counts; }

    RunReport finish() {
        report_.duration_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
        ws_.dir("reports");
        detail::write_file(ws_.report(report_.command), to_json(report_).dump(2) + "\n");
        return report_;
    }

  private:
    std::string rel(const std::string& p) const {
        const auto r = fs::path(p).lexically_relative(ws_.root);
        return (r.empty() || *r.begin() == "..") ? p : r.generic_string();
    }

    Workspace ws_;
    std::chrono::steady_clock::time_point start_;
    RunReport report_;
};

// ---- ingest ----------------------------------------------------------------

struct InputPaths {
    std::string incidents, weather, stations, roads;

    static InputPaths in_dir(const std::string& dir) {
        const fs::path d(dir);
        return {(d / "incidents.csv").string(), (d / "weather.csv").string(), (d / "stations.csv").string(),
                (d / "roads.ndjson").string()};
    }
};

inline UtcTime build_time_of(const PipelineConfig& cfg, const Workspace& ws) {
    if (!cfg.build_time.empty()) {
        const auto t = parse_rfc3339(cfg.build_time);
        if (!t) throw Error("CONFIG_INVALID", "build_time is not RFC 3339");
        return *t;
    }
    const auto meta = context::load_json(ws.ingest_meta(), "STAGE_MISSING", "STAGE_CORRUPT");
    const auto t = parse_rfc3339(meta.at("build_time").get<std::string>());
    if (!t) throw Error("STAGE_CORRUPT", "ingest report lacks build_time");
    return *t;
}

inline RunReport run_ingest(const PipelineConfig& cfg, const Workspace& ws, const InputPaths& in) {
    Stage st(ws, "ingest");
    for (const auto* p : {&in.incidents, &in.weather, &in.stations, &in.roads}) st.input(*p);
    ingest::CleaningConfig clean;
    clean.year_min = cfg.first_year;
    clean.year_max = cfg.last_year;
    auto inc = ingest::parse_incidents(in.incidents, clean);
    auto wx = ingest::parse_weather(in.weather);
    auto stn = ingest::parse_stations(in.stations);
    auto roads = ingest::parse_roads(in.roads);
    if (inc.records.empty()) throw Error("NO_INCIDENTS", "no incidents survived cleaning");
    if (stn.records.empty()) throw Error("NO_STATIONS", "no stations parsed");
    ws.dir("ingest");
    ingest::write_incidents(ws.incidents(), inc.records);
    ingest::write_weather(ws.weather(), wx.records);
    ingest::write_stations(ws.stations(), stn.records);
    ingest::write_roads(ws.roads(), roads.records);
    UtcTime last = inc.records.front().at;
    for (const auto& r : inc.records) last = std::max(last, r.at);
    const nlohmann::json report = {{"incidents", ingest::to_json(inc.report)},
                                   {"weather", ingest::to_json(wx.report)},
                                   {"stations", ingest::to_json(stn.report)},
                                   {"roads", ingest::to_json(roads.report)},
                                   {"build_time", format_rfc3339(next_full_hour(last))},
                                   {"years", {cfg.first_year, cfg.last_year}}};
    detail::write_file(ws.ingest_meta(), report.dump(2) + "\n");
    for (const auto& p : {ws.incidents(), ws.weather(), ws.stations(), ws.roads(), ws.ingest_meta()}) st.output(p);
    st.counts() = {{"incidents_kept", inc.report.kept},     {"incidents_dropped", inc.report.input - inc.report.kept},
                   {"weather_kept", wx.report.kept},        {"weather_dropped", wx.report.input - wx.report.kept},
                   {"stations_kept", stn.report.kept},      {"roads_kept", roads.report.kept},
                   {"roads_dropped", roads.report.input - roads.report.kept}};
    return st.finish();
}

// ---- baseline dataset --------------------------------------------------------

inline std::int64_t unix_hour(UtcTime t) { return to_unix(floor_hour(t)) / kSecondsPerHour; }

inline std::int64_t hours_in_year(int y) { return (year_start(y + 1) - year_start(y)) / std::chrono::hours{1}; }

struct BaselineDataset {
    std::vector<features::Example> examples;
    context::BaselineContext context;
    std::size_t positives = 0;
    std::size_t negatives = 0;
};

// Weather covariates for a historical hour: the station's observation when complete,
// otherwise its climatology.
inline ingest::WeatherValues historical_weather(const ingest::WeatherArchive& archive, const ingest::Climatology& clim,
                                                const std::string& station, UtcTime t) {
    if (const auto v = archive.at(station, t)) return *v;
    const auto p = calendar(t);
    if (const auto v = clim.values(station, p.month, p.hour)) return *v;
    throw Error("NO_WEATHER", "no weather for station " + station + " at " + format_rfc3339(t));
}

inline features::Period train_period(const PipelineConfig& cfg) {
    return {year_start(cfg.first_year), year_start(cfg.eval())};
}

inline BaselineDataset build_baseline_dataset(const PipelineConfig& cfg,
                                              const std::vector<ingest::IncidentRecord>& incidents,
                                              const std::vector<ingest::Station>& stations,
                                              const std::vector<ingest::WeatherHour>& weather) {
    const cellgrid::GridSpec grid(cfg.grid_res_deg);
    const auto train = train_period(cfg);
    BaselineDataset ds;
    auto& ctx = ds.context;
    ctx.grid_res_deg = cfg.grid_res_deg;
    ctx.ring = cfg.ring;
    ctx.train = train;
    ctx.eval_year = cfg.eval();

    std::vector<features::CellEvent> events;
    std::vector<CellId> train_cells;
    for (const auto& r : incidents) {
        const auto c = grid.cell_of(r.loc);
        events.push_back({c, r.at});
        if (train.contains(r.at)) train_cells.push_back(c);
    }
    if (train_cells.empty()) throw Error("SPLIT_EMPTY", "no incidents in the training years");
    ctx.candidate_cells = grid.expand_candidates(train_cells, cfg.ring);
    const auto sel = ingest::representative_stations(stations, ctx.candidate_cells, grid, cfg.max_stations);
    ctx.stations = sel.selected;
    ctx.cell_station = sel.cell_station;
    ctx.climatology = ingest::build_climatology(weather, ctx.stations);
    ctx.history = features::build_cell_history(events, train);
    const ingest::WeatherArchive archive(weather);

    std::unordered_map<CellId, std::uint64_t, cellgrid::CellHash> cell_index;
    for (std::size_t i = 0; i < ctx.candidate_cells.size(); ++i) cell_index[ctx.candidate_cells[i]] = i;
    const std::uint64_t ncells = ctx.candidate_cells.size();
    std::map<std::pair<CellId, std::int64_t>, std::uint32_t> own_hour;
    for (const auto& e : events)
        if (train.contains(e.at)) ++own_hour[{e.cell, unix_hour(e.at)}];

    for (int y = cfg.first_year; y <= cfg.eval(); ++y) {
        const auto y0 = year_start(y);
        const auto hy = static_cast<std::uint64_t>(hours_in_year(y));
        std::vector<std::uint64_t> pos;
        for (const auto& e : events) {
            if (calendar(e.at).year != y) continue;
            const auto it = cell_index.find(e.cell);
            if (it == cell_index.end()) continue;
            pos.push_back(it->second * hy + static_cast<std::uint64_t>((floor_hour(e.at) - y0) / std::chrono::hours{1}));
        }
        if (pos.empty()) continue;
        const auto keys = features::build_examples(pos, ncells * hy, cfg.neg_ratio, mix_seed(cfg.seed, static_cast<std::uint64_t>(y)));
        for (const auto& k : keys) {
            const CellId cell = ctx.candidate_cells[k.key / hy];
            const UtcTime t = y0 + std::chrono::hours{static_cast<long>(k.key % hy)};
            const auto& station = ctx.cell_station.at(cell);
            const auto w = historical_weather(archive, ctx.climatology, station, t);
            features::OwnHour own;
            if (const auto it = own_hour.find({cell, unix_hour(t)}); it != own_hour.end()) own.events = it->second;
            const auto f = features::baseline_features(cell, features::TimeParts::of(t), ctx.history, grid, w, own);
            ds.examples.push_back({cellgrid::to_token(cell), t, std::vector<double>(f.begin(), f.end()), k.label});
            (k.label ? ds.positives : ds.negatives)++;
        }
    }
    return ds;
}

inline RunReport run_build_dataset(const PipelineConfig& cfg, const Workspace& ws) {
    Stage st(ws, "build-dataset");
    for (const auto& p : {ws.incidents(), ws.stations(), ws.weather()}) st.input(p);
    const auto inc = ingest::parse_incidents(ws.incidents());
    const auto stn = ingest::parse_stations(ws.stations());
    const auto wx = ingest::parse_weather(ws.weather());
    const auto ds = build_baseline_dataset(cfg, inc.records, stn.records, wx.records);
    ws.dir("dataset");
    features::write_examples(ws.baseline_examples(), "baseline", features::kBaselineFeatureNames, ds.examples);
    context::save_json(context::to_json(ds.context), ws.baseline_context());
    st.output(ws.baseline_examples());
    st.output(ws.baseline_context());
    st.counts() = {{"examples", ds.examples.size()},
                   {"positives", ds.positives},
                   {"negatives", ds.negatives},
                   {"candidate_cells", ds.context.candidate_cells.size()},
                   {"stations_selected", ds.context.stations.size()}};
    return st.finish();
}

// ---- training ---------------------------------------------------------------

struct TrainOutcome {
    model::ModelBundle bundle;
    double eval_prevalence = 0.0;
    std::size_t train_rows = 0;
    std::size_t eval_rows = 0;
};

inline TrainOutcome train_layer(const PipelineConfig& cfg, const std::string& layer,
                                const std::vector<std::string>& names, std::vector<features::Example> examples,
                                UtcTime trained_at) {
    auto split = features::split_by_year(std::move(examples), cfg.eval());
    std::vector<model::Row> X, Xe;
    std::vector<int> y, ye;
    std::set<int> years;
    for (auto& e : split.train) {
        years.insert(calendar(e.at).year);
        X.push_back(std::move(e.features));
        y.push_back(e.label);
    }
    for (auto& e : split.eval) {
        Xe.push_back(std::move(e.features));
        ye.push_back(e.label);
    }
    TrainOutcome out;
    out.bundle = model::train_logistic(X, y, names, cfg.train);
    out.bundle.meta.layer = layer;
    out.bundle.meta.train_years.assign(years.begin(), years.end());
    out.bundle.meta.eval_year = cfg.eval();
    out.bundle.meta.trained_at = format_rfc3339(trained_at);
    out.bundle.metrics = model::evaluate(out.bundle, Xe, ye);
    out.eval_prevalence = static_cast<double>(out.bundle.metrics.n_pos) / static_cast<double>(ye.size());
    out.train_rows = X.size();
    out.eval_rows = Xe.size();
    return out;
}

inline RunReport run_train(const PipelineConfig& cfg, const Workspace& ws, const std::string& layer) {
    const bool base = layer == "baseline";
    Stage st(ws, base ? "train-baseline" : "train-segment");
    const auto in = base ? ws.baseline_examples() : ws.segment_examples();
    st.input(in);
    auto file = features::read_examples(in);
    const auto& names = base ? features::kBaselineFeatureNames : features::kSegmentFeatureNames;
    if (file.feature_names != names) throw Error("FEATURE_MISMATCH", in + " does not carry the " + layer + " schedule");
    const auto out = train_layer(cfg, layer, names, std::move(file.examples), build_time_of(cfg, ws));
    ws.dir("models");
    const auto path = base ? ws.baseline_bundle() : ws.segment_bundle();
    model::save_bundle(out.bundle, path);
    st.output(path);
    const auto metrics = ws.at(std::string("models/") + (base ? "baseline" : "segment") + "_metrics.json");
    detail::write_file(metrics, nlohmann::json{{"layer", layer},
                                               {"eval_year", cfg.eval()},
                                               {"eval_prevalence", out.eval_prevalence},
                                               {"metrics", model::to_json(out.bundle.metrics)}}
                                        .dump(2) + "\n");
    st.output(metrics);
    st.counts() = {{"train_rows", out.train_rows},
                   {"eval_rows", out.eval_rows},
                   {"metrics", model::to_json(out.bundle.metrics)},
                   {"eval_prevalence", out.eval_prevalence},
                   {"final_loss", out.bundle.meta.epoch_losses.empty() ? 0.0 : out.bundle.meta.epoch_losses.back()}};
    return st.finish();
}

// ---- segments and matching ---------------------------------------------------

inline RunReport run_build_segments(const PipelineConfig& cfg, const Workspace& ws, std::string roads_path = {}) {
    if (roads_path.empty()) roads_path = ws.roads();
    Stage st(ws, "build-segments");
    st.input(roads_path);
    const auto roads = ingest::parse_roads(roads_path);
    const auto segs = segments::segment_roads(roads.records, cfg.max_segment_len_m);
    ws.dir("segments");
    segments::save_segments(ws.segments(), segs);
    st.output(ws.segments());
    double km = 0.0;
    std::size_t degenerate = 0;
    for (const auto& s : segs) {
        km += s.length_m / 1000.0;
        degenerate += s.degenerate ? 1 : 0;
    }
    st.counts() = {{"roads", roads.records.size()}, {"segments", segs.size()}, {"total_km", km}, {"degenerate", degenerate}};
    return st.finish();
}

inline void write_matches(const std::string& path, const std::vector<segments::MatchResult>& rs) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("FILE_UNWRITABLE", "cannot write " + path);
    out << "event_id,segment_id,distance_m\n";
    for (const auto& r : rs) {
        out << detail::csv_escape(r.event_id) << ',';
        if (r.matched) out << detail::csv_escape(*r.segment_id) << ',' << features::fmt_exact(*r.distance_m);
        else out << ',';
        out << '\n';
    }
}

inline std::unordered_map<std::string, std::string> read_matches(const std::string& path) {
    auto in = detail::open_input(path);
    detail::expect_header(in, path, {"event_id", "segment_id", "distance_m"});
    std::unordered_map<std::string, std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        detail::strip_cr(line);
        if (line.empty()) continue;
        const auto f = detail::split_csv(line);
        if (f.size() != 3) throw Error("STAGE_CORRUPT", path + ": bad match row");
        if (!f[1].empty()) out[f[0]] = f[1];
    }
    return out;
}

inline RunReport run_match_events(const PipelineConfig& cfg, const Workspace& ws, std::string segments_path = {},
                                  std::string incidents_path = {}) {
    if (segments_path.empty()) segments_path = ws.segments();
    if (incidents_path.empty()) incidents_path = ws.incidents();
    Stage st(ws, "match-events");
    st.input(segments_path);
    st.input(incidents_path);
    const auto idx = segments::build_index(segments::load_segments(segments_path), cfg.bucket_deg);
    const auto inc = ingest::parse_incidents(incidents_path);
    const auto out = segments::match_events(inc.records, idx, cfg.match_cutoff_m);
    ws.dir("segments");
    write_matches(ws.matches(), out.results);
    detail::write_file(ws.match_stats(), segments::to_json(out.stats).dump(2) + "\n");
    st.output(ws.matches());
    st.output(ws.match_stats());
    st.counts() = segments::to_json(out.stats);
    return st.finish();
}

// ---- segment dataset ------------------------------------------------------------

struct SegmentDataset {
    std::vector<features::Example> examples;
    context::SegmentContext context;
    std::size_t positives = 0;
    std::size_t negatives = 0;
    std::size_t active_segments = 0;
};

inline SegmentDataset build_segment_dataset(const PipelineConfig& cfg, const std::vector<segments::RoadSegment>& segs,
                                            const std::unordered_map<std::string, std::string>& matches,
                                            const std::vector<ingest::IncidentRecord>& incidents,
                                            const context::BaselineContext& base,
                                            const std::vector<ingest::WeatherHour>& weather) {
    const cellgrid::GridSpec grid(cfg.grid_res_deg);
    const auto train = train_period(cfg);
    SegmentDataset ds;
    ds.context.train = train;
    ds.context.eval_year = cfg.eval();
    std::unordered_map<std::string, std::uint64_t> seg_index;
    for (std::size_t i = 0; i < segs.size(); ++i) seg_index[segs[i].segment_id] = i;
    std::vector<features::SegmentEvent> events;
    for (const auto& r : incidents) {
        const auto m = matches.find(r.id);
        if (m == matches.end()) continue;
        if (!seg_index.count(m->second)) throw Error("STAGE_CORRUPT", "match refers to unknown segment " + m->second);
        events.push_back({m->second, r.at, r.severity, grid.cell_of(r.loc)});
    }
    for (const auto& e : events)
        if (train.contains(e.at)) ds.context.events.push_back(e);
    const auto history = features::build_segment_history(events, train);
    ds.active_segments = history.by_segment.size();

    std::vector<std::string> seg_station(segs.size());
    for (std::size_t i = 0; i < segs.size(); ++i)
        seg_station[i] = base.stations.at(ingest::nearest_station(base.stations, segs[i].midpoint)).id;
    const ingest::WeatherArchive archive(weather);

    std::map<std::pair<std::string, std::int64_t>, features::OwnHour> own_hour;
    std::map<std::pair<CellId, std::int64_t>, std::uint32_t> cell_hour;
    for (const auto& e : events) {
        if (!train.contains(e.at)) continue;
        auto& o = own_hour[{e.segment_id, unix_hour(e.at)}];
        ++o.events;
        o.severity_sum += e.severity;
        ++cell_hour[{e.cell, unix_hour(e.at)}];
    }

    const std::uint64_t nseg = segs.size();
    for (int y = cfg.first_year; y <= cfg.eval(); ++y) {
        const auto y0 = year_start(y);
        const auto hy = static_cast<std::uint64_t>(hours_in_year(y));
        std::vector<std::uint64_t> pos;
        for (const auto& e : events) {
            if (calendar(e.at).year != y) continue;
            pos.push_back(seg_index.at(e.segment_id) * hy +
                          static_cast<std::uint64_t>((floor_hour(e.at) - y0) / std::chrono::hours{1}));
        }
        if (pos.empty()) continue;
        const auto keys = features::build_examples(pos, nseg * hy, cfg.neg_ratio,
                                                   mix_seed(cfg.seed, 0x5E6000ULL + static_cast<std::uint64_t>(y)));
        for (const auto& k : keys) {
            const auto si = k.key / hy;
            const auto& seg = segs[si];
            const UtcTime t = y0 + std::chrono::hours{static_cast<long>(k.key % hy)};
            const auto w = historical_weather(archive, base.climatology, seg_station[si], t);
            features::OwnHour own;
            if (const auto it = own_hour.find({seg.segment_id, unix_hour(t)}); it != own_hour.end()) own = it->second;
            if (const auto it = cell_hour.find({grid.cell_of(seg.midpoint), unix_hour(t)}); it != cell_hour.end())
                own.cell_events = it->second;
            const auto f = features::segment_features(seg, features::TimeParts::of(t), history, grid, w, own);
            ds.examples.push_back({seg.segment_id, t, std::vector<double>(f.begin(), f.end()), k.label});
            (k.label ? ds.positives : ds.negatives)++;
        }
    }
    return ds;
}

inline context::BaselineContext load_baseline_context(const std::string& path) {
    return context::baseline_context_from_json(context::load_json(path, "MODEL_MISSING", "MODEL_CORRUPT"));
}

inline context::SegmentContext load_segment_context(const std::string& path) {
    return context::segment_context_from_json(context::load_json(path, "SEGMENTS_MISSING", "SEGMENTS_CORRUPT"));
}

inline RunReport run_build_segment_events(const PipelineConfig& cfg, const Workspace& ws) {
    Stage st(ws, "build-segment-events");
    for (const auto& p : {ws.segments(), ws.matches(), ws.incidents(), ws.baseline_context(), ws.weather()}) st.input(p);
    const auto segs = segments::load_segments(ws.segments());
    const auto matches = read_matches(ws.matches());
    const auto inc = ingest::parse_incidents(ws.incidents());
    const auto base = load_baseline_context(ws.baseline_context());
    const auto wx = ingest::parse_weather(ws.weather());
    const auto ds = build_segment_dataset(cfg, segs, matches, inc.records, base, wx.records);
    ws.dir("segment_dataset");
    features::write_examples(ws.segment_examples(), "segment", features::kSegmentFeatureNames, ds.examples);
    context::save_json(context::to_json(ds.context), ws.segment_context());
    st.output(ws.segment_examples());
    st.output(ws.segment_context());
    st.counts() = {{"examples", ds.examples.size()},
                   {"positives", ds.positives},
                   {"negatives", ds.negatives},
                   {"segments", segs.size()},
                   {"active_segments", ds.active_segments},
                   {"training_events", ds.context.events.size()}};
    return st.finish();
}

// ---- overlay and forecast --------------------------------------------------------

inline RunReport run_build_overlay(const PipelineConfig& cfg, const Workspace& ws) {
    Stage st(ws, "build-overlay");
    st.input(ws.baseline_context());
    st.input(ws.baseline_bundle());
    const auto ctx = load_baseline_context(ws.baseline_context());
    const auto bundle = model::load_bundle(ws.baseline_bundle());
    const auto built = build_time_of(cfg, ws);
    overlay::OverlayInputs in;
    in.cells = ctx.candidate_cells;
    in.history = &ctx.history;
    in.climatology = &ctx.climatology;
    in.station_map = &ctx.cell_station;
    in.bundle = &bundle;
    in.grid = cellgrid::GridSpec(ctx.grid_res_deg);
    in.month = static_cast<unsigned>(cfg.overlay_month ? cfg.overlay_month : static_cast<int>(calendar(built).month));
    in.model_digest = detail::sha256_file(ws.baseline_bundle());
    in.built_at = format_rfc3339(built);
    const auto t = overlay::build_weekly_overlay(in);
    ws.dir("overlay");
    overlay::save_overlay(t, ws.overlay());
    st.output(ws.overlay());
    st.output(ws.overlay() + ".json");
    const auto [lo, hi] = std::minmax_element(t.scores.begin(), t.scores.end());
    st.counts() = {{"cells", t.cells.size()}, {"hours", overlay::kHoursPerWeek}, {"month", in.month},
                   {"min_score", t.scores.empty() ? 0.0 : *lo}, {"max_score", t.scores.empty() ? 0.0 : *hi}};
    return st.finish();
}

// Segments with at least one matched training event.
inline std::vector<segments::RoadSegment> active_segments(const std::vector<segments::RoadSegment>& all,
                                                          const features::SegmentHistory& h) {
    std::vector<segments::RoadSegment> out;
    for (const auto& s : all)
        if (h.find(s.segment_id)) out.push_back(s);
    return out;
}

inline features::SegmentHistory history_of(const context::SegmentContext& c) {
    return features::build_segment_history(c.events, c.train);
}

inline RunReport run_refresh_roads(const PipelineConfig& cfg, const Workspace& ws,
                                   weather_live::Fetcher fetcher = weather_live::provider_fetch) {
    Stage st(ws, "refresh-roads");
    for (const auto& p : {ws.segments(), ws.segment_context(), ws.segment_bundle(), ws.baseline_context()}) st.input(p);
    const auto segs = segments::load_segments(ws.segments());
    const auto sctx = load_segment_context(ws.segment_context());
    const auto bctx = load_baseline_context(ws.baseline_context());
    const auto bundle = model::load_bundle(ws.segment_bundle());
    UtcTime now = build_time_of(cfg, ws);
    if (!cfg.forecast_now.empty()) {
        const auto t = parse_rfc3339(cfg.forecast_now);
        if (!t) throw Error("CONFIG_INVALID", "forecast_now is not RFC 3339");
        now = *t;
    }
    const auto history = history_of(sctx);
    const auto active = active_segments(segs, history);
    weather_live::WeatherChain chain(weather_live::apply_env_overrides(cfg.providers), bctx.climatology, bctx.stations,
                                     {}, std::move(fetcher), [now] { return now; });
    const auto f = overlay::build_road_forecast(
        active, history, cellgrid::GridSpec(cfg.grid_res_deg),
        [&](geo::GeoPoint p) { return chain.get_point_forecast(p, now); }, bundle, now);
    ws.dir("forecast");
    detail::write_file(ws.forecast(), overlay::to_json(f).dump(1) + "\n");
    st.output(ws.forecast());
    std::map<std::string, std::size_t> sources;
    for (const auto& [id, s] : f.segments)
        for (auto src : s.sources) ++sources[weather_live::to_string(src)];
    st.counts() = {{"active_segments", active.size()}, {"horizon", f.horizon},
                   {"generated_at", format_rfc3339(f.generated_at)}, {"sources", sources}};
    return st.finish();
}

inline overlay::RoadForecast load_forecast(const std::string& path) {
    return overlay::forecast_from_json(context::load_json(path, "FORECAST_MISSING", "FORECAST_CORRUPT"));
}

// Tiles covering the candidate cells for each zoom in [z_min, z_max].
inline std::vector<geo::TileCoord> covering_tiles(const overlay::OverlayTensor& t, int z_min, int z_max) {
    std::vector<geo::TileCoord> out;
    if (t.cells.empty()) return out;
    const cellgrid::GridSpec grid(t.grid_res_deg);
    geo::BBox box = grid.cell_bbox(t.cells.front());
    for (const auto& c : t.cells) {
        const auto b = grid.cell_bbox(c);
        box.extend({b.min_lat, b.min_lon});
        box.extend({b.max_lat, b.max_lon});
    }
    for (int z = z_min; z <= z_max; ++z) {
        const auto a = geo::tile_for({std::min(box.max_lat, geo::kMercatorMaxLat), box.min_lon}, z).tile;
        const auto b = geo::tile_for({std::max(box.min_lat, -geo::kMercatorMaxLat), std::min(box.max_lon, 179.999999)}, z).tile;
        for (auto x = a.x; x <= b.x; ++x)
            for (auto y = a.y; y <= b.y; ++y) out.push_back({z, x, y});
    }
    return out;
}

inline RunReport run_render_tiles(const PipelineConfig& cfg, const Workspace& ws, std::string out_dir = {}) {
    if (out_dir.empty()) out_dir = ws.tiles();
    if (cfg.render_z_min < 0 || cfg.render_z_max > geo::kMaxZoom || cfg.render_z_min > cfg.render_z_max)
        throw Error("INVALID_ARGUMENT", "bad zoom range");
    Stage st(ws, "render-tiles");
    st.input(ws.overlay());
    const auto t = overlay::load_overlay(ws.overlay());
    std::vector<int> hours = cfg.render_hours;
    if (hours.empty())
        for (int h = 0; h < overlay::kHoursPerWeek; ++h) hours.push_back(h);
    const auto ramp = overlay::ColorRamp::standard();
    std::size_t n = 0;
    for (int how : hours) {
        if (how < 0 || how >= overlay::kHoursPerWeek) throw Error("INVALID_ARGUMENT", "hour of week must be 0..167");
        for (const auto& tc : covering_tiles(t, cfg.render_z_min, cfg.render_z_max)) {
            const fs::path dir = fs::path(out_dir) / "overlay" / std::to_string(how) / std::to_string(tc.z) /
                                 std::to_string(tc.x);
            fs::create_directories(dir);
            detail::write_file((dir / (std::to_string(tc.y) + ".png")).string(),
                               overlay::render_raster_tile(tc, t, how, ramp));
            ++n;
        }
    }
    st.counts() = {{"tiles", n}, {"hours", hours.size()}, {"z_min", cfg.render_z_min}, {"z_max", cfg.render_z_max}};
    return st.finish();
}

// ---- deployment config ---------------------------------------------------------

inline nlohmann::json default_app_config(const PipelineConfig& cfg) {
    nlohmann::json providers = nlohmann::json::array();
    for (const auto& p : cfg.providers)
        providers.push_back({{"name", p.name}, {"base_url", p.base_url}, {"timeout_ms", p.timeout_ms},
                             {"enabled", p.enabled}, {"priority", p.priority}});
    return {{"host", "127.0.0.1"},
            {"port", 8080},
            {"baseline_bundle", "models/baseline.json"},
            {"segment_bundle", "models/segment.json"},
            {"segments", "segments/segments.bin"},
            {"baseline_context", "dataset/baseline_context.json"},
            {"segment_context", "segment_dataset/segment_context.json"},
            {"overlay", "overlay/overlay.bin"},
            {"forecast", "forecast/forecast.json"},
            {"tiles_dir", "tiles"},
            {"static_dir", "static"},
            {"providers", providers},
            {"contact", {{"fallback_log", "logs/contact.jsonl"}}},
            {"refresh_interval_s", 3600},
            {"match_cutoff_m", cfg.match_cutoff_m},
            {"max_results", 5000},
            {"min_road_zoom", 10}};
}

inline std::string write_app_config(const PipelineConfig& cfg, const Workspace& ws) {
    detail::write_file(ws.app_config(), default_app_config(cfg).dump(2) + "\n");
    return ws.app_config();
}

// ingest -> dataset -> train-baseline -> segments -> match -> segment events ->
// train-segment -> overlay -> forecast.
inline std::vector<RunReport> run_all(const PipelineConfig& cfg, const Workspace& ws, const InputPaths& in,
                                      weather_live::Fetcher fetcher = weather_live::provider_fetch) {
    std::vector<RunReport> r;
    r.push_back(run_ingest(cfg, ws, in));
    r.push_back(run_build_dataset(cfg, ws));
    r.push_back(run_train(cfg, ws, "baseline"));
    r.push_back(run_build_segments(cfg, ws));
    r.push_back(run_match_events(cfg, ws));
    r.push_back(run_build_segment_events(cfg, ws));
    r.push_back(run_train(cfg, ws, "segment"));
    r.push_back(run_build_overlay(cfg, ws));
    r.push_back(run_refresh_roads(cfg, ws, std::move(fetcher)));
    return r;
}

} // namespace rrm::pipeline
