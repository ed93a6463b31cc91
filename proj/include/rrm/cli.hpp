#pragma once

// Single command-line entrypoint. Every pipeline stage is a subcommand that works on one
// workspace directory (--out) and writes a run report under reports/.

#include <iostream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rrm/bundle.hpp"
#include "rrm/config.hpp"
#include "rrm/error.hpp"
#include "rrm/pipeline.hpp"
#include "rrm/service.hpp"
#include "rrm/synth.hpp"

namespace rrm::cli {

inline const char* kUsage =
    "usage: rrm <command> [options]\n"
    "\n"
    "pipeline (all take --out WORKSPACE, --config pipeline.json, --seed N):\n"
    "  synth                 generate a synthetic world (--spec world.json)\n"
    "  ingest                parse raw inputs (--from DIR or --incidents/--weather/--stations/--roads)\n"
    "  build-dataset         baseline cell-hour examples\n"
    "  train-baseline        fit the baseline model\n"
    "  build-segments        split roads into segments (--roads, --max-len)\n"
    "  match-events          snap incidents to segments (--segments, --incidents, --cutoff)\n"
    "  build-segment-events  segment-hour examples\n"
    "  train-segment         fit the segment model\n"
    "  build-overlay         weekly cell overlay (--month)\n"
    "  refresh-roads         24-hour road forecast (--now)\n"
    "  render-tiles          pre-render overlay tiles (--z-range 4..8, --hours)\n"
    "  run-all               ingest through refresh-roads, then write config.json\n"
    "\n"
    "deployment:\n"
    "  serve                 run the HTTP service (--config config.json | --out WORKSPACE)\n"
    "  bundle build          package a runtime bundle (--root DIR --out bundle.tar.gz)\n"
    "  bundle verify PATH    check bundle digests against its manifest\n"
    "  bundle check          run startup checks (--config config.json)\n";

inline const std::vector<std::string>& commands() {
    static const std::vector<std::string> c = {
        "synth",         "ingest",       "build-dataset", "train-baseline", "build-segments",
        "match-events",  "build-segment-events", "train-segment", "build-overlay", "refresh-roads",
        "render-tiles",  "run-all",      "serve",         "bundle"};
    return c;
}

struct CommonOpts {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

inline void add_common(CLI::App* sub, CommonOpts& o, bool need_out = true) {
    sub->add_option("--config", o.config, "pipeline config JSON");
    sub->add_option("--seed", o.seed, "seed override");
    auto* out = sub->add_option("--out", o.out, "workspace directory");
    if (need_out) out->required();
}

inline pipeline::PipelineConfig load_config(const CommonOpts& o) {
    pipeline::PipelineConfig c;
    if (!o.config.empty()) c = pipeline::config_from_json(context::load_json(o.config, "CONFIG_INVALID", "CONFIG_INVALID"));
    if (o.seed) c.seed = c.train.seed = *o.seed;
    return c;
}

// "4..8" or "6".
inline std::pair<int, int> parse_z_range(const std::string& s) {
    const auto dots = s.find("..");
    const auto a = detail::parse_int(s.substr(0, dots));
    const auto b = dots == std::string::npos ? a : detail::parse_int(s.substr(dots + 2));
    if (!a || !b || *a < 0 || *b < *a || *b > geo::kMaxZoom)
        throw Error("INVALID_ARGUMENT", "--z-range must look like 4..8 within 0..22");
    return {static_cast<int>(*a), static_cast<int>(*b)};
}

inline void print_report(std::ostream& out, const pipeline::RunReport& r) { out << pipeline::to_json(r).dump(2) << '\n'; }

inline int dispatch(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    if (args.empty()) {
        err << kUsage;
        return 2;
    }
    const auto& cmds = commands();
    if (args[0] == "-h" || args[0] == "--help" || args[0] == "help") {
        out << kUsage;
        return 0;
    }
    if (std::find(cmds.begin(), cmds.end(), args[0]) == cmds.end()) {
        err << "unknown command: " << args[0] << "\n\n" << kUsage;
        return 2;
    }

    CLI::App app{"road risk pipeline and service", "rrm"};
    app.require_subcommand(1);
    CommonOpts common;
    std::function<int()> action;

    auto* synth = app.add_subcommand("synth", "generate a synthetic world");
    std::string spec_path;
    synth->add_option("--spec", spec_path, "world spec JSON");
    synth->add_option("--seed", common.seed);
    synth->add_option("--out", common.out, "output directory")->required();
    synth->callback([&] {
        action = [&] {
            synth::WorldSpec spec;
            if (!spec_path.empty()) spec = synth::spec_from_json(context::load_json(spec_path, "SPEC_INVALID", "SPEC_INVALID"));
            if (common.seed) spec.seed = *common.seed;
            synth::validate(spec);
            const auto w = synth::generate(spec);
            synth::write_world(spec, w, common.out);
            out << synth::summary_json(spec, w).dump(2) << '\n';
            return 0;
        };
    });

    auto* ingest = app.add_subcommand("ingest", "parse raw inputs into the workspace");
    add_common(ingest, common);
    std::string from;
    pipeline::InputPaths in;
    ingest->add_option("--from", from, "directory holding incidents.csv, weather.csv, stations.csv, roads.ndjson");
    ingest->add_option("--incidents", in.incidents);
    ingest->add_option("--weather", in.weather);
    ingest->add_option("--stations", in.stations);
    ingest->add_option("--roads", in.roads);
    auto resolve_inputs = [&] {
        auto p = from.empty() ? pipeline::InputPaths{} : pipeline::InputPaths::in_dir(from);
        if (!in.incidents.empty()) p.incidents = in.incidents;
        if (!in.weather.empty()) p.weather = in.weather;
        if (!in.stations.empty()) p.stations = in.stations;
        if (!in.roads.empty()) p.roads = in.roads;
        if (p.incidents.empty() || p.weather.empty() || p.stations.empty() || p.roads.empty())
            throw Error("INVALID_ARGUMENT", "need --from DIR or all of --incidents --weather --stations --roads");
        return p;
    };
    ingest->callback([&] {
        action = [&] {
            print_report(out, pipeline::run_ingest(load_config(common), {common.out}, resolve_inputs()));
            return 0;
        };
    });

    auto simple = [&](const std::string& name, const std::string& help,
                      std::function<pipeline::RunReport(const pipeline::PipelineConfig&, const pipeline::Workspace&)> fn) {
        auto* sub = app.add_subcommand(name, help);
        add_common(sub, common);
        sub->callback([&, fn] {
            action = [&, fn] {
                print_report(out, fn(load_config(common), {common.out}));
                return 0;
            };
        });
        return sub;
    };

    simple("build-dataset", "baseline cell-hour examples", pipeline::run_build_dataset);
    simple("train-baseline", "fit the baseline model",
           [](const auto& c, const auto& w) { return pipeline::run_train(c, w, "baseline"); });
    simple("build-segment-events", "segment-hour examples", pipeline::run_build_segment_events);
    simple("train-segment", "fit the segment model",
           [](const auto& c, const auto& w) { return pipeline::run_train(c, w, "segment"); });

    std::string roads_path;
    std::optional<double> max_len;
    auto* bs = app.add_subcommand("build-segments", "split roads into segments");
    add_common(bs, common);
    bs->add_option("--roads", roads_path, "roads.ndjson (default: workspace ingest copy)");
    bs->add_option("--max-len", max_len, "maximum segment length in metres");
    bs->callback([&] {
        action = [&] {
            auto c = load_config(common);
            if (max_len) {
                if (!(*max_len > 0.0)) throw Error("INVALID_ARGUMENT", "--max-len must be positive");
                c.max_segment_len_m = *max_len;
            }
            print_report(out, pipeline::run_build_segments(c, {common.out}, roads_path));
            return 0;
        };
    });

    std::string seg_path, inc_path;
    std::optional<double> cutoff;
    auto* me = app.add_subcommand("match-events", "snap incidents to segments");
    add_common(me, common);
    me->add_option("--segments", seg_path);
    me->add_option("--incidents", inc_path);
    me->add_option("--cutoff", cutoff, "match cutoff in metres");
    me->callback([&] {
        action = [&] {
            auto c = load_config(common);
            if (cutoff) {
                if (!(*cutoff > 0.0)) throw Error("INVALID_ARGUMENT", "--cutoff must be positive");
                c.match_cutoff_m = *cutoff;
            }
            print_report(out, pipeline::run_match_events(c, {common.out}, seg_path, inc_path));
            return 0;
        };
    });

    std::optional<int> month;
    auto* bo = app.add_subcommand("build-overlay", "weekly cell overlay");
    add_common(bo, common);
    bo->add_option("--month", month, "calendar month 1..12 for climatology");
    bo->callback([&] {
        action = [&] {
            auto c = load_config(common);
            if (month) {
                if (*month < 1 || *month > 12) throw Error("INVALID_ARGUMENT", "--month must be 1..12");
                c.overlay_month = *month;
            }
            print_report(out, pipeline::run_build_overlay(c, {common.out}));
            return 0;
        };
    });

    std::string now;
    auto* rr = app.add_subcommand("refresh-roads", "24-hour road forecast");
    add_common(rr, common);
    rr->add_option("--now", now, "RFC 3339 reference time");
    rr->callback([&] {
        action = [&] {
            auto c = load_config(common);
            if (!now.empty()) c.forecast_now = now;
            print_report(out, pipeline::run_refresh_roads(c, {common.out}));
            return 0;
        };
    });

    std::string z_range;
    std::vector<int> hours;
    auto* rt = app.add_subcommand("render-tiles", "pre-render overlay tiles into WORKSPACE/tiles");
    add_common(rt, common);
    rt->add_option("--z-range", z_range, "zoom range, e.g. 4..8");
    rt->add_option("--hours", hours, "hours of week to render (default all)")->delimiter(',');
    rt->callback([&] {
        action = [&] {
            auto c = load_config(common);
            if (!z_range.empty()) std::tie(c.render_z_min, c.render_z_max) = parse_z_range(z_range);
            if (!hours.empty()) c.render_hours = hours;
            print_report(out, pipeline::run_render_tiles(c, {common.out}));
            return 0;
        };
    });

    auto* ra = app.add_subcommand("run-all", "run every stage from ingest to refresh-roads");
    add_common(ra, common);
    ra->add_option("--from", from, "raw input directory")->required();
    ra->callback([&] {
        action = [&] {
            const auto c = load_config(common);
            const pipeline::Workspace ws{common.out};
            nlohmann::json reports = nlohmann::json::array();
            for (const auto& r : pipeline::run_all(c, ws, pipeline::InputPaths::in_dir(from)))
                reports.push_back(pipeline::to_json(r));
            reports.push_back({{"command", "write-config"}, {"path", pipeline::write_app_config(c, ws)}});
            out << reports.dump(2) << '\n';
            return 0;
        };
    });

    std::string app_config;
    std::optional<int> port;
    auto* serve = app.add_subcommand("serve", "run the HTTP service");
    serve->add_option("--config", app_config, "service config.json");
    serve->add_option("--out", common.out, "workspace whose config.json to use");
    serve->add_option("--port", port);
    serve->callback([&] {
        action = [&] {
            std::string path = app_config;
            if (path.empty()) {
                if (common.out.empty()) throw Error("INVALID_ARGUMENT", "serve needs --config or --out");
                path = pipeline::Workspace{common.out}.app_config();
            }
            const auto report = bundle::startup_check_file(path);
            for (const auto& w : report.warnings) err << "warning: " << w << '\n';
            if (!report.ok) throw Error(report.code, report.message);
            auto cfg = config::load_app_config(path);
            if (port) cfg.port = *port;
            service::App svc(cfg);
            err << "listening on " << cfg.host << ':' << cfg.port << '\n';
            if (!svc.listen()) throw Error("BIND_FAILED", "cannot bind " + cfg.host + ":" + std::to_string(cfg.port));
            return 0;
        };
    });

    auto* bundle_cmd = app.add_subcommand("bundle", "runtime bundle tools");
    bundle_cmd->require_subcommand(1);
    std::string root, bundle_out, bundle_path, check_config, rules_path;
    auto* bb = bundle_cmd->add_subcommand("build", "package a runtime bundle");
    bb->add_option("--root", root, "deployment root")->required();
    bb->add_option("--out", bundle_out, "bundle.tar.gz")->required();
    bb->add_option("--rules", rules_path, "include rules JSON: {category: [paths]}");
    bb->callback([&] {
        action = [&] {
            auto rules = bundle::default_rules();
            if (!rules_path.empty()) {
                rules.clear();
                const auto j = context::load_json(rules_path, "CONFIG_INVALID", "CONFIG_INVALID");
                try {
                    for (const auto& [cat, paths] : j.items()) rules.push_back({cat, paths.get<std::vector<std::string>>()});
                } catch (const nlohmann::json::exception& e) {
                    throw Error("CONFIG_INVALID", e.what());
                }
            }
            out << bundle::to_json(bundle::build_runtime_bundle(root, rules, bundle_out)).dump(2) << '\n';
            return 0;
        };
    });
    auto* bv = bundle_cmd->add_subcommand("verify", "check bundle digests");
    bv->add_option("path", bundle_path)->required();
    bv->callback([&] {
        action = [&] {
            const auto r = bundle::verify_bundle(bundle_path);
            out << bundle::to_json(r).dump(2) << '\n';
            if (!r.violations.empty()) {
                err << "BUNDLE_TAMPERED: " << r.violations.size() << " violation(s)\n";
                return 1;
            }
            return 0;
        };
    });
    auto* bc = bundle_cmd->add_subcommand("check", "run startup checks");
    bc->add_option("--config", check_config, "service config.json")->required();
    bc->callback([&] {
        action = [&] {
            const auto r = bundle::startup_check_file(check_config);
            out << bundle::to_json(r).dump(2) << '\n';
            if (!r.ok) {
                err << r.code << ": " << r.message << '\n';
                return 1;
            }
            return 0;
        };
    });

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::Success&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "INVALID_ARGUMENT: " << e.what() << '\n';
        return 1;
    }
    if (!action) {
        err << kUsage;
        return 2;
    }
    try {
        return action();
    } catch (const Error& e) {
        err << e.code() << ": " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "INTERNAL: " << e.what() << '\n';
        return 1;
    }
}

inline int dispatch(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return dispatch(args);
}

} // namespace rrm::cli
