#pragma once

// Runtime bundle: a deterministic ustar+gzip archive with an embedded SHA-256 manifest,
// plus the ordered startup check run before the service binds its port.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "rrm/config.hpp"
#include "rrm/context.hpp"
#include "rrm/detail/digest.hpp"
#include "rrm/detail/zlib_codec.hpp"
#include "rrm/error.hpp"
#include "rrm/model.hpp"
#include "rrm/overlay.hpp"
#include "rrm/segments.hpp"
#include "rrm/time.hpp"

namespace rrm::bundle {

namespace fs = std::filesystem;

inline constexpr const char* kToolVersion = "rrm 1.0.0";
inline constexpr const char* kManifestName = "manifest.json";

// ---- tar --------------------------------------------------------------------

struct TarMember {
    std::string path;
    std::string data;
};

namespace tar_detail {

inline void put_octal(char* field, std::size_t width, std::uint64_t v) {
    // width-1 octal digits, NUL terminated
    std::snprintf(field, width, "%0*llo", static_cast<int>(width - 1), static_cast<unsigned long long>(v));
}

inline std::uint64_t get_octal(const char* field, std::size_t width) {
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < width && field[i]; ++i) {
        if (field[i] == ' ') continue;
        if (field[i] < '0' || field[i] > '7') throw Error("BUNDLE_UNREADABLE", "bad octal field in tar header");
        v = v * 8 + static_cast<std::uint64_t>(field[i] - '0');
    }
    return v;
}

inline std::uint32_t checksum(const char* block) {
    std::uint32_t sum = 0;
    for (int i = 0; i < 512; ++i)
        sum += (i >= 148 && i < 156) ? static_cast<unsigned char>(' ') : static_cast<unsigned char>(block[i]);
    return sum;
}

// Splits a path into (prefix, name) fitting the 155/100 ustar fields.
inline std::pair<std::string, std::string> split_name(const std::string& p) {
    if (p.size() <= 100) return {"", p};
    for (std::size_t i = p.size() - 1; i > 0; --i) {
        if (p[i] != '/') continue;
        if (i <= 155 && p.size() - i - 1 <= 100 && p.size() - i - 1 > 0) return {p.substr(0, i), p.substr(i + 1)};
    }
    throw Error("BUNDLE_PATH_TOO_LONG", "path does not fit a tar header: " + p);
}

} // namespace tar_detail

// Regular files only, fixed metadata (mode 0644, uid/gid 0, mtime 0).
inline std::string write_tar(const std::vector<TarMember>& members) {
    std::string out;
    for (const auto& m : members) {
        char h[512];
        std::memset(h, 0, sizeof h);
        const auto [prefix, name] = tar_detail::split_name(m.path);
        std::memcpy(h, name.data(), name.size());
        tar_detail::put_octal(h + 100, 8, 0644);
        tar_detail::put_octal(h + 108, 8, 0);
        tar_detail::put_octal(h + 116, 8, 0);
        tar_detail::put_octal(h + 124, 12, m.data.size());
        tar_detail::put_octal(h + 136, 12, 0);
        h[156] = '0';
        std::memcpy(h + 257, "ustar", 6);
        std::memcpy(h + 263, "00", 2);
        std::memcpy(h + 265, "root", 4);
        std::memcpy(h + 297, "root", 4);
        std::memcpy(h + 345, prefix.data(), prefix.size());
        std::snprintf(h + 148, 8, "%06o", tar_detail::checksum(h));
        h[155] = ' ';
        out.append(h, 512);
        out.append(m.data);
        out.append((512 - m.data.size() % 512) % 512, '\0');
    }
    out.append(1024, '\0');
    return out;
}

inline std::vector<TarMember> read_tar(std::string_view tar) {
    std::vector<TarMember> out;
    std::size_t pos = 0;
    while (pos + 512 <= tar.size()) {
        const char* h = tar.data() + pos;
        if (std::all_of(h, h + 512, [](char c) { return c == 0; })) return out;
        const auto stored = tar_detail::get_octal(h + 148, 8);
        if (stored != tar_detail::checksum(h)) throw Error("BUNDLE_UNREADABLE", "tar header checksum mismatch");
        const auto size = tar_detail::get_octal(h + 124, 12);
        const std::string name(h, strnlen(h, 100));
        const std::string prefix(h + 345, strnlen(h + 345, 155));
        const char type = h[156];
        pos += 512;
        if (pos + size > tar.size()) throw Error("BUNDLE_UNREADABLE", "tar member truncated");
        if (type == '0' || type == '\0')
            out.push_back({prefix.empty() ? name : prefix + "/" + name, std::string(tar.substr(pos, size))});
        pos += (size + 511) / 512 * 512;
    }
    throw Error("BUNDLE_UNREADABLE", "tar archive lacks end marker");
}

// ---- manifest ---------------------------------------------------------------

struct ManifestEntry {
    std::string path;
    std::uint64_t size = 0;
    std::string sha256;
    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct Skipped {
    std::string path;
    std::string reason;
    friend bool operator==(const Skipped&, const Skipped&) = default;
};

struct BundleManifest {
    std::string created_at;
    std::vector<ManifestEntry> entries;
    std::vector<Skipped> skipped;
    std::string tool_version = kToolVersion;
};

inline nlohmann::json to_json(const BundleManifest& m) {
    nlohmann::json e = nlohmann::json::array(), s = nlohmann::json::array();
    for (const auto& x : m.entries) e.push_back({{"path", x.path}, {"size", x.size}, {"sha256", x.sha256}});
    for (const auto& x : m.skipped) s.push_back({{"path", x.path}, {"reason", x.reason}});
    return {{"created_at", m.created_at}, {"entries", e}, {"skipped", s}, {"tool_version", m.tool_version}};
}

inline BundleManifest manifest_from_json(const nlohmann::json& j) {
    BundleManifest m;
    m.created_at = j.at("created_at").get<std::string>();
    m.tool_version = j.at("tool_version").get<std::string>();
    for (const auto& e : j.at("entries"))
        m.entries.push_back({e.at("path").get<std::string>(), e.at("size").get<std::uint64_t>(),
                             e.at("sha256").get<std::string>()});
    for (const auto& s : j.at("skipped"))
        m.skipped.push_back({s.at("path").get<std::string>(), s.at("reason").get<std::string>()});
    return m;
}

// Category -> paths relative to the source root. Directories are taken recursively.
struct IncludeRule {
    std::string category;
    std::vector<std::string> paths;
};

inline std::vector<IncludeRule> default_rules() {
    return {{"binaries", {"bin"}},
            {"config", {"config.json"}},
            {"models", {"models"}},
            {"context", {"dataset/baseline_context.json", "segment_dataset/segment_context.json"}},
            {"segments", {"segments/segments.bin"}},
            {"overlay", {"overlay"}},
            {"forecast", {"forecast"}},
            {"tiles", {"tiles"}},
            {"static", {"static"}},
            {"docs", {"README.md"}}};
}

inline std::string created_at_stamp() {
    if (const char* e = std::getenv("SOURCE_DATE_EPOCH"); e && *e) {
        char* end = nullptr;
        const long long v = std::strtoll(e, &end, 10);
        if (*end == '\0') return format_rfc3339(from_unix(v));
    }
    return format_rfc3339(now_utc());
}

inline bool valid_relative(const std::string& p) {
    if (p.empty() || p.front() == '/') return false;
    for (const auto& part : fs::path(p))
        if (part == "..") return false;
    return true;
}

// Collects files under the rules, writes out_path, returns the embedded manifest.
inline BundleManifest build_runtime_bundle(const std::string& source_root, const std::vector<IncludeRule>& rules,
                                           const std::string& out_path) {
    const fs::path root(source_root);
    if (!fs::is_directory(root)) throw Error("BUNDLE_ROOT_MISSING", "source root is not a directory: " + source_root);
    std::set<std::string> files;
    BundleManifest m;
    for (const auto& rule : rules)
        for (const auto& rel : rule.paths) {
            if (!valid_relative(rel)) throw Error("CONFIG_INVALID", "include path must be relative: " + rel);
            const fs::path p = root / rel;
            if (fs::is_regular_file(p)) {
                files.insert(fs::path(rel).lexically_normal().generic_string());
            } else if (fs::is_directory(p)) {
                for (const auto& e : fs::recursive_directory_iterator(p))
                    if (e.is_regular_file()) files.insert(fs::relative(e.path(), root).generic_string());
            } else {
                m.skipped.push_back({fs::path(rel).generic_string(), "missing"});
            }
        }
    files.erase(kManifestName);
    std::sort(m.skipped.begin(), m.skipped.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
    std::vector<TarMember> members;
    for (const auto& rel : files) {
        auto data = detail::read_file((root / rel).string());
        m.entries.push_back({rel, data.size(), detail::sha256_hex(data)});
        members.push_back({rel, std::move(data)});
    }
    m.created_at = created_at_stamp();
    members.insert(members.begin(), TarMember{kManifestName, to_json(m).dump(2) + "\n"});
    const auto gz = detail::gzip_compress(write_tar(members));
    try {
        detail::write_file(out_path, gz);
    } catch (const Error& e) {
        throw Error("BUNDLE_UNWRITABLE", e.what());
    }
    return m;
}

struct Violation {
    std::string kind; // digest_mismatch | size_mismatch | missing | extra | manifest
    std::string path;
    friend bool operator==(const Violation&, const Violation&) = default;
};

struct VerifyResult {
    std::vector<Violation> violations;
    std::optional<BundleManifest> manifest;
    bool ok() const { return violations.empty(); }
};

inline std::vector<TarMember> read_bundle_members(const std::string& path) {
    std::string raw;
    try {
        raw = detail::read_file(path);
    } catch (const Error&) {
        throw Error("BUNDLE_UNREADABLE", "cannot read " + path);
    }
    std::string tar;
    try {
        tar = detail::gzip_decompress(raw);
    } catch (const Error& e) {
        throw Error("BUNDLE_UNREADABLE", path + ": " + e.what());
    }
    return read_tar(tar);
}

// Rewrites a bundle archive from its members (used to stage tampered copies in tests).
inline void write_bundle_members(const std::string& path, const std::vector<TarMember>& members) {
    detail::write_file(path, detail::gzip_compress(write_tar(members)));
}

inline VerifyResult verify_bundle(const std::string& path) {
    const auto members = read_bundle_members(path);
    VerifyResult r;
    std::map<std::string, const TarMember*> by_path;
    for (const auto& m : members) by_path[m.path] = &m;
    const auto mf = by_path.find(kManifestName);
    if (mf == by_path.end()) {
        r.violations.push_back({"manifest", kManifestName});
        return r;
    }
    try {
        r.manifest = manifest_from_json(nlohmann::json::parse(mf->second->data));
    } catch (const nlohmann::json::exception&) {
        r.violations.push_back({"manifest", kManifestName});
        return r;
    }
    std::set<std::string> listed;
    for (const auto& e : r.manifest->entries) {
        listed.insert(e.path);
        const auto it = by_path.find(e.path);
        if (it == by_path.end()) {
            r.violations.push_back({"missing", e.path});
            continue;
        }
        if (it->second->data.size() != e.size) r.violations.push_back({"size_mismatch", e.path});
        if (detail::sha256_hex(it->second->data) != e.sha256) r.violations.push_back({"digest_mismatch", e.path});
    }
    for (const auto& [p, m] : by_path)
        if (p != kManifestName && !listed.count(p)) r.violations.push_back({"extra", p});
    return r;
}

inline nlohmann::json to_json(const VerifyResult& r) {
    nlohmann::json v = nlohmann::json::array();
    for (const auto& x : r.violations) v.push_back({{"kind", x.kind}, {"path", x.path}});
    return {{"ok", r.ok()}, {"violations", v}, {"entries", r.manifest ? r.manifest->entries.size() : 0}};
}

inline void extract_bundle(const std::string& path, const std::string& dest) {
    for (const auto& m : read_bundle_members(path)) {
        if (!valid_relative(m.path)) throw Error("BUNDLE_UNREADABLE", "unsafe member path " + m.path);
        const fs::path out = fs::path(dest) / m.path;
        fs::create_directories(out.parent_path());
        detail::write_file(out.string(), m.data);
    }
}

// ---- startup check ------------------------------------------------------------

struct StartupReport {
    bool ok = true;
    std::string code;    // first fatal code
    std::string message;
    std::vector<std::string> warnings;
    std::vector<std::string> steps; // checks that passed, in order
};

inline nlohmann::json to_json(const StartupReport& r) {
    return {{"ok", r.ok}, {"code", r.code}, {"message", r.message}, {"warnings", r.warnings}, {"steps", r.steps}};
}

// Ordered checks; stops at the first fatal one. Reads only.
inline StartupReport startup_check(const config::AppConfig& c) {
    StartupReport r;
    auto fatal = [&](std::string code, std::string msg) {
        r.ok = false;
        r.code = std::move(code);
        r.message = std::move(msg);
        return r;
    };
    r.steps.push_back("config");

    auto bundle_step = [&](const std::string& path, const char* layer) -> std::optional<StartupReport> {
        if (!fs::is_regular_file(path)) return fatal("MODEL_MISSING", std::string(layer) + " bundle not found: " + path);
        try {
            const auto b = model::load_bundle(path);
            if (b.meta.layer != layer)
                return fatal("MODEL_CORRUPT", path + " holds a " + b.meta.layer + " bundle, expected " + layer);
        } catch (const Error& e) {
            return fatal("MODEL_CORRUPT", e.what());
        }
        return std::nullopt;
    };
    if (auto f = bundle_step(c.baseline_bundle, "baseline")) return *f;
    if (!fs::is_regular_file(c.baseline_context))
        return fatal("MODEL_MISSING", "baseline context not found: " + c.baseline_context);
    try {
        context::baseline_context_from_json(context::load_json(c.baseline_context, "MODEL_MISSING", "MODEL_CORRUPT"));
    } catch (const Error& e) {
        return fatal(e.code() == "MODEL_MISSING" ? "MODEL_MISSING" : "MODEL_CORRUPT", e.what());
    }
    r.steps.push_back("baseline_bundle");
    if (auto f = bundle_step(c.segment_bundle, "segment")) return *f;
    r.steps.push_back("segment_bundle");
    try {
        segments::load_segments(c.segments);
        context::segment_context_from_json(context::load_json(c.segment_context, "SEGMENTS_MISSING", "SEGMENTS_MISSING"));
    } catch (const Error& e) {
        return fatal("SEGMENTS_MISSING", e.what());
    }
    r.steps.push_back("segments");
    if (c.overlay.empty() || !fs::is_regular_file(c.overlay)) {
        r.warnings.push_back("overlay not found; raster tiles disabled until built");
    } else {
        try {
            overlay::load_overlay(c.overlay);
        } catch (const Error& e) {
            r.warnings.push_back(std::string("overlay unreadable: ") + e.what());
        }
    }
    r.steps.push_back("overlay");
    if (!c.tiles_dir.empty() && !fs::is_directory(c.tiles_dir))
        r.warnings.push_back("tiles dir not found; tiles render on demand");
    r.steps.push_back("tiles");
    if (c.contact.smtp && c.contact.smtp->host.empty())
        r.warnings.push_back("smtp host empty; contact messages go to the fallback log");
    const auto log_dir = fs::path(c.contact.fallback_log).parent_path();
    if (!log_dir.empty() && !fs::is_directory(log_dir))
        r.warnings.push_back("contact log directory does not exist yet: " + log_dir.string());
    r.steps.push_back("contact");
    return r;
}

inline StartupReport startup_check_file(const std::string& config_path) {
    try {
        return startup_check(config::load_app_config(config_path));
    } catch (const Error& e) {
        StartupReport r;
        r.ok = false;
        r.code = "CONFIG_INVALID";
        r.message = e.what();
        return r;
    }
}

} // namespace rrm::bundle
