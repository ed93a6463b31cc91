#pragma once

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rrm/error.hpp"

namespace rrm::detail {

// Splits one CSV record. Double-quoted fields may contain commas and "" escapes.
inline std::vector<std::string> split_csv(std::string_view line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char ch = line[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(ch);
            }
        } else if (ch == '"') {
            quoted = true;
        } else if (ch == ',') {
            out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    out.push_back(std::move(cur));
    return out;
}

inline std::string csv_escape(std::string_view s) {
    if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out.push_back('"');
        out.push_back(ch);
    }
    out.push_back('"');
    return out;
}

inline void strip_cr(std::string& line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
}

inline std::optional<double> parse_double(std::string_view s) {
    if (s.empty()) return std::nullopt;
    std::string tmp(s);
    char* end = nullptr;
    const double v = std::strtod(tmp.c_str(), &end);
    if (end != tmp.c_str() + tmp.size()) return std::nullopt;
    return v;
}

inline std::optional<long long> parse_int(std::string_view s) {
    // Accept a Unicode minus (U+2212) as well as ASCII '-'.
    std::string tmp;
    if (s.substr(0, 3) == "\xE2\x88\x92") {
        tmp = "-";
        tmp.append(s.substr(3));
    } else {
        tmp = std::string(s);
    }
    long long v = 0;
    const char* b = tmp.data();
    const char* e = tmp.data() + tmp.size();
    auto [p, ec] = std::from_chars(b, e, v);
    if (ec != std::errc{} || p != e || tmp.empty()) return std::nullopt;
    return v;
}

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("FILE_MISSING", "cannot open " + path);
    return in;
}

// Reads the header line and checks it matches `expected` column-for-column.
inline void expect_header(std::istream& in, const std::string& path, const std::vector<std::string>& expected) {
    std::string line;
    if (!std::getline(in, line)) throw Error("MALFORMED_HEADER", path + ":1: empty file, expected header");
    strip_cr(line);
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    const auto cols = split_csv(line);
    for (std::size_t i = 0; i < expected.size(); ++i) {
        if (i >= cols.size() || cols[i] != expected[i])
            throw Error("MALFORMED_HEADER", path + ":1:" + std::to_string(i + 1) + ": expected column '" +
                                                expected[i] + "'" +
                                                (i < cols.size() ? ", found '" + cols[i] + "'" : ", found end of line"));
    }
    if (cols.size() != expected.size())
        throw Error("MALFORMED_HEADER", path + ":1:" + std::to_string(expected.size() + 1) + ": unexpected extra column '" +
                                            cols[expected.size()] + "'");
}

} // namespace rrm::detail
