#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rrm/detail/zlib_codec.hpp"

namespace rrm::detail {

// Minimal RGBA8 PNG writer: filter type 0 on every row, one IDAT chunk.
inline std::string encode_png_rgba(std::uint32_t width, std::uint32_t height, const std::vector<std::uint8_t>& rgba) {
    auto be32 = [](std::string& s, std::uint32_t v) {
        s.push_back(static_cast<char>(v >> 24));
        s.push_back(static_cast<char>(v >> 16));
        s.push_back(static_cast<char>(v >> 8));
        s.push_back(static_cast<char>(v));
    };
    auto chunk = [&](std::string& out, const char* type, const std::string& data) {
        be32(out, static_cast<std::uint32_t>(data.size()));
        std::string body(type, 4);
        body += data;
        out += body;
        be32(out, crc32_of(body));
    };
    std::string png("\x89PNG\r\n\x1a\n", 8);
    std::string ihdr;
    be32(ihdr, width);
    be32(ihdr, height);
    ihdr += std::string("\x08\x06\x00\x00\x00", 5); // 8-bit RGBA, no interlace
    chunk(png, "IHDR", ihdr);
    std::string raw;
    raw.reserve(static_cast<std::size_t>(height) * (width * 4 + 1));
    for (std::uint32_t y = 0; y < height; ++y) {
        raw.push_back('\0');
        raw.append(reinterpret_cast<const char*>(rgba.data()) + static_cast<std::size_t>(y) * width * 4, width * 4);
    }
    chunk(png, "IDAT", zlib_compress(raw, 6));
    chunk(png, "IEND", {});
    return png;
}

} // namespace rrm::detail
