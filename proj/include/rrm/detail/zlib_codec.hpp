#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <zlib.h>

#include "rrm/error.hpp"

namespace rrm::detail {

// windowBits 15 = zlib stream, 31 = gzip stream. The gzip header zlib writes has mtime 0,
// so output depends only on the input bytes and level.
inline std::string deflate_bytes(std::string_view in, int window_bits, int level = 6) {
    z_stream zs{};
    if (deflateInit2(&zs, level, Z_DEFLATED, window_bits, 8, Z_DEFAULT_STRATEGY) != Z_OK)
        throw Error("COMPRESS_FAILED", "deflateInit2 failed");
    std::string out;
    out.resize(deflateBound(&zs, static_cast<uLong>(in.size())) + 64);
    zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
    zs.avail_in = static_cast<uInt>(in.size());
    zs.next_out = reinterpret_cast<Bytef*>(out.data());
    zs.avail_out = static_cast<uInt>(out.size());
    const int rc = deflate(&zs, Z_FINISH);
    const auto produced = zs.total_out;
    deflateEnd(&zs);
    if (rc != Z_STREAM_END) throw Error("COMPRESS_FAILED", "deflate did not finish");
    out.resize(produced);
    return out;
}

inline std::string gzip_compress(std::string_view in) { return deflate_bytes(in, 31, 9); }
inline std::string zlib_compress(std::string_view in, int level = 6) { return deflate_bytes(in, 15, level); }

inline std::string gzip_decompress(std::string_view in) {
    z_stream zs{};
    if (inflateInit2(&zs, 31) != Z_OK) throw Error("DECOMPRESS_FAILED", "inflateInit2 failed");
    zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
    zs.avail_in = static_cast<uInt>(in.size());
    std::string out;
    char buf[1 << 16];
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        zs.next_out = reinterpret_cast<Bytef*>(buf);
        zs.avail_out = sizeof buf;
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&zs);
            throw Error("DECOMPRESS_FAILED", "corrupt gzip stream");
        }
        out.append(buf, sizeof buf - zs.avail_out);
        if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
            inflateEnd(&zs);
            throw Error("DECOMPRESS_FAILED", "truncated gzip stream");
        }
    }
    inflateEnd(&zs);
    return out;
}

inline std::uint32_t crc32_of(std::string_view a, std::uint32_t seed = 0) {
    return static_cast<std::uint32_t>(
        crc32(seed, reinterpret_cast<const Bytef*>(a.data()), static_cast<uInt>(a.size())));
}

} // namespace rrm::detail
