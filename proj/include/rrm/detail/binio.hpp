#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "rrm/error.hpp"

namespace rrm::detail {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <class T>
void put(std::ostream& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.write(buf, sizeof(T));
}

inline void put_string(std::ostream& out, const std::string& s) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <class T>
T get(std::istream& in, const char* code) {
    char buf[sizeof(T)];
    if (!in.read(buf, sizeof(T))) throw Error(code, "unexpected end of file");
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

inline std::string get_string(std::istream& in, const char* code, std::uint32_t max_len = 1u << 20) {
    const auto n = get<std::uint32_t>(in, code);
    if (n > max_len) throw Error(code, "string length out of range");
    std::string s(n, '\0');
    if (n && !in.read(s.data(), n)) throw Error(code, "unexpected end of file");
    return s;
}

} // namespace rrm::detail
