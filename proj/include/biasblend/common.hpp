#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace bb {

namespace detail {
inline void format_into(std::ostringstream&) {}
template <class T, class... Rest>
void format_into(std::ostringstream& os, const T& v, const Rest&... rest) {
    os << v;
    format_into(os, rest...);
}
}  // namespace detail

template <class... Args>
std::string cat(const Args&... args) {
    std::ostringstream os;
    detail::format_into(os, args...);
    return os.str();
}

// Contract violation (bad shapes, bad arguments).
template <class... Args>
void check(bool cond, const Args&... args) {
    if (!cond) throw std::invalid_argument(cat(args...));
}

// Runtime failure (I/O, format errors).
template <class... Args>
void require(bool cond, const Args&... args) {
    if (!cond) throw std::runtime_error(cat(args...));
}

// FNV-1a over bytes; used for platform-stable config hashes.
inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace bb
