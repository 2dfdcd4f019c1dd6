#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "fastlr/errors.hpp"

namespace fastlr {

// Little-endian binary IO with hard EOF checks. All file formats in this
// project are explicitly little-endian.

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw IoError("unexpected end of file while reading u32");
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
           (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
}

inline void write_f32(std::ostream& os, float v) {
    std::uint32_t u;
    static_assert(sizeof(u) == sizeof(v));
    __builtin_memcpy(&u, &v, 4);
    write_u32(os, u);
}

inline float read_f32(std::istream& is) {
    std::uint32_t u = read_u32(is);
    float v;
    __builtin_memcpy(&v, &u, 4);
    return v;
}

inline void write_str(std::ostream& os, const std::string& s) {
    write_u32(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), std::streamsize(s.size()));
}

inline std::string read_str(std::istream& is) {
    std::uint32_t n = read_u32(is);
    std::string s(n, '\0');
    if (n > 0 && !is.read(s.data(), n))
        throw IoError("unexpected end of file while reading string");
    return s;
}

inline constexpr const char* kVersion = "1.0.0";

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

/// Reproducibility header written at the top of every generated text file:
/// tool version, RNG seed, and a hash of the configuration that produced it.
inline std::string file_header(std::uint64_t seed, std::uint64_t config_hash) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "# fastlr %s seed=%llu config=%016llx\n", kVersion,
                  static_cast<unsigned long long>(seed),
                  static_cast<unsigned long long>(config_hash));
    return buf;
}

}  // namespace fastlr
