#pragma once

#include <cstdint>
#include <string>

namespace heatrank {

// FNV-1a over bytes; used for config hashes and stage-manifest input hashes.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hash_hex(uint64_t h) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, h >>= 4) s[static_cast<size_t>(i)] = digits[h & 0xf];
    return s;
}

inline std::string hash_string(const std::string& s) { return hash_hex(fnv1a64(s.data(), s.size())); }

// Hash of a file's bytes; throws IoError naming the path.
std::string hash_file(const std::string& path);

}  // namespace heatrank
