#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

namespace pmetlab {

constexpr uint64_t kFnvOffset = 14695981039346656037ULL;
constexpr uint64_t kFnvPrime = 1099511628211ULL;

inline uint64_t fnv1a_update(uint64_t h, const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= kFnvPrime;
    }
    return h;
}

inline uint64_t fnv1a(const void* data, size_t n) { return fnv1a_update(kFnvOffset, data, n); }

inline uint64_t fnv1a(const std::string& s) { return fnv1a(s.data(), s.size()); }

// FNV-1a 64 of a file's bytes; throws std::runtime_error if unreadable.
uint64_t fnv1a_file(const std::string& path);

// 16 lowercase hex digits
std::string hash_hex(uint64_t h);

}  // namespace pmetlab
