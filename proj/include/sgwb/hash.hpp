#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "sgwb/common.hpp"

namespace sgwb {

// FNV-1a 64-bit, used for artifact content hashes in manifests.
struct Fnv1a {
    uint64_t h = 0xcbf29ce484222325ull;
    void update(const void* data, size_t n) {
        const unsigned char* p = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 0x100000001b3ull;
        }
    }
    uint64_t digest() const { return h; }
};

inline uint64_t fnv1a(const void* data, size_t n) {
    Fnv1a f;
    f.update(data, n);
    return f.digest();
}

inline std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline uint64_t hash_file(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw ArtifactError("cannot open for hashing: " + path);
    Fnv1a h;
    std::vector<unsigned char> buf(1 << 16);
    size_t n;
    while ((n = std::fread(buf.data(), 1, buf.size(), f)) > 0) h.update(buf.data(), n);
    std::fclose(f);
    return h.digest();
}

} // namespace sgwb
