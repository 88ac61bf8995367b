#pragma once

// Checkpoint files: every parameter tensor with its Adam moments, integrity
// hashes per record, and an optional training-resume record (step, epoch,
// RNG state). Loading requires the store to already hold matching
// registrations; names and shapes are verified, payloads are hash-checked.

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>

#include "sgwb/volume.hpp"

#include "sgwb/common.hpp"
#include "sgwb/hash.hpp"
#include "sgwb/nets.hpp"

namespace sgwb {

struct TrainState {
    int64_t step = 0;
    int64_t epoch = 0;
    std::array<uint64_t, 6> rng{};
};

namespace detail {

constexpr char kCkptMagic[8] = {'S', 'G', 'W', 'B', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCkptVersion = 1;

inline void put(std::FILE* f, const void* p, size_t n, const char* what) {
    if (std::fwrite(p, 1, n, f) != n) throw ArtifactError(std::string("write failed: ") + what);
}

inline void get(std::FILE* f, void* p, size_t n, const char* what) {
    if (std::fread(p, 1, n, f) != n)
        throw FormatError(std::string("truncated checkpoint: ") + what,
                          uint64_t(std::ftell(f)));
}

} // namespace detail

template <typename T>
void save_checkpoint(const std::string& path, const ParamStore<T>& ps,
                     const TrainState* state = nullptr) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw ArtifactError("cannot open for writing: " + path);
    detail::FileCloser closer{f};
    detail::put(f, detail::kCkptMagic, 8, "magic");
    detail::put(f, &detail::kCkptVersion, 4, "version");
    const uint8_t dtype = sizeof(T) == 4 ? 0 : 1;
    detail::put(f, &dtype, 1, "dtype");
    const uint8_t has_state = state ? 1 : 0;
    detail::put(f, &has_state, 1, "state flag");
    const uint32_t count = uint32_t(ps.entries.size());
    detail::put(f, &count, 4, "entry count");
    for (const auto& e : ps.entries) {
        const uint16_t nl = uint16_t(e.name.size());
        detail::put(f, &nl, 2, "name length");
        detail::put(f, e.name.data(), nl, "name");
        const uint8_t nd = uint8_t(e.value.shape.size());
        detail::put(f, &nd, 1, "rank");
        for (int64_t d : e.value.shape) detail::put(f, &d, 8, "dim");
        Fnv1a h;
        h.update(e.value.data.data(), e.value.data.size() * sizeof(T));
        h.update(e.m.data.data(), e.m.data.size() * sizeof(double));
        h.update(e.v.data.data(), e.v.data.size() * sizeof(double));
        const uint64_t digest = h.digest();
        detail::put(f, &digest, 8, "record hash");
        detail::put(f, e.value.data.data(), e.value.data.size() * sizeof(T), "values");
        detail::put(f, e.m.data.data(), e.m.data.size() * sizeof(double), "adam m");
        detail::put(f, e.v.data.data(), e.v.data.size() * sizeof(double), "adam v");
    }
    if (state) {
        detail::put(f, &state->step, 8, "step");
        detail::put(f, &state->epoch, 8, "epoch");
        detail::put(f, state->rng.data(), 6 * 8, "rng state");
    }
}

// Returns true when the file carried a training-resume record.
template <typename T>
bool load_checkpoint(const std::string& path, ParamStore<T>& ps, TrainState* state = nullptr) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw ArtifactError("cannot open checkpoint: " + path);
    detail::FileCloser closer{f};
    char magic[8];
    detail::get(f, magic, 8, "magic");
    if (std::memcmp(magic, detail::kCkptMagic, 8) != 0)
        throw FormatError("bad checkpoint magic", 0);
    uint32_t version = 0;
    detail::get(f, &version, 4, "version");
    if (version != detail::kCkptVersion) throw FormatError("unsupported checkpoint version", 8);
    uint8_t dtype = 0, has_state = 0;
    detail::get(f, &dtype, 1, "dtype");
    if (dtype != (sizeof(T) == 4 ? 0 : 1)) throw FormatError("checkpoint dtype mismatch", 12);
    detail::get(f, &has_state, 1, "state flag");
    uint32_t count = 0;
    detail::get(f, &count, 4, "entry count");
    if (count != ps.entries.size())
        throw InputError("checkpoint holds " + std::to_string(count) + " tensors, store has " +
                         std::to_string(ps.entries.size()));
    for (uint32_t i = 0; i < count; ++i) {
        uint16_t nl = 0;
        detail::get(f, &nl, 2, "name length");
        std::string name(nl, '\0');
        detail::get(f, name.data(), nl, "name");
        if (!ps.has(name)) throw InputError("checkpoint tensor not registered: " + name);
        auto& e = ps.at(name);
        uint8_t nd = 0;
        detail::get(f, &nd, 1, "rank");
        std::vector<int64_t> dims(nd);
        for (auto& d : dims) detail::get(f, &d, 8, "dim");
        if (dims != e.value.shape) throw InputError("shape mismatch for " + name);
        uint64_t want = 0;
        detail::get(f, &want, 8, "record hash");
        detail::get(f, e.value.data.data(), e.value.data.size() * sizeof(T), "values");
        detail::get(f, e.m.data.data(), e.m.data.size() * sizeof(double), "adam m");
        detail::get(f, e.v.data.data(), e.v.data.size() * sizeof(double), "adam v");
        Fnv1a h;
        h.update(e.value.data.data(), e.value.data.size() * sizeof(T));
        h.update(e.m.data.data(), e.m.data.size() * sizeof(double));
        h.update(e.v.data.data(), e.v.data.size() * sizeof(double));
        if (h.digest() != want)
            throw FormatError("corrupt record for " + name, uint64_t(std::ftell(f)));
    }
    if (has_state && state) {
        detail::get(f, &state->step, 8, "step");
        detail::get(f, &state->epoch, 8, "epoch");
        detail::get(f, state->rng.data(), 6 * 8, "rng state");
    }
    return has_state != 0;
}

} // namespace sgwb
