#pragma once

// Dense scalar volumes, integer label masks, dense displacement fields, and the
// canonical on-disk container shared by all pipeline artifacts.
//
// File layout, little-endian, 64-byte header:
//   [ 0..8)  magic "SGWB0001"
//   [ 8]     dtype: 0 = float32, 1 = int32
//   [ 9]     kind  (VolKind)
//   [10..12) reserved, must be zero
//   [12..24) dims d,h,w as uint32
//   [24..36) spacing mm as float32 x3
//   [36..44) payload length in bytes, uint64
//   [44..64) zero padding
// Payload is row-major (z slowest, x fastest). Displacement fields store one
// (dx,dy,dz) float triple per voxel, so their payload is 12 bytes per voxel
// and the container stays self-describing.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "sgwb/common.hpp"

namespace sgwb {

enum class VolKind : uint8_t {
    generic = 0,
    mr_ip = 1,
    mr_op = 2,
    ct_hu = 3,
    ct_norm = 4,
    edge = 5,
    labels = 6,
    field = 7,
    activity = 8,
    mu = 9,
    pet = 10,
};

inline const char* kind_name(VolKind k) {
    switch (k) {
        case VolKind::generic: return "generic";
        case VolKind::mr_ip: return "mr_ip";
        case VolKind::mr_op: return "mr_op";
        case VolKind::ct_hu: return "ct_hu";
        case VolKind::ct_norm: return "ct_norm";
        case VolKind::edge: return "edge";
        case VolKind::labels: return "labels";
        case VolKind::field: return "field";
        case VolKind::activity: return "activity";
        case VolKind::mu: return "mu";
        case VolKind::pet: return "pet";
    }
    return "?";
}

struct Volume {
    Shape3 shape;
    Spacing spacing{1.f, 1.f, 1.f};
    VolKind kind = VolKind::generic;
    std::vector<float> data;

    Volume() = default;
    Volume(Shape3 s, VolKind k, float fill = 0.f, Spacing sp = {1.f, 1.f, 1.f})
        : shape(s), spacing(sp), kind(k), data(s.voxels(), fill) {}

    float& at(uint32_t z, uint32_t y, uint32_t x) { return data[shape.index(z, y, x)]; }
    float at(uint32_t z, uint32_t y, uint32_t x) const { return data[shape.index(z, y, x)]; }
};

struct LabelMask {
    Shape3 shape;
    Spacing spacing{1.f, 1.f, 1.f};
    std::vector<int32_t> data;

    LabelMask() = default;
    LabelMask(Shape3 s, int32_t fill = 0, Spacing sp = {1.f, 1.f, 1.f})
        : shape(s), spacing(sp), data(s.voxels(), fill) {}

    int32_t& at(uint32_t z, uint32_t y, uint32_t x) { return data[shape.index(z, y, x)]; }
    int32_t at(uint32_t z, uint32_t y, uint32_t x) const { return data[shape.index(z, y, x)]; }
};

// Displacement field in voxel units on the output lattice: warped(w) samples
// the moving image at w + disp(w). Stored planar: component c in {0:dx,1:dy,2:dz}.
struct Field {
    Shape3 shape;
    Spacing spacing{1.f, 1.f, 1.f};
    std::vector<float> data; // 3 * voxels, planar [dx | dy | dz]

    Field() = default;
    Field(Shape3 s, Spacing sp = {1.f, 1.f, 1.f})
        : shape(s), spacing(sp), data(3 * s.voxels(), 0.f) {}

    float& comp(int c, uint32_t z, uint32_t y, uint32_t x) {
        return data[uint64_t(c) * shape.voxels() + shape.index(z, y, x)];
    }
    float comp(int c, uint32_t z, uint32_t y, uint32_t x) const {
        return data[uint64_t(c) * shape.voxels() + shape.index(z, y, x)];
    }
    float& dx(uint32_t z, uint32_t y, uint32_t x) { return comp(0, z, y, x); }
    float& dy(uint32_t z, uint32_t y, uint32_t x) { return comp(1, z, y, x); }
    float& dz(uint32_t z, uint32_t y, uint32_t x) { return comp(2, z, y, x); }
    float dx(uint32_t z, uint32_t y, uint32_t x) const { return comp(0, z, y, x); }
    float dy(uint32_t z, uint32_t y, uint32_t x) const { return comp(1, z, y, x); }
    float dz(uint32_t z, uint32_t y, uint32_t x) const { return comp(2, z, y, x); }
};

namespace detail {

constexpr char kMagic[8] = {'S', 'G', 'W', 'B', '0', '0', '0', '1'};
constexpr size_t kHeaderBytes = 64;

struct RawHeader {
    uint8_t dtype = 0;
    uint8_t kind = 0;
    Shape3 shape;
    Spacing spacing;
    uint64_t payload = 0;
};

inline void write_header(std::FILE* f, const RawHeader& h) {
    unsigned char buf[kHeaderBytes];
    std::memset(buf, 0, sizeof buf);
    std::memcpy(buf, kMagic, 8);
    buf[8] = h.dtype;
    buf[9] = h.kind;
    uint32_t dims[3] = {h.shape.d, h.shape.h, h.shape.w};
    std::memcpy(buf + 12, dims, 12);
    std::memcpy(buf + 24, h.spacing.data(), 12);
    std::memcpy(buf + 36, &h.payload, 8);
    if (std::fwrite(buf, 1, kHeaderBytes, f) != kHeaderBytes)
        throw InputError("short write on volume header");
}

inline RawHeader read_header(std::FILE* f, const std::string& path) {
    unsigned char buf[kHeaderBytes];
    size_t got = std::fread(buf, 1, kHeaderBytes, f);
    if (got != kHeaderBytes)
        throw FormatError(path + ": truncated header", got);
    if (std::memcmp(buf, kMagic, 8) != 0)
        throw FormatError(path + ": bad magic", 0);
    RawHeader h;
    h.dtype = buf[8];
    h.kind = buf[9];
    if (h.dtype > 1)
        throw FormatError(path + ": unknown dtype " + std::to_string(h.dtype), 8);
    if (h.kind > uint8_t(VolKind::pet))
        throw FormatError(path + ": unknown kind " + std::to_string(h.kind), 9);
    uint16_t reserved;
    std::memcpy(&reserved, buf + 10, 2);
    if (reserved != 0)
        throw FormatError(path + ": reserved field nonzero", 10);
    uint32_t dims[3];
    std::memcpy(dims, buf + 12, 12);
    h.shape = {dims[0], dims[1], dims[2]};
    if (dims[0] == 0 || dims[1] == 0 || dims[2] == 0)
        throw FormatError(path + ": zero dimension", 12);
    std::memcpy(h.spacing.data(), buf + 24, 12);
    for (float s : h.spacing)
        if (!(s > 0.f) || !std::isfinite(s))
            throw FormatError(path + ": nonpositive spacing", 24);
    std::memcpy(&h.payload, buf + 36, 8);
    return h;
}

struct FileCloser {
    std::FILE* f;
    ~FileCloser() {
        if (f) std::fclose(f);
    }
};

template <typename Elem>
void read_payload(std::FILE* f, const std::string& path, uint64_t declared, std::vector<Elem>& out) {
    if (declared != out.size() * sizeof(Elem))
        throw FormatError(path + ": payload length " + std::to_string(declared) +
                              " does not match dims (want " +
                              std::to_string(out.size() * sizeof(Elem)) + ")",
                          36);
    size_t got = std::fread(out.data(), 1, declared, f);
    if (got != declared)
        throw FormatError(path + ": truncated payload", kHeaderBytes + got);
    // Trailing bytes are a malformed container too.
    unsigned char extra;
    if (std::fread(&extra, 1, 1, f) == 1)
        throw FormatError(path + ": trailing bytes after payload", kHeaderBytes + declared);
}

} // namespace detail

inline void write_volume(const Volume& v, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw InputError("cannot open for write: " + path);
    detail::FileCloser fc{f};
    detail::RawHeader h{0, uint8_t(v.kind), v.shape, v.spacing,
                        uint64_t(v.data.size()) * sizeof(float)};
    detail::write_header(f, h);
    if (std::fwrite(v.data.data(), sizeof(float), v.data.size(), f) != v.data.size())
        throw InputError("short write on volume payload: " + path);
}

inline void write_labels(const LabelMask& m, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw InputError("cannot open for write: " + path);
    detail::FileCloser fc{f};
    detail::RawHeader h{1, uint8_t(VolKind::labels), m.shape, m.spacing,
                        uint64_t(m.data.size()) * sizeof(int32_t)};
    detail::write_header(f, h);
    if (std::fwrite(m.data.data(), sizeof(int32_t), m.data.size(), f) != m.data.size())
        throw InputError("short write on labels payload: " + path);
}

inline void write_field(const Field& fd, const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw InputError("cannot open for write: " + path);
    detail::FileCloser fc{f};
    uint64_t n = fd.shape.voxels();
    detail::RawHeader h{0, uint8_t(VolKind::field), fd.shape, fd.spacing, n * 3 * sizeof(float)};
    detail::write_header(f, h);
    // Interleave (dx,dy,dz) per voxel on disk.
    std::vector<float> row(3);
    for (uint64_t i = 0; i < n; ++i) {
        row[0] = fd.data[i];
        row[1] = fd.data[n + i];
        row[2] = fd.data[2 * n + i];
        if (std::fwrite(row.data(), sizeof(float), 3, f) != 3)
            throw InputError("short write on field payload: " + path);
    }
}

inline Volume read_volume(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw ArtifactError("missing volume file: " + path);
    detail::FileCloser fc{f};
    auto h = detail::read_header(f, path);
    if (h.dtype != 0)
        throw FormatError(path + ": expected float32 volume", 8);
    if (VolKind(h.kind) == VolKind::field)
        throw FormatError(path + ": file holds a displacement field, not a scalar volume", 9);
    Volume v(h.shape, VolKind(h.kind), 0.f, h.spacing);
    detail::read_payload(f, path, h.payload, v.data);
    return v;
}

inline LabelMask read_labels(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw ArtifactError("missing labels file: " + path);
    detail::FileCloser fc{f};
    auto h = detail::read_header(f, path);
    if (h.dtype != 1 || VolKind(h.kind) != VolKind::labels)
        throw FormatError(path + ": not an int32 label mask", 8);
    LabelMask m(h.shape, 0, h.spacing);
    detail::read_payload(f, path, h.payload, m.data);
    return m;
}

inline Field read_field(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw ArtifactError("missing field file: " + path);
    detail::FileCloser fc{f};
    auto h = detail::read_header(f, path);
    if (h.dtype != 0 || VolKind(h.kind) != VolKind::field)
        throw FormatError(path + ": not a displacement field", 8);
    uint64_t n = h.shape.voxels();
    std::vector<float> inter(3 * n);
    detail::read_payload(f, path, h.payload, inter);
    Field fd(h.shape, h.spacing);
    for (uint64_t i = 0; i < n; ++i) {
        fd.data[i] = inter[3 * i];
        fd.data[n + i] = inter[3 * i + 1];
        fd.data[2 * n + i] = inter[3 * i + 2];
    }
    return fd;
}

// Trilinear sample at voxel coordinates (zf,yf,xf). Lattice corners that fall
// outside the volume contribute `border`, so a sample fully outside returns
// border exactly and the transition to it is continuous.
inline float sample_trilinear(const Volume& v, float zf, float yf, float xf, float border) {
    int64_t z0 = int64_t(std::floor(zf)), y0 = int64_t(std::floor(yf)), x0 = int64_t(std::floor(xf));
    float fz = zf - float(z0), fy = yf - float(y0), fx = xf - float(x0);
    float acc = 0.f;
    for (int cz = 0; cz < 2; ++cz)
        for (int cy = 0; cy < 2; ++cy)
            for (int cx = 0; cx < 2; ++cx) {
                float wgt = (cz ? fz : 1.f - fz) * (cy ? fy : 1.f - fy) * (cx ? fx : 1.f - fx);
                if (wgt == 0.f) continue;
                int64_t z = z0 + cz, y = y0 + cy, x = x0 + cx;
                float val = v.shape.contains(z, y, x)
                                ? v.at(uint32_t(z), uint32_t(y), uint32_t(x))
                                : border;
                acc += wgt * val;
            }
    return acc;
}

// warped(w) = moving(w + disp(w)), trilinear, border fill outside the lattice.
inline Volume warp(const Volume& moving, const Field& disp, float border) {
    if (!(moving.shape == disp.shape))
        throw InputError("warp: moving " + moving.shape.str() + " vs field " + disp.shape.str());
    Volume out(moving.shape, moving.kind, 0.f, moving.spacing);
    const Shape3 s = moving.shape;
    for (uint32_t z = 0; z < s.d; ++z)
        for (uint32_t y = 0; y < s.h; ++y)
            for (uint32_t x = 0; x < s.w; ++x) {
                float zf = float(z) + disp.dz(z, y, x);
                float yf = float(y) + disp.dy(z, y, x);
                float xf = float(x) + disp.dx(z, y, x);
                out.at(z, y, x) = sample_trilinear(moving, zf, yf, xf, border);
            }
    return out;
}

// Nearest-neighbour label transport; outside the lattice maps to background 0.
inline LabelMask warp_labels(const LabelMask& moving, const Field& disp) {
    if (!(moving.shape == disp.shape))
        throw InputError("warp_labels: shape mismatch");
    LabelMask out(moving.shape, 0, moving.spacing);
    const Shape3 s = moving.shape;
    for (uint32_t z = 0; z < s.d; ++z)
        for (uint32_t y = 0; y < s.h; ++y)
            for (uint32_t x = 0; x < s.w; ++x) {
                int64_t zi = int64_t(std::llround(double(z) + disp.dz(z, y, x)));
                int64_t yi = int64_t(std::llround(double(y) + disp.dy(z, y, x)));
                int64_t xi = int64_t(std::llround(double(x) + disp.dx(z, y, x)));
                out.at(z, y, x) = s.contains(zi, yi, xi)
                                      ? moving.at(uint32_t(zi), uint32_t(yi), uint32_t(xi))
                                      : 0;
            }
    return out;
}

// Per-voxel forward-difference energy: term(w) = sum over axes with an
// in-lattice forward neighbour of |u(w+e) - u(w)|^2. Double precision so the
// inclusion/exclusion decomposition downstream is reproducible.
inline std::vector<double> forward_diff_terms(const Field& f) {
    const Shape3 s = f.shape;
    std::vector<double> terms(s.voxels(), 0.0);
    const uint64_t n = s.voxels();
    for (uint32_t z = 0; z < s.d; ++z)
        for (uint32_t y = 0; y < s.h; ++y)
            for (uint32_t x = 0; x < s.w; ++x) {
                uint64_t i = s.index(z, y, x);
                double acc = 0.0;
                const int64_t nz[3] = {int64_t(z) + 1, int64_t(z), int64_t(z)};
                const int64_t ny[3] = {int64_t(y), int64_t(y) + 1, int64_t(y)};
                const int64_t nx[3] = {int64_t(x), int64_t(x), int64_t(x) + 1};
                for (int a = 0; a < 3; ++a) {
                    if (!s.contains(nz[a], ny[a], nx[a])) continue;
                    uint64_t j = s.index(uint32_t(nz[a]), uint32_t(ny[a]), uint32_t(nx[a]));
                    for (int c = 0; c < 3; ++c) {
                        double dcomp = double(f.data[uint64_t(c) * n + j]) -
                                       double(f.data[uint64_t(c) * n + i]);
                        acc += dcomp * dcomp;
                    }
                }
                terms[i] = acc;
            }
    return terms;
}

// Clamp to [lo,hi] then affinely map onto [-1,1].
inline Volume normalize_range(const Volume& v, float lo, float hi) {
    if (!(hi > lo)) throw InputError("normalize_range: hi must exceed lo");
    Volume out(v.shape, VolKind::ct_norm, 0.f, v.spacing);
    const float scale = 2.f / (hi - lo);
    for (size_t i = 0; i < v.data.size(); ++i)
        out.data[i] = (clampf(v.data[i], lo, hi) - lo) * scale - 1.f;
    return out;
}

inline void check_finite(const Volume& v, const std::string& what) {
    for (float x : v.data)
        if (!std::isfinite(x)) throw NumericError(what + ": non-finite voxel");
}

// Canonical CT scaling: [-1000, 1500] HU maps onto [-1, 1].
inline constexpr float kHuLo = -1000.f;
inline constexpr float kHuHi = 1500.f;

inline Volume hu_to_norm(const Volume& hu) { return normalize_range(hu, kHuLo, kHuHi); }

inline Volume norm_to_hu(const Volume& n) {
    Volume out(n.shape, VolKind::ct_hu, 0.f, n.spacing);
    for (size_t i = 0; i < n.data.size(); ++i)
        out.data[i] = (clampf(n.data[i], -1.f, 1.f) + 1.f) * 0.5f * (kHuHi - kHuLo) + kHuLo;
    return out;
}

} // namespace sgwb
