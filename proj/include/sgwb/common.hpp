#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace sgwb {

// Exit codes used by the CLI. Library code throws; the CLI maps.
enum class ErrorClass : int {
    ok = 0,
    bad_input = 2,        // config / CLI / file-format problems
    missing_artifact = 3, // checkpoint or data file absent / hash mismatch
    failed_numeric = 4    // NaN/Inf guards, non-finite losses
};

struct Error : std::runtime_error {
    ErrorClass cls;
    Error(ErrorClass c, const std::string& msg) : std::runtime_error(msg), cls(c) {}
};

struct FormatError : Error {
    uint64_t byte_offset;
    FormatError(const std::string& msg, uint64_t off)
        : Error(ErrorClass::bad_input, msg + " (byte offset " + std::to_string(off) + ")"),
          byte_offset(off) {}
};

struct InputError : Error {
    explicit InputError(const std::string& msg) : Error(ErrorClass::bad_input, msg) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(ErrorClass::failed_numeric, msg) {}
};

struct ArtifactError : Error {
    explicit ArtifactError(const std::string& msg) : Error(ErrorClass::missing_artifact, msg) {}
};

// Grid dimensions, slowest-varying first: d slices (z), h rows (y), w columns (x).
struct Shape3 {
    uint32_t d = 0, h = 0, w = 0;

    uint64_t voxels() const { return uint64_t(d) * h * w; }
    bool operator==(const Shape3&) const = default;
    bool contains(int64_t z, int64_t y, int64_t x) const {
        return z >= 0 && z < int64_t(d) && y >= 0 && y < int64_t(h) && x >= 0 && x < int64_t(w);
    }
    uint64_t index(uint32_t z, uint32_t y, uint32_t x) const {
        return (uint64_t(z) * h + y) * w + x;
    }
    std::string str() const {
        return std::to_string(d) + "x" + std::to_string(h) + "x" + std::to_string(w);
    }
};

using Spacing = std::array<float, 3>; // mm, same axis order as Shape3

inline float clampf(float v, float lo, float hi) { return v < lo ? lo : (v > hi ? hi : v); }
inline double clampd(double v, double lo, double hi) { return v < lo ? lo : (v > hi ? hi : v); }

} // namespace sgwb
