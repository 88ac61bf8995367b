#pragma once

// 3D Canny edges: separable Gaussian smoothing, central-difference gradient,
// non-maximum suppression along 13 quantized orientations (the canonical half
// of the 26-neighbourhood), then hysteresis with thresholds given as fractions
// of the peak gradient magnitude and 26-connected linking.

#include <cmath>
#include <cstdint>
#include <vector>

#include "sgwb/common.hpp"
#include "sgwb/volume.hpp"

namespace sgwb {

// Replicate-padded separable Gaussian. Kernel radius ceil(3*sigma).
inline Volume gaussian_smooth(const Volume& v, double sigma) {
    if (!(sigma > 0.0)) throw InputError("gaussian_smooth: sigma must be positive");
    int r = int(std::ceil(3.0 * sigma));
    std::vector<double> k(size_t(2 * r + 1));
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) {
        k[size_t(i + r)] = std::exp(-0.5 * double(i) * double(i) / (sigma * sigma));
        sum += k[size_t(i + r)];
    }
    for (auto& x : k) x /= sum;

    const Shape3 s = v.shape;
    std::vector<double> a(v.data.begin(), v.data.end()), b(a.size());
    auto pass = [&](int axis, const std::vector<double>& src, std::vector<double>& dst) {
        const int64_t len = axis == 0 ? s.d : axis == 1 ? s.h : s.w;
        for (uint32_t z = 0; z < s.d; ++z)
            for (uint32_t y = 0; y < s.h; ++y)
                for (uint32_t x = 0; x < s.w; ++x) {
                    double acc = 0.0;
                    int64_t base = axis == 0 ? z : axis == 1 ? y : x;
                    for (int i = -r; i <= r; ++i) {
                        int64_t p = base + i;
                        p = p < 0 ? 0 : (p >= len ? len - 1 : p);
                        uint64_t idx = axis == 0   ? s.index(uint32_t(p), y, x)
                                       : axis == 1 ? s.index(z, uint32_t(p), x)
                                                   : s.index(z, y, uint32_t(p));
                        acc += k[size_t(i + r)] * src[idx];
                    }
                    dst[s.index(z, y, x)] = acc;
                }
    };
    pass(0, a, b);
    pass(1, b, a);
    pass(2, a, b);
    Volume out(s, v.kind, 0.f, v.spacing);
    for (size_t i = 0; i < b.size(); ++i) out.data[i] = float(b[i]);
    return out;
}

namespace detail {

// Canonical half of the 26-neighbourhood, (dz,dy,dx).
inline constexpr int kDir13[13][3] = {
    {0, 0, 1}, {0, 1, 0}, {1, 0, 0},  {0, 1, 1},  {0, 1, -1},  {1, 0, 1},   {1, 0, -1},
    {1, 1, 0}, {1, -1, 0}, {1, 1, 1}, {1, 1, -1}, {1, -1, 1},  {1, -1, -1},
};

} // namespace detail

// Binary edge map in {0,1}. lo/hi are fractions of the maximum gradient
// magnitude; a constant input (zero peak magnitude) yields no edges.
inline Volume canny3d(const Volume& v, double sigma = 1.0, double lo = 0.1, double hi = 0.2) {
    if (!(sigma > 0.0)) throw InputError("canny3d: sigma must be positive");
    if (!(lo > 0.0) || !(hi <= 1.0) || lo > hi)
        throw InputError("canny3d: need 0 < lo <= hi <= 1");

    Volume sm = gaussian_smooth(v, sigma);
    const Shape3 s = v.shape;
    const uint64_t n = s.voxels();

    auto clamped = [&](int64_t z, int64_t y, int64_t x) {
        z = z < 0 ? 0 : (z >= s.d ? s.d - 1 : z);
        y = y < 0 ? 0 : (y >= s.h ? s.h - 1 : y);
        x = x < 0 ? 0 : (x >= s.w ? s.w - 1 : x);
        return double(sm.at(uint32_t(z), uint32_t(y), uint32_t(x)));
    };

    std::vector<double> mag(n, 0.0);
    std::vector<int8_t> dir(n, -1); // index into kDir13 with orientation sign
    std::vector<int8_t> sign(n, 1);
    double peak = 0.0;
    for (uint32_t z = 0; z < s.d; ++z)
        for (uint32_t y = 0; y < s.h; ++y)
            for (uint32_t x = 0; x < s.w; ++x) {
                double gz = 0.5 * (clamped(int64_t(z) + 1, y, x) - clamped(int64_t(z) - 1, y, x));
                double gy = 0.5 * (clamped(z, int64_t(y) + 1, x) - clamped(z, int64_t(y) - 1, x));
                double gx = 0.5 * (clamped(z, y, int64_t(x) + 1) - clamped(z, y, int64_t(x) - 1));
                double m = std::sqrt(gz * gz + gy * gy + gx * gx);
                uint64_t i = s.index(z, y, x);
                mag[i] = m;
                peak = std::max(peak, m);
                if (m == 0.0) continue;
                double best = -1.0;
                for (int d = 0; d < 13; ++d) {
                    const auto& e = detail::kDir13[d];
                    double dot = gz * e[0] + gy * e[1] + gx * e[2];
                    double norm = std::sqrt(double(e[0] * e[0] + e[1] * e[1] + e[2] * e[2]));
                    double score = std::abs(dot) / norm;
                    if (score > best) {
                        best = score;
                        dir[i] = int8_t(d);
                        sign[i] = dot < 0.0 ? int8_t(-1) : int8_t(1);
                    }
                }
            }

    Volume out(s, VolKind::edge, 0.f, v.spacing);
    if (peak <= 0.0) return out;

    // NMS. Plateau tie-break is asymmetric (strict against the uphill-behind
    // neighbour, non-strict against the uphill-ahead one) so a symmetric
    // blurred step keeps exactly one plane.
    auto mag_at = [&](int64_t z, int64_t y, int64_t x) {
        return s.contains(z, y, x) ? mag[s.index(uint32_t(z), uint32_t(y), uint32_t(x))] : 0.0;
    };
    std::vector<uint8_t> keep(n, 0);
    for (uint32_t z = 0; z < s.d; ++z)
        for (uint32_t y = 0; y < s.h; ++y)
            for (uint32_t x = 0; x < s.w; ++x) {
                uint64_t i = s.index(z, y, x);
                if (mag[i] <= 0.0 || dir[i] < 0) continue;
                const auto& e = detail::kDir13[dir[i]];
                int dz = sign[i] * e[0], dy = sign[i] * e[1], dx = sign[i] * e[2];
                double behind = mag_at(int64_t(z) - dz, int64_t(y) - dy, int64_t(x) - dx);
                double ahead = mag_at(int64_t(z) + dz, int64_t(y) + dy, int64_t(x) + dx);
                if (mag[i] > behind && mag[i] >= ahead) keep[i] = 1;
            }

    const double tlo = lo * peak, thi = hi * peak;
    std::vector<uint8_t> state(n, 0); // 1 weak candidate, 2 strong
    std::vector<uint64_t> stack;
    for (uint64_t i = 0; i < n; ++i) {
        if (!keep[i] || mag[i] < tlo) continue;
        state[i] = mag[i] >= thi ? 2 : 1;
        if (state[i] == 2) stack.push_back(i);
    }
    // Grow strong seeds through weak candidates, 26-connected.
    for (uint64_t idx : stack) out.data[idx] = 1.f;
    while (!stack.empty()) {
        uint64_t i = stack.back();
        stack.pop_back();
        uint32_t z = uint32_t(i / (uint64_t(s.h) * s.w));
        uint32_t rem = uint32_t(i % (uint64_t(s.h) * s.w));
        uint32_t y = rem / s.w, x = rem % s.w;
        for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    if (!dz && !dy && !dx) continue;
                    int64_t zz = int64_t(z) + dz, yy = int64_t(y) + dy, xx = int64_t(x) + dx;
                    if (!s.contains(zz, yy, xx)) continue;
                    uint64_t j = s.index(uint32_t(zz), uint32_t(yy), uint32_t(xx));
                    if (state[j] == 1 && out.data[j] == 0.f) {
                        out.data[j] = 1.f;
                        stack.push_back(j);
                    }
                }
    }
    return out;
}

} // namespace sgwb
