#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "sgwb/canny.hpp"
#include "sgwb/rng.hpp"

using namespace sgwb;

namespace {

Volume step_x(uint32_t n, uint32_t at, float amp = 1.f) {
    Volume v({n, n, n}, VolKind::generic);
    for (uint32_t z = 0; z < n; ++z)
        for (uint32_t y = 0; y < n; ++y)
            for (uint32_t x = 0; x < n; ++x) v.at(z, y, x) = x >= at ? amp : 0.f;
    return v;
}

} // namespace

TEST_CASE("gaussian smoothing preserves constants and mass") {
    Volume v({8, 8, 8}, VolKind::generic, 3.25f);
    Volume s = gaussian_smooth(v, 1.3);
    for (float x : s.data) REQUIRE(x == Catch::Approx(3.25).margin(1e-6));

    // Interior impulse keeps its mass under replicate padding.
    Volume imp({17, 17, 17}, VolKind::generic);
    imp.at(8, 8, 8) = 1.f;
    Volume si = gaussian_smooth(imp, 1.0);
    double sum = 0;
    for (float x : si.data) sum += x;
    CHECK(sum == Catch::Approx(1.0).margin(1e-6));
    // Symmetry of the impulse response.
    CHECK(si.at(8, 8, 7) == Catch::Approx(si.at(8, 8, 9)));
    CHECK(si.at(7, 8, 8) == Catch::Approx(si.at(9, 8, 8)));
}

TEST_CASE("constant volume has no edges") {
    Volume v({12, 12, 12}, VolKind::generic, 0.7f);
    Volume e = canny3d(v, 1.0, 0.1, 0.2);
    for (float x : e.data) REQUIRE(x == 0.f);
}

TEST_CASE("edge output is binary and deterministic") {
    Rng r(9);
    Volume v({10, 10, 10}, VolKind::generic);
    for (auto& x : v.data) x = float(r.normal());
    Volume e1 = canny3d(v, 1.0, 0.1, 0.2), e2 = canny3d(v, 1.0, 0.1, 0.2);
    for (size_t i = 0; i < e1.data.size(); ++i) {
        REQUIRE((e1.data[i] == 0.f || e1.data[i] == 1.f));
        REQUIRE(e1.data[i] == e2.data[i]);
    }
}

TEST_CASE("axis-aligned step gives a single voxel-thick plane") {
    const uint32_t n = 16;
    Volume v = step_x(n, 8);
    Volume e = canny3d(v, 1.0, 0.1, 0.2);
    std::set<uint32_t> xs;
    uint64_t count = 0;
    for (uint32_t z = 0; z < n; ++z)
        for (uint32_t y = 0; y < n; ++y) {
            uint32_t row = 0;
            for (uint32_t x = 0; x < n; ++x)
                if (e.at(z, y, x) == 1.f) {
                    ++row;
                    ++count;
                    xs.insert(x);
                }
            REQUIRE(row == 1); // exactly one edge voxel per row crossing the step
        }
    CHECK(count == uint64_t(n) * n);
    REQUIRE(xs.size() == 1); // a flat plane
    uint32_t x0 = *xs.begin();
    CHECK(std::abs(double(x0) - 7.5) <= 1.0); // sits at the step
}

TEST_CASE("diagonal step is one voxel thick along its quantized normal") {
    const uint32_t n = 16;
    Volume v({n, n, n}, VolKind::generic);
    for (uint32_t z = 0; z < n; ++z)
        for (uint32_t y = 0; y < n; ++y)
            for (uint32_t x = 0; x < n; ++x) v.at(z, y, x) = (x + y >= n) ? 1.f : 0.f;
    Volume e = canny3d(v, 1.0, 0.1, 0.2);
    uint64_t count = 0;
    for (uint32_t z = 2; z < n - 2; ++z)
        for (uint32_t y = 0; y + 1 < n; ++y)
            for (uint32_t x = 0; x + 1 < n; ++x) {
                if (e.at(z, y, x) == 1.f) ++count;
                // No two edge voxels adjacent along the (1,1) in-plane normal.
                REQUIRE(!(e.at(z, y, x) == 1.f && e.at(z, y + 1, x + 1) == 1.f));
            }
    CHECK(count > 0);
}

TEST_CASE("hysteresis keeps connected weak edges and drops isolated ones") {
    const uint32_t n = 24;
    Volume v({n, n, n}, VolKind::generic);
    // One strong step at x=6; a second, much weaker step at x=16. The weak
    // step's magnitude lands between the two thresholds and is disconnected
    // from the strong plane, so hysteresis must cull it.
    for (uint32_t z = 0; z < n; ++z)
        for (uint32_t y = 0; y < n; ++y)
            for (uint32_t x = 0; x < n; ++x) {
                float val = x >= 6 ? 1.f : 0.f;
                if (x >= 16) val += 0.15f;
                v.at(z, y, x) = val;
            }
    Volume e = canny3d(v, 1.0, 0.1, 0.2);
    uint64_t strong_plane = 0, weak_plane = 0;
    for (uint32_t z = 0; z < n; ++z)
        for (uint32_t y = 0; y < n; ++y)
            for (uint32_t x = 0; x < n; ++x)
                if (e.at(z, y, x) == 1.f) {
                    if (x <= 10)
                        ++strong_plane;
                    else
                        ++weak_plane;
                }
    CHECK(strong_plane == uint64_t(n) * n);
    CHECK(weak_plane == 0);

    // Same weak amplitude, but now smoothly connected to the strong plane
    // through a amplitude ramp along y: hysteresis keeps the whole sheet.
    Volume w({n, n, n}, VolKind::generic);
    for (uint32_t z = 0; z < n; ++z)
        for (uint32_t y = 0; y < n; ++y)
            for (uint32_t x = 0; x < n; ++x) {
                float amp = 1.f - 0.85f * float(y) / float(n - 1);
                w.at(z, y, x) = x >= 6 ? amp : 0.f;
            }
    Volume ew = canny3d(w, 1.0, 0.1, 0.2);
    for (uint32_t y = 0; y < n; ++y) {
        bool any = false;
        for (uint32_t x = 0; x < n; ++x) any = any || ew.at(12, y, x) == 1.f;
        REQUIRE(any);
    }
}

TEST_CASE("parameter validation") {
    Volume v({4, 4, 4}, VolKind::generic);
    CHECK_THROWS_AS(canny3d(v, 0.0, 0.1, 0.2), InputError);
    CHECK_THROWS_AS(canny3d(v, 1.0, 0.3, 0.2), InputError);
    CHECK_THROWS_AS(canny3d(v, 1.0, 0.0, 0.2), InputError);
    CHECK_THROWS_AS(canny3d(v, 1.0, 0.1, 1.5), InputError);
    CHECK_THROWS_AS(gaussian_smooth(v, -1.0), InputError);
}
