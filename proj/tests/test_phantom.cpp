#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <map>

#include "sgwb/hash.hpp"
#include "sgwb/phantom.hpp"

using namespace sgwb;

namespace {

uint64_t case_hash(const PhantomCase& c) {
    Fnv1a h;
    auto add = [&](const auto& v) { h.update(v.data.data(), v.data.size() * sizeof(v.data[0])); };
    add(c.mr_ip);
    add(c.mr_op);
    add(c.ct);
    add(c.activity);
    add(c.labels);
    add(c.gt_field);
    return h.digest();
}

std::map<int32_t, std::pair<double, uint64_t>> label_means(const Volume& v, const LabelMask& m) {
    std::map<int32_t, std::pair<double, uint64_t>> acc;
    for (size_t i = 0; i < v.data.size(); ++i) {
        auto& e = acc[m.data[i]];
        e.first += v.data[i];
        e.second++;
    }
    for (auto& [k, e] : acc) e.first /= double(e.second);
    return acc;
}

} // namespace

TEST_CASE("phantom generation is deterministic in seed and size") {
    auto a = generate_phantom(11, 32), b = generate_phantom(11, 32);
    CHECK(case_hash(a) == case_hash(b));
    auto c = generate_phantom(12, 32);
    CHECK(case_hash(a) != case_hash(c));
}

TEST_CASE("labels 1 through 8 each occupy at least 8 voxels at size 32") {
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        auto c = generate_phantom(seed, 32);
        std::array<uint64_t, kNumLabels> counts{};
        for (int32_t l : c.labels.data) counts[size_t(l)]++;
        for (int l = 1; l <= 8; ++l) {
            INFO("seed " << seed << " label " << label_name(l));
            CHECK(counts[size_t(l)] >= 8);
        }
        CHECK(counts[L_FAT] >= 8);
    }
}

TEST_CASE("sub-region volumes follow the expected descending order") {
    int good = 0;
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        auto c = generate_phantom(seed, 32);
        auto v = sub_region_volumes(c.labels);
        bool ordered = true;
        for (int r = 0; r + 1 < kNumSubRegions; ++r) ordered = ordered && v[r] > v[r + 1];
        if (ordered) ++good;
        else {
            WARN("seed " << seed << " order violated: " << v[0] << " " << v[1] << " " << v[2]
                         << " " << v[3] << " " << v[4] << " " << v[5]);
        }
    }
    CHECK(good >= 9);
}

TEST_CASE("CT intensities sit in their tissue bands") {
    auto c = generate_phantom(5, 32);
    for (size_t i = 0; i < c.ct.data.size(); ++i) {
        float hu = c.ct.data[i];
        switch (c.labels.data[i]) {
            case L_AIR: REQUIRE(hu == -1000.f); break;
            case L_LUNGS: REQUIRE((hu >= -800.f && hu <= -700.f)); break;
            case L_FAT: REQUIRE((hu >= -120.f && hu <= -80.f)); break;
            case L_BODY: REQUIRE((hu >= 20.f && hu <= 60.f)); break;
            case L_LIVER: REQUIRE((hu >= 45.f && hu <= 65.f)); break;
            case L_SPINE:
            case L_RIBS:
            case L_PELVIS:
            case L_FEMUR: REQUIRE((hu >= 500.f && hu <= 900.f)); break;
            default: break;
        }
    }
}

TEST_CASE("MR channels live in [-1,1] and disagree with CT ordering") {
    auto c = generate_phantom(6, 32);
    for (float v : c.mr_ip.data) REQUIRE((v >= -1.f && v <= 1.f));
    for (float v : c.mr_op.data) REQUIRE((v >= -1.f && v <= 1.f));

    auto ip = label_means(c.mr_ip, c.labels);
    auto op = label_means(c.mr_op, c.labels);
    auto hu = label_means(c.ct, c.labels);
    // Fat: brightest-ish in IP but low in CT; bone: brightest in CT, dark in MR.
    CHECK(ip[L_FAT].first > ip[L_SPINE].first);
    CHECK(hu[L_FAT].first < hu[L_SPINE].first);
    CHECK(hu[L_SPINE].first > hu[L_LIVER].first);
    CHECK(ip[L_SPINE].first < ip[L_LIVER].first);
    // Out-of-phase suppresses fat strongly relative to in-phase.
    CHECK(op[L_FAT].first < ip[L_FAT].first - 0.5);
}

TEST_CASE("activity map is nonnegative with expected uptake ordering") {
    auto c = generate_phantom(7, 32);
    for (float v : c.activity.data) REQUIRE(v >= 0.f);
    auto a = label_means(c.activity, c.labels);
    CHECK(a[L_AIR].first == Catch::Approx(0.0));
    CHECK(a[L_BLADDER].first > a[L_LIVER].first);
    CHECK(a[L_LIVER].first > a[L_BODY].first);
    CHECK(a[L_BODY].first > a[L_FAT].first);
}

TEST_CASE("zero-magnitude zero-slip misalignment is the identity") {
    auto c = generate_phantom(8, 32, 0.0, 0.0);
    auto mp = misalign(c.ct, c.labels, 0.0, 0.0, 99);
    for (size_t i = 0; i < c.ct.data.size(); ++i) REQUIRE(mp.moved_ct.data[i] == c.ct.data[i]);
    for (size_t i = 0; i < c.labels.data.size(); ++i)
        REQUIRE(mp.moved_labels.data[i] == c.labels.data[i]);
}

TEST_CASE("smooth field peak norm equals the requested magnitude") {
    auto c = generate_phantom(9, 32);
    for (uint64_t seed : {4ull, 5ull}) {
        auto mp = misalign(c.ct, c.labels, 3.0, 0.0, seed);
        const uint64_t n = mp.field.shape.voxels();
        double peak = 0;
        for (uint64_t i = 0; i < n; ++i) {
            double dx = mp.field.data[i], dy = mp.field.data[n + i], dz = mp.field.data[2 * n + i];
            peak = std::max(peak, std::sqrt(dx * dx + dy * dy + dz * dz));
        }
        CHECK(peak == Catch::Approx(3.0).epsilon(1e-4));
    }
}

TEST_CASE("slip shows up as a tangential jump across the lateral thoracic boundary") {
    auto c = generate_phantom(10, 32);
    auto region = thoracic_region(c.labels);
    auto mp = misalign(c.ct, c.labels, 3.0, 2.0, 17);
    const Shape3 s = c.labels.shape;
    const uint64_t n = s.voxels();
    // Walk lateral (x-direction) region boundaries; dz must jump by the slip
    // while the smooth part contributes only a small residual.
    uint64_t faces = 0;
    for (uint32_t z = 0; z < s.d; ++z)
        for (uint32_t y = 0; y < s.h; ++y)
            for (uint32_t x = 0; x + 1 < s.w; ++x) {
                uint64_t i = s.index(z, y, x), j = s.index(z, y, x + 1);
                if (region[i] == region[j]) continue;
                ++faces;
                double jump = std::abs(double(mp.field.data[2 * n + i]) -
                                       double(mp.field.data[2 * n + j]));
                REQUIRE(jump == Catch::Approx(2.0).margin(0.35));
            }
    CHECK(faces > 50);
}

TEST_CASE("smooth part of the field obeys the per-voxel diff bound off the boundary") {
    for (uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull, 6ull, 7ull, 8ull, 9ull, 10ull}) {
        auto c = generate_phantom(seed, 32, 3.0, 2.0);
        auto shell = thoracic_boundary(c.labels, 2);
        auto terms = forward_diff_terms(c.gt_field);
        double worst = 0;
        for (size_t i = 0; i < terms.size(); ++i)
            if (!shell.data[i]) worst = std::max(worst, terms[i]);
        INFO("seed " << seed << " worst off-boundary term " << worst);
        REQUIRE(worst <= 0.25 * 3.0 * 3.0);
    }
}

TEST_CASE("misalignment is reproducible and actually moves anatomy") {
    auto c = generate_phantom(13, 32);
    auto a = misalign(c.ct, c.labels, 3.0, 2.0, 21);
    auto b = misalign(c.ct, c.labels, 3.0, 2.0, 21);
    CHECK(a.moved_ct.data == b.moved_ct.data);
    CHECK(a.moved_labels.data == b.moved_labels.data);
    uint64_t diff = 0;
    for (size_t i = 0; i < c.ct.data.size(); ++i)
        if (a.moved_ct.data[i] != c.ct.data[i]) ++diff;
    CHECK(diff > c.ct.data.size() / 20);
}

TEST_CASE("thoracic boundary construction") {
    auto c = generate_phantom(14, 32);
    SECTION("no lungs is an error") {
        LabelMask empty(c.labels.shape, L_AIR);
        CHECK_THROWS_AS(thoracic_boundary(empty, 2), InputError);
        CHECK_THROWS_AS(thoracic_boundary(empty, 0), InputError);
    }
    SECTION("monotone in radius and covers the region surface") {
        auto r1 = thoracic_boundary(c.labels, 1);
        auto r3 = thoracic_boundary(c.labels, 3);
        uint64_t n1 = 0, n3 = 0;
        for (size_t i = 0; i < r1.data.size(); ++i) {
            if (r1.data[i]) REQUIRE(r3.data[i] == 1);
            n1 += uint64_t(r1.data[i]);
            n3 += uint64_t(r3.data[i]);
        }
        CHECK(n1 > 0);
        CHECK(n3 > n1);

        // Every region-to-outside face voxel pair lies inside the shell.
        auto region = thoracic_region(c.labels);
        const Shape3 s = c.labels.shape;
        for (uint32_t z = 0; z + 1 < s.d; ++z)
            for (uint32_t y = 0; y < s.h; ++y)
                for (uint32_t x = 0; x < s.w; ++x) {
                    uint64_t i = s.index(z, y, x), j = s.index(z + 1, y, x);
                    if (region[i] != region[j]) {
                        REQUIRE(r1.data[i] == 1);
                        REQUIRE(r1.data[j] == 1);
                    }
                }
    }
}

TEST_CASE("apply_gt matches a manual warp with the stored field") {
    auto c = generate_phantom(15, 32);
    auto mp = apply_gt(c);
    Volume manual = warp(c.ct, c.gt_field, -1000.f);
    CHECK(mp.moved_ct.data == manual.data);
}

TEST_CASE("phantom scales to other grid sizes") {
    auto c = generate_phantom(3, 48);
    CHECK(c.labels.shape == Shape3{48, 48, 48});
    CHECK(c.ct.spacing[0] == Catch::Approx(256.0 / 48));
    std::array<uint64_t, kNumLabels> counts{};
    for (int32_t l : c.labels.data) counts[size_t(l)]++;
    for (int l = 1; l < kNumLabels; ++l) CHECK(counts[size_t(l)] > 0);
    CHECK_THROWS_AS(generate_phantom(1, 8), InputError);
}
