#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sgwb/losses.hpp"
#include "sgwb/phantom.hpp"

using namespace sgwb;

namespace {

// 100 voxels split 60/20/10/5/3/2 across labels 1..6
LabelMask six_region_mask() {
    LabelMask m({1, 10, 10});
    int64_t counts[] = {60, 20, 10, 5, 3, 2};
    size_t at = 0;
    for (int r = 0; r < 6; ++r)
        for (int64_t k = 0; k < counts[r]; ++k) m.data[at++] = r + 1;
    return m;
}

} // namespace

TEST_CASE("plain metric values") {
    Volume a({1, 2, 2}, VolKind::generic), b({1, 2, 2}, VolKind::generic);
    a.data = {1, 2, 3, 4};
    b.data = {2, 2, 1, 8};
    REQUIRE(l1_value(a, b) == Catch::Approx((1 + 0 + 2 + 4) / 4.0));
    REQUIRE(l2_value(a, b) == Catch::Approx((1 + 0 + 4 + 16) / 4.0));
    Volume c({1, 2, 3}, VolKind::generic);
    REQUIRE_THROWS_AS(l1_value(a, c), InputError);
    REQUIRE_THROWS_AS(l2_value(a, c), InputError);
}

TEST_CASE("region weights invert volume share") {
    LabelMask m = six_region_mask();
    auto rw = tissue_region_weights(m, {1, 2, 3, 4, 5, 6});
    REQUIRE(rw.voxels == std::vector<int64_t>{60, 20, 10, 5, 3, 2});
    // exact fractions for the 60/20/10/5/3/2 split
    const double want[] = {1.0 / 72, 1.0 / 24, 1.0 / 12, 1.0 / 6, 5.0 / 18, 5.0 / 12};
    const double rounded[] = {0.0139, 0.0417, 0.0833, 0.1667, 0.2778, 0.4167};
    double sum = 0;
    for (int r = 0; r < 6; ++r) {
        REQUIRE(rw.weight[size_t(r)] == Catch::Approx(want[r]).epsilon(1e-12));
        REQUIRE(rw.weight[size_t(r)] == Catch::Approx(rounded[r]).margin(5e-5));
        sum += rw.weight[size_t(r)];
    }
    REQUIRE(sum == Catch::Approx(1.0).epsilon(1e-12));
    // smallest region carries the largest weight
    for (int r = 1; r < 6; ++r) REQUIRE(rw.weight[size_t(r)] > rw.weight[size_t(r - 1)]);
}

TEST_CASE("region weights reject missing or empty regions") {
    LabelMask m = six_region_mask();
    REQUIRE_THROWS_AS(tissue_region_weights(m, {1, 9}), InputError); // label 9 absent
    REQUIRE_THROWS_AS(tissue_region_weights(m, {}), InputError);
}

TEST_CASE("voxel weight map is uniform inside regions and favors small ones") {
    LabelMask m = six_region_mask();
    auto map = tissue_weight_map(m, {1, 2, 3, 4, 5, 6});
    double total = 0;
    for (double w : map) total += w;
    REQUIRE(total == Catch::Approx(1.0).epsilon(1e-12));
    REQUIRE(map[0] == Catch::Approx(map[59]).epsilon(1e-12));  // both label 1
    REQUIRE(map[98] == Catch::Approx(map[99]).epsilon(1e-12)); // both label 6
    REQUIRE(map[99] > map[0]);                                 // rare beats common per voxel
    LabelMask m2 = m;
    m2.data[0] = 0; // voxel outside every region
    auto map2 = tissue_weight_map(m2, {1, 2, 3, 4, 5, 6});
    REQUIRE(map2[0] == 0.0);
}

TEST_CASE("weighted sampling follows the density and skips zero weights") {
    std::vector<double> w = {0.75, 0.0, 0.25};
    Rng rng(31);
    auto idx = sample_weighted(w, 8000, rng);
    int64_t c0 = 0, c1 = 0, c2 = 0;
    for (auto i : idx) {
        if (i == 0) ++c0;
        if (i == 1) ++c1;
        if (i == 2) ++c2;
    }
    REQUIRE(c1 == 0);
    REQUIRE(c0 + c2 == 8000);
    REQUIRE(std::abs(double(c0) - 6000.0) < 4.0 * std::sqrt(8000 * 0.75 * 0.25));
    Rng r2(31);
    auto idx2 = sample_weighted(w, 8000, r2);
    REQUIRE(idx == idx2);
    REQUIRE_THROWS_AS(sample_weighted({}, 4, rng), InputError);
    REQUIRE_THROWS_AS(sample_weighted({0.0, 0.0}, 4, rng), InputError);
    REQUIRE_THROWS_AS(sample_weighted({1.0, -0.1}, 4, rng), InputError);
}

TEST_CASE("pair indices shuffle is a permutation of the joint draw") {
    std::vector<double> w(64, 1.0);
    Rng rng(32);
    auto pi = sample_pair_indices(w, 40, rng);
    REQUIRE(pi.joint.size() == 40);
    auto a = pi.joint, b = pi.shuffled;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    REQUIRE(a == b);
    REQUIRE(pi.joint != pi.shuffled); // astronomically unlikely to collide at n=40
}

TEST_CASE("constant critic gives a zero information bound") {
    ParamStore<float> ps;
    Rng rng(33);
    MineCritic<float> critic;
    critic.register_params(ps, rng);
    for (auto& e : ps.entries) std::fill(e.value.data.begin(), e.value.data.end(), 0.0f);
    ps.at("mine.l3.b").value.data[0] = 0.7f;

    Graph<float> g;
    auto b = bind(g, ps, false);
    Tensor<float> joint({5, 2}), marg({5, 2});
    for (size_t i = 0; i < 10; ++i) {
        joint.data[i] = float(rng.uniform(-1, 1));
        marg.data[i] = float(rng.uniform(-1, 1));
    }
    int bound = mine_bound(g, critic, ps, b, g.leaf(joint, false), g.leaf(marg, false));
    REQUIRE(g.scalar(bound) == Catch::Approx(0.0).margin(1e-6));
}

TEST_CASE("pair nodes route gradients to sampled voxels of the warped map") {
    ParamStore<float> ps;
    Rng rng(34);
    MineCritic<float> critic;
    critic.register_params(ps, rng);

    Graph<float> g;
    auto b = bind(g, ps, false);
    Tensor<float> fixed({1, 4, 4, 4}), warped({1, 4, 4, 4});
    for (size_t i = 0; i < 64; ++i) {
        fixed.data[i] = float(rng.uniform(-1, 1));
        warped.data[i] = float(rng.uniform(-1, 1));
    }
    int fx = g.leaf(fixed, false);
    int wp = g.leaf(warped, true);
    PairIndices pi;
    pi.joint = {3, 17, 42};
    pi.shuffled = {42, 3, 17};
    auto pairs = build_pair_nodes<float>(g, fx, wp, pi);
    REQUIRE(g.val(pairs.joint).shape == std::vector<int64_t>{3, 2});
    // joint column 0 is the fixed map, column 1 the warped map
    REQUIRE(g.val(pairs.joint).data[0] == fixed.data[3]);
    REQUIRE(g.val(pairs.joint).data[1] == warped.data[3]);
    REQUIRE(g.val(pairs.marg).data[1] == warped.data[42]);

    int bound = mine_bound(g, critic, ps, b, pairs.joint, pairs.marg);
    g.backward(scale(g, bound, -1.0f));
    const auto& gw = g.grad(wp);
    double touched = std::abs(gw.data[3]) + std::abs(gw.data[17]) + std::abs(gw.data[42]);
    REQUIRE(touched > 0.0);
    for (size_t i = 0; i < 64; ++i)
        if (i != 3 && i != 17 && i != 42) REQUIRE(gw.data[i] == 0.0f);
}

TEST_CASE("masked smoothness decomposes exactly for quantized fields") {
    Rng rng(35);
    Shape3 s{6, 6, 6};
    Field f(s);
    for (auto& v : f.data) v = float(std::round(rng.uniform(-2, 2) * 256.0) / 256.0);
    std::vector<uint8_t> inc(s.voxels()), comp(s.voxels());
    for (size_t i = 0; i < inc.size(); ++i) {
        inc[i] = rng.uniform() < 0.5 ? 1 : 0;
        comp[i] = inc[i] ? 0 : 1;
    }
    double full = smoothness_value(f);
    double a = smoothness_value(f, inc);
    double b = smoothness_value(f, comp);
    REQUIRE(a + b == full); // bit-exact: quantized squares sum without rounding
    std::vector<uint8_t> all(s.voxels(), 1);
    REQUIRE(smoothness_value(f, all) == full);
    REQUIRE_THROWS_AS(smoothness_value(f, std::vector<uint8_t>(5, 1)), InputError);
}

TEST_CASE("excluding the sliding band strictly reduces a slip field's penalty") {
    PhantomCase pc = generate_phantom(4, 32);
    auto mis = misalign(pc.ct, pc.labels, 2.0f, 3.0f, 99);
    auto include = smoothness_include_mask(pc.labels, 1);
    int64_t excluded = 0;
    for (uint8_t v : include)
        if (!v) ++excluded;
    REQUIRE(excluded > 0);
    double full = smoothness_value(mis.field);
    double masked = smoothness_value(mis.field, include);
    REQUIRE(masked < full);
    // the band owns a disproportionate share of the roughness
    double band_share = (full - masked) / full;
    double band_frac = double(excluded) / double(include.size());
    REQUIRE(band_share > band_frac);
}

TEST_CASE("include mask is the complement of the boundary band") {
    PhantomCase pc = generate_phantom(5, 32);
    LabelMask band = thoracic_boundary(pc.labels, 2);
    auto include = smoothness_include_mask(pc.labels, 2);
    for (size_t i = 0; i < include.size(); ++i)
        REQUIRE(include[i] == (band.data[i] ? 0 : 1));
}

TEST_CASE("adversarial losses at reference logits") {
    Tensor<float> zeros({1, 2, 2, 2});
    Tensor<float> big({1, 2, 2, 2}), neg({1, 2, 2, 2});
    for (auto& v : big.data) v = 30.0f;
    for (auto& v : neg.data) v = -30.0f;
    {
        Graph<float> g;
        REQUIRE(g.scalar(adversarial_generator(g, g.leaf(zeros, false))) ==
                Catch::Approx(std::log(2.0)).epsilon(1e-5));
    }
    {
        Graph<float> g;
        double v = g.scalar(
            adversarial_discriminator(g, g.leaf(big, false), g.leaf(neg, false)));
        REQUIRE(v == Catch::Approx(0.0).margin(1e-6));
    }
    {
        Graph<float> g;
        double v = g.scalar(
            adversarial_discriminator(g, g.leaf(zeros, false), g.leaf(zeros, false)));
        REQUIRE(v == Catch::Approx(std::log(2.0)).epsilon(1e-5));
    }
    { // fooling the discriminator drives the generator term toward zero
        Graph<float> g;
        double fooled = g.scalar(adversarial_generator(g, g.leaf(big, false)));
        double caught = g.scalar(adversarial_generator(g, g.leaf(neg, false)));
        REQUIRE(fooled < 1e-6);
        REQUIRE(caught > 5.0);
    }
}
