#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sgwb/evalkit.hpp"
#include "sgwb/rng.hpp"

using namespace sgwb;

namespace {

Volume random_volume(Shape3 s, uint64_t seed, float lo = -1.f, float hi = 1.f) {
    Volume v(s, VolKind::generic);
    Rng rng(seed);
    for (auto& x : v.data) x = float(rng.uniform(lo, hi));
    return v;
}

// independent windowed SSIM: per voxel, gather the clipped 7^3 window into a
// list and use two-pass statistics
double ssim_oracle(const Volume& a, const Volume& b) {
    const Shape3 s = a.shape;
    const double c1 = 0.0004, c2 = 0.0036;
    double total = 0;
    int64_t count = 0;
    for (int64_t z = 0; z < int64_t(s.d); ++z)
        for (int64_t y = 0; y < int64_t(s.h); ++y)
            for (int64_t x = 0; x < int64_t(s.w); ++x) {
                std::vector<double> wa, wb;
                for (int64_t dz = -3; dz <= 3; ++dz)
                    for (int64_t dy = -3; dy <= 3; ++dy)
                        for (int64_t dx = -3; dx <= 3; ++dx) {
                            int64_t zz = z + dz, yy = y + dy, xx = x + dx;
                            if (zz < 0 || yy < 0 || xx < 0 || zz >= int64_t(s.d) ||
                                yy >= int64_t(s.h) || xx >= int64_t(s.w))
                                continue;
                            wa.push_back(a.at(uint32_t(zz), uint32_t(yy), uint32_t(xx)));
                            wb.push_back(b.at(uint32_t(zz), uint32_t(yy), uint32_t(xx)));
                        }
                double ma = 0, mb = 0;
                for (size_t i = 0; i < wa.size(); ++i) {
                    ma += wa[i];
                    mb += wb[i];
                }
                ma /= double(wa.size());
                mb /= double(wb.size());
                double va = 0, vb = 0, cov = 0;
                for (size_t i = 0; i < wa.size(); ++i) {
                    va += (wa[i] - ma) * (wa[i] - ma);
                    vb += (wb[i] - mb) * (wb[i] - mb);
                    cov += (wa[i] - ma) * (wb[i] - mb);
                }
                va /= double(wa.size());
                vb /= double(wb.size());
                cov /= double(wa.size());
                total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                         ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
    return total / double(count);
}

// 90-degree in-plane rotation of a square slice
std::vector<float> rot90(const std::vector<float>& img, uint32_t n) {
    std::vector<float> out(img.size());
    for (uint32_t y = 0; y < n; ++y)
        for (uint32_t x = 0; x < n; ++x) out[size_t(y) * n + x] = img[size_t(x) * n + (n - 1 - y)];
    return out;
}

} // namespace

TEST_CASE("psnr closed-form values") {
    Volume a({4, 4, 4}, VolKind::generic, 0.25f);
    Volume b = a;
    REQUIRE(std::isinf(psnr(a, b)));

    for (auto& v : b.data) v += 0.2f;
    REQUIRE(psnr(a, b) == Catch::Approx(10.0 * std::log10(4.0 / 0.04)).epsilon(1e-6));
    REQUIRE(psnr(a, b) == Catch::Approx(20.0).epsilon(1e-5));
    REQUIRE(psnr(a, b) == Catch::Approx(psnr(b, a)));

    // difference entirely outside the mask
    std::vector<uint8_t> mask(a.data.size(), 0);
    Volume c = a;
    for (size_t i = 32; i < c.data.size(); ++i) c.data[i] += 0.5f;
    for (size_t i = 0; i < 32; ++i) mask[i] = 1;
    REQUIRE(std::isinf(psnr(a, c, mask)));

    std::vector<uint8_t> empty_mask(a.data.size(), 0);
    REQUIRE_THROWS_AS(psnr(a, c, empty_mask), InputError);
    Volume wrong({2, 2, 2}, VolKind::generic);
    REQUIRE_THROWS_AS(psnr(a, wrong), InputError);
}

TEST_CASE("psnr decreases as noise grows") {
    Volume a = random_volume({8, 8, 8}, 501);
    Rng rng(502);
    double prev = std::numeric_limits<double>::infinity();
    for (double amp : {0.05, 0.15, 0.45}) {
        Volume b = a;
        Rng noise(777); // same noise pattern, scaled
        for (auto& v : b.data) v += float(amp * noise.normal());
        double p = psnr(a, b);
        REQUIRE(p < prev);
        prev = p;
    }
    (void)rng;
}

TEST_CASE("ssim identities and anticorrelation") {
    Volume a = random_volume({8, 8, 8}, 503);
    REQUIRE(ssim(a, a) == Catch::Approx(1.0).margin(1e-9));

    // anti-correlated structure: a checkerboard is zero-mean inside every
    // window, so the luminance term stays positive and the structure term
    // drives the score negative
    Volume zm(a.shape, VolKind::generic);
    for (uint32_t z = 0; z < a.shape.d; ++z)
        for (uint32_t y = 0; y < a.shape.h; ++y)
            for (uint32_t x = 0; x < a.shape.w; ++x)
                zm.at(z, y, x) = ((z + y + x) % 2) ? 0.5f : -0.5f;
    Volume neg = zm;
    for (auto& v : neg.data) v = -v;
    REQUIRE(ssim(zm, neg) < 0.0);

    REQUIRE(ssim(a, neg) == Catch::Approx(ssim(neg, a)).margin(1e-12));
}

TEST_CASE("ssim matches the sliding window oracle") {
    Volume a = random_volume({12, 12, 12}, 504);
    Volume b = a;
    Rng rng(505);
    for (auto& v : b.data) v = 0.7f * v + float(0.2 * rng.normal());
    const double got = ssim(a, b);
    const double want = ssim_oracle(a, b);
    REQUIRE(got == Catch::Approx(want).margin(1e-6));
    REQUIRE(got > -1.0);
    REQUIRE(got < 1.0);
}

TEST_CASE("hu to mu bilinear law") {
    REQUIRE(hu_to_mu_value(-1000.0) == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(hu_to_mu_value(-2000.0) == Catch::Approx(0.0).margin(1e-12)); // clamped
    REQUIRE(hu_to_mu_value(0.0) == Catch::Approx(0.096).margin(1e-12));
    REQUIRE(hu_to_mu_value(1000.0) == Catch::Approx(0.1524).margin(1e-9));

    // continuity at the water point
    REQUIRE(hu_to_mu_value(-1e-9) == Catch::Approx(hu_to_mu_value(1e-9)).margin(1e-10));

    // monotone nondecreasing
    double prev = -1;
    for (double hu = -1100; hu <= 1500; hu += 7.3) {
        double mu = hu_to_mu_value(hu);
        REQUIRE(mu >= prev);
        prev = mu;
    }

    Volume ct({2, 2, 2}, VolKind::ct_hu);
    ct.data = {-1000, -500, 0, 100, 500, 1000, 1500, 250};
    Volume mu = hu_to_mu(ct);
    REQUIRE(mu.kind == VolKind::mu);
    for (size_t i = 0; i < ct.data.size(); ++i)
        REQUIRE(mu.data[i] == Catch::Approx(hu_to_mu_value(ct.data[i])).margin(1e-7));
}

TEST_CASE("four tissue discretization plateaus") {
    Volume ct({1, 2, 4}, VolKind::ct_hu);
    ct.data = {-1000, -950, -600, -250, 0, 250, 400, 1200};
    Volume mu = four_tissue_mu(ct);
    REQUIRE(mu.data[0] == 0.0f);
    REQUIRE(mu.data[1] == 0.0f);
    REQUIRE(mu.data[2] == 0.025f);
    REQUIRE(mu.data[3] == 0.025f);
    REQUIRE(mu.data[4] == 0.096f);
    REQUIRE(mu.data[5] == 0.096f);
    REQUIRE(mu.data[6] == 0.13f);
    REQUIRE(mu.data[7] == 0.13f);
}

TEST_CASE("radon projections conserve mass per angle") {
    const uint32_t n = 32;
    std::vector<float> img(size_t(n) * n, 0.f);
    // centered gaussian blob
    for (uint32_t y = 0; y < n; ++y)
        for (uint32_t x = 0; x < n; ++x) {
            double dx = x - (n - 1) / 2.0, dy = y - (n - 1) / 2.0;
            img[size_t(y) * n + x] = float(std::exp(-(dx * dx + dy * dy) / 18.0));
        }
    double img_sum = 0;
    for (float v : img) img_sum += v;

    Sinogram sg = radon2d(img.data(), n, n, 24);
    for (int a = 0; a < sg.angles; ++a) {
        double proj_sum = 0;
        for (int b = 0; b < sg.bins; ++b) proj_sum += sg.at(a, b);
        REQUIRE(proj_sum == Catch::Approx(img_sum).epsilon(0.01));
    }

    std::vector<float> zero(size_t(n) * n, 0.f);
    Sinogram zs = radon2d(zero.data(), n, n, 16);
    for (double v : zs.data) REQUIRE(v == 0.0);
    REQUIRE_THROWS_AS(radon2d(img.data(), n, n, 0), InputError);
}

TEST_CASE("fbp recovers a uniform disk") {
    const uint32_t n = 48;
    const double r = 12.0, cx = (n - 1) / 2.0, cy = (n - 1) / 2.0;
    std::vector<float> img(size_t(n) * n, 0.f);
    for (uint32_t y = 0; y < n; ++y)
        for (uint32_t x = 0; x < n; ++x)
            if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r)
                img[size_t(y) * n + x] = 1.0f;

    Sinogram sg = radon2d(img.data(), n, n, 96);
    auto rec = fbp2d(sg, n, n);

    double err = 0;
    int64_t cnt = 0;
    for (uint32_t y = 0; y < n; ++y)
        for (uint32_t x = 0; x < n; ++x) {
            // judge strictly inside, away from the rim
            if ((x - cx) * (x - cx) + (y - cy) * (y - cy) > (r - 2) * (r - 2)) continue;
            const double d = rec[size_t(y) * n + x] - 1.0;
            err += d * d;
            ++cnt;
        }
    REQUIRE(cnt > 100);
    REQUIRE(std::sqrt(err / double(cnt)) < 0.05);
}

TEST_CASE("reconstruction is equivariant to quarter turns") {
    const uint32_t n = 40;
    std::vector<float> img(size_t(n) * n, 0.f);
    // off-center blob so rotation actually moves it
    for (uint32_t y = 0; y < n; ++y)
        for (uint32_t x = 0; x < n; ++x) {
            double dx = x - 26.0, dy = y - 14.0;
            img[size_t(y) * n + x] = float(std::exp(-(dx * dx + dy * dy) / 10.0));
        }
    const int angles = 96; // 90 degrees = 48 angular steps
    auto rec = fbp2d(radon2d(img.data(), n, n, angles), n, n);
    auto rimg = rot90(img, n);
    auto rrec = fbp2d(radon2d(rimg.data(), n, n, angles), n, n);

    std::vector<float> recf(rec.begin(), rec.end());
    auto rot_rec = rot90(recf, n);
    double peak = 0;
    for (double v : rec) peak = std::max(peak, std::abs(v));
    for (size_t i = 0; i < rrec.size(); ++i)
        REQUIRE(std::abs(rrec[i] - double(rot_rec[i])) < 0.02 * peak);
}

TEST_CASE("ac surrogate identity and undercorrection") {
    PhantomCase pc = generate_phantom(601, 32);
    Volume mu = hu_to_mu(pc.ct);

    auto [pet_test, pet_ref] = ac_surrogate(pc.activity, mu, mu, 24);
    REQUIRE(pet_test.data == pet_ref.data); // identical pipelines, exact

    Volume zero_mu(mu.shape, VolKind::mu, 0.f, mu.spacing);
    auto [pet_under, pet_ref2] = ac_surrogate(pc.activity, mu, zero_mu, 24);
    double m_under = 0, m_ref = 0;
    int64_t n = 0;
    for (size_t i = 0; i < pc.labels.data.size(); ++i) {
        if (pc.labels.data[i] == L_AIR) continue;
        m_under += pet_under.data[i];
        m_ref += pet_ref2.data[i];
        ++n;
    }
    REQUIRE(n > 0);
    REQUIRE(m_under / double(n) < m_ref / double(n));

    Volume bad({16, 16, 16}, VolKind::mu);
    REQUIRE_THROWS_AS(ac_surrogate(pc.activity, mu, bad, 24), InputError);
    REQUIRE_THROWS_AS(ac_surrogate(pc.activity, mu, mu, 8), InputError);
}

TEST_CASE("suv difference zeros, linearity, and swap relation") {
    PhantomCase pc = generate_phantom(602, 32);
    Volume ref(pc.ct.shape, VolKind::pet, 0.f, pc.ct.spacing);
    Rng rng(603);
    for (size_t i = 0; i < ref.data.size(); ++i)
        ref.data[i] = pc.labels.data[i] != L_AIR ? float(1.0 + 0.3 * rng.uniform()) : 0.05f;

    CaseSuv zero = suv_difference(ref, ref, pc.labels);
    for (double m : zero.mean) REQUIRE(m == 0.0);

    Volume test = ref;
    for (auto& v : test.data) v *= 1.1f;
    CaseSuv lin = suv_difference(test, ref, pc.labels);

    // expected: 0.1 * (ROI mean of ref / body mean of ref), per ROI
    double body_sum = 0;
    int64_t body_n = 0;
    for (size_t i = 0; i < pc.labels.data.size(); ++i)
        if (pc.labels.data[i] != L_AIR) {
            body_sum += ref.data[i];
            ++body_n;
        }
    const double norm = body_sum / double(body_n);
    LabelMask rois = suv_rois(pc.labels);
    for (int r = 1; r <= 5; ++r) {
        double acc = 0;
        int64_t cnt = 0;
        for (size_t i = 0; i < rois.data.size(); ++i)
            if (rois.data[i] == r) {
                acc += ref.data[i];
                ++cnt;
            }
        REQUIRE(cnt > 0);
        const double want = 0.1 * (acc / double(cnt)) / norm;
        REQUIRE(lin.mean[size_t(r - 1)] == Catch::Approx(want).epsilon(1e-4));
    }

    // swap scales by the ratio of the two normalizers and flips sign
    CaseSuv swp = suv_difference(ref, test, pc.labels);
    double body_sum_t = 0;
    for (size_t i = 0; i < pc.labels.data.size(); ++i)
        if (pc.labels.data[i] != L_AIR) body_sum_t += test.data[i];
    const double ratio = body_sum / body_sum_t;
    for (size_t r = 0; r < 5; ++r)
        REQUIRE(swp.mean[r] == Catch::Approx(-lin.mean[r] * ratio).epsilon(1e-4));
}

TEST_CASE("suv rois require every region") {
    LabelMask labels({8, 8, 8}, L_BODY);
    // no liver, spine, pelvis or femur anywhere
    Volume pet(labels.shape, VolKind::pet, 1.f);
    REQUIRE_THROWS_AS(suv_difference(pet, pet, labels), InputError);
}

TEST_CASE("suv aggregation mean and spread") {
    CaseSuv a, b;
    for (size_t i = 0; i < 5; ++i) {
        a.mean[i] = 0.1 * double(i);
        b.mean[i] = 0.1 * double(i) + 0.02;
    }
    SuvReport rep = aggregate_suv({a, b});
    REQUIRE(rep.cases == 2);
    for (size_t i = 0; i < 5; ++i) {
        REQUIRE(rep.mean[i] == Catch::Approx(0.1 * double(i) + 0.01).margin(1e-12));
        REQUIRE(rep.sd[i] == Catch::Approx(0.01).margin(1e-12));
    }
    REQUIRE_THROWS_AS(aggregate_suv({}), InputError);
}

TEST_CASE("region report covers the table regions") {
    PhantomCase pc = generate_phantom(604, 32);
    RegionReport rep = region_report(pc.ct, pc.ct, pc.labels);
    REQUIRE(rep.rows.size() == 5);
    REQUIRE(rep.rows[0].region == "whole_body");
    REQUIRE(rep.rows[1].region == "spine");
    REQUIRE(rep.rows[4].region == "femur");
    for (const auto& row : rep.rows) {
        REQUIRE(std::isinf(row.psnr));
        REQUIRE(row.ssim == Catch::Approx(1.0).margin(1e-9));
    }

    // degraded copy scores lower everywhere
    Volume noisy = pc.ct;
    Rng rng(605);
    for (auto& v : noisy.data) v += float(40.0 * rng.normal());
    RegionReport worse = region_report(pc.ct, noisy, pc.labels);
    for (const auto& row : worse.rows) {
        REQUIRE(std::isfinite(row.psnr));
        REQUIRE(row.ssim < 1.0);
    }
}
