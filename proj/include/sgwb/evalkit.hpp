#pragma once

// Regional image metrics, HU-to-attenuation conversion, and a slice-wise
// parallel-beam Radon/FBP surrogate for PET attenuation correction.

#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "sgwb/phantom.hpp"
#include "sgwb/volume.hpp"

namespace sgwb {

// ---------------------------------------------------------------------------
// PSNR / SSIM
// ---------------------------------------------------------------------------

namespace detail {

inline void check_metric_inputs(const Volume& a, const Volume& b,
                                const std::vector<uint8_t>& mask, const char* what) {
    if (a.shape.d != b.shape.d || a.shape.h != b.shape.h || a.shape.w != b.shape.w)
        throw InputError(std::string(what) + ": shape mismatch");
    if (!mask.empty()) {
        if (mask.size() != a.data.size()) throw InputError(std::string(what) + ": mask size");
        bool any = false;
        for (uint8_t v : mask)
            if (v) {
                any = true;
                break;
            }
        if (!any) throw InputError(std::string(what) + ": empty mask");
    }
}

} // namespace detail

// Peak signal-to-noise ratio over the [-1,1] range (MAX = 2). Identical
// inputs return the +infinity sentinel.
inline double psnr(const Volume& a, const Volume& b, const std::vector<uint8_t>& mask = {}) {
    detail::check_metric_inputs(a, b, mask, "psnr");
    double acc = 0;
    int64_t n = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        if (!mask.empty() && !mask[i]) continue;
        const double d = double(a.data[i]) - double(b.data[i]);
        acc += d * d;
        ++n;
    }
    const double mse = acc / double(n);
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(4.0 / mse);
}

// Mean SSIM with a 7^3 uniform window clipped at the borders; K1=0.01,
// K2=0.03, dynamic range 2.
inline double ssim(const Volume& a, const Volume& b, const std::vector<uint8_t>& mask = {}) {
    detail::check_metric_inputs(a, b, mask, "ssim");
    const Shape3 s = a.shape;
    constexpr double kC1 = (0.01 * 2.0) * (0.01 * 2.0);
    constexpr double kC2 = (0.03 * 2.0) * (0.03 * 2.0);
    double acc = 0;
    int64_t n = 0;
    for (uint32_t z = 0; z < s.d; ++z)
        for (uint32_t y = 0; y < s.h; ++y)
            for (uint32_t x = 0; x < s.w; ++x) {
                const size_t ci = s.index(z, y, x);
                if (!mask.empty() && !mask[ci]) continue;
                const int64_t z0 = std::max<int64_t>(0, int64_t(z) - 3),
                              z1 = std::min<int64_t>(s.d - 1, int64_t(z) + 3);
                const int64_t y0 = std::max<int64_t>(0, int64_t(y) - 3),
                              y1 = std::min<int64_t>(s.h - 1, int64_t(y) + 3);
                const int64_t x0 = std::max<int64_t>(0, int64_t(x) - 3),
                              x1 = std::min<int64_t>(s.w - 1, int64_t(x) + 3);
                double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
                int64_t m = 0;
                for (int64_t wz = z0; wz <= z1; ++wz)
                    for (int64_t wy = y0; wy <= y1; ++wy)
                        for (int64_t wx = x0; wx <= x1; ++wx) {
                            const size_t i =
                                s.index(uint32_t(wz), uint32_t(wy), uint32_t(wx));
                            const double va = a.data[i], vb = b.data[i];
                            sa += va;
                            sb += vb;
                            saa += va * va;
                            sbb += vb * vb;
                            sab += va * vb;
                            ++m;
                        }
                const double ma = sa / m, mb = sb / m;
                const double va = saa / m - ma * ma;
                const double vb = sbb / m - mb * mb;
                const double cov = sab / m - ma * mb;
                acc += ((2 * ma * mb + kC1) * (2 * cov + kC2)) /
                       ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
                ++n;
            }
    return acc / double(n);
}

// ---------------------------------------------------------------------------
// Attenuation maps
// ---------------------------------------------------------------------------

// Bilinear 511 keV model anchored at water = 0.096 / cm.
inline double hu_to_mu_value(double hu) {
    if (hu < -1000.0) hu = -1000.0;
    return hu <= 0.0 ? 0.096 * (1.0 + hu / 1000.0) : 0.096 + 5.64e-5 * hu;
}

inline Volume hu_to_mu(const Volume& ct_hu) {
    Volume mu(ct_hu.shape, VolKind::mu, 0.f, ct_hu.spacing);
    for (size_t i = 0; i < ct_hu.data.size(); ++i)
        mu.data[i] = float(hu_to_mu_value(double(ct_hu.data[i])));
    return mu;
}

// Segmentation-style attenuation: four tissue plateaus from HU thresholds,
// the classical MR-AC baseline the continuous map is judged against.
inline Volume four_tissue_mu(const Volume& ct_hu) {
    Volume mu(ct_hu.shape, VolKind::mu, 0.f, ct_hu.spacing);
    for (size_t i = 0; i < ct_hu.data.size(); ++i) {
        const float hu = ct_hu.data[i];
        float v;
        if (hu < -900.f)
            v = 0.0f; // air
        else if (hu < -200.f)
            v = 0.025f; // lung
        else if (hu < 300.f)
            v = 0.096f; // soft tissue
        else
            v = 0.13f; // bone
        mu.data[i] = v;
    }
    return mu;
}

// ---------------------------------------------------------------------------
// Parallel-beam Radon transform and filtered backprojection, one axial slice
// at a time. Angles sample [0, pi); detector bins are spaced one voxel apart;
// rays are integrated with bilinear taps every half voxel. Line integrals are
// in voxel-length units.
// ---------------------------------------------------------------------------

struct Sinogram {
    int angles = 0;
    int bins = 0;
    std::vector<double> data; // (angle, bin) row-major
    double& at(int a, int b) { return data[size_t(a) * size_t(bins) + size_t(b)]; }
    double at(int a, int b) const { return data[size_t(a) * size_t(bins) + size_t(b)]; }
};

inline int radon_bins(uint32_t h, uint32_t w) {
    return int(std::ceil(std::sqrt(double(h) * h + double(w) * w))) + 3;
}

inline Sinogram radon2d(const float* img, uint32_t h, uint32_t w, int angles) {
    if (angles < 1) throw InputError("radon2d: need at least one angle");
    Sinogram sg;
    sg.angles = angles;
    sg.bins = radon_bins(h, w);
    sg.data.assign(size_t(angles) * size_t(sg.bins), 0.0);
    const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
    const double half_diag = 0.5 * std::sqrt(double(h) * h + double(w) * w);
    const double step = 0.5;
    const int nsteps = int(std::ceil(2.0 * half_diag / step)) + 1;
    auto sample = [&](double px, double py) -> double {
        const int64_t x0 = int64_t(std::floor(px)), y0 = int64_t(std::floor(py));
        const double fx = px - double(x0), fy = py - double(y0);
        double acc = 0;
        for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
                const int64_t xx = x0 + dx, yy = y0 + dy;
                if (xx < 0 || yy < 0 || xx >= int64_t(w) || yy >= int64_t(h)) continue;
                acc += (dx ? fx : 1 - fx) * (dy ? fy : 1 - fy) *
                       double(img[size_t(yy) * w + size_t(xx)]);
            }
        return acc;
    };
    for (int a = 0; a < angles; ++a) {
        const double th = M_PI * double(a) / double(angles);
        const double dx = std::cos(th), dy = std::sin(th);   // ray direction
        const double nx = -std::sin(th), ny = std::cos(th);  // detector axis
        for (int b = 0; b < sg.bins; ++b) {
            const double t = double(b) - double(sg.bins - 1) / 2.0;
            double acc = 0;
            for (int k = 0; k < nsteps; ++k) {
                const double ss = -half_diag + step * double(k);
                acc += sample(cx + t * nx + ss * dx, cy + t * ny + ss * dy);
            }
            sg.at(a, b) = acc * step;
        }
    }
    return sg;
}

// Spatial-domain ramp (Ram-Lak) kernel for unit detector spacing.
inline std::vector<double> ramlak_kernel(int bins) {
    std::vector<double> k(size_t(2 * bins - 1), 0.0);
    for (int i = -(bins - 1); i <= bins - 1; ++i) {
        double v;
        if (i == 0)
            v = 0.25;
        else if (i % 2 == 0)
            v = 0.0;
        else
            v = -1.0 / (M_PI * M_PI * double(i) * double(i));
        k[size_t(i + bins - 1)] = v;
    }
    return k;
}

inline std::vector<double> fbp2d(const Sinogram& sg, uint32_t h, uint32_t w) {
    if (sg.angles < 1 || sg.bins < 1) throw InputError("fbp2d: empty sinogram");
    const auto kern = ramlak_kernel(sg.bins);
    std::vector<double> filt(size_t(sg.angles) * size_t(sg.bins), 0.0);
    for (int a = 0; a < sg.angles; ++a)
        for (int b = 0; b < sg.bins; ++b) {
            double acc = 0;
            for (int j = 0; j < sg.bins; ++j)
                acc += sg.at(a, j) * kern[size_t(b - j + sg.bins - 1)];
            filt[size_t(a) * size_t(sg.bins) + size_t(b)] = acc;
        }
    std::vector<double> out(size_t(h) * size_t(w), 0.0);
    const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
    const double tc = double(sg.bins - 1) / 2.0;
    for (uint32_t y = 0; y < h; ++y)
        for (uint32_t x = 0; x < w; ++x) {
            double acc = 0;
            for (int a = 0; a < sg.angles; ++a) {
                const double th = M_PI * double(a) / double(sg.angles);
                const double t = (double(x) - cx) * -std::sin(th) +
                                 (double(y) - cy) * std::cos(th) + tc;
                const int64_t b0 = int64_t(std::floor(t));
                const double f = t - double(b0);
                double v = 0;
                if (b0 >= 0 && b0 < sg.bins)
                    v += (1 - f) * filt[size_t(a) * size_t(sg.bins) + size_t(b0)];
                if (b0 + 1 >= 0 && b0 + 1 < sg.bins)
                    v += f * filt[size_t(a) * size_t(sg.bins) + size_t(b0 + 1)];
                acc += v;
            }
            out[size_t(y) * w + size_t(x)] = acc * M_PI / double(sg.angles);
        }
    return out;
}

// ---------------------------------------------------------------------------
// Attenuation-correction surrogate
// ---------------------------------------------------------------------------

// Per axial slice: attenuate the activity sinogram with the true map, correct
// it with each candidate map, reconstruct both. mu maps are in 1/cm; optical
// depth converts ray lengths through the voxel spacing.
inline std::pair<Volume, Volume> ac_surrogate(const Volume& activity, const Volume& mu_true,
                                              const Volume& mu_test, int angles) {
    const Shape3 s = activity.shape;
    if (mu_true.shape.d != s.d || mu_true.shape.h != s.h || mu_true.shape.w != s.w ||
        mu_test.shape.d != s.d || mu_test.shape.h != s.h || mu_test.shape.w != s.w)
        throw InputError("ac_surrogate: shape mismatch");
    if (angles < 16) throw InputError("ac_surrogate: need at least 16 angles");
    const double cm_per_voxel = double(activity.spacing[2]) / 10.0;
    Volume pet_test(s, VolKind::pet, 0.f, activity.spacing);
    Volume pet_ref(s, VolKind::pet, 0.f, activity.spacing);
    const size_t slice = size_t(s.h) * size_t(s.w);
    for (uint32_t z = 0; z < s.d; ++z) {
        const float* act = activity.data.data() + size_t(z) * slice;
        Sinogram sa = radon2d(act, s.h, s.w, angles);
        Sinogram dt = radon2d(mu_true.data.data() + size_t(z) * slice, s.h, s.w, angles);
        Sinogram dx = radon2d(mu_test.data.data() + size_t(z) * slice, s.h, s.w, angles);
        Sinogram corr_ref = sa, corr_test = sa;
        for (size_t i = 0; i < sa.data.size(); ++i) {
            const double y = sa.data[i] * std::exp(-dt.data[i] * cm_per_voxel);
            corr_ref.data[i] = y * std::exp(dt.data[i] * cm_per_voxel);
            corr_test.data[i] = y * std::exp(dx.data[i] * cm_per_voxel);
        }
        auto rec_ref = fbp2d(corr_ref, s.h, s.w);
        auto rec_test = fbp2d(corr_test, s.h, s.w);
        for (size_t i = 0; i < slice; ++i) {
            pet_ref.data[size_t(z) * slice + i] = float(std::max(0.0, rec_ref[i]));
            pet_test.data[size_t(z) * slice + i] = float(std::max(0.0, rec_test[i]));
        }
    }
    return {std::move(pet_test), std::move(pet_ref)};
}

// ---------------------------------------------------------------------------
// SUV differences over report ROIs
// ---------------------------------------------------------------------------

inline constexpr std::array<const char*, 5> kSuvRoiNames{"spine", "liver", "thigh", "pelvis",
                                                         "femur"};

// ROI ids 1..5 for the report; thigh is the soft tissue sharing axial slices
// with the femur.
inline LabelMask suv_rois(const LabelMask& labels) {
    const Shape3 s = labels.shape;
    LabelMask rois(s, 0, labels.spacing);
    uint32_t fz0 = s.d, fz1 = 0;
    for (uint32_t z = 0; z < s.d; ++z)
        for (uint32_t y = 0; y < s.h; ++y)
            for (uint32_t x = 0; x < s.w; ++x)
                if (labels.at(z, y, x) == L_FEMUR) {
                    fz0 = std::min(fz0, z);
                    fz1 = std::max(fz1, z);
                }
    for (uint32_t z = 0; z < s.d; ++z)
        for (uint32_t y = 0; y < s.h; ++y)
            for (uint32_t x = 0; x < s.w; ++x) {
                const int32_t l = labels.at(z, y, x);
                int32_t r = 0;
                if (l == L_SPINE)
                    r = 1;
                else if (l == L_LIVER)
                    r = 2;
                else if ((l == L_BODY || l == L_FAT) && fz0 <= z && z <= fz1)
                    r = 3;
                else if (l == L_PELVIS)
                    r = 4;
                else if (l == L_FEMUR)
                    r = 5;
                rois.at(z, y, x) = r;
            }
    return rois;
}

struct CaseSuv {
    std::array<double, 5> mean{};
};

// Mean normalized PET difference per ROI. Both volumes are normalized by the
// body-mean of the reference, so equal inputs give exact zeros.
inline CaseSuv suv_difference(const Volume& pet_test, const Volume& pet_ref,
                              const LabelMask& labels) {
    const Shape3 s = pet_ref.shape;
    if (pet_test.shape.d != s.d || pet_test.shape.h != s.h || pet_test.shape.w != s.w ||
        labels.shape.d != s.d || labels.shape.h != s.h || labels.shape.w != s.w)
        throw InputError("suv_difference: shape mismatch");
    double body_sum = 0;
    int64_t body_n = 0;
    for (size_t i = 0; i < labels.data.size(); ++i)
        if (labels.data[i] != L_AIR) {
            body_sum += double(pet_ref.data[i]);
            ++body_n;
        }
    if (body_n == 0) throw InputError("suv_difference: empty body");
    const double norm = body_sum / double(body_n);
    if (!(norm > 0)) throw InputError("suv_difference: reference body mean is not positive");

    LabelMask rois = suv_rois(labels);
    CaseSuv out;
    std::array<double, 5> acc{};
    std::array<int64_t, 5> cnt{};
    for (size_t i = 0; i < rois.data.size(); ++i) {
        const int32_t r = rois.data[i];
        if (r == 0) continue;
        acc[size_t(r - 1)] += (double(pet_test.data[i]) - double(pet_ref.data[i])) / norm;
        cnt[size_t(r - 1)]++;
    }
    for (size_t r = 0; r < 5; ++r) {
        if (cnt[r] == 0)
            throw InputError(std::string("suv_difference: empty roi ") + kSuvRoiNames[r]);
        out.mean[r] = acc[r] / double(cnt[r]);
    }
    return out;
}

struct SuvReport {
    std::array<double, 5> mean{};
    std::array<double, 5> sd{};
    int cases = 0;
};

inline SuvReport aggregate_suv(const std::vector<CaseSuv>& per_case) {
    if (per_case.empty()) throw InputError("aggregate_suv: no cases");
    SuvReport r;
    r.cases = int(per_case.size());
    for (const auto& c : per_case)
        for (size_t i = 0; i < 5; ++i) r.mean[i] += c.mean[i];
    for (size_t i = 0; i < 5; ++i) r.mean[i] /= double(r.cases);
    for (const auto& c : per_case)
        for (size_t i = 0; i < 5; ++i) {
            const double d = c.mean[i] - r.mean[i];
            r.sd[i] += d * d;
        }
    for (size_t i = 0; i < 5; ++i) r.sd[i] = std::sqrt(r.sd[i] / double(r.cases));
    return r;
}

// ---------------------------------------------------------------------------
// Regional metric report
// ---------------------------------------------------------------------------

inline constexpr std::array<const char*, 5> kRegionNames{"whole_body", "spine", "liver",
                                                         "ribs", "femur"};

struct RegionMetrics {
    std::string region;
    double psnr = 0;
    double ssim = 0;
};

struct RegionReport {
    std::vector<RegionMetrics> rows;
};

// Table-style metric grid; anatomical masks are the labels dilated by one.
inline RegionReport region_report(const Volume& a, const Volume& b, const LabelMask& labels) {
    const std::array<int32_t, 5> region_label{-1, L_SPINE, L_LIVER, L_RIBS, L_FEMUR};
    RegionReport rep;
    for (size_t r = 0; r < kRegionNames.size(); ++r) {
        std::vector<uint8_t> mask(labels.data.size(), 0);
        if (region_label[r] < 0) {
            for (size_t i = 0; i < labels.data.size(); ++i)
                mask[i] = labels.data[i] != L_AIR ? 1 : 0;
        } else {
            for (size_t i = 0; i < labels.data.size(); ++i)
                mask[i] = labels.data[i] == region_label[r] ? 1 : 0;
            mask = dilate_cheb(mask, labels.shape, 1);
        }
        RegionMetrics m;
        m.region = kRegionNames[r];
        m.psnr = psnr(a, b, mask);
        m.ssim = ssim(a, b, mask);
        rep.rows.push_back(std::move(m));
    }
    return rep;
}

} // namespace sgwb
