#pragma once

// Procedural whole-body phantom: paired in/out-phase MR, CT, organ labels,
// tracer activity, and a ground-truth misalignment field with an optional
// sliding discontinuity at the thoracic cage. Everything is deterministic in
// (seed, size); per-case jitters come from independent forked RNG streams.

#include <cmath>
#include <cstdint>
#include <vector>

#include "sgwb/canny.hpp"
#include "sgwb/common.hpp"
#include "sgwb/rng.hpp"
#include "sgwb/volume.hpp"

namespace sgwb {

enum Label : int32_t {
    L_AIR = 0,
    L_BODY = 1,
    L_LUNGS = 2,
    L_LIVER = 3,
    L_SPINE = 4,
    L_RIBS = 5,
    L_PELVIS = 6,
    L_FEMUR = 7,
    L_BLADDER = 8,
    L_FAT = 9,
};
inline constexpr int kNumLabels = 10;

inline const char* label_name(int32_t l) {
    switch (l) {
        case L_AIR: return "air";
        case L_BODY: return "body";
        case L_LUNGS: return "lungs";
        case L_LIVER: return "liver";
        case L_SPINE: return "spine";
        case L_RIBS: return "ribs";
        case L_PELVIS: return "pelvis";
        case L_FEMUR: return "femur";
        case L_BLADDER: return "bladder";
        case L_FAT: return "fat";
    }
    return "?";
}

// Six tissue sub-regions used by the sampling weight map, ordered by the
// volume they are expected to occupy (descending).
enum SubRegion : int {
    SR_AIR = 0,
    SR_WATER = 1,
    SR_FAT = 2,
    SR_LUNGS = 3,
    SR_PELVIS_FEMUR = 4,
    SR_RIBS_SPINE = 5,
};
inline constexpr int kNumSubRegions = 6;

inline const char* sub_region_name(int r) {
    switch (r) {
        case SR_AIR: return "air";
        case SR_WATER: return "water";
        case SR_FAT: return "fat";
        case SR_LUNGS: return "lungs";
        case SR_PELVIS_FEMUR: return "pelvis_femur";
        case SR_RIBS_SPINE: return "ribs_spine";
    }
    return "?";
}

inline int sub_region_of(int32_t label) {
    switch (label) {
        case L_AIR: return SR_AIR;
        case L_BODY:
        case L_LIVER:
        case L_BLADDER: return SR_WATER;
        case L_FAT: return SR_FAT;
        case L_LUNGS: return SR_LUNGS;
        case L_PELVIS:
        case L_FEMUR: return SR_PELVIS_FEMUR;
        case L_SPINE:
        case L_RIBS: return SR_RIBS_SPINE;
    }
    throw InputError("sub_region_of: unknown label " + std::to_string(label));
}

// Proxy segmenter classes: bladder folds into body, everything else is its
// own class. 9 classes, 8 foreground.
inline constexpr int kNumSegClasses = 9;
inline int seg_class_of(int32_t label) {
    switch (label) {
        case L_AIR: return 0;
        case L_BODY:
        case L_BLADDER: return 1;
        case L_FAT: return 2;
        case L_LUNGS: return 3;
        case L_LIVER: return 4;
        case L_SPINE: return 5;
        case L_RIBS: return 6;
        case L_PELVIS: return 7;
        case L_FEMUR: return 8;
    }
    throw InputError("seg_class_of: unknown label " + std::to_string(label));
}

struct PhantomCase {
    uint64_t seed = 0;
    uint32_t size = 0;
    Volume mr_ip, mr_op, ct, activity;
    LabelMask labels;
    Field gt_field;
};

namespace detail {

// Coarse lattice of values trilinearly upsampled to the full grid; the cheap
// band-limited noise behind intensity texture and misalignment fields.
inline std::vector<float> upsample_coarse(const std::vector<double>& coarse, uint32_t cg,
                                          Shape3 s) {
    std::vector<float> out(s.voxels());
    auto cidx = [&](uint32_t z, uint32_t y, uint32_t x) {
        return (uint64_t(z) * cg + y) * cg + x;
    };
    for (uint32_t z = 0; z < s.d; ++z)
        for (uint32_t y = 0; y < s.h; ++y)
            for (uint32_t x = 0; x < s.w; ++x) {
                double tz = (z + 0.5) / s.d * (cg - 1);
                double ty = (y + 0.5) / s.h * (cg - 1);
                double tx = (x + 0.5) / s.w * (cg - 1);
                uint32_t z0 = uint32_t(tz), y0 = uint32_t(ty), x0 = uint32_t(tx);
                uint32_t z1 = std::min(z0 + 1, cg - 1), y1 = std::min(y0 + 1, cg - 1),
                         x1 = std::min(x0 + 1, cg - 1);
                double fz = tz - z0, fy = ty - y0, fx = tx - x0;
                double v =
                    (1 - fz) * ((1 - fy) * ((1 - fx) * coarse[cidx(z0, y0, x0)] +
                                            fx * coarse[cidx(z0, y0, x1)]) +
                                fy * ((1 - fx) * coarse[cidx(z0, y1, x0)] +
                                      fx * coarse[cidx(z0, y1, x1)])) +
                    fz * ((1 - fy) * ((1 - fx) * coarse[cidx(z1, y0, x0)] +
                                      fx * coarse[cidx(z1, y0, x1)]) +
                          fy * ((1 - fx) * coarse[cidx(z1, y1, x0)] +
                                fx * coarse[cidx(z1, y1, x1)]));
                out[s.index(z, y, x)] = float(v);
            }
    return out;
}

inline std::vector<float> smooth_noise(Shape3 s, uint32_t cg, Rng& rng, double clamp_sd = 2.5) {
    std::vector<double> coarse(uint64_t(cg) * cg * cg);
    for (auto& c : coarse) c = rng.normal();
    auto out = upsample_coarse(coarse, cg, s);
    for (auto& v : out) v = clampf(v, float(-clamp_sd), float(clamp_sd));
    return out;
}

} // namespace detail

// Chebyshev (box) dilation of a binary mask by radius r.
inline std::vector<uint8_t> dilate_cheb(const std::vector<uint8_t>& in, Shape3 s, int r) {
    if (r <= 0) return in;
    std::vector<uint8_t> a = in, b(in.size());
    auto pass = [&](int axis, const std::vector<uint8_t>& src, std::vector<uint8_t>& dst) {
        for (uint32_t z = 0; z < s.d; ++z)
            for (uint32_t y = 0; y < s.h; ++y)
                for (uint32_t x = 0; x < s.w; ++x) {
                    uint8_t v = 0;
                    for (int i = -r; i <= r && !v; ++i) {
                        int64_t zz = z, yy = y, xx = x;
                        (axis == 0 ? zz : axis == 1 ? yy : xx) += i;
                        if (s.contains(zz, yy, xx))
                            v = src[s.index(uint32_t(zz), uint32_t(yy), uint32_t(xx))];
                    }
                    dst[s.index(z, y, x)] = v;
                }
    };
    pass(0, a, b);
    pass(1, b, a);
    pass(2, a, b);
    return b;
}

inline std::vector<uint8_t> erode_cheb(const std::vector<uint8_t>& in, Shape3 s, int r) {
    if (r <= 0) return in;
    std::vector<uint8_t> inv(in.size());
    for (size_t i = 0; i < in.size(); ++i) inv[i] = in[i] ? 0 : 1;
    auto d = dilate_cheb(inv, s, r);
    for (auto& v : d) v = v ? 0 : 1;
    return d;
}

// Union of lungs and ribs, dilated by one: the sliding thoracic compartment.
inline std::vector<uint8_t> thoracic_region(const LabelMask& labels) {
    std::vector<uint8_t> m(labels.data.size(), 0);
    bool any_lung = false;
    for (size_t i = 0; i < labels.data.size(); ++i) {
        if (labels.data[i] == L_LUNGS) any_lung = true;
        m[i] = (labels.data[i] == L_LUNGS || labels.data[i] == L_RIBS) ? 1 : 0;
    }
    if (!any_lung) throw InputError("thoracic_region: labels contain no lung voxels");
    return dilate_cheb(m, labels.shape, 1);
}

// Shell of thickness ~2r straddling the thoracic region surface: the voxels
// whose smoothness terms the respiration-aware exclusion drops.
inline LabelMask thoracic_boundary(const LabelMask& labels, int radius) {
    if (radius < 1) throw InputError("thoracic_boundary: radius must be >= 1");
    auto region = thoracic_region(labels);
    auto outer = dilate_cheb(region, labels.shape, radius);
    auto inner = erode_cheb(region, labels.shape, radius);
    LabelMask out(labels.shape, 0, labels.spacing);
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = (outer[i] && !inner[i]) ? 1 : 0;
    return out;
}

// Smooth random field normalized to a peak vector norm of `magnitude`, plus a
// rigid craniocaudal offset of `slip` voxels inside the thoracic region. The
// only discontinuity lies on that region's surface.
inline Field make_misalignment_field(Shape3 s, const std::vector<uint8_t>& region,
                                     double magnitude, double slip, Rng& rng) {
    if (magnitude < 0 || slip < 0)
        throw InputError("make_misalignment_field: magnitude and slip must be >= 0");
    Field f(s);
    const uint64_t n = s.voxels();
    if (magnitude > 0) {
        const uint32_t cg = 4;
        for (int c = 0; c < 3; ++c) {
            std::vector<double> coarse(uint64_t(cg) * cg * cg);
            for (auto& v : coarse) v = rng.uniform(-1.0, 1.0);
            auto up = detail::upsample_coarse(coarse, cg, s);
            Volume tmp(s, VolKind::generic);
            tmp.data = up;
            tmp = gaussian_smooth(tmp, std::max(1.0, double(s.w) / 8.0));
            for (uint64_t i = 0; i < n; ++i) f.data[uint64_t(c) * n + i] = tmp.data[i];
        }
        double peak = 0.0;
        for (uint64_t i = 0; i < n; ++i) {
            double dx = f.data[i], dy = f.data[n + i], dz = f.data[2 * n + i];
            peak = std::max(peak, std::sqrt(dx * dx + dy * dy + dz * dz));
        }
        if (peak > 0)
            for (auto& v : f.data) v = float(double(v) * magnitude / peak);
    }
    if (slip > 0)
        for (uint64_t i = 0; i < n; ++i)
            if (region[i]) f.data[2 * n + i] += float(slip);
    return f;
}

struct MisalignedPair {
    Volume moved_ct;
    LabelMask moved_labels;
    Field field;
};

inline MisalignedPair misalign(const Volume& ct, const LabelMask& labels, double magnitude,
                               double slip, uint64_t seed) {
    Rng rng(seed);
    auto region = thoracic_region(labels);
    Field f = make_misalignment_field(ct.shape, region, magnitude, slip, rng);
    return {warp(ct, f, -1000.f), warp_labels(labels, f), std::move(f)};
}

inline MisalignedPair apply_gt(const PhantomCase& c) {
    return {warp(c.ct, c.gt_field, -1000.f), warp_labels(c.labels, c.gt_field), c.gt_field};
}

namespace detail {

struct BodyModel {
    double cx, cy;        // transverse centre, normalized
    double sx, sy;        // per-case scale jitter
    double exp_p = 2.5;   // superellipse exponent

    // Transverse semi-axes as a function of craniocaudal position.
    double ax(double wz) const {
        auto lerp = [](double a, double b, double t) { return a + (b - a) * clampd(t, 0, 1); };
        double v;
        if (wz < 0.42)
            v = 0.335;
        else if (wz < 0.48)
            v = lerp(0.335, 0.315, (wz - 0.42) / 0.06);
        else if (wz < 0.60)
            v = 0.315;
        else if (wz < 0.66)
            v = lerp(0.315, 0.330, (wz - 0.60) / 0.06);
        else if (wz < 0.78)
            v = 0.330;
        else if (wz < 0.84)
            v = lerp(0.330, 0.280, (wz - 0.78) / 0.06);
        else
            v = 0.280;
        return v * sx;
    }
    double ay(double wz) const { return 0.72 * ax(wz) * sy / sx; }

    // Superellipse "radius" q: q <= rho^p means inside the body outline
    // scaled by rho.
    double q(double u, double v, double wz) const {
        double dx = std::abs(u - cx) / ax(wz);
        double dy = std::abs(v - cy) / ay(wz);
        return std::pow(dx, exp_p) + std::pow(dy, exp_p);
    }
};

inline bool in_ellipsoid(double u, double v, double w, double cu, double cv, double cw,
                         double su, double sv, double sw) {
    double a = (u - cu) / su, b = (v - cv) / sv, c = (w - cw) / sw;
    return a * a + b * b + c * c <= 1.0;
}

} // namespace detail

// Deterministic phantom. `size` is the cubic grid edge; spacing scales so the
// covered extent is constant across sizes.
inline PhantomCase generate_phantom(uint64_t seed, uint32_t size, double magnitude = 3.0,
                                    double slip = 2.0) {
    if (size < 16) throw InputError("generate_phantom: size must be >= 16");
    Rng root(seed ^ 0x5157424050484e54ull);
    Rng geo = root.fork(1), inten = root.fork(2), fld = root.fork(3);

    const Shape3 s{size, size, size};
    const float mm = float(256.0 / size);
    const Spacing sp{mm, mm, mm};

    detail::BodyModel body;
    body.cx = 0.5 + geo.uniform(-0.02, 0.02);
    body.cy = 0.5 + geo.uniform(-0.02, 0.02);
    body.sx = 1.0 + geo.uniform(-0.06, 0.06);
    body.sy = 1.0 + geo.uniform(-0.06, 0.06);

    // Per-organ jitter: one scale factor on all semi-axes, plus a centre
    // offset of up to 2 voxels transversely and 1 voxel craniocaudally.
    // Amplitudes are tuned so the sub-region volume ordering survives.
    auto scale8 = [&geo] { return 1.0 + geo.uniform(-0.08, 0.08); };
    auto off_xy = [&geo, size] { return geo.uniform(-2.0, 2.0) / size; };
    auto off_z = [&geo, size] { return geo.uniform(-1.0, 1.0) / size; };

    const double lung_s = scale8();
    const double lung_ox = geo.uniform(-1.0, 1.0) / size, lung_oy = off_xy(),
                 lung_oz = off_z();
    const double lung_dx = 0.135, lung_su = 0.15 * lung_s, lung_sv = 0.16 * lung_s,
                 lung_sw = 0.135 * lung_s;
    const double lung_cw = 0.21 + lung_oz;
    const double liver_s = scale8();
    const double liver_cu = 0.36 + off_xy(), liver_cv_off = 0.02 + off_xy(),
                 liver_cw = 0.35 + off_z();
    const double bladder_s = scale8();
    const double bladder_ou = off_xy(), bladder_ov = off_xy(), bladder_ow = off_z();
    const double spine_r = 0.042 * scale8();
    const double femur_r = 0.055 * scale8();
    const double femur_dx = 0.14 + geo.uniform(-1.0, 1.0) / size;
    const double pelvis_lo = 0.58, pelvis_hi = 0.82 * (1.0 + geo.uniform(-0.03, 0.03));
    const double fat_shell = 0.86;
    const double rib_lo = 0.86, rib_hi = 0.98;
    const double rib_hz = std::max(0.017, 0.55 / size);

    LabelMask labels(s, L_AIR, sp);
    const double p = body.exp_p;
    for (uint32_t zi = 0; zi < size; ++zi)
        for (uint32_t yi = 0; yi < size; ++yi)
            for (uint32_t xi = 0; xi < size; ++xi) {
                const double u = (xi + 0.5) / size;
                const double v = (yi + 0.5) / size;
                const double w = (zi + 0.5) / size;
                const double q = body.q(u, v, w);
                if (q > 1.0) continue; // air
                int32_t lab = q >= std::pow(fat_shell, p) ? L_FAT : L_BODY;

                // Interior organs, painted in override order.
                if (detail::in_ellipsoid(u, v, w, body.cx - lung_dx + lung_ox,
                                         body.cy - 0.04 + lung_oy, lung_cw, lung_su, lung_sv,
                                         lung_sw) ||
                    detail::in_ellipsoid(u, v, w, body.cx + lung_dx + lung_ox,
                                         body.cy - 0.04 + lung_oy, lung_cw, lung_su, lung_sv,
                                         lung_sw))
                    lab = L_LUNGS;
                if (detail::in_ellipsoid(u, v, w, liver_cu, body.cy + liver_cv_off, liver_cw,
                                         0.145 * liver_s, 0.13 * liver_s, 0.10 * liver_s))
                    lab = L_LIVER;
                if (detail::in_ellipsoid(u, v, w, body.cx + bladder_ou,
                                         body.cy - 0.05 + bladder_ov, 0.70 + bladder_ow,
                                         0.075 * bladder_s, 0.065 * bladder_s,
                                         0.055 * bladder_s))
                    lab = L_BLADDER;
                // Spine: a stack of alternating-radius cylinders (vertebrae).
                {
                    double dxs = u - body.cx, dys = v - (body.cy + 0.145);
                    if (w >= 0.05 && w <= 0.74) {
                        int seg = int((w - 0.05) / 0.046);
                        double rs = spine_r * (seg % 2 == 0 ? 1.0 : 0.82);
                        if (dxs * dxs + dys * dys <= rs * rs) lab = L_SPINE;
                    }
                }
                // Rib arcs: thin annular slabs at four levels with anterior
                // and posterior gaps, leaving left and right arcs.
                if (q >= std::pow(rib_lo, p) && q <= std::pow(rib_hi, p)) {
                    double th = std::atan2((v - body.cy) / body.ay(w), (u - body.cx) / body.ax(w));
                    bool ant_gap = std::abs(th + 1.5707963) < 0.35;
                    bool post_gap = std::abs(th - 1.5707963) < 0.25;
                    if (!ant_gap && !post_gap)
                        for (int k = 0; k < 4; ++k)
                            if (std::abs(w - (0.10 + 0.06 * k)) <= rib_hz) lab = L_RIBS;
                }
                // Pelvic ring.
                if (w >= 0.64 && w <= 0.77 && q >= std::pow(pelvis_lo, p) &&
                    q <= std::pow(pelvis_hi, p))
                    lab = L_PELVIS;
                // Femoral shafts.
                {
                    double dl = u - (body.cx - femur_dx), dr = u - (body.cx + femur_dx);
                    double dv = v - (body.cy + 0.02);
                    if (w >= 0.80 && (dl * dl + dv * dv <= femur_r * femur_r ||
                                      dr * dr + dv * dv <= femur_r * femur_r))
                        lab = L_FEMUR;
                }
                labels.at(zi, yi, xi) = lab;
            }

    // Intensity models: per-label base plus smooth spatial texture plus a
    // per-case offset, all bounded so each tissue stays in its band.
    Rng nz = inten.fork(1);
    auto tex_ct = detail::smooth_noise(s, 5, nz);
    auto tex_mr = detail::smooth_noise(s, 5, nz);
    auto tex_act = detail::smooth_noise(s, 5, nz);
    struct Bands {
        double ct, ct_tex, mr_ip, mr_op;
        double act;
    };
    // Indexed by label. MR values are in [0,1] before mapping to [-1,1].
    // ct_tex is the texture amplitude per unit of (clamped, |.|<=2.5) noise;
    // together with the per-case offset each tissue stays inside its HU band.
    Bands bands[kNumLabels] = {
        /*air*/ {-1000, 0, 0.02, 0.02, 0.0},
        /*body*/ {40, 6, 0.55, 0.52, 1.0},
        /*lungs*/ {-750, 15, 0.06, 0.06, 0.3},
        /*liver*/ {55, 3, 0.63, 0.60, 2.0},
        /*spine*/ {700, 60, 0.28, 0.26, 1.2},
        /*ribs*/ {700, 60, 0.22, 0.20, 0.9},
        /*pelvis*/ {700, 60, 0.25, 0.23, 1.0},
        /*femur*/ {700, 60, 0.27, 0.25, 0.8},
        /*bladder*/ {12, 4, 0.72, 0.70, 4.0},
        /*fat*/ {-100, 6, 0.92, 0.40, 0.2},
    };
    double case_ct[kNumLabels], case_mr[kNumLabels];
    for (int l = 0; l < kNumLabels; ++l) {
        case_ct[l] = inten.uniform(-1.0, 1.0);
        case_mr[l] = inten.uniform(-1.0, 1.0);
    }

    Volume ct(s, VolKind::ct_hu, 0.f, sp), ip(s, VolKind::mr_ip, 0.f, sp),
        op(s, VolKind::mr_op, 0.f, sp), act(s, VolKind::activity, 0.f, sp);
    for (uint64_t i = 0; i < s.voxels(); ++i) {
        int32_t l = labels.data[i];
        const Bands& b = bands[l];
        double hu;
        if (l == L_AIR) {
            hu = -1000.0;
        } else {
            double off = l == L_LUNGS ? 10.0
                         : b.ct > 300 ? 45.0
                         : l == L_LIVER ? 2.0
                         : l == L_BLADDER ? 3.0
                                          : 4.0;
            hu = b.ct + b.ct_tex * tex_ct[i] + off * case_ct[l];
        }
        ct.data[i] = clampf(float(hu), -1024.f, 1500.f);
        double mr_noise = 0.04 * tex_mr[i] + 0.03 * case_mr[l];
        double vip = clampd(b.mr_ip + (l == L_AIR ? 0.0 : mr_noise), 0.0, 1.0);
        double vop = clampd(b.mr_op + (l == L_AIR ? 0.0 : mr_noise), 0.0, 1.0);
        ip.data[i] = float(2.0 * vip - 1.0);
        op.data[i] = float(2.0 * vop - 1.0);
        double a = b.act * (1.0 + 0.1 * tex_act[i]);
        act.data[i] = std::max(0.f, float(a));
    }

    auto region = thoracic_region(labels);
    Field gt = make_misalignment_field(s, region, magnitude, slip, fld);

    PhantomCase out;
    out.seed = seed;
    out.size = size;
    out.mr_ip = std::move(ip);
    out.mr_op = std::move(op);
    out.ct = std::move(ct);
    out.activity = std::move(act);
    out.labels = std::move(labels);
    out.gt_field = std::move(gt);
    return out;
}

inline std::array<uint64_t, kNumSubRegions> sub_region_volumes(const LabelMask& labels) {
    std::array<uint64_t, kNumSubRegions> v{};
    for (int32_t l : labels.data) v[size_t(sub_region_of(l))]++;
    return v;
}

} // namespace sgwb
