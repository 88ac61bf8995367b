#pragma once

// Two-stage training. Stage 1 fits the registration net jointly with the
// mutual-information critic; stage 2 fits the dual-decoder generator against
// registration-aligned targets with edge, adversarial, and contrastive terms.

#include <array>
#include <cstdio>
#include <string>
#include <vector>

#include "sgwb/canny.hpp"
#include "sgwb/checkpoint.hpp"
#include "sgwb/losses.hpp"
#include "sgwb/nets.hpp"
#include "sgwb/optim.hpp"
#include "sgwb/phantom.hpp"
#include "sgwb/semalign.hpp"
#include "sgwb/volume.hpp"

namespace sgwb {

// One subject: aligned MR pair and CT, plus the misaligned CT actually
// observed, its labels, and the field that produced it.
struct TrainCase {
    Volume mr_ip, mr_op;
    Volume ct;
    LabelMask labels;
    Volume moved_ct;
    LabelMask moved_labels;
    Field gt_field;
};

inline TrainCase case_from_phantom(const PhantomCase& pc, float magnitude, float slip,
                                   uint64_t mis_seed) {
    TrainCase tc;
    tc.mr_ip = pc.mr_ip;
    tc.mr_op = pc.mr_op;
    tc.ct = pc.ct;
    tc.labels = pc.labels;
    auto mis = misalign(pc.ct, pc.labels, magnitude, slip, mis_seed);
    tc.moved_ct = mis.moved_ct;
    tc.moved_labels = mis.moved_labels;
    tc.gt_field = mis.field;
    return tc;
}

// Uses the misalignment baked into the phantom itself.
inline TrainCase case_from_phantom(const PhantomCase& pc) {
    auto mis = apply_gt(pc);
    TrainCase tc;
    tc.mr_ip = pc.mr_ip;
    tc.mr_op = pc.mr_op;
    tc.ct = pc.ct;
    tc.labels = pc.labels;
    tc.moved_ct = std::move(mis.moved_ct);
    tc.moved_labels = std::move(mis.moved_labels);
    tc.gt_field = pc.gt_field;
    return tc;
}

// ---------------------------------------------------------------------------
// Field utilities
// ---------------------------------------------------------------------------

namespace detail {

inline float sample_comp(const Field& f, int comp, double zf, double yf, double xf) {
    const Shape3 s = f.shape;
    const int64_t sp = int64_t(s.voxels());
    int64_t z0 = int64_t(std::floor(zf)), y0 = int64_t(std::floor(yf)),
            x0 = int64_t(std::floor(xf));
    double fz = zf - double(z0), fy = yf - double(y0), fx = xf - double(x0);
    double acc = 0;
    for (int cz = 0; cz < 2; ++cz)
        for (int cy = 0; cy < 2; ++cy)
            for (int cx = 0; cx < 2; ++cx) {
                int64_t z = z0 + cz, y = y0 + cy, x = x0 + cx;
                double v = s.contains(z, y, x)
                               ? double(f.data[size_t(comp * sp +
                                                      int64_t(s.index(uint32_t(z), uint32_t(y),
                                                                      uint32_t(x))))])
                               : 0.0;
                acc += (cz ? fz : 1 - fz) * (cy ? fy : 1 - fy) * (cx ? fx : 1 - fx) * v;
            }
    return float(acc);
}

} // namespace detail

// Resamples a field through another displacement: out(w) = f(w + by(w)).
inline Field transport_field(const Field& f, const Field& by) {
    if (f.shape.d != by.shape.d || f.shape.h != by.shape.h || f.shape.w != by.shape.w)
        throw InputError("transport_field: shape mismatch");
    const Shape3 s = f.shape;
    const int64_t sp = int64_t(s.voxels());
    Field out(s);
    for (uint32_t z = 0; z < s.d; ++z)
        for (uint32_t y = 0; y < s.h; ++y)
            for (uint32_t x = 0; x < s.w; ++x) {
                const int64_t i = int64_t(s.index(z, y, x));
                const double xf = x + double(by.data[size_t(i)]);
                const double yf = y + double(by.data[size_t(sp + i)]);
                const double zf = z + double(by.data[size_t(2 * sp + i)]);
                for (int c = 0; c < 3; ++c)
                    out.data[size_t(c * sp + i)] = detail::sample_comp(f, c, zf, yf, xf);
            }
    return out;
}

// Fixed-point inverse: g with f(x + g(x)) + g(x) ~ 0.
inline Field invert_field(const Field& f, int iters = 25) {
    const Shape3 s = f.shape;
    const int64_t sp = int64_t(s.voxels());
    Field g(s);
    for (int it = 0; it < iters; ++it) {
        Field next(s);
        for (uint32_t z = 0; z < s.d; ++z)
            for (uint32_t y = 0; y < s.h; ++y)
                for (uint32_t x = 0; x < s.w; ++x) {
                    const int64_t i = int64_t(s.index(z, y, x));
                    const double xf = x + double(g.data[size_t(i)]);
                    const double yf = y + double(g.data[size_t(sp + i)]);
                    const double zf = z + double(g.data[size_t(2 * sp + i)]);
                    for (int c = 0; c < 3; ++c)
                        next.data[size_t(c * sp + i)] = -detail::sample_comp(f, c, zf, yf, xf);
                }
        g = std::move(next);
    }
    return g;
}

inline std::vector<uint8_t> body_mask(const LabelMask& labels) {
    std::vector<uint8_t> m(labels.data.size());
    for (size_t i = 0; i < m.size(); ++i) m[i] = labels.data[i] != L_AIR ? 1 : 0;
    return m;
}

inline double mean_epe(const Field& pred, const Field& truth, const std::vector<uint8_t>& mask) {
    if (pred.shape.d != truth.shape.d || pred.shape.h != truth.shape.h ||
        pred.shape.w != truth.shape.w)
        throw InputError("mean_epe: shape mismatch");
    const int64_t sp = int64_t(pred.shape.voxels());
    if (int64_t(mask.size()) != sp) throw InputError("mean_epe: mask size");
    double acc = 0;
    int64_t n = 0;
    for (int64_t i = 0; i < sp; ++i) {
        if (!mask[size_t(i)]) continue;
        double e = 0;
        for (int c = 0; c < 3; ++c) {
            double d = double(pred.data[size_t(c * sp + i)]) -
                       double(truth.data[size_t(c * sp + i)]);
            e += d * d;
        }
        acc += std::sqrt(e);
        ++n;
    }
    if (n == 0) throw InputError("mean_epe: empty mask");
    return acc / double(n);
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

struct AugConfig {
    float prob = 0.2f;
    float max_scale = 0.05f;
    float max_trans = 2.0f;
    float max_rot_deg = 10.0f;
    float max_spline = 2.0f;
    float smooth_lo = 0.5f;
    float smooth_hi = 1.0f;
};

// Displacement of the affine map: rotate about one axis through the volume
// center, scale per axis, translate.
inline Field affine_field(Shape3 s, const std::array<double, 3>& scale, int rot_axis,
                          double rot_rad, const std::array<double, 3>& trans) {
    if (rot_axis < 0 || rot_axis > 2) throw InputError("affine_field: axis must be 0..2");
    const double cx = (s.w - 1) / 2.0, cy = (s.h - 1) / 2.0, cz = (s.d - 1) / 2.0;
    const double cr = std::cos(rot_rad), sr = std::sin(rot_rad);
    const int64_t sp = int64_t(s.voxels());
    Field f(s);
    for (uint32_t z = 0; z < s.d; ++z)
        for (uint32_t y = 0; y < s.h; ++y)
            for (uint32_t x = 0; x < s.w; ++x) {
                double px = (x - cx) * scale[0], py = (y - cy) * scale[1],
                       pz = (z - cz) * scale[2];
                double qx = px, qy = py, qz = pz;
                if (rot_axis == 0) { // about x: rotate (y,z)
                    qy = cr * py - sr * pz;
                    qz = sr * py + cr * pz;
                } else if (rot_axis == 1) { // about y: rotate (z,x)
                    qz = cr * pz - sr * px;
                    qx = sr * pz + cr * px;
                } else { // about z: rotate (x,y)
                    qx = cr * px - sr * py;
                    qy = sr * px + cr * py;
                }
                const int64_t i = int64_t(s.index(z, y, x));
                f.data[size_t(i)] = float(qx + cx + trans[0] - x);
                f.data[size_t(sp + i)] = float(qy + cy + trans[1] - y);
                f.data[size_t(2 * sp + i)] = float(qz + cz + trans[2] - z);
            }
    return f;
}

// Band-limited random field with peak magnitude max_amp * U(0.5, 1].
inline Field spline_field(Shape3 s, float max_amp, Rng& rng) {
    if (!(max_amp > 0)) throw InputError("spline_field: amplitude must be positive");
    const int64_t sp = int64_t(s.voxels());
    const uint32_t cg = 4;
    Field f(s);
    for (int c = 0; c < 3; ++c) {
        std::vector<double> coarse(uint64_t(cg) * cg * cg);
        for (auto& v : coarse) v = rng.uniform(-1.0, 1.0);
        Volume comp(s, VolKind::generic);
        comp.data = detail::upsample_coarse(coarse, cg, s);
        comp = gaussian_smooth(comp, std::max(1.0, double(s.w) / 8.0));
        for (int64_t i = 0; i < sp; ++i) f.data[size_t(c * sp + i)] = comp.data[size_t(i)];
    }
    float peak = 0;
    for (int64_t i = 0; i < sp; ++i) {
        float n2 = 0;
        for (int c = 0; c < 3; ++c) {
            float v = f.data[size_t(c * sp + i)];
            n2 += v * v;
        }
        peak = std::max(peak, n2);
    }
    peak = std::sqrt(peak);
    if (peak == 0) return f;
    const float target = max_amp * float(0.5 + 0.5 * rng.uniform());
    for (auto& v : f.data) v *= target / peak;
    return f;
}

// Geometric transforms re-pose the whole scene, so the misalignment field is
// transported and the observed CT rebuilt from it; intensity smoothing is
// MR-only.
inline TrainCase augment_case(const TrainCase& tc, const AugConfig& cfg, Rng& rng) {
    const bool do_affine = rng.uniform() < double(cfg.prob);
    const bool do_spline = rng.uniform() < double(cfg.prob);
    const bool do_smooth = rng.uniform() < double(cfg.prob);
    TrainCase out = tc;
    if (do_affine || do_spline) {
        const Shape3 s = tc.ct.shape;
        Field disp(s);
        if (do_affine) {
            std::array<double, 3> scale{}, trans{};
            for (auto& v : scale) v = 1.0 + rng.uniform(-cfg.max_scale, cfg.max_scale);
            for (auto& v : trans) v = rng.uniform(-cfg.max_trans, cfg.max_trans);
            const int axis = int(rng.below(3));
            const double rad = rng.uniform(-cfg.max_rot_deg, cfg.max_rot_deg) * M_PI / 180.0;
            disp = affine_field(s, scale, axis, rad, trans);
        }
        if (do_spline) {
            Field sf = spline_field(s, cfg.max_spline, rng);
            for (size_t i = 0; i < disp.data.size(); ++i) disp.data[i] += sf.data[i];
        }
        out.mr_ip = warp(tc.mr_ip, disp, -1.0f);
        out.mr_op = warp(tc.mr_op, disp, -1.0f);
        out.ct = warp(tc.ct, disp, -1000.0f);
        out.labels = warp_labels(tc.labels, disp);
        out.gt_field = transport_field(tc.gt_field, disp);
        out.moved_ct = warp(out.ct, out.gt_field, -1000.0f);
        out.moved_labels = warp_labels(out.labels, out.gt_field);
    }
    if (do_smooth) {
        const double sigma = rng.uniform(cfg.smooth_lo, cfg.smooth_hi);
        out.mr_ip = gaussian_smooth(out.mr_ip, sigma);
        out.mr_op = gaussian_smooth(out.mr_op, sigma);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Tensor bridging
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor<float> vol_tensor(const Volume& v) {
    Tensor<float> t({1, int64_t(v.shape.d), int64_t(v.shape.h), int64_t(v.shape.w)});
    std::copy(v.data.begin(), v.data.end(), t.data.begin());
    return t;
}

inline Tensor<float> stack_tensor(const std::vector<const Volume*>& vols) {
    const Shape3 s = vols.at(0)->shape;
    Tensor<float> t({int64_t(vols.size()), int64_t(s.d), int64_t(s.h), int64_t(s.w)});
    const size_t sp = s.voxels();
    for (size_t c = 0; c < vols.size(); ++c) {
        if (vols[c]->shape.d != s.d || vols[c]->shape.h != s.h || vols[c]->shape.w != s.w)
            throw InputError("stack_tensor: shape mismatch");
        std::copy(vols[c]->data.begin(), vols[c]->data.end(), t.data.begin() + c * sp);
    }
    return t;
}

inline Volume tensor_vol(const Tensor<float>& t, VolKind kind, Spacing spacing) {
    if (t.shape.size() != 4 || t.shape[0] != 1) throw InputError("tensor_vol: expects (1,D,H,W)");
    Volume v({uint32_t(t.shape[1]), uint32_t(t.shape[2]), uint32_t(t.shape[3])}, kind, 0.f,
             spacing);
    std::copy(t.data.begin(), t.data.end(), v.data.begin());
    return v;
}

inline Field tensor_field(const Tensor<float>& t) {
    if (t.shape.size() != 4 || t.shape[0] != 3) throw InputError("tensor_field: expects (3,D,H,W)");
    Field f({uint32_t(t.shape[1]), uint32_t(t.shape[2]), uint32_t(t.shape[3])});
    std::copy(t.data.begin(), t.data.end(), f.data.begin());
    return f;
}

// Tissue-balanced density over the sub-regions present in this mask.
inline std::vector<double> sampling_density(const LabelMask& labels) {
    LabelMask sub(labels.shape);
    for (size_t i = 0; i < labels.data.size(); ++i)
        sub.data[i] = sub_region_of(labels.data[i]);
    std::vector<int64_t> count(size_t(kNumSubRegions), 0);
    for (int32_t v : sub.data) count[size_t(v)]++;
    std::vector<int> present;
    for (int r = 0; r < kNumSubRegions; ++r)
        if (count[size_t(r)] > 0) present.push_back(r);
    return tissue_weight_map(sub, present);
}

} // namespace detail

// ---------------------------------------------------------------------------
// Stage 1: registration + critic
// ---------------------------------------------------------------------------

struct RegConfig {
    int batch = 4;
    double lr = 4e-4;
    double lambda_smooth = 1.0;
    int pairs = 4096;
    int critic_inner = 6;
    int warmup = 200;
    int exclusion_radius = 2;
    bool exclude_sliding = true;
    AugConfig aug;
};

struct RegStepStats {
    double bound = 0;
    double smooth = 0;
    double total = 0;
};

// One critic ascent step on pairs drawn from two intensity maps that share a
// grid. Cheap: the maps are constants here, nothing flows back into them.
inline double critic_update(const MineCritic<float>& critic, ParamStore<float>& mp,
                            Adam<float>& mopt, const std::vector<float>& fixed,
                            const std::vector<float>& warped,
                            const std::vector<double>& density, int npairs, Rng& rng) {
    if (fixed.size() != warped.size() || fixed.size() != density.size())
        throw InputError("critic_update: map sizes differ");
    PairIndices pi = sample_pair_indices(density, npairs, rng);
    Tensor<float> joint({npairs, 2}), marg({npairs, 2});
    for (int i = 0; i < npairs; ++i) {
        const auto j = size_t(pi.joint[size_t(i)]);
        const auto m = size_t(pi.shuffled[size_t(i)]);
        joint.data[size_t(2 * i)] = fixed[j];
        joint.data[size_t(2 * i + 1)] = warped[j];
        marg.data[size_t(2 * i)] = fixed[j];
        marg.data[size_t(2 * i + 1)] = warped[m];
    }
    Graph<float> g;
    auto mb = bind(g, mp, true);
    int bound = mine_bound(g, critic, mp, mb, g.leaf(std::move(joint), false),
                           g.leaf(std::move(marg), false));
    const double val = double(g.scalar(bound));
    mp.zero_grads();
    g.backward(scale(g, bound, -1.0f));
    harvest(g, mp, mb);
    mopt.step(mp);
    return val;
}

// Critic warmup against the uncorrected observations, before the
// registration net moves anything.
inline double registration_warmup(const MineCritic<float>& critic, ParamStore<float>& mp,
                                  Adam<float>& mopt, const std::vector<TrainCase>& cases,
                                  const RegConfig& cfg, int steps, Rng& rng) {
    if (cases.empty()) throw InputError("registration: no cases");
    std::vector<std::vector<float>> moved(cases.size());
    std::vector<std::vector<double>> density(cases.size());
    for (size_t i = 0; i < cases.size(); ++i) {
        moved[i] = hu_to_norm(cases[i].moved_ct).data;
        density[i] = detail::sampling_density(cases[i].moved_labels);
    }
    double last = 0;
    for (int s = 0; s < steps; ++s) {
        const size_t i = size_t(rng.below(uint64_t(cases.size())));
        last = critic_update(critic, mp, mopt, cases[i].mr_ip.data, moved[i], density[i],
                             cfg.pairs, rng);
    }
    return last;
}

// One optimizer step over an accumulated batch. Per case: the critic takes
// several ascent steps on the current alignment, then its bound gradient at
// the warped map is pushed back through the registration graph.
inline RegStepStats registration_batch_step(const RegistrationNet<float>& rnet,
                                            ParamStore<float>& rp, Adam<float>& ropt,
                                            const MineCritic<float>& critic,
                                            ParamStore<float>& mp, Adam<float>& mopt,
                                            const std::vector<TrainCase>& cases,
                                            const RegConfig& cfg, Rng& rng) {
    if (cases.empty()) throw InputError("registration: no cases");
    rp.zero_grads();
    RegStepStats st;
    for (int b = 0; b < cfg.batch; ++b) {
        const TrainCase& base = cases[size_t(rng.below(uint64_t(cases.size())))];
        TrainCase tc = augment_case(base, cfg.aug, rng);
        Volume moved_norm = hu_to_norm(tc.moved_ct);

        Graph<float> ga;
        auto rb = bind(ga, rp, true);
        int input = ga.leaf(detail::stack_tensor({&tc.mr_ip, &tc.mr_op, &moved_norm}), false);
        int disp = rnet.forward(ga, rp, rb, input);
        int warped = warp_node(ga, moved_norm, disp, -1.0f);

        // organ-aware sampling and sliding exclusion follow the labels as
        // currently aligned by the predicted field
        LabelMask m_align = warp_labels(tc.moved_labels, detail::tensor_field(ga.val(disp)));
        auto density = detail::sampling_density(m_align);

        for (int k = 0; k < cfg.critic_inner; ++k)
            critic_update(critic, mp, mopt, tc.mr_ip.data, ga.val(warped).data, density,
                          cfg.pairs, rng);

        // bound and its map gradient, critic frozen
        Graph<float> gb;
        auto mb = bind(gb, mp, false);
        int wl = gb.leaf(ga.val(warped), true);
        int fl = gb.leaf(detail::vol_tensor(tc.mr_ip), false);
        PairIndices pi = sample_pair_indices(density, cfg.pairs, rng);
        auto pairs = build_pair_nodes<float>(gb, fl, wl, pi);
        int bound = mine_bound(gb, critic, mp, mb, pairs.joint, pairs.marg);
        gb.backward(scale(gb, bound, -1.0f));

        std::vector<uint8_t> include;
        int64_t terms = int64_t(tc.ct.shape.voxels());
        if (cfg.exclude_sliding) {
            include = smoothness_include_mask(m_align, cfg.exclusion_radius);
            terms = 0;
            for (uint8_t v : include) terms += v;
            if (terms == 0) throw InputError("registration: exclusion mask covers everything");
        }
        int smooth = smoothness_sum(ga, disp, include);
        int combo = add(ga, dot_const(ga, warped, gb.grad(wl)),
                        scale(ga, smooth, float(cfg.lambda_smooth / double(terms))));
        ga.backward(combo);
        harvest(ga, rp, rb);

        const double bv = double(gb.scalar(bound));
        const double sv = double(ga.scalar(smooth)) / double(terms);
        st.bound += bv;
        st.smooth += sv;
        st.total += -bv + cfg.lambda_smooth * sv;
    }
    const float inv = 1.0f / float(cfg.batch);
    for (auto& e : rp.entries)
        for (auto& v : e.grad.data) v *= inv;
    ropt.step(rp);
    st.bound /= cfg.batch;
    st.smooth /= cfg.batch;
    st.total /= cfg.batch;
    return st;
}

// Plain forward: predicted correction field for a case.
inline Field predict_field(const RegistrationNet<float>& rnet, ParamStore<float>& rp,
                           const TrainCase& tc) {
    Volume moved_norm = hu_to_norm(tc.moved_ct);
    Graph<float> g;
    auto rb = bind(g, rp, false);
    int input = g.leaf(detail::stack_tensor({&tc.mr_ip, &tc.mr_op, &moved_norm}), false);
    int disp = rnet.forward(g, rp, rb, input);
    return detail::tensor_field(g.val(disp));
}

// Registration quality: mean endpoint error of the predicted correction
// against the inverse of the true misalignment, inside the body.
inline double registration_epe(const RegistrationNet<float>& rnet, ParamStore<float>& rp,
                               const TrainCase& tc) {
    Field pred = predict_field(rnet, rp, tc);
    Field want = invert_field(tc.gt_field);
    return mean_epe(pred, want, body_mask(tc.labels));
}

inline double identity_epe(const TrainCase& tc) {
    Field zero(tc.ct.shape);
    Field want = invert_field(tc.gt_field);
    return mean_epe(zero, want, body_mask(tc.labels));
}

// ---------------------------------------------------------------------------
// Stage 2: synthesis
// ---------------------------------------------------------------------------

struct SynConfig {
    double lr = 2e-4;
    double w_l1 = 1.0;
    double w_edge = 1.0;
    double w_adv = 0.05;
    double w_sem = 0.1;
    int feats_per_organ = 8;
    float tau = 0.1f;
    double canny_sigma = 1.0;
    float canny_lo = 0.1f;
    float canny_hi = 0.2f;
    bool use_reg = true;
    bool use_edge = true;
    bool use_adv = true;
    bool use_sem = true;
    AugConfig aug;
};

struct SynStepStats {
    double total = 0, l1 = 0, edge = 0, adv = 0, sem = 0, d_loss = 0;
    bool sem_applied = false;
};

// Alignment target for a case: warp the observed CT by the frozen
// registration net, or use it raw when registration is ablated.
inline Volume alignment_target(const SynConfig& cfg, const RegistrationNet<float>* rnet,
                               ParamStore<float>* rp, const TrainCase& tc) {
    Volume moved_norm = hu_to_norm(tc.moved_ct);
    if (!cfg.use_reg) return moved_norm;
    if (!rnet || !rp) throw InputError("synthesis: registration net required");
    Field disp = predict_field(*rnet, *rp, tc);
    return warp(moved_norm, disp, -1.0f);
}

inline SynStepStats synthesis_step(const SynthesisNet<float>& gnet, ParamStore<float>& gp,
                                   Adam<float>& gopt, const PatchDiscriminator<float>& dnet,
                                   ParamStore<float>& dp, Adam<float>& dopt,
                                   const RegistrationNet<float>* rnet, ParamStore<float>* rp,
                                   const ProxySegmenter<float>* seg, ParamStore<float>* sp,
                                   const TrainCase& base, const SynConfig& cfg, Rng& rng) {
    TrainCase tc = augment_case(base, cfg.aug, rng);
    Volume ialign = alignment_target(cfg, rnet, rp, tc);
    SynStepStats st;

    Tensor<float> target = detail::vol_tensor(ialign);
    Tensor<float> edge_target;
    if (cfg.use_edge) {
        Volume e = canny3d(ialign, cfg.canny_sigma, cfg.canny_lo, cfg.canny_hi);
        edge_target = detail::vol_tensor(e);
    }

    // generator update
    Tensor<float> fake_detached;
    {
        Graph<float> g;
        auto gb = bind(g, gp, true);
        auto db = bind(g, dp, false);
        int mr = g.leaf(detail::stack_tensor({&tc.mr_ip, &tc.mr_op}), false);
        auto out = gnet.forward(g, gp, gb, mr);
        int l1n = l1_mean(g, out.ct, target);
        st.l1 = double(g.scalar(l1n));
        int loss = scale(g, l1n, float(cfg.w_l1));
        if (cfg.use_edge) {
            int el = l2_mean(g, out.edge, edge_target);
            st.edge = double(g.scalar(el));
            loss = add(g, loss, scale(g, el, float(cfg.w_edge)));
        }
        if (cfg.use_adv) {
            int dlog = dnet.forward(g, dp, db, concat_ch(g, mr, out.ct));
            int ag = adversarial_generator(g, dlog);
            st.adv = double(g.scalar(ag));
            loss = add(g, loss, scale(g, ag, float(cfg.w_adv)));
        }
        if (cfg.use_sem) {
            if (!seg || !sp) throw InputError("synthesis: segmenter required for semantic term");
            auto sb = bind(g, *sp, false);
            try {
                int sl = contrastive_node(g, *seg, *sp, sb, out.ct, ialign,
                                          cfg.feats_per_organ, cfg.tau, rng);
                st.sem = double(g.scalar(sl));
                st.sem_applied = true;
                loss = add(g, loss, scale(g, sl, float(cfg.w_sem)));
            } catch (const InputError&) {
                // a side with no foreground prediction contributes nothing
            }
        }
        st.total = double(g.scalar(loss));
        gp.zero_grads();
        g.backward(loss);
        harvest(g, gp, gb);
        gopt.step(gp);
        fake_detached = g.val(out.ct);
    }

    // discriminator update on the detached fake
    if (cfg.use_adv) {
        Graph<float> g;
        auto db = bind(g, dp, true);
        int mr = g.leaf(detail::stack_tensor({&tc.mr_ip, &tc.mr_op}), false);
        int real = dnet.forward(g, dp, db, concat_ch(g, mr, g.leaf(target, false)));
        int fake = dnet.forward(g, dp, db, concat_ch(g, mr, g.leaf(fake_detached, false)));
        int dl = adversarial_discriminator(g, real, fake);
        st.d_loss = double(g.scalar(dl));
        dp.zero_grads();
        g.backward(dl);
        harvest(g, dp, db);
        dopt.step(dp);
    }
    return st;
}

struct SynthOut {
    Volume ct_norm;
    Volume edge;
};

inline SynthOut synthesize(const SynthesisNet<float>& gnet, ParamStore<float>& gp,
                           const Volume& mr_ip, const Volume& mr_op) {
    Graph<float> g;
    auto gb = bind(g, gp, false);
    int mr = g.leaf(detail::stack_tensor({&mr_ip, &mr_op}), false);
    auto out = gnet.forward(g, gp, gb, mr);
    SynthOut so{detail::tensor_vol(g.val(out.ct), VolKind::ct_norm, mr_ip.spacing),
                detail::tensor_vol(g.val(out.edge), VolKind::edge, mr_ip.spacing)};
    return so;
}

// ---------------------------------------------------------------------------
// Logging
// ---------------------------------------------------------------------------

class TrainLogger {
  public:
    TrainLogger(const std::string& path, const std::vector<std::string>& columns)
        : f_(std::fopen(path.c_str(), "w")), cols_(columns.size()) {
        if (!f_) throw ArtifactError("cannot open log: " + path);
        std::fprintf(f_, "step");
        for (const auto& c : columns) std::fprintf(f_, "\t%s", c.c_str());
        std::fprintf(f_, "\n");
    }
    ~TrainLogger() {
        if (f_) std::fclose(f_);
    }
    TrainLogger(const TrainLogger&) = delete;
    TrainLogger& operator=(const TrainLogger&) = delete;

    void row(int64_t step, const std::vector<double>& vals) {
        if (vals.size() != cols_) throw InputError("log row width mismatch");
        std::fprintf(f_, "%lld", static_cast<long long>(step));
        for (double v : vals) std::fprintf(f_, "\t%.6g", v);
        std::fprintf(f_, "\n");
        std::fflush(f_);
    }

  private:
    std::FILE* f_ = nullptr;
    size_t cols_ = 0;
};

// ---------------------------------------------------------------------------
// Analytic sanity check for the information bound: correlated Gaussians with
// known mutual information -0.5 ln(1 - rho^2).
// ---------------------------------------------------------------------------

struct MineSanity {
    double estimate = 0;
    double analytic = 0;
    int steps = 0;
};

// Draws a fixed pool of correlated Gaussian pairs, trains the critic on
// random minibatches from the pool, then evaluates the bound once over the
// whole pool against a shuffled marginal.
inline MineSanity mine_gaussian_sanity(uint64_t seed, double rho = 0.9, int steps = 400,
                                       int batch = 256, int pool = 10000) {
    if (!(rho > -1.0 && rho < 1.0)) throw InputError("sanity: rho must be in (-1,1)");
    if (pool < batch) throw InputError("sanity: pool smaller than batch");
    Rng rng(seed);
    MineCritic<float> critic;
    ParamStore<float> mp;
    critic.register_params(mp, rng);
    Adam<float> opt;
    opt.lr = 1e-3;
    const double c = std::sqrt(1.0 - rho * rho);
    std::vector<float> xs(size_t(pool), 0.f), ys(size_t(pool), 0.f);
    for (int i = 0; i < pool; ++i) {
        xs[size_t(i)] = float(rng.normal());
        ys[size_t(i)] = float(rho * double(xs[size_t(i)]) + c * rng.normal());
    }
    for (int s = 0; s < steps; ++s) {
        Tensor<float> joint({batch, 2}), marg({batch, 2});
        for (int i = 0; i < batch; ++i) {
            const size_t j = size_t(rng.below(uint64_t(pool)));
            const size_t k = size_t(rng.below(uint64_t(pool)));
            const size_t m = size_t(rng.below(uint64_t(pool)));
            joint.data[size_t(2 * i)] = xs[j];
            joint.data[size_t(2 * i + 1)] = ys[j];
            marg.data[size_t(2 * i)] = xs[k];
            marg.data[size_t(2 * i + 1)] = ys[m];
        }
        Graph<float> g;
        auto mb = bind(g, mp, true);
        int bound = mine_bound(g, critic, mp, mb, g.leaf(std::move(joint), false),
                               g.leaf(std::move(marg), false));
        mp.zero_grads();
        g.backward(scale(g, bound, -1.0f));
        harvest(g, mp, mb);
        opt.step(mp);
    }
    Tensor<float> joint({pool, 2}), marg({pool, 2});
    std::vector<int64_t> rows(size_t(pool), 0);
    for (int i = 0; i < pool; ++i) rows[size_t(i)] = i;
    rng.shuffle(rows);
    for (int i = 0; i < pool; ++i) {
        joint.data[size_t(2 * i)] = xs[size_t(i)];
        joint.data[size_t(2 * i + 1)] = ys[size_t(i)];
        marg.data[size_t(2 * i)] = xs[size_t(i)];
        marg.data[size_t(2 * i + 1)] = ys[size_t(rows[size_t(i)])];
    }
    Graph<float> g;
    auto mb = bind(g, mp, false);
    int bound = mine_bound(g, critic, mp, mb, g.leaf(std::move(joint), false),
                           g.leaf(std::move(marg), false));
    MineSanity r;
    r.estimate = double(g.scalar(bound));
    r.analytic = -0.5 * std::log(1.0 - rho * rho);
    r.steps = steps;
    return r;
}

} // namespace sgwb
