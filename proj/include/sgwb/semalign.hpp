#pragma once

// Semantic alignment: a proxy segmenter trained on phantom CT supplies organ
// labels and a feature space; organ-tagged feature banks from real and
// synthesized CT feed the contrastive objective.

#include <algorithm>
#include <vector>

#include "sgwb/autodiff.hpp"
#include "sgwb/losses.hpp"
#include "sgwb/nets.hpp"
#include "sgwb/optim.hpp"
#include "sgwb/phantom.hpp"
#include "sgwb/volume.hpp"

namespace sgwb {

// Per-voxel segmentation targets from anatomy labels.
inline std::vector<int> seg_targets(const LabelMask& labels) {
    std::vector<int> t(labels.data.size());
    for (size_t i = 0; i < t.size(); ++i) t[i] = seg_class_of(labels.data[i]);
    return t;
}

struct DiceReport {
    std::vector<double> per_class; // -1 where the class is absent from target
    double mean = 0;               // over classes present in the target
};

inline DiceReport dice_scores(const std::vector<int>& pred, const std::vector<int>& target,
                              int classes = kNumSegClasses) {
    if (pred.size() != target.size()) throw InputError("dice: size mismatch");
    std::vector<int64_t> np(size_t(classes), 0), nt(size_t(classes), 0), ni(size_t(classes), 0);
    for (size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] < 0 || pred[i] >= classes || target[i] < 0 || target[i] >= classes)
            throw InputError("dice: class out of range");
        np[size_t(pred[i])]++;
        nt[size_t(target[i])]++;
        if (pred[i] == target[i]) ni[size_t(pred[i])]++;
    }
    DiceReport r;
    r.per_class.assign(size_t(classes), -1.0);
    int present = 0;
    double acc = 0;
    for (int c = 0; c < classes; ++c) {
        if (nt[size_t(c)] == 0) continue;
        r.per_class[size_t(c)] =
            2.0 * double(ni[size_t(c)]) / double(np[size_t(c)] + nt[size_t(c)]);
        acc += r.per_class[size_t(c)];
        ++present;
    }
    r.mean = present ? acc / double(present) : 0.0;
    return r;
}

struct SegForward {
    std::vector<int> argmax;
    Tensor<float> feats; // (feat_ch, D, H, W)
};

// Plain forward on normalized CT; no gradients.
inline SegForward run_segmenter(const ProxySegmenter<float>& seg, ParamStore<float>& ps,
                                const Volume& ct_norm) {
    Graph<float> g;
    auto b = bind(g, ps, false);
    Tensor<float> in({1, int64_t(ct_norm.shape.d), int64_t(ct_norm.shape.h),
                      int64_t(ct_norm.shape.w)});
    std::copy(ct_norm.data.begin(), ct_norm.data.end(), in.data.begin());
    auto out = seg.forward(g, ps, b, g.leaf(std::move(in), false));
    const auto& lg = g.val(out.logits);
    const int64_t sp = int64_t(ct_norm.shape.voxels());
    SegForward r;
    r.argmax.resize(size_t(sp));
    for (int64_t i = 0; i < sp; ++i) {
        int best = 0;
        float bv = lg.data[size_t(i)];
        for (int64_t c = 1; c < seg.classes; ++c)
            if (lg.data[size_t(c * sp + i)] > bv) {
                bv = lg.data[size_t(c * sp + i)];
                best = int(c);
            }
        r.argmax[size_t(i)] = best;
    }
    r.feats = g.val(out.feats);
    return r;
}

struct SegTrainResult {
    int steps = 0;
    double first_loss = 0;
    double last_loss = 0;
    double mean_dice = 0; // across the training cases after the final step
};

// Cross-entropy training on phantom cases, round-robin, full volumes.
inline SegTrainResult train_proxy_segmenter(const ProxySegmenter<float>& seg,
                                            ParamStore<float>& ps,
                                            const std::vector<const PhantomCase*>& cases,
                                            int steps, double lr, uint64_t seed) {
    if (cases.empty()) throw InputError("segmenter training: no cases");
    if (steps <= 0) throw InputError("segmenter training: steps must be positive");
    Adam<float> opt;
    opt.lr = lr;
    Rng rng(seed);
    SegTrainResult res;
    res.steps = steps;
    for (int s = 0; s < steps; ++s) {
        const PhantomCase& pc = *cases[size_t(s) % cases.size()];
        Volume cn = hu_to_norm(pc.ct);
        Tensor<float> in({1, int64_t(cn.shape.d), int64_t(cn.shape.h), int64_t(cn.shape.w)});
        std::copy(cn.data.begin(), cn.data.end(), in.data.begin());
        Graph<float> g;
        auto b = bind(g, ps, true);
        auto out = seg.forward(g, ps, b, g.leaf(std::move(in), false));
        int loss = softmax_ce_mean(g, out.logits, seg_targets(pc.labels));
        const double lv = double(g.scalar(loss));
        if (s == 0) res.first_loss = lv;
        res.last_loss = lv;
        ps.zero_grads();
        g.backward(loss);
        harvest(g, ps, b);
        opt.step(ps);
    }
    double acc = 0;
    for (const auto* pc : cases) {
        auto fwd = run_segmenter(seg, ps, hu_to_norm(pc->ct));
        acc += dice_scores(fwd.argmax, seg_targets(pc->labels)).mean;
    }
    res.mean_dice = acc / double(cases.size());
    return res;
}

// ---------------------------------------------------------------------------
// Feature banks
// ---------------------------------------------------------------------------

struct FeatureBank {
    int64_t dim = 0;
    std::vector<float> feats;   // rows() x dim
    std::vector<int> organ;     // predicted class per row, foreground only
    std::vector<int64_t> voxel; // flat voxel index per row
    int64_t rows() const { return int64_t(organ.size()); }
};

// Up to max_per_organ voxels per predicted foreground class, drawn without
// replacement.
inline FeatureBank extract_features(const ProxySegmenter<float>& seg, ParamStore<float>& ps,
                                    const Volume& ct_norm, int max_per_organ, Rng& rng) {
    if (max_per_organ <= 0) throw InputError("extract_features: budget must be positive");
    auto fwd = run_segmenter(seg, ps, ct_norm);
    const int64_t sp = int64_t(ct_norm.shape.voxels());
    FeatureBank bank;
    bank.dim = seg.feat_ch;
    for (int c = 1; c < seg.classes; ++c) {
        std::vector<int64_t> pool;
        for (int64_t i = 0; i < sp; ++i)
            if (fwd.argmax[size_t(i)] == c) pool.push_back(i);
        if (pool.empty()) continue;
        rng.shuffle(pool);
        const size_t take = std::min(pool.size(), size_t(max_per_organ));
        for (size_t k = 0; k < take; ++k) {
            const int64_t i = pool[k];
            bank.organ.push_back(c);
            bank.voxel.push_back(i);
            for (int64_t f = 0; f < bank.dim; ++f)
                bank.feats.push_back(fwd.feats.data[size_t(f * sp + i)]);
        }
    }
    return bank;
}

inline FeatureBank merge_banks(const FeatureBank& a, const FeatureBank& b) {
    if (a.dim != b.dim && a.rows() && b.rows()) throw InputError("merge_banks: dim mismatch");
    FeatureBank m;
    m.dim = a.rows() ? a.dim : b.dim;
    m.feats = a.feats;
    m.feats.insert(m.feats.end(), b.feats.begin(), b.feats.end());
    m.organ = a.organ;
    m.organ.insert(m.organ.end(), b.organ.begin(), b.organ.end());
    m.voxel = a.voxel;
    m.voxel.insert(m.voxel.end(), b.voxel.begin(), b.voxel.end());
    return m;
}

struct AlignmentStats {
    double same_organ_cos = 0;
    double cross_organ_cos = 0;
    int64_t same_pairs = 0;
    int64_t cross_pairs = 0;
};

inline AlignmentStats alignment_stats(const FeatureBank& bank) {
    const int64_t n = bank.rows(), d = bank.dim;
    if (n < 2) throw InputError("alignment_stats: need at least 2 rows");
    std::vector<double> nrm(size_t(n), 0.0);
    for (int64_t i = 0; i < n; ++i) {
        double s = 0;
        for (int64_t k = 0; k < d; ++k) {
            double v = bank.feats[size_t(i * d + k)];
            s += v * v;
        }
        nrm[size_t(i)] = std::sqrt(s);
    }
    AlignmentStats st;
    double same = 0, cross = 0;
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = i + 1; j < n; ++j) {
            if (nrm[size_t(i)] == 0 || nrm[size_t(j)] == 0) continue;
            double dot = 0;
            for (int64_t k = 0; k < d; ++k)
                dot += double(bank.feats[size_t(i * d + k)]) *
                       double(bank.feats[size_t(j * d + k)]);
            dot /= nrm[size_t(i)] * nrm[size_t(j)];
            if (bank.organ[size_t(i)] == bank.organ[size_t(j)]) {
                same += dot;
                st.same_pairs++;
            } else {
                cross += dot;
                st.cross_pairs++;
            }
        }
    st.same_organ_cos = st.same_pairs ? same / double(st.same_pairs) : 0.0;
    st.cross_organ_cos = st.cross_pairs ? cross / double(st.cross_pairs) : 0.0;
    return st;
}

// InfoNCE over the merged banks of two volumes; plain value for evaluation.
inline double contrastive_value(const ProxySegmenter<float>& seg, ParamStore<float>& ps,
                                const Volume& a_norm, const Volume& b_norm, int max_per_organ,
                                float tau, Rng& rng) {
    FeatureBank ba = extract_features(seg, ps, a_norm, max_per_organ, rng);
    FeatureBank bb = extract_features(seg, ps, b_norm, max_per_organ, rng);
    FeatureBank m = merge_banks(ba, bb);
    Tensor<float> f({m.rows(), m.dim});
    std::copy(m.feats.begin(), m.feats.end(), f.data.begin());
    Graph<float> g;
    return double(g.scalar(info_nce_node(g, g.leaf(std::move(f), false), m.organ, tau)));
}

// Contrastive loss node for training: the synthesized CT is a graph node, so
// gradients flow through the frozen segmenter into the generator. The real
// side enters as a constant leaf.
inline int contrastive_node(Graph<float>& g, const ProxySegmenter<float>& seg,
                            ParamStore<float>& sps, const Bound<float>& sb, int synth_ct,
                            const Volume& real_ct_norm, int max_per_organ, float tau, Rng& rng) {
    if (max_per_organ <= 0) throw InputError("contrastive: budget must be positive");
    auto s_out = seg.forward(g, sps, sb, synth_ct);
    Tensor<float> rin({1, int64_t(real_ct_norm.shape.d), int64_t(real_ct_norm.shape.h),
                       int64_t(real_ct_norm.shape.w)});
    std::copy(real_ct_norm.data.begin(), real_ct_norm.data.end(), rin.data.begin());
    auto r_out = seg.forward(g, sps, sb, g.leaf(std::move(rin), false));

    const int64_t sp = int64_t(real_ct_norm.shape.voxels());
    auto pick = [&](const Tensor<float>& logits, std::vector<int64_t>& voxels,
                    std::vector<int>& organs) {
        std::vector<std::vector<int64_t>> pools(size_t(seg.classes));
        for (int64_t i = 0; i < sp; ++i) {
            int best = 0;
            float bv = logits.data[size_t(i)];
            for (int64_t cc = 1; cc < seg.classes; ++cc)
                if (logits.data[size_t(cc * sp + i)] > bv) {
                    bv = logits.data[size_t(cc * sp + i)];
                    best = int(cc);
                }
            pools[size_t(best)].push_back(i);
        }
        for (int c = 1; c < seg.classes; ++c) {
            auto& pool = pools[size_t(c)];
            if (pool.empty()) continue;
            rng.shuffle(pool);
            const size_t take = std::min(pool.size(), size_t(max_per_organ));
            for (size_t k = 0; k < take; ++k) {
                voxels.push_back(pool[k]);
                organs.push_back(c);
            }
        }
    };
    std::vector<int64_t> vs, vr;
    std::vector<int> os, orr;
    pick(g.val(s_out.logits), vs, os);
    pick(g.val(r_out.logits), vr, orr);
    if (vs.empty() || vr.empty())
        throw InputError("contrastive: a side produced no foreground voxels");
    int fs = gather_voxels(g, s_out.feats, vs);
    int fr = gather_voxels(g, r_out.feats, vr);
    int bank = concat_rows(g, fs, fr);
    std::vector<int> ids = os;
    ids.insert(ids.end(), orr.begin(), orr.end());
    return info_nce_node(g, bank, ids, tau);
}

} // namespace sgwb
