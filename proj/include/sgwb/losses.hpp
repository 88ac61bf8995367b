#pragma once

// Loss building blocks: plain metric values for evaluation, tissue-balanced
// voxel sampling for the mutual-information estimator, the DV bound, the
// regularizer mask that spares sliding interfaces, and adversarial terms.

#include <algorithm>
#include <cmath>
#include <vector>

#include "sgwb/autodiff.hpp"
#include "sgwb/nets.hpp"
#include "sgwb/phantom.hpp"
#include "sgwb/rng.hpp"
#include "sgwb/volume.hpp"

namespace sgwb {

inline double l1_value(const Volume& a, const Volume& b) {
    if (a.shape.d != b.shape.d || a.shape.h != b.shape.h || a.shape.w != b.shape.w)
        throw InputError("l1_value: shape mismatch");
    double acc = 0;
    for (size_t i = 0; i < a.data.size(); ++i) acc += std::abs(double(a.data[i]) - double(b.data[i]));
    return acc / double(a.data.size());
}

inline double l2_value(const Volume& a, const Volume& b) {
    if (a.shape.d != b.shape.d || a.shape.h != b.shape.h || a.shape.w != b.shape.w)
        throw InputError("l2_value: shape mismatch");
    double acc = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = double(a.data[i]) - double(b.data[i]);
        acc += d * d;
    }
    return acc / double(a.data.size());
}

// ---------------------------------------------------------------------------
// Tissue-balanced sampling. Small regions receive proportionally more of the
// sampling budget: region weight is (total volume)/(region volume),
// normalized across regions, then spread uniformly over the region's voxels.
// ---------------------------------------------------------------------------

struct RegionWeights {
    std::vector<int> labels;
    std::vector<int64_t> voxels;
    std::vector<double> weight; // sums to 1
};

inline RegionWeights tissue_region_weights(const LabelMask& m, const std::vector<int>& regions) {
    if (regions.empty()) throw InputError("tissue weights: no regions given");
    RegionWeights rw;
    rw.labels = regions;
    rw.voxels.assign(regions.size(), 0);
    for (int32_t v : m.data) {
        for (size_t r = 0; r < regions.size(); ++r)
            if (v == regions[r]) {
                rw.voxels[r]++;
                break;
            }
    }
    int64_t total = 0;
    for (int64_t n : rw.voxels) {
        if (n == 0) throw InputError("tissue weights: empty region");
        total += n;
    }
    rw.weight.resize(regions.size());
    double sum = 0;
    for (size_t r = 0; r < regions.size(); ++r) {
        rw.weight[r] = double(total) / double(rw.voxels[r]);
        sum += rw.weight[r];
    }
    for (auto& w : rw.weight) w /= sum;
    return rw;
}

// Per-voxel sampling density; voxels outside all regions get zero. Sums to 1.
inline std::vector<double> tissue_weight_map(const LabelMask& m, const std::vector<int>& regions) {
    RegionWeights rw = tissue_region_weights(m, regions);
    std::vector<double> map(m.data.size(), 0.0);
    for (size_t i = 0; i < m.data.size(); ++i) {
        for (size_t r = 0; r < rw.labels.size(); ++r)
            if (m.data[i] == rw.labels[r]) {
                map[i] = rw.weight[r] / double(rw.voxels[r]);
                break;
            }
    }
    return map;
}

// n draws with replacement from an unnormalized density, via CDF bisection.
inline std::vector<int64_t> sample_weighted(const std::vector<double>& w, int n, Rng& rng) {
    if (w.empty()) throw InputError("sample_weighted: empty density");
    std::vector<double> cdf(w.size());
    double acc = 0;
    for (size_t i = 0; i < w.size(); ++i) {
        if (w[i] < 0) throw InputError("sample_weighted: negative weight");
        acc += w[i];
        cdf[i] = acc;
    }
    if (!(acc > 0)) throw InputError("sample_weighted: zero total weight");
    std::vector<int64_t> idx(static_cast<size_t>(n), 0);
    for (auto& i : idx) {
        double u = rng.uniform() * acc;
        i = int64_t(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
        if (i >= int64_t(w.size())) i = int64_t(w.size()) - 1;
    }
    return idx;
}

// Joint indices plus a derangement-free shuffle for the marginal batch.
struct PairIndices {
    std::vector<int64_t> joint;
    std::vector<int64_t> shuffled; // joint re-ordered; pairs (a[joint], b[shuffled])
};

inline PairIndices sample_pair_indices(const std::vector<double>& density, int n, Rng& rng) {
    PairIndices p;
    p.joint = sample_weighted(density, n, rng);
    p.shuffled = p.joint;
    rng.shuffle(p.shuffled);
    return p;
}

// ---------------------------------------------------------------------------
// Mutual-information lower bound: mean critic score on joint pairs minus
// log-mean-exp on marginal pairs.
// ---------------------------------------------------------------------------
template <typename T>
int mine_bound(Graph<T>& g, const MineCritic<T>& critic, ParamStore<T>& ps, const Bound<T>& b,
               int joint_pairs, int marg_pairs) {
    int fj = critic.forward(g, ps, b, joint_pairs);
    int fm = critic.forward(g, ps, b, marg_pairs);
    return sub(g, mean_all(g, fj), log_mean_exp(g, fm));
}

// Builds the (N,2) pair tensors inside the graph so gradients reach both the
// fixed map (if trainable) and the warped map.
template <typename T>
struct MinePairs {
    int joint;
    int marg;
};

template <typename T>
MinePairs<T> build_pair_nodes(Graph<T>& g, int fixed_map, int warped_map, const PairIndices& pi) {
    int fj = gather_voxels(g, fixed_map, pi.joint);
    int wj = gather_voxels(g, warped_map, pi.joint);
    int wm = gather_voxels(g, warped_map, pi.shuffled);
    MinePairs<T> mp;
    mp.joint = concat_cols(g, fj, wj);
    mp.marg = concat_cols(g, fj, wm);
    return mp;
}

// ---------------------------------------------------------------------------
// Displacement regularizer
// ---------------------------------------------------------------------------

inline double smoothness_value(const Field& f, const std::vector<uint8_t>& include = {}) {
    auto terms = forward_diff_terms(f);
    if (!include.empty() && include.size() != terms.size())
        throw InputError("smoothness_value: include mask size");
    double acc = 0;
    for (size_t i = 0; i < terms.size(); ++i)
        if (include.empty() || include[i]) acc += terms[i];
    return acc;
}

// Voxels whose forward differences are allowed to be rough: a Chebyshev band
// around the thoracic region surface, where breathing makes tissue slide.
inline std::vector<uint8_t> smoothness_include_mask(const LabelMask& labels, int radius) {
    LabelMask band = thoracic_boundary(labels, radius);
    std::vector<uint8_t> include(band.data.size());
    for (size_t i = 0; i < band.data.size(); ++i) include[i] = band.data[i] ? 0 : 1;
    return include;
}

// ---------------------------------------------------------------------------
// Non-saturating adversarial terms on logit maps
// ---------------------------------------------------------------------------

template <typename T>
int adversarial_generator(Graph<T>& g, int fake_logits) {
    return bce_with_logits_mean(g, fake_logits, T(1));
}

template <typename T>
int adversarial_discriminator(Graph<T>& g, int real_logits, int fake_logits) {
    int lr = bce_with_logits_mean(g, real_logits, T(1));
    int lf = bce_with_logits_mean(g, fake_logits, T(0));
    return scale(g, add(g, lr, lf), T(0.5));
}

} // namespace sgwb
