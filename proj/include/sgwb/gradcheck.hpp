#pragma once

// Central-difference gradient verification for every differentiable block,
// run in double precision. Each case rebuilds the graph from perturbed leaf
// tensors, so checks exercise exactly the code paths training uses.

#include <functional>
#include <string>
#include <vector>

#include "sgwb/autodiff.hpp"
#include "sgwb/phantom.hpp"
#include "sgwb/rng.hpp"

namespace sgwb {

struct GradCase {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = false;
};

namespace detail {

using BuildFn =
    std::function<int(Graph<double>&, const std::vector<int>&)>;

inline GradCase fd_check(const std::string& name, std::vector<Tensor<double>> inputs,
                         const BuildFn& build, uint64_t seed, int max_probes = 32,
                         double tol = 1e-4) {
    Graph<double> g;
    std::vector<int> ids;
    for (auto& t : inputs) ids.push_back(g.leaf(t, true));
    int root = build(g, ids);
    g.backward(root);
    std::vector<Tensor<double>> analytic;
    analytic.reserve(ids.size());
    for (int id : ids) analytic.push_back(g.grad(id));

    auto eval = [&](const std::vector<Tensor<double>>& in) {
        Graph<double> g2;
        std::vector<int> ids2;
        for (auto& t : in) ids2.push_back(g2.leaf(t, false));
        return double(g2.scalar(build(g2, ids2)));
    };

    Rng rng(seed);
    double worst = 0.0;
    for (size_t t = 0; t < inputs.size(); ++t) {
        const int64_t n = inputs[t].numel();
        std::vector<int64_t> coords;
        if (n <= max_probes) {
            for (int64_t i = 0; i < n; ++i) coords.push_back(i);
        } else {
            for (int p = 0; p < max_probes; ++p) coords.push_back(int64_t(rng.below(uint64_t(n))));
        }
        for (int64_t c : coords) {
            const double x0 = inputs[t].data[size_t(c)];
            const double h = 1e-5 * std::max(1.0, std::abs(x0));
            auto in2 = inputs;
            in2[t].data[size_t(c)] = x0 + h;
            const double fp = eval(in2);
            in2[t].data[size_t(c)] = x0 - h;
            const double fm = eval(in2);
            const double fd = (fp - fm) / (2.0 * h);
            const double an = analytic[t].data[size_t(c)];
            const double err = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-2});
            worst = std::max(worst, err);
        }
    }
    return {name, worst, worst < tol};
}

inline Tensor<double> rand_tensor(std::vector<int64_t> shape, Rng& rng, double lo = -1.0,
                                  double hi = 1.0) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

} // namespace detail

// Every trainable block and loss at a small edge length (default 8).
inline std::vector<GradCase> run_gradient_suite(uint64_t seed, int64_t e = 8) {
    using detail::fd_check;
    using detail::rand_tensor;
    std::vector<GradCase> out;
    Rng rng(seed);

    { // conv3d stride 1, pad 1, with bias
        auto x = rand_tensor({2, e, e, e}, rng);
        auto w = rand_tensor({3, 2, 3, 3, 3}, rng, -0.5, 0.5);
        auto b = rand_tensor({3}, rng);
        out.push_back(fd_check("conv3d_s1", {x, w, b},
                               [](Graph<double>& g, const std::vector<int>& in) {
                                   return mean_all(g, conv3d(g, in[0], in[1], in[2], 1, 1));
                               },
                               rng.next_u64()));
    }
    { // conv3d stride 2 (downsampling path)
        auto x = rand_tensor({2, e, e, e}, rng);
        auto w = rand_tensor({3, 2, 3, 3, 3}, rng, -0.5, 0.5);
        auto b = rand_tensor({3}, rng);
        out.push_back(fd_check("conv3d_s2", {x, w, b},
                               [](Graph<double>& g, const std::vector<int>& in) {
                                   return mean_all(g, conv3d(g, in[0], in[1], in[2], 2, 1));
                               },
                               rng.next_u64()));
    }
    { // 1x1x1 conv (gates and heads)
        auto x = rand_tensor({3, e, e, e}, rng);
        auto w = rand_tensor({2, 3, 1, 1, 1}, rng);
        auto b = rand_tensor({2}, rng);
        out.push_back(fd_check("conv1x1", {x, w, b},
                               [](Graph<double>& g, const std::vector<int>& in) {
                                   return mean_all(g, conv3d(g, in[0], in[1], in[2], 1, 0));
                               },
                               rng.next_u64()));
    }
    { // instance norm
        auto x = rand_tensor({3, e, e, e}, rng, -2, 2);
        auto ga = rand_tensor({3}, rng, 0.5, 1.5);
        auto be = rand_tensor({3}, rng);
        out.push_back(fd_check("instance_norm", {x, ga, be},
                               [](Graph<double>& g, const std::vector<int>& in) {
                                   // sigmoid keeps the root sensitive to mean/var shifts
                                   return mean_all(
                                       g, sigmoid(g, instance_norm(g, in[0], in[1], in[2])));
                               },
                               rng.next_u64()));
    }
    { // activations; inputs bounded away from the relu kink
        Tensor<double> x({2, e, e, e});
        for (auto& v : x.data) {
            double u = rng.uniform(-1, 1);
            v = u + (u >= 0 ? 0.05 : -0.05);
        }
        out.push_back(fd_check("relu", {x},
                               [](Graph<double>& g, const std::vector<int>& in) {
                                   return mean_all(g, relu(g, in[0]));
                               },
                               rng.next_u64()));
        out.push_back(fd_check("sigmoid", {x},
                               [](Graph<double>& g, const std::vector<int>& in) {
                                   return mean_all(g, sigmoid(g, in[0]));
                               },
                               rng.next_u64()));
        out.push_back(fd_check("tanh", {x},
                               [](Graph<double>& g, const std::vector<int>& in) {
                                   return mean_all(g, tanh_op(g, in[0]));
                               },
                               rng.next_u64()));
    }
    { // upsample and channel concat
        auto x = rand_tensor({2, e / 2, e / 2, e / 2}, rng);
        auto y = rand_tensor({2, e, e, e}, rng);
        out.push_back(fd_check("upsample_concat", {x, y},
                               [](Graph<double>& g, const std::vector<int>& in) {
                                   return mean_all(
                                       g, concat_ch(g, upsample2x(g, in[0]), in[1]));
                               },
                               rng.next_u64()));
    }
    { // attention gate composition: conv1x1 on f and g, add, relu, conv1x1, sigmoid, gate
        auto f = rand_tensor({3, e, e, e}, rng);
        auto gg = rand_tensor({3, e, e, e}, rng);
        auto wf = rand_tensor({2, 3, 1, 1, 1}, rng);
        auto wg = rand_tensor({2, 3, 1, 1, 1}, rng);
        auto wp = rand_tensor({1, 2, 1, 1, 1}, rng);
        out.push_back(fd_check(
            "attention_gate", {f, gg, wf, wg, wp},
            [](Graph<double>& g, const std::vector<int>& in) {
                int a = add(g, conv3d(g, in[1], in[3], -1, 1, 0), conv3d(g, in[0], in[2], -1, 1, 0));
                int alpha = sigmoid(g, conv3d(g, relu(g, a), in[4], -1, 1, 0));
                return mean_all(g, mul_bcast(g, in[0], alpha));
            },
            rng.next_u64()));
    }
    { // linear layers
        auto x = rand_tensor({6, 5}, rng);
        auto w = rand_tensor({4, 5}, rng);
        auto b = rand_tensor({4}, rng);
        out.push_back(fd_check("linear", {x, w, b},
                               [](Graph<double>& g, const std::vector<int>& in) {
                                   return mean_all(g, linear(g, in[0], in[1], in[2]));
                               },
                               rng.next_u64()));
    }
    { // voxel gather with repeated indices
        auto x = rand_tensor({3, e, e, e}, rng);
        std::vector<int64_t> idx = {0, 5, 5, int64_t(e * e * e - 1), 17, 5};
        out.push_back(fd_check("gather_voxels", {x},
                               [idx](Graph<double>& g, const std::vector<int>& in) {
                                   return mean_all(g, gather_voxels(g, in[0], idx));
                               },
                               rng.next_u64()));
    }
    { // row concat feeding a bank loss
        auto a = rand_tensor({3, 4}, rng);
        auto bb = rand_tensor({2, 4}, rng);
        out.push_back(fd_check("concat_rows", {a, bb},
                               [](Graph<double>& g, const std::vector<int>& in) {
                                   return mean_all(
                                       g, sigmoid(g, concat_rows(g, in[0], in[1])));
                               },
                               rng.next_u64()));
    }
    { // row gather (marginal shuffle path)
        auto x = rand_tensor({6, 4}, rng);
        std::vector<int64_t> rows = {3, 0, 0, 5, 2, 1};
        out.push_back(fd_check("gather_rows", {x},
                               [rows](Graph<double>& g, const std::vector<int>& in) {
                                   return mean_all(g, gather_rows(g, in[0], rows));
                               },
                               rng.next_u64()));
    }
    { // warp against a fixed random moving volume
        Volume mov({uint32_t(e), uint32_t(e), uint32_t(e)}, VolKind::generic);
        Rng vr(rng.next_u64());
        for (auto& v : mov.data) v = float(vr.normal());
        auto disp = rand_tensor({3, e, e, e}, rng, -1.7, 1.7);
        // keep samples away from exact lattice points where trilinear kinks
        for (auto& v : disp.data) v += 0.23;
        out.push_back(fd_check("warp_disp", {disp},
                               [mov](Graph<double>& g, const std::vector<int>& in) {
                                   return mean_all(g, warp_node(g, mov, in[0], -1.0));
                               },
                               rng.next_u64()));
    }
    { // reductions
        auto x = rand_tensor({7, 1}, rng, -2, 2);
        out.push_back(fd_check("log_mean_exp", {x},
                               [](Graph<double>& g, const std::vector<int>& in) {
                                   return log_mean_exp(g, in[0]);
                               },
                               rng.next_u64()));
        auto seed = rand_tensor({7, 1}, rng, -1, 1);
        out.push_back(fd_check("dot_const", {x},
                               [seed](Graph<double>& g, const std::vector<int>& in) {
                                   return dot_const(g, in[0], seed);
                               },
                               rng.next_u64()));
        out.push_back(fd_check("bce_logits_real", {x},
                               [](Graph<double>& g, const std::vector<int>& in) {
                                   return bce_with_logits_mean(g, in[0], 1.0);
                               },
                               rng.next_u64()));
        out.push_back(fd_check("bce_logits_fake", {x},
                               [](Graph<double>& g, const std::vector<int>& in) {
                                   return bce_with_logits_mean(g, in[0], 0.0);
                               },
                               rng.next_u64()));
    }
    { // recon losses against fixed targets
        auto x = rand_tensor({1, e, e, e}, rng);
        auto tgt = rand_tensor({1, e, e, e}, rng);
        out.push_back(fd_check("l1_mean", {x},
                               [tgt](Graph<double>& g, const std::vector<int>& in) {
                                   return l1_mean(g, in[0], tgt);
                               },
                               rng.next_u64()));
        out.push_back(fd_check("l2_mean", {x},
                               [tgt](Graph<double>& g, const std::vector<int>& in) {
                                   return l2_mean(g, in[0], tgt);
                               },
                               rng.next_u64()));
    }
    { // smoothness, full and masked
        auto disp = rand_tensor({3, e, e, e}, rng, -2, 2);
        out.push_back(fd_check("smoothness_full", {disp},
                               [](Graph<double>& g, const std::vector<int>& in) {
                                   return smoothness_sum(g, in[0]);
                               },
                               rng.next_u64()));
        std::vector<uint8_t> inc(size_t(e * e * e), 0);
        Rng mr(rng.next_u64());
        for (auto& m : inc) m = mr.uniform() < 0.6 ? 1 : 0;
        out.push_back(fd_check("smoothness_masked", {disp},
                               [inc](Graph<double>& g, const std::vector<int>& in) {
                                   return smoothness_sum(g, in[0], inc);
                               },
                               rng.next_u64()));
    }
    { // voxel cross-entropy with excluded voxels
        auto x = rand_tensor({4, 3, 3, 3}, rng, -1.5, 1.5);
        std::vector<int> labels(27, 0);
        Rng lr(rng.next_u64());
        for (auto& l : labels) {
            l = int(lr.below(5)) - 1; // -1..3, includes ignores
        }
        labels[0] = 2; // guarantee at least one counted voxel
        out.push_back(fd_check("softmax_ce", {x},
                               [labels](Graph<double>& g, const std::vector<int>& in) {
                                   return softmax_ce_mean(g, in[0], labels);
                               },
                               rng.next_u64()));
    }
    { // InfoNCE with mixed organ ids
        auto f = rand_tensor({6, 5}, rng, -1, 1);
        std::vector<int> ids = {1, 2, 1, 3, 2, 1};
        out.push_back(fd_check("info_nce", {f},
                               [ids](Graph<double>& g, const std::vector<int>& in) {
                                   return info_nce_node(g, in[0], ids, 0.1);
                               },
                               rng.next_u64()));
    }
    { // MINE critic composition with the DV bound
        auto joint = rand_tensor({8, 2}, rng);
        auto marg = rand_tensor({8, 2}, rng);
        auto w1 = rand_tensor({6, 2}, rng);
        auto b1 = rand_tensor({6}, rng);
        auto w2 = rand_tensor({6, 6}, rng, -0.4, 0.4);
        auto b2 = rand_tensor({6}, rng);
        auto w3 = rand_tensor({1, 6}, rng);
        auto b3 = rand_tensor({1}, rng);
        out.push_back(fd_check(
            "mine_dv_bound", {joint, marg, w1, b1, w2, b2, w3, b3},
            [](Graph<double>& g, const std::vector<int>& in) {
                auto critic = [&](int x) {
                    int h1 = relu(g, linear(g, x, in[2], in[3]));
                    int h2 = relu(g, linear(g, h1, in[4], in[5]));
                    return linear(g, h2, in[6], in[7]);
                };
                int bound = sub(g, mean_all(g, critic(in[0])), log_mean_exp(g, critic(in[1])));
                return scale(g, bound, -1.0); // similarity loss
            },
            rng.next_u64()));
    }
    { // conv block chain: conv + IN + relu twice, then strided conv
        auto x = rand_tensor({1, e, e, e}, rng);
        auto w1 = rand_tensor({2, 1, 3, 3, 3}, rng, -0.4, 0.4);
        auto b1 = rand_tensor({2}, rng);
        auto ga = rand_tensor({2}, rng, 0.7, 1.3);
        auto be = rand_tensor({2}, rng);
        auto w2 = rand_tensor({2, 2, 3, 3, 3}, rng, -0.4, 0.4);
        auto b2 = rand_tensor({2}, rng);
        out.push_back(fd_check(
            "conv_block_chain", {x, w1, b1, ga, be, w2, b2},
            [](Graph<double>& g, const std::vector<int>& in) {
                int h = relu(g, instance_norm(g, conv3d(g, in[0], in[1], in[2], 1, 1), in[3], in[4]));
                int d = conv3d(g, h, in[5], in[6], 2, 1);
                return mean_all(g, tanh_op(g, d));
            },
            rng.next_u64()));
    }
    return out;
}

} // namespace sgwb
