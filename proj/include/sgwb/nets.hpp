#pragma once

// Network definitions: a named parameter store with Adam state, graph
// binding, and the five trainable models. All convolutions are 3x3x3 unless
// a head needs 1x1x1; downsampling is stride 2, upsampling nearest-neighbor.

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "sgwb/autodiff.hpp"
#include "sgwb/common.hpp"
#include "sgwb/hash.hpp"
#include "sgwb/rng.hpp"

namespace sgwb {

template <typename T>
struct ParamStore {
    struct Entry {
        std::string name;
        Tensor<T> value;
        Tensor<T> grad;
        Tensor<double> m; // Adam first moment
        Tensor<double> v; // Adam second moment
    };
    std::vector<Entry> entries;
    std::unordered_map<std::string, int> by_name;

    int add(const std::string& name, std::vector<int64_t> shape) {
        if (by_name.count(name)) throw InputError("duplicate parameter: " + name);
        Entry e;
        e.name = name;
        e.value = Tensor<T>(shape);
        e.grad = Tensor<T>(shape);
        e.m = Tensor<double>(shape);
        e.v = Tensor<double>(std::move(shape));
        by_name[name] = int(entries.size());
        entries.push_back(std::move(e));
        return int(entries.size()) - 1;
    }
    bool has(const std::string& name) const { return by_name.count(name) != 0; }
    Entry& at(const std::string& name) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw InputError("unknown parameter: " + name);
        return entries[size_t(it->second)];
    }
    const Entry& at(const std::string& name) const {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw InputError("unknown parameter: " + name);
        return entries[size_t(it->second)];
    }
    int64_t param_count() const {
        int64_t n = 0;
        for (const auto& e : entries) n += e.value.numel();
        return n;
    }
    void zero_grads() {
        for (auto& e : entries)
            std::fill(e.grad.data.begin(), e.grad.data.end(), T(0));
    }
    uint64_t content_hash() const {
        Fnv1a h;
        for (const auto& e : entries) {
            h.update(e.name.data(), e.name.size());
            for (int64_t d : e.value.shape) h.update(&d, sizeof(d));
            h.update(e.value.data.data(), e.value.data.size() * sizeof(T));
        }
        return h.digest();
    }
};

// He-normal for relu-followed weights; fan-in from (co,ci,k,k,k) or (co,ci).
template <typename T>
void he_init(Tensor<T>& w, Rng& rng) {
    int64_t fan_in = 1;
    for (size_t i = 1; i < w.shape.size(); ++i) fan_in *= w.shape[i];
    const double sd = std::sqrt(2.0 / double(fan_in));
    for (auto& v : w.data) v = T(rng.normal() * sd);
}

template <typename T>
void normal_init(Tensor<T>& w, Rng& rng, double sd) {
    for (auto& v : w.data) v = T(rng.normal() * sd);
}

// Leaf ids for every entry, in registration order.
template <typename T>
struct Bound {
    std::vector<int> ids;
};

template <typename T>
Bound<T> bind(Graph<T>& g, ParamStore<T>& ps, bool train) {
    Bound<T> b;
    b.ids.reserve(ps.entries.size());
    for (auto& e : ps.entries) b.ids.push_back(g.leaf(e.value, train));
    return b;
}

// Accumulate graph gradients back into the store after backward().
template <typename T>
void harvest(Graph<T>& g, ParamStore<T>& ps, const Bound<T>& b) {
    for (size_t i = 0; i < ps.entries.size(); ++i) {
        if (!g.needs(b.ids[i])) continue;
        const auto& src = g.grad(b.ids[i]);
        auto& dst = ps.entries[i].grad;
        for (size_t k = 0; k < dst.data.size(); ++k) dst.data[k] += src.data[k];
    }
}

namespace detail {

template <typename T>
struct NetCtx {
    Graph<T>& g;
    ParamStore<T>& ps;
    const Bound<T>& b;
    int pid(const std::string& name) const {
        auto it = ps.by_name.find(name);
        if (it == ps.by_name.end()) throw InputError("unknown parameter: " + name);
        return b.ids[size_t(it->second)];
    }
};

template <typename T>
void reg_conv(ParamStore<T>& ps, Rng& rng, const std::string& p, int64_t cin, int64_t cout,
              int64_t k) {
    int wi = ps.add(p + ".w", {cout, cin, k, k, k});
    he_init(ps.entries[size_t(wi)].value, rng);
    ps.add(p + ".b", {cout});
}

template <typename T>
void reg_in(ParamStore<T>& ps, const std::string& p, int64_t c) {
    int gi = ps.add(p + ".g", {c});
    for (auto& v : ps.entries[size_t(gi)].value.data) v = T(1);
    ps.add(p + ".be", {c});
}

template <typename T>
void reg_linear(ParamStore<T>& ps, Rng& rng, const std::string& p, int64_t cin, int64_t cout) {
    int wi = ps.add(p + ".w", {cout, cin});
    he_init(ps.entries[size_t(wi)].value, rng);
    ps.add(p + ".b", {cout});
}

// conv3x3 -> instance norm -> relu
template <typename T>
int cir(const NetCtx<T>& c, int x, const std::string& p, int stride) {
    int y = conv3d(c.g, x, c.pid(p + ".w"), c.pid(p + ".b"), stride, 1);
    y = instance_norm(c.g, y, c.pid(p + ".g"), c.pid(p + ".be"));
    return relu(c.g, y);
}

// conv3x3 -> relu (normalization-free path)
template <typename T>
int cr(const NetCtx<T>& c, int x, const std::string& p, int stride) {
    return relu(c.g, conv3d(c.g, x, c.pid(p + ".w"), c.pid(p + ".b"), stride, 1));
}

template <typename T>
int conv1x1(const NetCtx<T>& c, int x, const std::string& p) {
    return conv3d(c.g, x, c.pid(p + ".w"), c.pid(p + ".b"), 1, 0);
}

template <typename T>
void reg_gate(ParamStore<T>& ps, Rng& rng, const std::string& p, int64_t cf, int64_t cg,
              int64_t inter) {
    reg_conv(ps, rng, p + ".wf", cf, inter, 1);
    reg_conv(ps, rng, p + ".wg", cg, inter, 1);
    reg_conv(ps, rng, p + ".psi", inter, 1, 1);
}

// Gated skip: alpha = sigmoid(psi(relu(Wg g + Wf f))), returns f * alpha.
template <typename T>
int attention_gate(const NetCtx<T>& c, int f, int gsig, const std::string& p) {
    int af = conv1x1(c, f, p + ".wf");
    int ag = conv1x1(c, gsig, p + ".wg");
    int alpha = sigmoid(c.g, conv1x1(c, relu(c.g, add(c.g, ag, af)), p + ".psi"));
    return mul_bcast(c.g, f, alpha);
}

inline void require_divisible(const std::vector<int64_t>& s, int64_t by, const char* who) {
    for (size_t i = 1; i < s.size(); ++i)
        if (s[i] % by != 0)
            throw InputError(std::string(who) + ": spatial dims must be divisible by " +
                             std::to_string(by));
}

} // namespace detail

// ---------------------------------------------------------------------------
// Synthesis generator: shared encoder, edge decoder on raw skips, image
// decoder on attention-gated skips. Input (2,D,H,W) in-phase/opposed-phase,
// outputs tanh CT in [-1,1] and sigmoid edge probability.
// ---------------------------------------------------------------------------
template <typename T>
struct SynthesisNet {
    int64_t f = 8;
    std::string pfx = "syn";

    void register_params(ParamStore<T>& ps, Rng& rng) const {
        using namespace detail;
        reg_conv(ps, rng, pfx + ".e0a", 2, f, 3);
        reg_in(ps, pfx + ".e0a", f);
        reg_conv(ps, rng, pfx + ".e0b", f, f, 3);
        reg_in(ps, pfx + ".e0b", f);
        reg_conv(ps, rng, pfx + ".d1", f, 2 * f, 3);
        reg_in(ps, pfx + ".d1", 2 * f);
        reg_conv(ps, rng, pfx + ".e1b", 2 * f, 2 * f, 3);
        reg_in(ps, pfx + ".e1b", 2 * f);
        reg_conv(ps, rng, pfx + ".d2", 2 * f, 4 * f, 3);
        reg_in(ps, pfx + ".d2", 4 * f);
        reg_conv(ps, rng, pfx + ".e2b", 4 * f, 4 * f, 3);
        reg_in(ps, pfx + ".e2b", 4 * f);
        for (const char* dec : {"idec", "edec"}) {
            std::string d = pfx + "." + dec;
            reg_conv(ps, rng, d + ".up1", 4 * f, 2 * f, 3);
            reg_in(ps, d + ".up1", 2 * f);
            reg_conv(ps, rng, d + ".c1", 4 * f, 2 * f, 3);
            reg_in(ps, d + ".c1", 2 * f);
            reg_conv(ps, rng, d + ".up0", 2 * f, f, 3);
            reg_in(ps, d + ".up0", f);
            reg_conv(ps, rng, d + ".c0", 2 * f, f, 3);
            reg_in(ps, d + ".c0", f);
            reg_conv(ps, rng, d + ".head", f, 1, 1);
        }
        reg_gate(ps, rng, pfx + ".g1", 2 * f, 2 * f, f);
        reg_gate(ps, rng, pfx + ".g0", f, f, std::max<int64_t>(f / 2, 1));
    }

    struct Out {
        int ct;
        int edge;
    };
    Out forward(Graph<T>& g, ParamStore<T>& ps, const Bound<T>& b, int mr) const {
        using namespace detail;
        NetCtx<T> c{g, ps, b};
        const auto& s = g.val(mr).shape;
        if (s.size() != 4 || s[0] != 2) throw InputError("synthesis: input must be (2,D,H,W)");
        require_divisible(s, 4, "synthesis");
        int f0 = cir(c, cir(c, mr, pfx + ".e0a", 1), pfx + ".e0b", 1);
        int f1 = cir(c, cir(c, f0, pfx + ".d1", 2), pfx + ".e1b", 1);
        int f2 = cir(c, cir(c, f1, pfx + ".d2", 2), pfx + ".e2b", 1);

        auto decode = [&](const std::string& d, bool gated) {
            int u1 = cir(c, upsample2x(g, f2), d + ".up1", 1);
            int s1 = gated ? attention_gate(c, f1, u1, pfx + ".g1") : f1;
            int c1 = cir(c, concat_ch(g, u1, s1), d + ".c1", 1);
            int u0 = cir(c, upsample2x(g, c1), d + ".up0", 1);
            int s0 = gated ? attention_gate(c, f0, u0, pfx + ".g0") : f0;
            int c0 = cir(c, concat_ch(g, u0, s0), d + ".c0", 1);
            return conv1x1(c, c0, d + ".head");
        };
        Out o;
        o.ct = tanh_op(g, decode(pfx + ".idec", true));
        o.edge = sigmoid(g, decode(pfx + ".edec", false));
        return o;
    }
};

// ---------------------------------------------------------------------------
// Registration net: (3,D,H,W) fixed MR pair + moving CT, U-Net with raw
// skips, 1x1x1 head initialized near zero so training starts at identity.
// ---------------------------------------------------------------------------
template <typename T>
struct RegistrationNet {
    int64_t f = 8;
    // Fixed gain on the displacement head. The head starts near zero and Adam
    // moves each weight by roughly lr per step, so the gain sets how many
    // voxels of displacement are reachable within a short training budget.
    float out_gain = 8.0f;
    std::string pfx = "reg";

    void register_params(ParamStore<T>& ps, Rng& rng) const {
        using namespace detail;
        reg_conv(ps, rng, pfx + ".e0a", 3, f, 3);
        reg_in(ps, pfx + ".e0a", f);
        reg_conv(ps, rng, pfx + ".e0b", f, f, 3);
        reg_in(ps, pfx + ".e0b", f);
        reg_conv(ps, rng, pfx + ".d1", f, 2 * f, 3);
        reg_in(ps, pfx + ".d1", 2 * f);
        reg_conv(ps, rng, pfx + ".e1b", 2 * f, 2 * f, 3);
        reg_in(ps, pfx + ".e1b", 2 * f);
        reg_conv(ps, rng, pfx + ".d2", 2 * f, 4 * f, 3);
        reg_in(ps, pfx + ".d2", 4 * f);
        reg_conv(ps, rng, pfx + ".e2b", 4 * f, 4 * f, 3);
        reg_in(ps, pfx + ".e2b", 4 * f);
        reg_conv(ps, rng, pfx + ".up1", 4 * f, 2 * f, 3);
        reg_in(ps, pfx + ".up1", 2 * f);
        reg_conv(ps, rng, pfx + ".c1", 4 * f, 2 * f, 3);
        reg_in(ps, pfx + ".c1", 2 * f);
        reg_conv(ps, rng, pfx + ".up0", 2 * f, f, 3);
        reg_in(ps, pfx + ".up0", f);
        reg_conv(ps, rng, pfx + ".c0", 2 * f, f, 3);
        reg_in(ps, pfx + ".c0", f);
        reg_conv(ps, rng, pfx + ".head", f, 3, 1);
        auto& head = ps.at(pfx + ".head.w");
        normal_init(head.value, rng, 1e-5);
    }

    int forward(Graph<T>& g, ParamStore<T>& ps, const Bound<T>& b, int x) const {
        using namespace detail;
        NetCtx<T> c{g, ps, b};
        const auto& s = g.val(x).shape;
        if (s.size() != 4 || s[0] != 3)
            throw InputError("registration: input must be (3,D,H,W)");
        require_divisible(s, 4, "registration");
        int f0 = cir(c, cir(c, x, pfx + ".e0a", 1), pfx + ".e0b", 1);
        int f1 = cir(c, cir(c, f0, pfx + ".d1", 2), pfx + ".e1b", 1);
        int f2 = cir(c, cir(c, f1, pfx + ".d2", 2), pfx + ".e2b", 1);
        int u1 = cir(c, upsample2x(g, f2), pfx + ".up1", 1);
        int c1 = cir(c, concat_ch(g, u1, f1), pfx + ".c1", 1);
        int u0 = cir(c, upsample2x(g, c1), pfx + ".up0", 1);
        int c0 = cir(c, concat_ch(g, u0, f0), pfx + ".c0", 1);
        return scale(g, conv1x1(c, c0, pfx + ".head"), T(out_gain));
    }
};

// ---------------------------------------------------------------------------
// Patch discriminator: (3,D,H,W) MR pair + CT candidate -> logit map at 1/8
// resolution. No normalization on the first level.
// ---------------------------------------------------------------------------
template <typename T>
struct PatchDiscriminator {
    int64_t f = 8;
    std::string pfx = "dis";

    void register_params(ParamStore<T>& ps, Rng& rng) const {
        using namespace detail;
        reg_conv(ps, rng, pfx + ".l0", 3, f, 3);
        reg_conv(ps, rng, pfx + ".l1", f, 2 * f, 3);
        reg_in(ps, pfx + ".l1", 2 * f);
        reg_conv(ps, rng, pfx + ".l2", 2 * f, 4 * f, 3);
        reg_in(ps, pfx + ".l2", 4 * f);
        reg_conv(ps, rng, pfx + ".head", 4 * f, 1, 1);
    }

    int forward(Graph<T>& g, ParamStore<T>& ps, const Bound<T>& b, int x) const {
        using namespace detail;
        NetCtx<T> c{g, ps, b};
        const auto& s = g.val(x).shape;
        if (s.size() != 4 || s[0] != 3)
            throw InputError("discriminator: input must be (3,D,H,W)");
        require_divisible(s, 8, "discriminator");
        int h = cr(c, x, pfx + ".l0", 2);
        h = cir(c, h, pfx + ".l1", 2);
        h = cir(c, h, pfx + ".l2", 2);
        return conv1x1(c, h, pfx + ".head");
    }
};

// ---------------------------------------------------------------------------
// Statistics network for the mutual-information bound: (N,2) intensity pairs
// -> (N,1) scores.
// ---------------------------------------------------------------------------
template <typename T>
struct MineCritic {
    int64_t width = 64;
    std::string pfx = "mine";

    void register_params(ParamStore<T>& ps, Rng& rng) const {
        using namespace detail;
        reg_linear(ps, rng, pfx + ".l1", 2, width);
        reg_linear(ps, rng, pfx + ".l2", width, width);
        reg_linear(ps, rng, pfx + ".l3", width, 1);
    }

    int forward(Graph<T>& g, ParamStore<T>& ps, const Bound<T>& b, int pairs) const {
        using namespace detail;
        NetCtx<T> c{g, ps, b};
        const auto& s = g.val(pairs).shape;
        if (s.size() != 2 || s[1] != 2) throw InputError("mine: input must be (N,2)");
        int h = relu(g, linear(g, pairs, c.pid(pfx + ".l1.w"), c.pid(pfx + ".l1.b")));
        h = relu(g, linear(g, h, c.pid(pfx + ".l2.w"), c.pid(pfx + ".l2.b")));
        return linear(g, h, c.pid(pfx + ".l3.w"), c.pid(pfx + ".l3.b"));
    }
};

// ---------------------------------------------------------------------------
// Proxy segmenter: normalization-free U-Net over normalized CT, exposing a
// 16-channel penultimate feature map and per-voxel class logits. Kept free of
// instance norm so features stay sensitive to absolute intensity.
// ---------------------------------------------------------------------------
template <typename T>
struct ProxySegmenter {
    int64_t f = 8;
    int64_t feat_ch = 16;
    int64_t classes = 9;
    std::string pfx = "seg";

    void register_params(ParamStore<T>& ps, Rng& rng) const {
        using namespace detail;
        reg_conv(ps, rng, pfx + ".e0a", 1, f, 3);
        reg_conv(ps, rng, pfx + ".e0b", f, f, 3);
        reg_conv(ps, rng, pfx + ".d1", f, 2 * f, 3);
        reg_conv(ps, rng, pfx + ".e1b", 2 * f, 2 * f, 3);
        reg_conv(ps, rng, pfx + ".d2", 2 * f, 4 * f, 3);
        reg_conv(ps, rng, pfx + ".e2b", 4 * f, 4 * f, 3);
        reg_conv(ps, rng, pfx + ".up1", 4 * f, 2 * f, 3);
        reg_conv(ps, rng, pfx + ".c1", 4 * f, 2 * f, 3);
        reg_conv(ps, rng, pfx + ".up0", 2 * f, f, 3);
        reg_conv(ps, rng, pfx + ".c0", 2 * f, feat_ch, 3);
        reg_conv(ps, rng, pfx + ".head", feat_ch, classes, 1);
    }

    struct Out {
        int logits;
        int feats;
    };
    Out forward(Graph<T>& g, ParamStore<T>& ps, const Bound<T>& b, int ct) const {
        using namespace detail;
        NetCtx<T> c{g, ps, b};
        const auto& s = g.val(ct).shape;
        if (s.size() != 4 || s[0] != 1) throw InputError("segmenter: input must be (1,D,H,W)");
        require_divisible(s, 4, "segmenter");
        int f0 = cr(c, cr(c, ct, pfx + ".e0a", 1), pfx + ".e0b", 1);
        int f1 = cr(c, cr(c, f0, pfx + ".d1", 2), pfx + ".e1b", 1);
        int f2 = cr(c, cr(c, f1, pfx + ".d2", 2), pfx + ".e2b", 1);
        int u1 = cr(c, upsample2x(g, f2), pfx + ".up1", 1);
        int c1 = cr(c, concat_ch(g, u1, f1), pfx + ".c1", 1);
        int u0 = cr(c, upsample2x(g, c1), pfx + ".up0", 1);
        Out o;
        o.feats = cr(c, concat_ch(g, u0, f0), pfx + ".c0", 1);
        o.logits = conv1x1(c, o.feats, pfx + ".head");
        return o;
    }
};

} // namespace sgwb
