#pragma once

// Tape-based reverse-mode autodiff over dense tensors, templated on the
// scalar type: float for training throughput, double for gradient checks.
// A Graph owns the tape; ops append nodes whose backward closures scatter
// into parent gradients. Reductions accumulate in double regardless of T.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "sgwb/common.hpp"
#include "sgwb/volume.hpp"

namespace sgwb {

template <typename T>
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
        data.assign(size_t(numel()), T(0));
    }
    int64_t numel() const {
        int64_t n = 1;
        for (auto d : shape) n *= d;
        return n;
    }
    static Tensor zeros_like(const Tensor& o) { return Tensor(o.shape); }
};

template <typename T>
class Graph {
public:
    using BackFn = std::function<void(Graph&, int)>;

    struct Node {
        Tensor<T> val;
        Tensor<T> grad;
        bool needs = false;
        BackFn back;
    };

    std::vector<Node> nodes;

    int leaf(Tensor<T> v, bool needs_grad) {
        nodes.push_back(Node{std::move(v), {}, needs_grad, nullptr});
        return int(nodes.size()) - 1;
    }

    int constant(Tensor<T> v) { return leaf(std::move(v), false); }

    int emit(Tensor<T> v, bool needs, BackFn back) {
        nodes.push_back(Node{std::move(v), {}, needs, std::move(back)});
        return int(nodes.size()) - 1;
    }

    Tensor<T>& val(int id) { return nodes[size_t(id)].val; }
    const Tensor<T>& val(int id) const { return nodes[size_t(id)].val; }
    Tensor<T>& grad(int id) {
        auto& n = nodes[size_t(id)];
        if (!n.needs) throw InputError("grad(): node does not track gradients");
        return n.grad;
    }
    bool needs(int id) const { return nodes[size_t(id)].needs; }

    // Scalar convenience.
    T scalar(int id) const {
        if (nodes[size_t(id)].val.numel() != 1)
            throw InputError("scalar(): node is not a scalar");
        return nodes[size_t(id)].val.data[0];
    }

    void backward(int root) {
        if (nodes[size_t(root)].val.numel() != 1)
            throw InputError("backward: root must be scalar");
        for (auto& n : nodes)
            if (n.needs) n.grad = Tensor<T>::zeros_like(n.val);
        if (!nodes[size_t(root)].needs)
            throw InputError("backward: root does not require grad");
        nodes[size_t(root)].grad.data[0] = T(1);
        for (int id = root; id >= 0; --id) {
            auto& n = nodes[size_t(id)];
            if (n.needs && n.back) n.back(*this, id);
        }
    }
};

// ---------------------------------------------------------------------------
// Elementwise and shape ops
// ---------------------------------------------------------------------------

template <typename T>
int add(Graph<T>& g, int a, int b) {
    if (g.val(a).shape != g.val(b).shape) throw InputError("add: shape mismatch");
    Tensor<T> out = g.val(a);
    const auto& bv = g.val(b);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i];
    bool needs = g.needs(a) || g.needs(b);
    return g.emit(std::move(out), needs, [a, b](Graph<T>& gr, int self) {
        const auto& go = gr.grad(self);
        if (gr.needs(a)) {
            auto& ga = gr.grad(a);
            for (size_t i = 0; i < go.data.size(); ++i) ga.data[i] += go.data[i];
        }
        if (gr.needs(b)) {
            auto& gb = gr.grad(b);
            for (size_t i = 0; i < go.data.size(); ++i) gb.data[i] += go.data[i];
        }
    });
}

template <typename T>
int scale(Graph<T>& g, int a, T c) {
    Tensor<T> out = g.val(a);
    for (auto& v : out.data) v *= c;
    return g.emit(std::move(out), g.needs(a), [a, c](Graph<T>& gr, int self) {
        if (!gr.needs(a)) return;
        const auto& go = gr.grad(self);
        auto& ga = gr.grad(a);
        for (size_t i = 0; i < go.data.size(); ++i) ga.data[i] += c * go.data[i];
    });
}

template <typename T>
int sub(Graph<T>& g, int a, int b) {
    return add(g, a, scale(g, b, T(-1)));
}

template <typename T>
int relu(Graph<T>& g, int a) {
    Tensor<T> out = g.val(a);
    for (auto& v : out.data) v = v > T(0) ? v : T(0);
    return g.emit(std::move(out), g.needs(a), [a](Graph<T>& gr, int self) {
        if (!gr.needs(a)) return;
        const auto& go = gr.grad(self);
        const auto& av = gr.val(a);
        auto& ga = gr.grad(a);
        for (size_t i = 0; i < go.data.size(); ++i)
            if (av.data[i] > T(0)) ga.data[i] += go.data[i];
    });
}

template <typename T>
int sigmoid(Graph<T>& g, int a) {
    Tensor<T> out = g.val(a);
    for (auto& v : out.data) v = T(1) / (T(1) + std::exp(-v));
    return g.emit(std::move(out), g.needs(a), [a](Graph<T>& gr, int self) {
        if (!gr.needs(a)) return;
        const auto& go = gr.grad(self);
        const auto& y = gr.val(self);
        auto& ga = gr.grad(a);
        for (size_t i = 0; i < go.data.size(); ++i)
            ga.data[i] += go.data[i] * y.data[i] * (T(1) - y.data[i]);
    });
}

template <typename T>
int tanh_op(Graph<T>& g, int a) {
    Tensor<T> out = g.val(a);
    for (auto& v : out.data) v = std::tanh(v);
    return g.emit(std::move(out), g.needs(a), [a](Graph<T>& gr, int self) {
        if (!gr.needs(a)) return;
        const auto& go = gr.grad(self);
        const auto& y = gr.val(self);
        auto& ga = gr.grad(a);
        for (size_t i = 0; i < go.data.size(); ++i)
            ga.data[i] += go.data[i] * (T(1) - y.data[i] * y.data[i]);
    });
}

// Channel concat of two (C,D,H,W) maps.
template <typename T>
int concat_ch(Graph<T>& g, int a, int b) {
    const auto& as = g.val(a).shape;
    const auto& bs = g.val(b).shape;
    if (as.size() != 4 || bs.size() != 4 || as[1] != bs[1] || as[2] != bs[2] || as[3] != bs[3])
        throw InputError("concat_ch: incompatible shapes");
    Tensor<T> out({as[0] + bs[0], as[1], as[2], as[3]});
    const auto& av = g.val(a);
    const auto& bv = g.val(b);
    std::copy(av.data.begin(), av.data.end(), out.data.begin());
    std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + av.data.size());
    bool needs = g.needs(a) || g.needs(b);
    return g.emit(std::move(out), needs, [a, b](Graph<T>& gr, int self) {
        const auto& go = gr.grad(self);
        size_t na = gr.val(a).data.size();
        if (gr.needs(a)) {
            auto& ga = gr.grad(a);
            for (size_t i = 0; i < na; ++i) ga.data[i] += go.data[i];
        }
        if (gr.needs(b)) {
            auto& gb = gr.grad(b);
            for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += go.data[na + i];
        }
    });
}

// Column concat of two (N,Ca) and (N,Cb) matrices.
// Stack two (N,C) banks along rows.
template <typename T>
int concat_rows(Graph<T>& g, int a, int b) {
    const auto& as = g.val(a).shape;
    const auto& bs = g.val(b).shape;
    if (as.size() != 2 || bs.size() != 2 || as[1] != bs[1])
        throw InputError("concat_rows: incompatible shapes");
    const int64_t na = as[0], nb = bs[0], c = as[1];
    Tensor<T> out({na + nb, c});
    std::copy(g.val(a).data.begin(), g.val(a).data.end(), out.data.begin());
    std::copy(g.val(b).data.begin(), g.val(b).data.end(), out.data.begin() + size_t(na * c));
    bool needs = g.needs(a) || g.needs(b);
    return g.emit(std::move(out), needs, [a, b, na, nb, c](Graph<T>& gr, int self) {
        const auto& go = gr.grad(self);
        if (gr.needs(a)) {
            auto& ga = gr.grad(a);
            for (int64_t i = 0; i < na * c; ++i) ga.data[size_t(i)] += go.data[size_t(i)];
        }
        if (gr.needs(b)) {
            auto& gb = gr.grad(b);
            for (int64_t i = 0; i < nb * c; ++i)
                gb.data[size_t(i)] += go.data[size_t(na * c + i)];
        }
    });
}

template <typename T>
int concat_cols(Graph<T>& g, int a, int b) {
    const auto& as = g.val(a).shape;
    const auto& bs = g.val(b).shape;
    if (as.size() != 2 || bs.size() != 2 || as[0] != bs[0])
        throw InputError("concat_cols: incompatible shapes");
    int64_t n = as[0], ca = as[1], cb = bs[1];
    Tensor<T> out({n, ca + cb});
    const auto& av = g.val(a);
    const auto& bv = g.val(b);
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t j = 0; j < ca; ++j) out.data[size_t(i * (ca + cb) + j)] = av.data[size_t(i * ca + j)];
        for (int64_t j = 0; j < cb; ++j)
            out.data[size_t(i * (ca + cb) + ca + j)] = bv.data[size_t(i * cb + j)];
    }
    bool needs = g.needs(a) || g.needs(b);
    return g.emit(std::move(out), needs, [a, b, n, ca, cb](Graph<T>& gr, int self) {
        const auto& go = gr.grad(self);
        if (gr.needs(a)) {
            auto& ga = gr.grad(a);
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < ca; ++j)
                    ga.data[size_t(i * ca + j)] += go.data[size_t(i * (ca + cb) + j)];
        }
        if (gr.needs(b)) {
            auto& gb = gr.grad(b);
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = 0; j < cb; ++j)
                    gb.data[size_t(i * cb + j)] += go.data[size_t(i * (ca + cb) + ca + j)];
        }
    });
}

// Multiply a (C,D,H,W) map by a (1,D,H,W) gate, broadcast over channels.
template <typename T>
int mul_bcast(Graph<T>& g, int f, int alpha) {
    const auto& fs = g.val(f).shape;
    const auto& as = g.val(alpha).shape;
    if (fs.size() != 4 || as.size() != 4 || as[0] != 1 || fs[1] != as[1] || fs[2] != as[2] ||
        fs[3] != as[3])
        throw InputError("mul_bcast: incompatible shapes");
    int64_t c = fs[0], sp = fs[1] * fs[2] * fs[3];
    Tensor<T> out = g.val(f);
    const auto& av = g.val(alpha);
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t i = 0; i < sp; ++i) out.data[size_t(ch * sp + i)] *= av.data[size_t(i)];
    bool needs = g.needs(f) || g.needs(alpha);
    return g.emit(std::move(out), needs, [f, alpha, c, sp](Graph<T>& gr, int self) {
        const auto& go = gr.grad(self);
        const auto& fv = gr.val(f);
        const auto& av = gr.val(alpha);
        if (gr.needs(f)) {
            auto& gf = gr.grad(f);
            for (int64_t ch = 0; ch < c; ++ch)
                for (int64_t i = 0; i < sp; ++i)
                    gf.data[size_t(ch * sp + i)] += go.data[size_t(ch * sp + i)] * av.data[size_t(i)];
        }
        if (gr.needs(alpha)) {
            auto& ga = gr.grad(alpha);
            for (int64_t ch = 0; ch < c; ++ch)
                for (int64_t i = 0; i < sp; ++i)
                    ga.data[size_t(i)] += go.data[size_t(ch * sp + i)] * fv.data[size_t(ch * sp + i)];
        }
    });
}

// ---------------------------------------------------------------------------
// Convolutions and normalization
// ---------------------------------------------------------------------------

namespace detail {

inline int64_t conv_out_dim(int64_t in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

} // namespace detail

// 3D convolution. x: (Cin,D,H,W), w: (Cout,Cin,k,k,k), b: (Cout) or -1 for
// none. Zero padding `pad`, cubic kernel, isotropic stride.
template <typename T>
int conv3d(Graph<T>& g, int x, int w, int b, int stride = 1, int pad = 1) {
    const auto& xs = g.val(x).shape;
    const auto& ws = g.val(w).shape;
    if (xs.size() != 4 || ws.size() != 5 || ws[1] != xs[0] || ws[2] != ws[3] || ws[3] != ws[4])
        throw InputError("conv3d: bad shapes");
    const int64_t cin = xs[0], D = xs[1], H = xs[2], W = xs[3];
    const int64_t cout = ws[0];
    const int k = int(ws[2]);
    const int64_t Do = detail::conv_out_dim(D, k, stride, pad);
    const int64_t Ho = detail::conv_out_dim(H, k, stride, pad);
    const int64_t Wo = detail::conv_out_dim(W, k, stride, pad);
    if (Do <= 0 || Ho <= 0 || Wo <= 0) throw InputError("conv3d: empty output");
    if (b >= 0 && (g.val(b).shape.size() != 1 || g.val(b).shape[0] != cout))
        throw InputError("conv3d: bias shape");

    Tensor<T> out({cout, Do, Ho, Wo});
    const T* xd = g.val(x).data.data();
    const T* wd = g.val(w).data.data();
    T* od = out.data.data();
    const int64_t xs_c = D * H * W, os_c = Do * Ho * Wo;

    if (b >= 0) {
        const T* bd = g.val(b).data.data();
        for (int64_t co = 0; co < cout; ++co)
            for (int64_t i = 0; i < os_c; ++i) od[co * os_c + i] = bd[co];
    }
    for (int64_t co = 0; co < cout; ++co)
        for (int64_t ci = 0; ci < cin; ++ci)
            for (int kz = 0; kz < k; ++kz)
                for (int ky = 0; ky < k; ++ky)
                    for (int kx = 0; kx < k; ++kx) {
                        const T wv = wd[(((co * cin + ci) * k + kz) * k + ky) * k + kx];
                        if (wv == T(0)) continue;
                        for (int64_t zo = 0; zo < Do; ++zo) {
                            const int64_t zi = zo * stride - pad + kz;
                            if (zi < 0 || zi >= D) continue;
                            for (int64_t yo = 0; yo < Ho; ++yo) {
                                const int64_t yi = yo * stride - pad + ky;
                                if (yi < 0 || yi >= H) continue;
                                const T* xrow = xd + ci * xs_c + (zi * H + yi) * W;
                                T* orow = od + co * os_c + (zo * Ho + yo) * Wo;
                                int64_t xo_lo = 0, xo_hi = Wo - 1;
                                // xi = xo*stride - pad + kx must be in [0, W)
                                while (xo_lo * stride - pad + kx < 0) ++xo_lo;
                                while (xo_hi * stride - pad + kx >= W) --xo_hi;
                                const int64_t base = -pad + kx;
                                for (int64_t xo = xo_lo; xo <= xo_hi; ++xo)
                                    orow[xo] += wv * xrow[xo * stride + base];
                            }
                        }
                    }

    bool needs = g.needs(x) || g.needs(w) || (b >= 0 && g.needs(b));
    auto back = [x, w, b, stride, pad, cin, cout, k, D, H, W, Do, Ho, Wo, xs_c,
                 os_c](Graph<T>& gr, int self) {
        const T* god = gr.grad(self).data.data();
        const T* xd2 = gr.val(x).data.data();
        const T* wd2 = gr.val(w).data.data();
        if (gr.needs(b) && b >= 0) {
            T* gb = gr.grad(b).data.data();
            for (int64_t co = 0; co < cout; ++co) {
                double acc = 0;
                for (int64_t i = 0; i < os_c; ++i) acc += double(god[co * os_c + i]);
                gb[co] += T(acc);
            }
        }
        if (gr.needs(x)) {
            T* gx = gr.grad(x).data.data();
            for (int64_t co = 0; co < cout; ++co)
                for (int64_t ci = 0; ci < cin; ++ci)
                    for (int kz = 0; kz < k; ++kz)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const T wv = wd2[(((co * cin + ci) * k + kz) * k + ky) * k + kx];
                                if (wv == T(0)) continue;
                                for (int64_t zo = 0; zo < Do; ++zo) {
                                    const int64_t zi = zo * stride - pad + kz;
                                    if (zi < 0 || zi >= D) continue;
                                    for (int64_t yo = 0; yo < Ho; ++yo) {
                                        const int64_t yi = yo * stride - pad + ky;
                                        if (yi < 0 || yi >= H) continue;
                                        T* gxrow = gx + ci * xs_c + (zi * H + yi) * W;
                                        const T* gorow = god + co * os_c + (zo * Ho + yo) * Wo;
                                        int64_t xo_lo = 0, xo_hi = Wo - 1;
                                        while (xo_lo * stride - pad + kx < 0) ++xo_lo;
                                        while (xo_hi * stride - pad + kx >= W) --xo_hi;
                                        const int64_t base = -pad + kx;
                                        for (int64_t xo = xo_lo; xo <= xo_hi; ++xo)
                                            gxrow[xo * stride + base] += wv * gorow[xo];
                                    }
                                }
                            }
        }
        if (gr.needs(w)) {
            T* gw = gr.grad(w).data.data();
            for (int64_t co = 0; co < cout; ++co)
                for (int64_t ci = 0; ci < cin; ++ci)
                    for (int kz = 0; kz < k; ++kz)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                double acc = 0;
                                for (int64_t zo = 0; zo < Do; ++zo) {
                                    const int64_t zi = zo * stride - pad + kz;
                                    if (zi < 0 || zi >= D) continue;
                                    for (int64_t yo = 0; yo < Ho; ++yo) {
                                        const int64_t yi = yo * stride - pad + ky;
                                        if (yi < 0 || yi >= H) continue;
                                        const T* xrow = xd2 + ci * xs_c + (zi * H + yi) * W;
                                        const T* gorow = god + co * os_c + (zo * Ho + yo) * Wo;
                                        int64_t xo_lo = 0, xo_hi = Wo - 1;
                                        while (xo_lo * stride - pad + kx < 0) ++xo_lo;
                                        while (xo_hi * stride - pad + kx >= W) --xo_hi;
                                        const int64_t base = -pad + kx;
                                        for (int64_t xo = xo_lo; xo <= xo_hi; ++xo)
                                            acc += double(gorow[xo]) * double(xrow[xo * stride + base]);
                                    }
                                }
                                gw[(((co * cin + ci) * k + kz) * k + ky) * k + kx] += T(acc);
                            }
        }
    };
    return g.emit(std::move(out), needs, back);
}

// Instance normalization over the spatial extent of each channel.
template <typename T>
int instance_norm(Graph<T>& g, int x, int gamma, int beta, T eps = T(1e-5)) {
    const auto& xs = g.val(x).shape;
    if (xs.size() != 4) throw InputError("instance_norm: expects (C,D,H,W)");
    const int64_t C = xs[0], sp = xs[1] * xs[2] * xs[3];
    if (g.val(gamma).numel() != C || g.val(beta).numel() != C)
        throw InputError("instance_norm: gamma/beta size");
    Tensor<T> out = g.val(x);
    const auto& gv = g.val(gamma);
    const auto& bv = g.val(beta);
    for (int64_t c = 0; c < C; ++c) {
        T* row = out.data.data() + c * sp;
        double mu = 0;
        for (int64_t i = 0; i < sp; ++i) mu += double(row[i]);
        mu /= double(sp);
        double var = 0;
        for (int64_t i = 0; i < sp; ++i) {
            double d = double(row[i]) - mu;
            var += d * d;
        }
        var /= double(sp);
        double inv = 1.0 / std::sqrt(var + double(eps));
        for (int64_t i = 0; i < sp; ++i)
            row[i] = T((double(row[i]) - mu) * inv) * gv.data[size_t(c)] + bv.data[size_t(c)];
    }
    bool needs = g.needs(x) || g.needs(gamma) || g.needs(beta);
    return g.emit(std::move(out), needs, [x, gamma, beta, eps, C, sp](Graph<T>& gr, int self) {
        const auto& go = gr.grad(self);
        const auto& xv = gr.val(x);
        const auto& gv = gr.val(gamma);
        for (int64_t c = 0; c < C; ++c) {
            const T* xrow = xv.data.data() + c * sp;
            const T* gorow = go.data.data() + c * sp;
            double mu = 0;
            for (int64_t i = 0; i < sp; ++i) mu += double(xrow[i]);
            mu /= double(sp);
            double var = 0;
            for (int64_t i = 0; i < sp; ++i) {
                double d = double(xrow[i]) - mu;
                var += d * d;
            }
            var /= double(sp);
            double inv = 1.0 / std::sqrt(var + double(eps));
            double sum_go = 0, sum_goxh = 0;
            for (int64_t i = 0; i < sp; ++i) {
                double xh = (double(xrow[i]) - mu) * inv;
                sum_go += double(gorow[i]);
                sum_goxh += double(gorow[i]) * xh;
            }
            if (gr.needs(beta)) gr.grad(beta).data[size_t(c)] += T(sum_go);
            if (gr.needs(gamma)) gr.grad(gamma).data[size_t(c)] += T(sum_goxh);
            if (gr.needs(x)) {
                T* gx = gr.grad(x).data.data() + c * sp;
                double gsc = double(gv.data[size_t(c)]) * inv;
                double mgo = sum_go / double(sp), mgoxh = sum_goxh / double(sp);
                for (int64_t i = 0; i < sp; ++i) {
                    double xh = (double(xrow[i]) - mu) * inv;
                    gx[i] += T(gsc * (double(gorow[i]) - mgo - xh * mgoxh));
                }
            }
        }
    });
}

// Nearest-neighbour 2x upsampling of a (C,D,H,W) map.
template <typename T>
int upsample2x(Graph<T>& g, int x) {
    const auto& xs = g.val(x).shape;
    if (xs.size() != 4) throw InputError("upsample2x: expects (C,D,H,W)");
    const int64_t C = xs[0], D = xs[1], H = xs[2], W = xs[3];
    Tensor<T> out({C, 2 * D, 2 * H, 2 * W});
    const auto& xv = g.val(x);
    for (int64_t c = 0; c < C; ++c)
        for (int64_t z = 0; z < 2 * D; ++z)
            for (int64_t y = 0; y < 2 * H; ++y)
                for (int64_t xx = 0; xx < 2 * W; ++xx)
                    out.data[size_t(((c * 2 * D + z) * 2 * H + y) * 2 * W + xx)] =
                        xv.data[size_t(((c * D + z / 2) * H + y / 2) * W + xx / 2)];
    return g.emit(std::move(out), g.needs(x), [x, C, D, H, W](Graph<T>& gr, int self) {
        if (!gr.needs(x)) return;
        const auto& go = gr.grad(self);
        auto& gx = gr.grad(x);
        for (int64_t c = 0; c < C; ++c)
            for (int64_t z = 0; z < 2 * D; ++z)
                for (int64_t y = 0; y < 2 * H; ++y)
                    for (int64_t xx = 0; xx < 2 * W; ++xx)
                        gx.data[size_t(((c * D + z / 2) * H + y / 2) * W + xx / 2)] +=
                            go.data[size_t(((c * 2 * D + z) * 2 * H + y) * 2 * W + xx)];
    });
}

// ---------------------------------------------------------------------------
// Dense layers and gathers
// ---------------------------------------------------------------------------

// x: (N,Fin), w: (Fout,Fin), b: (Fout) or -1.
template <typename T>
int linear(Graph<T>& g, int x, int w, int b) {
    const auto& xs = g.val(x).shape;
    const auto& ws = g.val(w).shape;
    if (xs.size() != 2 || ws.size() != 2 || ws[1] != xs[1]) throw InputError("linear: shapes");
    const int64_t N = xs[0], fin = xs[1], fout = ws[0];
    Tensor<T> out({N, fout});
    const auto& xv = g.val(x);
    const auto& wv = g.val(w);
    for (int64_t n = 0; n < N; ++n)
        for (int64_t f = 0; f < fout; ++f) {
            double acc = b >= 0 ? double(g.val(b).data[size_t(f)]) : 0.0;
            for (int64_t i = 0; i < fin; ++i)
                acc += double(xv.data[size_t(n * fin + i)]) * double(wv.data[size_t(f * fin + i)]);
            out.data[size_t(n * fout + f)] = T(acc);
        }
    bool needs = g.needs(x) || g.needs(w) || (b >= 0 && g.needs(b));
    return g.emit(std::move(out), needs, [x, w, b, N, fin, fout](Graph<T>& gr, int self) {
        const auto& go = gr.grad(self);
        const auto& xv = gr.val(x);
        const auto& wv = gr.val(w);
        if (gr.needs(x)) {
            auto& gx = gr.grad(x);
            for (int64_t n = 0; n < N; ++n)
                for (int64_t i = 0; i < fin; ++i) {
                    double acc = 0;
                    for (int64_t f = 0; f < fout; ++f)
                        acc += double(go.data[size_t(n * fout + f)]) *
                               double(wv.data[size_t(f * fin + i)]);
                    gx.data[size_t(n * fin + i)] += T(acc);
                }
        }
        if (gr.needs(w)) {
            auto& gw = gr.grad(w);
            for (int64_t f = 0; f < fout; ++f)
                for (int64_t i = 0; i < fin; ++i) {
                    double acc = 0;
                    for (int64_t n = 0; n < N; ++n)
                        acc += double(go.data[size_t(n * fout + f)]) *
                               double(xv.data[size_t(n * fin + i)]);
                    gw.data[size_t(f * fin + i)] += T(acc);
                }
        }
        if (b >= 0 && gr.needs(b)) {
            auto& gb = gr.grad(b);
            for (int64_t f = 0; f < fout; ++f) {
                double acc = 0;
                for (int64_t n = 0; n < N; ++n) acc += double(go.data[size_t(n * fout + f)]);
                gb.data[size_t(f)] += T(acc);
            }
        }
    });
}

// Gather feature vectors at linear spatial indices: x (C,D,H,W) -> (N,C).
template <typename T>
int gather_voxels(Graph<T>& g, int x, std::vector<int64_t> idx) {
    const auto& xs = g.val(x).shape;
    if (xs.size() != 4) throw InputError("gather_voxels: expects (C,D,H,W)");
    const int64_t C = xs[0], sp = xs[1] * xs[2] * xs[3];
    for (auto i : idx)
        if (i < 0 || i >= sp) throw InputError("gather_voxels: index out of range");
    const int64_t N = int64_t(idx.size());
    Tensor<T> out({N, C});
    const auto& xv = g.val(x);
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c)
            out.data[size_t(n * C + c)] = xv.data[size_t(c * sp + idx[size_t(n)])];
    return g.emit(std::move(out), g.needs(x),
                  [x, idx = std::move(idx), C, sp](Graph<T>& gr, int self) {
                      if (!gr.needs(x)) return;
                      const auto& go = gr.grad(self);
                      auto& gx = gr.grad(x);
                      const int64_t N = int64_t(idx.size());
                      for (int64_t n = 0; n < N; ++n)
                          for (int64_t c = 0; c < C; ++c)
                              gx.data[size_t(c * sp + idx[size_t(n)])] +=
                                  go.data[size_t(n * C + c)];
                  });
}

// Row permutation/selection of a (N,C) matrix; rows may repeat.
template <typename T>
int gather_rows(Graph<T>& g, int x, std::vector<int64_t> rows) {
    const auto& xs = g.val(x).shape;
    if (xs.size() != 2) throw InputError("gather_rows: expects (N,C)");
    const int64_t C = xs[1];
    for (auto r : rows)
        if (r < 0 || r >= xs[0]) throw InputError("gather_rows: row out of range");
    const int64_t M = int64_t(rows.size());
    Tensor<T> out({M, C});
    const auto& xv = g.val(x);
    for (int64_t m = 0; m < M; ++m)
        for (int64_t c = 0; c < C; ++c)
            out.data[size_t(m * C + c)] = xv.data[size_t(rows[size_t(m)] * C + c)];
    return g.emit(std::move(out), g.needs(x),
                  [x, rows = std::move(rows), C](Graph<T>& gr, int self) {
                      if (!gr.needs(x)) return;
                      const auto& go = gr.grad(self);
                      auto& gx = gr.grad(x);
                      for (int64_t m = 0; m < int64_t(rows.size()); ++m)
                          for (int64_t c = 0; c < C; ++c)
                              gx.data[size_t(rows[size_t(m)] * C + c)] +=
                                  go.data[size_t(m * C + c)];
                  });
}

// ---------------------------------------------------------------------------
// Warp node: differentiable w.r.t. the displacement field
// ---------------------------------------------------------------------------

// moving is a fixed volume; disp is a (3,D,H,W) node with channels (dx,dy,dz).
// Output (1,D,H,W): out(w) = moving(w + disp(w)), trilinear, border outside.
template <typename T>
int warp_node(Graph<T>& g, const Volume& moving, int disp, T border) {
    const auto& ds = g.val(disp).shape;
    if (ds.size() != 4 || ds[0] != 3) throw InputError("warp_node: disp must be (3,D,H,W)");
    const Shape3 s = moving.shape;
    if (int64_t(s.d) != ds[1] || int64_t(s.h) != ds[2] || int64_t(s.w) != ds[3])
        throw InputError("warp_node: shape mismatch");
    const int64_t sp = int64_t(s.voxels());
    Tensor<T> out({1, ds[1], ds[2], ds[3]});
    const auto& dv = g.val(disp);
    // Interpolate in double so the node is exact in T; sample_trilinear would
    // quantize positions to float.
    auto corner = [&](int64_t z, int64_t y, int64_t x) {
        return s.contains(z, y, x) ? double(moving.at(uint32_t(z), uint32_t(y), uint32_t(x)))
                                   : double(border);
    };
    for (uint32_t z = 0; z < s.d; ++z)
        for (uint32_t y = 0; y < s.h; ++y)
            for (uint32_t x = 0; x < s.w; ++x) {
                int64_t i = int64_t(s.index(z, y, x));
                double xf = double(x) + double(dv.data[size_t(i)]);
                double yf = double(y) + double(dv.data[size_t(sp + i)]);
                double zf = double(z) + double(dv.data[size_t(2 * sp + i)]);
                int64_t z0 = int64_t(std::floor(zf)), y0 = int64_t(std::floor(yf)),
                        x0 = int64_t(std::floor(xf));
                double fz = zf - double(z0), fy = yf - double(y0), fx = xf - double(x0);
                double acc = 0;
                for (int cz = 0; cz < 2; ++cz)
                    for (int cy = 0; cy < 2; ++cy)
                        for (int cx = 0; cx < 2; ++cx)
                            acc += (cz ? fz : 1.0 - fz) * (cy ? fy : 1.0 - fy) *
                                   (cx ? fx : 1.0 - fx) * corner(z0 + cz, y0 + cy, x0 + cx);
                out.data[size_t(i)] = T(acc);
            }
    return g.emit(std::move(out), g.needs(disp),
                  [disp, moving, border, s, sp](Graph<T>& gr, int self) {
                      if (!gr.needs(disp)) return;
                      const auto& go = gr.grad(self);
                      const auto& dv = gr.val(disp);
                      auto& gd = gr.grad(disp);
                      auto value_at = [&](int64_t z, int64_t y, int64_t x) {
                          return s.contains(z, y, x)
                                     ? double(moving.at(uint32_t(z), uint32_t(y), uint32_t(x)))
                                     : double(border);
                      };
                      for (uint32_t z = 0; z < s.d; ++z)
                          for (uint32_t y = 0; y < s.h; ++y)
                              for (uint32_t x = 0; x < s.w; ++x) {
                                  int64_t i = int64_t(s.index(z, y, x));
                                  double up = double(go.data[size_t(i)]);
                                  if (up == 0.0) continue;
                                  double xf = double(x) + double(dv.data[size_t(i)]);
                                  double yf = double(y) + double(dv.data[size_t(sp + i)]);
                                  double zf = double(z) + double(dv.data[size_t(2 * sp + i)]);
                                  int64_t z0 = int64_t(std::floor(zf)), y0 = int64_t(std::floor(yf)),
                                          x0 = int64_t(std::floor(xf));
                                  double fz = zf - double(z0), fy = yf - double(y0),
                                         fx = xf - double(x0);
                                  double gx = 0, gy = 0, gz = 0;
                                  for (int cz = 0; cz < 2; ++cz)
                                      for (int cy = 0; cy < 2; ++cy)
                                          for (int cx = 0; cx < 2; ++cx) {
                                              double v = value_at(z0 + cz, y0 + cy, x0 + cx);
                                              double wz = cz ? fz : 1.0 - fz;
                                              double wy = cy ? fy : 1.0 - fy;
                                              double wx = cx ? fx : 1.0 - fx;
                                              gx += (cx ? 1.0 : -1.0) * wz * wy * v;
                                              gy += (cy ? 1.0 : -1.0) * wz * wx * v;
                                              gz += (cz ? 1.0 : -1.0) * wy * wx * v;
                                          }
                                  gd.data[size_t(i)] += T(up * gx);
                                  gd.data[size_t(sp + i)] += T(up * gy);
                                  gd.data[size_t(2 * sp + i)] += T(up * gz);
                              }
                  });
}

// ---------------------------------------------------------------------------
// Reductions and losses
// ---------------------------------------------------------------------------

template <typename T>
int mean_all(Graph<T>& g, int x) {
    const auto& xv = g.val(x);
    double acc = 0;
    for (T v : xv.data) acc += double(v);
    Tensor<T> out({1});
    out.data[0] = T(acc / double(xv.data.size()));
    return g.emit(std::move(out), g.needs(x), [x](Graph<T>& gr, int self) {
        if (!gr.needs(x)) return;
        const T go = gr.grad(self).data[0];
        auto& gx = gr.grad(x);
        const T inv = T(1) / T(gx.data.size());
        for (auto& v : gx.data) v += go * inv;
    });
}

// Scalar projection sum(x * c) onto a fixed tensor; the gradient at x is c.
// Lets a gradient computed in one graph seed the backward pass of another.
template <typename T>
int dot_const(Graph<T>& g, int x, Tensor<T> c) {
    if (g.val(x).shape != c.shape) throw InputError("dot_const: shape mismatch");
    const auto& xv = g.val(x);
    double acc = 0;
    for (size_t i = 0; i < xv.data.size(); ++i) acc += double(xv.data[i]) * double(c.data[i]);
    Tensor<T> out({1});
    out.data[0] = T(acc);
    auto cc = std::make_shared<Tensor<T>>(std::move(c));
    return g.emit(std::move(out), g.needs(x), [x, cc](Graph<T>& gr, int self) {
        if (!gr.needs(x)) return;
        const T go = gr.grad(self).data[0];
        auto& gx = gr.grad(x);
        for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += go * cc->data[i];
    });
}

// log(mean(exp(x))) with max subtraction; x is any shape, reduced fully.
template <typename T>
int log_mean_exp(Graph<T>& g, int x) {
    const auto& xv = g.val(x);
    if (xv.data.empty()) throw InputError("log_mean_exp: empty input");
    double m = -1e300;
    for (T v : xv.data) m = std::max(m, double(v));
    double acc = 0;
    for (T v : xv.data) acc += std::exp(double(v) - m);
    Tensor<T> out({1});
    out.data[0] = T(m + std::log(acc / double(xv.data.size())));
    return g.emit(std::move(out), g.needs(x), [x, m, acc](Graph<T>& gr, int self) {
        if (!gr.needs(x)) return;
        const T go = gr.grad(self).data[0];
        const auto& xv2 = gr.val(x);
        auto& gx = gr.grad(x);
        for (size_t i = 0; i < gx.data.size(); ++i)
            gx.data[i] += go * T(std::exp(double(xv2.data[i]) - m) / acc);
    });
}

// Mean binary cross-entropy with logits against a constant target in {0,1}.
template <typename T>
int bce_with_logits_mean(Graph<T>& g, int x, T target) {
    const auto& xv = g.val(x);
    if (xv.data.empty()) throw InputError("bce: empty input");
    double acc = 0;
    for (T v : xv.data) {
        double z = double(v);
        acc += std::max(z, 0.0) - z * double(target) + std::log1p(std::exp(-std::abs(z)));
    }
    Tensor<T> out({1});
    out.data[0] = T(acc / double(xv.data.size()));
    return g.emit(std::move(out), g.needs(x), [x, target](Graph<T>& gr, int self) {
        if (!gr.needs(x)) return;
        const T go = gr.grad(self).data[0];
        const auto& xv2 = gr.val(x);
        auto& gx = gr.grad(x);
        const double inv = 1.0 / double(gx.data.size());
        for (size_t i = 0; i < gx.data.size(); ++i) {
            double sig = 1.0 / (1.0 + std::exp(-double(xv2.data[i])));
            gx.data[i] += go * T((sig - double(target)) * inv);
        }
    });
}

// Mean absolute error against a fixed target tensor.
template <typename T>
int l1_mean(Graph<T>& g, int x, const Tensor<T>& target) {
    const auto& xv = g.val(x);
    if (xv.shape != target.shape) throw InputError("l1_mean: shape mismatch");
    double acc = 0;
    for (size_t i = 0; i < xv.data.size(); ++i)
        acc += std::abs(double(xv.data[i]) - double(target.data[i]));
    Tensor<T> out({1});
    out.data[0] = T(acc / double(xv.data.size()));
    return g.emit(std::move(out), g.needs(x), [x, target](Graph<T>& gr, int self) {
        if (!gr.needs(x)) return;
        const T go = gr.grad(self).data[0];
        const auto& xv2 = gr.val(x);
        auto& gx = gr.grad(x);
        const double inv = 1.0 / double(gx.data.size());
        for (size_t i = 0; i < gx.data.size(); ++i) {
            double d = double(xv2.data[i]) - double(target.data[i]);
            double sg = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
            gx.data[i] += go * T(sg * inv);
        }
    });
}

// Mean squared error against a fixed target tensor.
template <typename T>
int l2_mean(Graph<T>& g, int x, const Tensor<T>& target) {
    const auto& xv = g.val(x);
    if (xv.shape != target.shape) throw InputError("l2_mean: shape mismatch");
    double acc = 0;
    for (size_t i = 0; i < xv.data.size(); ++i) {
        double d = double(xv.data[i]) - double(target.data[i]);
        acc += d * d;
    }
    Tensor<T> out({1});
    out.data[0] = T(acc / double(xv.data.size()));
    return g.emit(std::move(out), g.needs(x), [x, target](Graph<T>& gr, int self) {
        if (!gr.needs(x)) return;
        const T go = gr.grad(self).data[0];
        const auto& xv2 = gr.val(x);
        auto& gx = gr.grad(x);
        const double inv = 2.0 / double(gx.data.size());
        for (size_t i = 0; i < gx.data.size(); ++i)
            gx.data[i] += go * T((double(xv2.data[i]) - double(target.data[i])) * inv);
    });
}

// Raw-sum smoothness of a (3,D,H,W) displacement node over the voxels whose
// include flag is set (empty include = all voxels). Forward-difference terms,
// accumulated in index order in double.
template <typename T>
int smoothness_sum(Graph<T>& g, int disp, std::vector<uint8_t> include = {}) {
    const auto& ds = g.val(disp).shape;
    if (ds.size() != 4 || ds[0] != 3) throw InputError("smoothness_sum: disp must be (3,D,H,W)");
    const Shape3 s{uint32_t(ds[1]), uint32_t(ds[2]), uint32_t(ds[3])};
    const int64_t sp = int64_t(s.voxels());
    if (!include.empty() && int64_t(include.size()) != sp)
        throw InputError("smoothness_sum: include mask size");
    const auto& dv = g.val(disp);
    double acc = 0;
    for (uint32_t z = 0; z < s.d; ++z)
        for (uint32_t y = 0; y < s.h; ++y)
            for (uint32_t x = 0; x < s.w; ++x) {
                int64_t i = int64_t(s.index(z, y, x));
                if (!include.empty() && !include[size_t(i)]) continue;
                const int64_t nz[3] = {int64_t(z) + 1, int64_t(z), int64_t(z)};
                const int64_t ny[3] = {int64_t(y), int64_t(y) + 1, int64_t(y)};
                const int64_t nx[3] = {int64_t(x), int64_t(x), int64_t(x) + 1};
                for (int a = 0; a < 3; ++a) {
                    if (!s.contains(nz[a], ny[a], nx[a])) continue;
                    int64_t j = int64_t(s.index(uint32_t(nz[a]), uint32_t(ny[a]), uint32_t(nx[a])));
                    for (int c = 0; c < 3; ++c) {
                        double d = double(dv.data[size_t(c * sp + j)]) -
                                   double(dv.data[size_t(c * sp + i)]);
                        acc += d * d;
                    }
                }
            }
    Tensor<T> out({1});
    out.data[0] = T(acc);
    return g.emit(std::move(out), g.needs(disp),
                  [disp, include = std::move(include), s, sp](Graph<T>& gr, int self) {
                      if (!gr.needs(disp)) return;
                      const T go = gr.grad(self).data[0];
                      const auto& dv = gr.val(disp);
                      auto& gd = gr.grad(disp);
                      for (uint32_t z = 0; z < s.d; ++z)
                          for (uint32_t y = 0; y < s.h; ++y)
                              for (uint32_t x = 0; x < s.w; ++x) {
                                  int64_t i = int64_t(s.index(z, y, x));
                                  if (!include.empty() && !include[size_t(i)]) continue;
                                  const int64_t nz[3] = {int64_t(z) + 1, int64_t(z), int64_t(z)};
                                  const int64_t ny[3] = {int64_t(y), int64_t(y) + 1, int64_t(y)};
                                  const int64_t nx[3] = {int64_t(x), int64_t(x), int64_t(x) + 1};
                                  for (int a = 0; a < 3; ++a) {
                                      if (!s.contains(nz[a], ny[a], nx[a])) continue;
                                      int64_t j = int64_t(
                                          s.index(uint32_t(nz[a]), uint32_t(ny[a]), uint32_t(nx[a])));
                                      for (int c = 0; c < 3; ++c) {
                                          T d = dv.data[size_t(c * sp + j)] -
                                                dv.data[size_t(c * sp + i)];
                                          gd.data[size_t(c * sp + j)] += go * T(2) * d;
                                          gd.data[size_t(c * sp + i)] -= go * T(2) * d;
                                      }
                                  }
                              }
                  });
}

// Mean softmax cross-entropy over voxels of a (C,D,H,W) logit map. labels
// holds one class per voxel in [0,C); -1 marks voxels excluded from the mean.
template <typename T>
int softmax_ce_mean(Graph<T>& g, int logits, const std::vector<int>& labels) {
    const auto& ls = g.val(logits).shape;
    if (ls.size() != 4) throw InputError("softmax_ce: expects (C,D,H,W)");
    const int64_t C = ls[0], sp = ls[1] * ls[2] * ls[3];
    if (int64_t(labels.size()) != sp) throw InputError("softmax_ce: labels size mismatch");
    const auto& lv = g.val(logits);
    int64_t counted = 0;
    double loss = 0;
    for (int64_t i = 0; i < sp; ++i) {
        const int lab = labels[size_t(i)];
        if (lab < 0) continue;
        if (lab >= C) throw InputError("softmax_ce: label out of range");
        double m = -1e300;
        for (int64_t c = 0; c < C; ++c) m = std::max(m, double(lv.data[size_t(c * sp + i)]));
        double acc = 0;
        for (int64_t c = 0; c < C; ++c) acc += std::exp(double(lv.data[size_t(c * sp + i)]) - m);
        loss += m + std::log(acc) - double(lv.data[size_t(lab * sp + i)]);
        ++counted;
    }
    if (counted == 0) throw InputError("softmax_ce: no labeled voxels");
    Tensor<T> out({1});
    out.data[0] = T(loss / double(counted));
    return g.emit(std::move(out), g.needs(logits),
                  [logits, labels, C, sp, counted](Graph<T>& gr, int self) {
                      if (!gr.needs(logits)) return;
                      const double go = double(gr.grad(self).data[0]) / double(counted);
                      const auto& lv = gr.val(logits);
                      auto& gl = gr.grad(logits);
                      for (int64_t i = 0; i < sp; ++i) {
                          const int lab = labels[size_t(i)];
                          if (lab < 0) continue;
                          double m = -1e300;
                          for (int64_t c = 0; c < C; ++c)
                              m = std::max(m, double(lv.data[size_t(c * sp + i)]));
                          double acc = 0;
                          for (int64_t c = 0; c < C; ++c)
                              acc += std::exp(double(lv.data[size_t(c * sp + i)]) - m);
                          for (int64_t c = 0; c < C; ++c) {
                              double p = std::exp(double(lv.data[size_t(c * sp + i)]) - m) / acc;
                              gl.data[size_t(c * sp + i)] +=
                                  T(go * (p - (c == int64_t(lab) ? 1.0 : 0.0)));
                          }
                      }
                  });
}

// InfoNCE over a (N,C) feature node. Ordered positive pairs share an id; the
// self term is excluded from each denominator; similarities are cosine scaled
// by 1/tau. Backward is hand-derived through the normalization.
template <typename T>
int info_nce_node(Graph<T>& g, int feats, const std::vector<int>& ids, T tau) {
    const auto& fs = g.val(feats).shape;
    if (fs.size() != 2) throw InputError("info_nce: expects (N,C)");
    if (!(tau > T(0))) throw InputError("info_nce: tau must be positive");
    const int64_t N = fs[0], C = fs[1];
    if (int64_t(ids.size()) != N) throw InputError("info_nce: ids size mismatch");
    if (N < 2) throw InputError("info_nce: need at least 2 vectors");

    const auto& fv = g.val(feats);
    std::vector<double> norm(size_t(N), 0.0);
    std::vector<double> zh(size_t(N * C), 0.0); // normalized rows
    for (int64_t i = 0; i < N; ++i) {
        double s = 0;
        for (int64_t c = 0; c < C; ++c) {
            double v = double(fv.data[size_t(i * C + c)]);
            s += v * v;
        }
        norm[size_t(i)] = std::sqrt(s);
        if (!(norm[size_t(i)] > 0)) throw InputError("info_nce: zero-norm feature vector");
        for (int64_t c = 0; c < C; ++c)
            zh[size_t(i * C + c)] = double(fv.data[size_t(i * C + c)]) / norm[size_t(i)];
    }
    // Similarity matrix (upper/lower both needed).
    std::vector<double> sim(size_t(N * N), 0.0);
    for (int64_t i = 0; i < N; ++i)
        for (int64_t k = 0; k < N; ++k) {
            if (i == k) continue;
            double d = 0;
            for (int64_t c = 0; c < C; ++c) d += zh[size_t(i * C + c)] * zh[size_t(k * C + c)];
            sim[size_t(i * N + k)] = d / double(tau);
        }
    // Per-anchor log-sum-exp over k != i.
    std::vector<double> lse(size_t(N), 0.0);
    for (int64_t i = 0; i < N; ++i) {
        double m = -1e300;
        for (int64_t k = 0; k < N; ++k)
            if (k != i) m = std::max(m, sim[size_t(i * N + k)]);
        double acc = 0;
        for (int64_t k = 0; k < N; ++k)
            if (k != i) acc += std::exp(sim[size_t(i * N + k)] - m);
        lse[size_t(i)] = m + std::log(acc);
    }
    int64_t pairs = 0;
    double loss = 0;
    for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < N; ++j) {
            if (i == j || ids[size_t(i)] != ids[size_t(j)]) continue;
            ++pairs;
            loss += -sim[size_t(i * N + j)] + lse[size_t(i)];
        }
    if (pairs == 0) throw InputError("info_nce: no positive pairs");
    loss /= double(pairs);

    Tensor<T> out({1});
    out.data[0] = T(loss);
    return g.emit(
        std::move(out), g.needs(feats),
        [feats, ids, tau, N, C, norm = std::move(norm), zh = std::move(zh),
         sim = std::move(sim), lse = std::move(lse), pairs](Graph<T>& gr, int self) {
            if (!gr.needs(feats)) return;
            const double go = double(gr.grad(self).data[0]);
            // dL/ds_ik for k != i.
            std::vector<double> ds(size_t(N * N), 0.0);
            std::vector<int64_t> npos(size_t(N), 0);
            for (int64_t i = 0; i < N; ++i)
                for (int64_t j = 0; j < N; ++j)
                    if (i != j && ids[size_t(i)] == ids[size_t(j)]) {
                        ds[size_t(i * N + j)] -= 1.0;
                        npos[size_t(i)]++;
                    }
            for (int64_t i = 0; i < N; ++i) {
                if (!npos[size_t(i)]) continue;
                for (int64_t k = 0; k < N; ++k)
                    if (k != i)
                        ds[size_t(i * N + k)] += double(npos[size_t(i)]) *
                                                 std::exp(sim[size_t(i * N + k)] - lse[size_t(i)]);
            }
            const double invp = 1.0 / double(pairs);
            // dL/dzh.
            std::vector<double> dzh(size_t(N * C), 0.0);
            for (int64_t i = 0; i < N; ++i)
                for (int64_t k = 0; k < N; ++k) {
                    if (i == k) continue;
                    double c = ds[size_t(i * N + k)] * invp / double(tau);
                    if (c == 0.0) continue;
                    for (int64_t cc = 0; cc < C; ++cc) {
                        dzh[size_t(i * C + cc)] += c * zh[size_t(k * C + cc)];
                        dzh[size_t(k * C + cc)] += c * zh[size_t(i * C + cc)];
                    }
                }
            // Through normalization: dz = (dzh - (dzh . zh) zh) / |z|.
            auto& gf = gr.grad(feats);
            for (int64_t i = 0; i < N; ++i) {
                double dot = 0;
                for (int64_t c = 0; c < C; ++c) dot += dzh[size_t(i * C + c)] * zh[size_t(i * C + c)];
                for (int64_t c = 0; c < C; ++c)
                    gf.data[size_t(i * C + c)] +=
                        T(go * (dzh[size_t(i * C + c)] - dot * zh[size_t(i * C + c)]) /
                          norm[size_t(i)]);
            }
        });
}

} // namespace sgwb
