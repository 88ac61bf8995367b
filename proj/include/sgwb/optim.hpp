#pragma once

// Adam over a parameter store. Moments live in the store so checkpoints
// resume mid-run; the step counter lives here.

#include <cmath>
#include <cstdint>

#include "sgwb/nets.hpp"

namespace sgwb {

template <typename T>
struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int64_t t = 0;

    void step(ParamStore<T>& ps) {
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, double(t));
        const double bc2 = 1.0 - std::pow(beta2, double(t));
        for (auto& e : ps.entries) {
            for (size_t i = 0; i < e.value.data.size(); ++i) {
                const double g = double(e.grad.data[i]);
                e.m.data[i] = beta1 * e.m.data[i] + (1.0 - beta1) * g;
                e.v.data[i] = beta2 * e.v.data[i] + (1.0 - beta2) * g * g;
                const double mh = e.m.data[i] / bc1;
                const double vh = e.v.data[i] / bc2;
                e.value.data[i] -= T(lr * mh / (std::sqrt(vh) + eps));
            }
        }
    }
};

} // namespace sgwb
