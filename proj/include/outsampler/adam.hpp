#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "outsampler/tape.hpp"

namespace outsampler {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    Vec m, v;
    long step = 0;
    AdamConfig cfg;

    explicit AdamState(std::size_t n = 0, AdamConfig c = {})
        : m(n, 0.0), v(n, 0.0), cfg(c) {}
};

/// Standard Adam update with bias correction. Returns false (and leaves
/// params untouched, step not incremented) when the gradient contains a
/// non-finite entry.
inline bool adam_step(AdamState& st, Vec& params, const Vec& grads) {
    if (params.size() != st.m.size() || grads.size() != st.m.size())
        throw std::invalid_argument("adam_step: shape mismatch");
    if (!all_finite(grads)) return false;
    ++st.step;
    const double c1 = 1.0 - std::pow(st.cfg.beta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(st.cfg.beta2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        st.m[i] = st.cfg.beta1 * st.m[i] + (1.0 - st.cfg.beta1) * grads[i];
        st.v[i] = st.cfg.beta2 * st.v[i] + (1.0 - st.cfg.beta2) * grads[i] * grads[i];
        const double mhat = st.m[i] / c1;
        const double vhat = st.v[i] / c2;
        params[i] -= st.cfg.lr * mhat / (std::sqrt(vhat) + st.cfg.eps);
    }
    return true;
}

}  // namespace outsampler
