#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "outsampler/constraints.hpp"
#include "outsampler/priors.hpp"
#include "outsampler/tape.hpp"

namespace outsampler {

/// The pulled-back posterior in noise space:
/// log R(z | y) = log N(z; 0, I) + beta * log r(f(z), y).
struct OutsourcedTarget {
    PriorMap prior;
    Constraint constraint;
    TemperatureSchedule temperature;
    std::string condition_tag;

    bool differentiable() const { return prior.differentiable && constraint.differentiable; }

    double log_R(const Vec& z, double beta) const {
        if (static_cast<int>(z.size()) != prior.d_noise)
            throw std::invalid_argument("log_R: z dimension mismatch");
        if (!all_finite(z)) throw std::invalid_argument("log_R: non-finite z");
        Vec x;
        try {
            x = prior.apply(z);
        } catch (const std::exception& e) {
            throw std::runtime_error(std::string("log_R: prior evaluation failed: ") + e.what());
        }
        if (!all_finite(x)) throw std::runtime_error("log_R: non-finite prior output");
        const double lr = constraint.log_r(x);
        if (!std::isfinite(lr)) throw std::runtime_error("log_R: non-finite constraint value");
        return gaussian_logpdf_std(z) + beta * lr;
    }

    double log_R(const Vec& z) const { return log_R(z, temperature.beta_final); }

    /// Exact reverse-mode gradient of log_R. Requires both components
    /// differentiable; gradient-free callers must use log_R only.
    Vec grad_log_R(const Vec& z, double beta) const {
        if (!differentiable())
            throw std::invalid_argument("grad_log_R: target component not differentiable");
        Tape t;
        Tape::NodeId zn = t.leaf(z);
        Tape::NodeId x = prior.apply(t, zn);
        Tape::NodeId lr = constraint.log_r(t, x);
        // log p(z) contributes -z to the gradient; add it analytically.
        t.backward(lr);
        Vec g = t.grad(zn);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = beta * g[i] - z[i];
        return g;
    }

    Vec grad_log_R(const Vec& z) const { return grad_log_R(z, temperature.beta_final); }

    std::vector<Vec> pushforward_samples(const std::vector<Vec>& latent) const {
        std::vector<Vec> out;
        out.reserve(latent.size());
        for (const auto& z : latent) out.push_back(prior.apply(z));
        return out;
    }
};

inline OutsourcedTarget make_target(PriorMap prior, Constraint constraint,
                                    TemperatureSchedule temp = {}, std::string tag = "y") {
    OutsourcedTarget t;
    t.prior = std::move(prior);
    t.constraint = std::move(constraint);
    t.temperature = temp;
    t.condition_tag = std::move(tag);
    return t;
}

}  // namespace outsampler
