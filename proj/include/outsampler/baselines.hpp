#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "outsampler/rng.hpp"
#include "outsampler/tape.hpp"
#include "outsampler/target.hpp"

namespace outsampler {

struct HmcConfig {
    double step_size = 1e-2;
    int leapfrog_steps = 5;
    int burn_in = 100;
    int thinning = 1;
    int chain_length = 1000;
    int chains = 1;
    std::uint64_t seed = 0;

    void validate() const {
        if (step_size <= 0.0) throw std::invalid_argument("HmcConfig: step_size <= 0");
        if (leapfrog_steps < 1) throw std::invalid_argument("HmcConfig: leapfrog_steps < 1");
        if (burn_in < 0 || chain_length < 1 || chains < 1 || thinning < 1)
            throw std::invalid_argument("HmcConfig: invalid chain settings");
    }
};

struct RwConfig {
    double proposal_std = 0.01;
    int iterations = 1000;
    int chains = 32;
    std::vector<int> collect_at = {900, 1000};
    std::uint64_t seed = 0;

    void validate() const {
        if (proposal_std <= 0.0) throw std::invalid_argument("RwConfig: proposal_std <= 0");
        if (iterations < 1 || chains < 1) throw std::invalid_argument("RwConfig: invalid chain settings");
        for (int c : collect_at)
            if (c < 1 || c > iterations) throw std::invalid_argument("RwConfig: collect_at out of range");
    }
};

struct McmcDiagnostics {
    double acceptance_rate = 0.0;
    Vec per_chain_mean_log_R;
};

struct McmcResult {
    std::vector<Vec> samples;
    McmcDiagnostics diagnostics;
};

using GradFn = std::function<Vec(const Vec&)>;

/// min(1, e^delta) for a symmetric proposal with log-density gain delta.
inline double metropolis_acceptance(double delta) {
    return delta >= 0.0 ? 1.0 : std::exp(delta);
}

/// Velocity-Verlet leapfrog with unit mass. grad is the gradient of the
/// potential U (so momentum updates subtract eps*grad). Time-reversible.
inline std::pair<Vec, Vec> leapfrog(Vec z, Vec momentum, double eps, int L, const GradFn& grad_U) {
    if (!all_finite(z) || !all_finite(momentum))
        throw std::invalid_argument("leapfrog: non-finite input");
    Vec g = grad_U(z);
    if (!all_finite(g)) throw std::runtime_error("leapfrog: non-finite gradient");
    for (std::size_t j = 0; j < z.size(); ++j) momentum[j] -= 0.5 * eps * g[j];
    for (int step = 0; step < L; ++step) {
        for (std::size_t j = 0; j < z.size(); ++j) z[j] += eps * momentum[j];
        g = grad_U(z);
        if (!all_finite(g)) throw std::runtime_error("leapfrog: non-finite gradient");
        const double scale = (step + 1 == L) ? 0.5 : 1.0;
        for (std::size_t j = 0; j < z.size(); ++j) momentum[j] -= scale * eps * g[j];
    }
    return {std::move(z), std::move(momentum)};
}

namespace detail {

inline Vec draw_finite_init(const OutsourcedTarget& target, RngStream& rng) {
    for (int attempt = 0; attempt < 100; ++attempt) {
        Vec z = rng.normal_vec(target.prior.d_noise);
        try {
            if (std::isfinite(target.log_R(z))) return z;
        } catch (const std::exception&) {
        }
    }
    throw std::runtime_error("mcmc: could not find finite initial state in 100 tries");
}

}  // namespace detail

/// HMC in noise space with potential U(z) = -log_R(z), unit mass matrix.
inline McmcResult hmc_sample(const OutsourcedTarget& target, const HmcConfig& cfg) {
    cfg.validate();
    if (!target.differentiable())
        throw std::invalid_argument("hmc_sample: target not differentiable (use rw_mcmc)");
    const GradFn grad_U = [&](const Vec& z) {
        Vec g = target.grad_log_R(z);
        for (double& v : g) v = -v;
        return g;
    };

    McmcResult res;
    long accepted = 0, proposed = 0;
    for (int chain = 0; chain < cfg.chains; ++chain) {
        RngStream rng(cfg.seed, 6000 + static_cast<std::uint64_t>(chain));
        Vec z = detail::draw_finite_init(target, rng);
        double logR = target.log_R(z);
        double chain_sum = 0.0;
        long chain_n = 0;
        const int total = cfg.burn_in + cfg.chain_length;
        for (int it = 0; it < total; ++it) {
            Vec p = rng.normal_vec(static_cast<int>(z.size()));
            double k0 = 0.0;
            for (double v : p) k0 += 0.5 * v * v;
            bool ok = true;
            Vec z_new;
            double logR_new = 0.0, k1 = 0.0;
            try {
                auto [zp, pp] = leapfrog(z, p, cfg.step_size, cfg.leapfrog_steps, grad_U);
                logR_new = target.log_R(zp);
                for (double v : pp) k1 += 0.5 * v * v;
                z_new = std::move(zp);
            } catch (const std::exception&) {
                ok = false;
            }
            ++proposed;
            if (ok) {
                const double dH = (-logR_new + k1) - (-logR + k0);
                if (rng.uniform() < metropolis_acceptance(-dH)) {
                    z = std::move(z_new);
                    logR = logR_new;
                    ++accepted;
                }
            }
            if (it >= cfg.burn_in && (it - cfg.burn_in) % cfg.thinning == 0) {
                res.samples.push_back(z);
                chain_sum += logR;
                ++chain_n;
            }
        }
        res.diagnostics.per_chain_mean_log_R.push_back(chain_n ? chain_sum / chain_n : 0.0);
    }
    res.diagnostics.acceptance_rate = proposed ? static_cast<double>(accepted) / proposed : 0.0;
    return res;
}

/// Symmetric Gaussian-proposal Metropolis in noise space; gradient-free.
/// Samples are collected across chains at the configured iterations.
inline McmcResult rw_mcmc(const OutsourcedTarget& target, const RwConfig& cfg) {
    cfg.validate();
    McmcResult res;
    long accepted = 0, proposed = 0;
    for (int chain = 0; chain < cfg.chains; ++chain) {
        RngStream rng(cfg.seed, 7000 + static_cast<std::uint64_t>(chain));
        Vec z = detail::draw_finite_init(target, rng);
        double logR = target.log_R(z);
        double chain_sum = 0.0;
        long chain_n = 0;
        for (int it = 1; it <= cfg.iterations; ++it) {
            Vec zp = z;
            for (double& v : zp) v += cfg.proposal_std * rng.normal();
            ++proposed;
            bool ok = true;
            double logR_new = 0.0;
            try {
                logR_new = target.log_R(zp);
            } catch (const std::exception&) {
                ok = false;
            }
            if (ok && rng.uniform() < metropolis_acceptance(logR_new - logR)) {
                z = std::move(zp);
                logR = logR_new;
                ++accepted;
            }
            chain_sum += logR;
            ++chain_n;
            for (int c : cfg.collect_at)
                if (it == c) res.samples.push_back(z);
        }
        res.diagnostics.per_chain_mean_log_R.push_back(chain_sum / chain_n);
    }
    res.diagnostics.acceptance_rate = proposed ? static_cast<double>(accepted) / proposed : 0.0;
    return res;
}

}  // namespace outsampler
