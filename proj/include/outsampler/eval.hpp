#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "outsampler/mlp.hpp"
#include "outsampler/rng.hpp"
#include "outsampler/tape.hpp"
#include "outsampler/target.hpp"

namespace outsampler {

/// Self-normalized importance sampling from the prior noise distribution.
struct OracleEstimate {
    double log_Z_hat = 0.0;
    std::vector<Vec> z;
    std::vector<Vec> x;
    Vec weights;  // normalized, sum to 1
    double ess = 0.0;
};

/// z_i ~ N(0,I); w_i = exp(beta * log r(f(z_i))); log_Z_hat = logsumexp - log N.
inline OracleEstimate is_oracle(const OutsourcedTarget& target, int N, RngStream& rng) {
    if (N < 1) throw std::invalid_argument("is_oracle: N must be >= 1");
    OracleEstimate est;
    est.z.reserve(static_cast<std::size_t>(N));
    est.x.reserve(static_cast<std::size_t>(N));
    Vec logw(static_cast<std::size_t>(N));
    const double beta = target.temperature.beta_final;
    for (int i = 0; i < N; ++i) {
        Vec z = rng.normal_vec(target.prior.d_noise);
        Vec x = target.prior.apply(z);
        logw[static_cast<std::size_t>(i)] = beta * target.constraint.log_r(x);
        est.z.push_back(std::move(z));
        est.x.push_back(std::move(x));
    }
    const double lse = logsumexp(logw);
    if (!std::isfinite(lse)) throw std::runtime_error("is_oracle: all weights zero (degenerate constraint)");
    est.log_Z_hat = lse - std::log(static_cast<double>(N));
    est.weights.resize(logw.size());
    double sum_sq = 0.0;
    for (std::size_t i = 0; i < logw.size(); ++i) {
        est.weights[i] = std::exp(logw[i] - lse);
        sum_sq += est.weights[i] * est.weights[i];
    }
    est.ess = 1.0 / sum_sq;
    return est;
}

/// Systematic resampling of normalized weights; lower variance than
/// multinomial. Returns n indices.
inline std::vector<std::size_t> systematic_resample(const Vec& weights, int n, RngStream& rng) {
    std::vector<std::size_t> idx;
    idx.reserve(static_cast<std::size_t>(n));
    const double u0 = rng.uniform() / n;
    double cum = weights[0];
    std::size_t j = 0;
    for (int i = 0; i < n; ++i) {
        const double u = u0 + static_cast<double>(i) / n;
        while (cum < u && j + 1 < weights.size()) cum += weights[++j];
        idx.push_back(j);
    }
    return idx;
}

struct Grid2d {
    double x_min = -1, x_max = 1, y_min = -1, y_max = 1;
    int bins_x = 50, bins_y = 50;

    void validate() const {
        if (bins_x < 2 || bins_y < 2) throw std::invalid_argument("Grid2d: bins must be >= 2");
        if (!(x_min < x_max) || !(y_min < y_max))
            throw std::invalid_argument("Grid2d: bounds must be finite with min < max");
    }

    /// Cell index; the final slot is the out-of-bounds sentinel.
    int cell(const Vec& p) const {
        const int ix = static_cast<int>((p[0] - x_min) / (x_max - x_min) * bins_x);
        const int iy = static_cast<int>((p[1] - y_min) / (y_max - y_min) * bins_y);
        if (ix < 0 || ix >= bins_x || iy < 0 || iy >= bins_y) return bins_x * bins_y;
        return ix * bins_y + iy;
    }

    int num_cells() const { return bins_x * bins_y + 1; }
};

/// Grid with bounds = data cloud min/max +- 10%.
inline Grid2d fit_grid(const std::vector<Vec>& pts, int bins = 50) {
    if (pts.empty()) throw std::invalid_argument("fit_grid: empty input");
    Grid2d g;
    g.bins_x = g.bins_y = bins;
    g.x_min = g.x_max = pts[0][0];
    g.y_min = g.y_max = pts[0][1];
    for (const auto& p : pts) {
        g.x_min = std::min(g.x_min, p[0]);
        g.x_max = std::max(g.x_max, p[0]);
        g.y_min = std::min(g.y_min, p[1]);
        g.y_max = std::max(g.y_max, p[1]);
    }
    const double mx = 0.1 * (g.x_max - g.x_min), my = 0.1 * (g.y_max - g.y_min);
    g.x_min -= mx;
    g.x_max += mx;
    g.y_min -= my;
    g.y_max += my;
    return g;
}

inline Vec weighted_histogram(const std::vector<Vec>& pts, const Vec& weights, const Grid2d& grid) {
    grid.validate();
    if (pts.empty()) throw std::invalid_argument("weighted_histogram: empty input");
    Vec h(static_cast<std::size_t>(grid.num_cells()), 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const double w = weights.empty() ? 1.0 : weights[i];
        h[static_cast<std::size_t>(grid.cell(pts[i]))] += w;
        total += w;
    }
    for (double& v : h) v /= total;
    return h;
}

/// TV = 0.5 * sum_cells |p_a - p_b| over normalized weighted histograms.
inline double weighted_histogram_tv(const std::vector<Vec>& a, const Vec& wa,
                                    const std::vector<Vec>& b, const Vec& wb,
                                    const Grid2d& grid) {
    const Vec ha = weighted_histogram(a, wa, grid);
    const Vec hb = weighted_histogram(b, wb, grid);
    double tv = 0.0;
    for (std::size_t i = 0; i < ha.size(); ++i) tv += std::abs(ha[i] - hb[i]);
    return 0.5 * tv;
}

/// 1D weighted-histogram TV against analytic per-bin probabilities.
inline double histogram_tv_1d(const Vec& samples, const Vec& weights, double lo, double hi,
                              int bins, const std::function<double(double, double)>& bin_prob) {
    if (samples.empty()) throw std::invalid_argument("histogram_tv_1d: empty input");
    Vec h(static_cast<std::size_t>(bins) + 1, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double w = weights.empty() ? 1.0 : weights[i];
        int k = static_cast<int>((samples[i] - lo) / (hi - lo) * bins);
        if (k < 0 || k >= bins) k = bins;
        h[static_cast<std::size_t>(k)] += w;
        total += w;
    }
    double tv = 0.0;
    double analytic_in = 0.0;
    for (int k = 0; k < bins; ++k) {
        const double a = lo + (hi - lo) * k / bins;
        const double b = lo + (hi - lo) * (k + 1) / bins;
        const double p = bin_prob(a, b);
        analytic_in += p;
        tv += std::abs(h[static_cast<std::size_t>(k)] / total - p);
    }
    tv += std::abs(h[static_cast<std::size_t>(bins)] / total - (1.0 - analytic_in));
    return 0.5 * tv;
}

inline double mean_log_reward(const std::vector<Vec>& samples, const Constraint& c,
                              double beta = 1.0) {
    if (samples.empty()) throw std::invalid_argument("mean_log_reward: empty input");
    double acc = 0.0;
    for (const auto& x : samples) acc += beta * c.log_r(x);
    return acc / static_cast<double>(samples.size());
}

/// Mean pairwise Euclidean distance over up to max_pairs random pairs.
inline double pairwise_diversity(const std::vector<Vec>& samples, int max_pairs, RngStream& rng) {
    if (samples.size() < 2) throw std::invalid_argument("pairwise_diversity: need >= 2 samples");
    double acc = 0.0;
    int n = 0;
    const std::size_t N = samples.size();
    for (int p = 0; p < max_pairs; ++p) {
        const std::size_t i = static_cast<std::size_t>(rng.uniform() * N) % N;
        std::size_t j = static_cast<std::size_t>(rng.uniform() * N) % N;
        if (i == j) continue;
        double d2 = 0.0;
        for (std::size_t k = 0; k < samples[i].size(); ++k) {
            const double d = samples[i][k] - samples[j][k];
            d2 += d * d;
        }
        acc += std::sqrt(d2);
        ++n;
    }
    return n ? acc / n : 0.0;
}

/// Fraction of (weighted) mass within radius of each center; index K holds
/// the unassigned remainder.
inline Vec mode_weights(const std::vector<Vec>& samples, const Vec& sample_weights,
                        const std::vector<Vec>& centers, double radius) {
    if (centers.empty() || radius <= 0.0) throw std::invalid_argument("mode_weights: bad arguments");
    Vec out(centers.size() + 1, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double w = sample_weights.empty() ? 1.0 : sample_weights[i];
        total += w;
        bool assigned = false;
        for (std::size_t k = 0; k < centers.size(); ++k) {
            double d2 = 0.0;
            for (std::size_t j = 0; j < centers[k].size(); ++j) {
                const double d = samples[i][j] - centers[k][j];
                d2 += d * d;
            }
            if (d2 <= radius * radius) {
                out[k] += w;
                assigned = true;
                break;
            }
        }
        if (!assigned) out[centers.size()] += w;
    }
    for (double& v : out) v /= total;
    return out;
}

/// Energy-distance statistic 2 E|X-Y| - E|X-X'| - E|Y-Y'|, estimated on up to
/// max_pairs pairs per term. Nonnegative in expectation; 0 iff same law.
inline double energy_distance(const std::vector<Vec>& a, const std::vector<Vec>& b,
                              int max_pairs, RngStream& rng) {
    if (a.empty() || b.empty()) throw std::invalid_argument("energy_distance: empty input");
    auto mean_dist = [&](const std::vector<Vec>& u, const std::vector<Vec>& v) {
        double acc = 0.0;
        int n = 0;
        for (int p = 0; p < max_pairs; ++p) {
            const std::size_t i = static_cast<std::size_t>(rng.uniform() * u.size()) % u.size();
            const std::size_t j = static_cast<std::size_t>(rng.uniform() * v.size()) % v.size();
            if (&u == &v && i == j) continue;
            double d2 = 0.0;
            for (std::size_t k = 0; k < u[i].size(); ++k) {
                const double d = u[i][k] - v[j][k];
                d2 += d * d;
            }
            acc += std::sqrt(d2);
            ++n;
        }
        return n ? acc / n : 0.0;
    };
    return 2.0 * mean_dist(a, b) - mean_dist(a, a) - mean_dist(b, b);
}

// ---- RTB equivalence check ---------------------------------------------

/// Setup for the executable check that the fine-tuning objective written on
/// data-space trajectories coincides with the TB objective of an
/// autoregressive sampler of the injected noises.
struct RtbCheckSetup {
    MlpParams prior_drift;      // mu_theta(x, t-embed)
    MlpParams posterior_drift;  // mu_phi_post(x, t-embed)
    int T = 10;
    double dt = 0.1;
    Vec sigma;                  // per-step sigma_i, i = 1..T
    std::function<double(const Vec&)> log_r;
    int trajectories = 100;
    double log_Z = 0.0;
    std::uint64_t seed = 0;
};

/// Max over trajectories of |A - B| / (|A| + |B| + 1e-12), where A is the
/// squared log-ratio over data-space transitions and B the same loss
/// rewritten in terms of the prior's injected noises.
inline double rtb_equivalence_check(const RtbCheckSetup& setup, RngStream& rng) {
    if (setup.prior_drift.input_dim() != setup.posterior_drift.input_dim() ||
        setup.prior_drift.output_dim() != setup.posterior_drift.output_dim())
        throw std::invalid_argument("rtb_equivalence_check: incompatible net dims");
    if (static_cast<int>(setup.sigma.size()) != setup.T)
        throw std::invalid_argument("rtb_equivalence_check: sigma size != T");
    const int d = setup.prior_drift.output_dim();
    const double sdt = std::sqrt(setup.dt);

    auto drift_in = [&](const Vec& x, double t) {
        Vec in = x;
        const Vec emb = detail::time_embedding(t);
        in.insert(in.end(), emb.begin(), emb.end());
        return in;
    };

    double worst = 0.0;
    for (int m = 0; m < setup.trajectories; ++m) {
        // trajectory generated by the posterior policy
        std::vector<Vec> x(static_cast<std::size_t>(setup.T) + 1);
        x[0] = rng.normal_vec(d);
        for (int i = 1; i <= setup.T; ++i) {
            const double t = (i - 1) * setup.dt;
            const Vec mu = mlp_forward(setup.posterior_drift, drift_in(x[static_cast<std::size_t>(i - 1)], t));
            Vec xi = rng.normal_vec(d);
            Vec next = x[static_cast<std::size_t>(i - 1)];
            const double s = setup.sigma[static_cast<std::size_t>(i - 1)];
            for (int j = 0; j < d; ++j)
                next[static_cast<std::size_t>(j)] += mu[static_cast<std::size_t>(j)] * setup.dt + s * sdt * xi[static_cast<std::size_t>(j)];
            x[static_cast<std::size_t>(i)] = std::move(next);
        }
        const double lr = setup.log_r(x.back());

        // (A) squared log-ratio over data-space Gaussian transitions
        double ratio_sum = 0.0;
        for (int i = 1; i <= setup.T; ++i) {
            const double t = (i - 1) * setup.dt;
            const Vec& prev = x[static_cast<std::size_t>(i - 1)];
            const Vec mu_post = mlp_forward(setup.posterior_drift, drift_in(prev, t));
            const Vec mu_prior = mlp_forward(setup.prior_drift, drift_in(prev, t));
            const double var = setup.sigma[static_cast<std::size_t>(i - 1)] *
                               setup.sigma[static_cast<std::size_t>(i - 1)] * setup.dt;
            Vec mean_post = prev, mean_prior = prev;
            for (int j = 0; j < d; ++j) {
                mean_post[static_cast<std::size_t>(j)] += mu_post[static_cast<std::size_t>(j)] * setup.dt;
                mean_prior[static_cast<std::size_t>(j)] += mu_prior[static_cast<std::size_t>(j)] * setup.dt;
            }
            ratio_sum += gaussian_logpdf(x[static_cast<std::size_t>(i)], mean_post, var) -
                         gaussian_logpdf(x[static_cast<std::size_t>(i)], mean_prior, var);
        }
        const double resid_a = setup.log_Z - lr + ratio_sum;
        const double a = resid_a * resid_a;

        // (B) the same loss in terms of the prior's injected noises
        // xi_i = (x_i - x_{i-1} - mu_theta dt) / (sigma_i sqrt(dt))
        double num = setup.log_Z + gaussian_logpdf_std(x[0]);
        double den = lr + gaussian_logpdf_std(x[0]);
        for (int i = 1; i <= setup.T; ++i) {
            const double t = (i - 1) * setup.dt;
            const Vec& prev = x[static_cast<std::size_t>(i - 1)];
            const Vec mu_post = mlp_forward(setup.posterior_drift, drift_in(prev, t));
            const Vec mu_prior = mlp_forward(setup.prior_drift, drift_in(prev, t));
            const double s = setup.sigma[static_cast<std::size_t>(i - 1)];
            Vec xi(static_cast<std::size_t>(d)), mu_out(static_cast<std::size_t>(d));
            for (int j = 0; j < d; ++j) {
                xi[static_cast<std::size_t>(j)] =
                    (x[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] -
                     prev[static_cast<std::size_t>(j)] - mu_prior[static_cast<std::size_t>(j)] * setup.dt) /
                    (s * sdt);
                mu_out[static_cast<std::size_t>(j)] =
                    (mu_post[static_cast<std::size_t>(j)] - mu_prior[static_cast<std::size_t>(j)]) * sdt / s;
            }
            num += gaussian_logpdf(xi, mu_out, 1.0);
            den += gaussian_logpdf_std(xi);
        }
        const double resid_b = num - den;
        const double b = resid_b * resid_b;

        const double rel = std::abs(a - b) / (std::abs(a) + std::abs(b) + 1e-12);
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace outsampler
