#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "outsampler/adam.hpp"
#include "outsampler/mlp.hpp"
#include "outsampler/rng.hpp"
#include "outsampler/tape.hpp"

namespace outsampler {

/// Velocity field of a neural ODE; input is (x, sin 2*pi*t, cos 2*pi*t).
struct VelocityField {
    MlpParams net;
    int n_euler = 45;

    int data_dim() const { return net.output_dim(); }
};

enum class PriorKind { affine, swiss_roll, mlp_generator, vae_decoder, cnf };

inline const char* to_string(PriorKind k) {
    switch (k) {
        case PriorKind::affine: return "affine";
        case PriorKind::swiss_roll: return "swiss_roll";
        case PriorKind::mlp_generator: return "mlp_generator";
        case PriorKind::vae_decoder: return "vae_decoder";
        case PriorKind::cnf: return "cnf";
    }
    return "?";
}

namespace detail {

inline Vec time_embedding(double t) {
    const double w = 6.283185307179586476925287 * t;
    return {std::sin(w), std::cos(w)};
}

}  // namespace detail

/// x = swiss_roll_map(z): u = Phi(z1), theta = 1.5*pi*(1+2u),
/// rho = theta/(4.5*pi) + 0.03*z2, x = rho*(cos theta, sin theta).
inline Vec swiss_roll_map(const Vec& z) {
    if (z.size() != 2) throw std::invalid_argument("swiss_roll_map: z must be 2D");
    constexpr double pi = 3.14159265358979323846;
    const double u = normal_cdf(z[0]);
    const double theta = 1.5 * pi * (1.0 + 2.0 * u);
    const double rho = theta / (4.5 * pi) + 0.03 * z[1];
    return {rho * std::cos(theta), rho * std::sin(theta)};
}

inline Tape::NodeId swiss_roll_map(Tape& t, Tape::NodeId z) {
    if (t.dim(z) != 2) throw std::invalid_argument("swiss_roll_map(tape): z must be 2D");
    constexpr double pi = 3.14159265358979323846;
    Tape::NodeId z1 = op::slice(t, z, 0, 1);
    Tape::NodeId z2 = op::slice(t, z, 1, 1);
    Tape::NodeId u = op::norm_cdf(t, z1);
    // theta = 1.5*pi + 3*pi*u
    Tape::NodeId theta = op::add(t, t.leaf(Vec{1.5 * pi}), op::scale(t, u, 3.0 * pi));
    Tape::NodeId rho = op::add(t, op::scale(t, theta, 1.0 / (4.5 * pi)), op::scale(t, z2, 0.03));
    Tape::NodeId c = op::cos(t, theta);
    Tape::NodeId s = op::sin(t, theta);
    return op::concat(t, {op::mul(t, rho, c), op::mul(t, rho, s)});
}

/// Deterministic noise-to-data map f with declared dimensions. All kinds
/// shipped here are differentiable; has_exact_logdet holds only for affine.
struct PriorMap {
    PriorKind kind = PriorKind::affine;
    int d_noise = 0;
    int d_latent = 0;
    int d_data = 0;
    bool differentiable = true;
    bool has_exact_logdet = false;
    double logdet = 0.0;

    // affine
    Vec A;  // d_data x d_noise, row-major
    Vec b;
    // mlp_generator
    MlpParams gen;
    // vae_decoder
    MlpParams mu_net;
    MlpParams log_sigma_net;
    // cnf
    VelocityField vf;

    Vec apply(const Vec& z) const {
        if (static_cast<int>(z.size()) != d_noise)
            throw std::invalid_argument("PriorMap::apply: z dimension mismatch");
        switch (kind) {
            case PriorKind::affine: {
                Vec x(static_cast<std::size_t>(d_data));
                for (int i = 0; i < d_data; ++i) {
                    const double* row = A.data() + static_cast<std::size_t>(i) * d_noise;
                    double acc = b[static_cast<std::size_t>(i)];
                    for (int j = 0; j < d_noise; ++j) acc += row[j] * z[static_cast<std::size_t>(j)];
                    x[static_cast<std::size_t>(i)] = acc;
                }
                return x;
            }
            case PriorKind::swiss_roll:
                return swiss_roll_map(z);
            case PriorKind::mlp_generator:
                return mlp_forward(gen, z);
            case PriorKind::vae_decoder: {
                Vec w(z.begin(), z.begin() + d_latent);
                Vec xi(z.begin() + d_latent, z.end());
                Vec mu = mlp_forward(mu_net, w);
                const double sigma = std::exp(mlp_forward(log_sigma_net, w)[0]);
                for (int i = 0; i < d_data; ++i)
                    mu[static_cast<std::size_t>(i)] += sigma * xi[static_cast<std::size_t>(i)];
                return mu;
            }
            case PriorKind::cnf: {
                Vec x = z;
                const int n = vf.n_euler;
                const double h = 1.0 / n;
                for (int k = 0; k < n; ++k) {
                    Vec in = x;
                    const Vec emb = detail::time_embedding(k * h);
                    in.insert(in.end(), emb.begin(), emb.end());
                    const Vec v = mlp_forward(vf.net, in);
                    for (int i = 0; i < d_data; ++i)
                        x[static_cast<std::size_t>(i)] += h * v[static_cast<std::size_t>(i)];
                    if (!all_finite(x))
                        throw std::runtime_error("cnf prior: non-finite state during integration");
                }
                return x;
            }
        }
        throw std::logic_error("PriorMap::apply: unknown kind");
    }

    Tape::NodeId apply(Tape& t, Tape::NodeId z) const {
        if (!differentiable) throw std::invalid_argument("PriorMap: not differentiable");
        if (t.dim(z) != d_noise)
            throw std::invalid_argument("PriorMap::apply(tape): z dimension mismatch");
        switch (kind) {
            case PriorKind::affine:
                return op::add(t, op::matvec(t, t.leaf(A), z, d_data, d_noise), t.leaf(b));
            case PriorKind::swiss_roll:
                return swiss_roll_map(t, z);
            case PriorKind::mlp_generator: {
                MlpNodes n = stage_params(t, gen);
                return mlp_forward(t, gen, n, z);
            }
            case PriorKind::vae_decoder: {
                Tape::NodeId w = op::slice(t, z, 0, d_latent);
                Tape::NodeId xi = op::slice(t, z, d_latent, d_data);
                MlpNodes mn = stage_params(t, mu_net);
                Tape::NodeId mu = mlp_forward(t, mu_net, mn, w);
                MlpNodes sn = stage_params(t, log_sigma_net);
                Tape::NodeId sigma = op::exp(t, mlp_forward(t, log_sigma_net, sn, w));
                return op::add(t, mu, op::scalar_mul(t, sigma, xi));
            }
            case PriorKind::cnf: {
                MlpNodes n = stage_params(t, vf.net);
                Tape::NodeId x = z;
                const int steps = vf.n_euler;
                const double h = 1.0 / steps;
                for (int k = 0; k < steps; ++k) {
                    Tape::NodeId in = op::concat(t, {x, t.leaf(detail::time_embedding(k * h))});
                    Tape::NodeId v = mlp_forward(t, vf.net, n, in);
                    x = op::add_scaled(t, x, v, h);
                    if (!all_finite(t.value(x)))
                        throw std::runtime_error("cnf prior: non-finite state during integration");
                }
                return x;
            }
        }
        throw std::logic_error("PriorMap::apply(tape): unknown kind");
    }
};

/// f(z) = A z + b with exact log|det A|, via LU with partial pivoting.
inline PriorMap affine_prior(const Vec& A, const Vec& b) {
    const int d = static_cast<int>(b.size());
    if (static_cast<int>(A.size()) != d * d)
        throw std::invalid_argument("affine_prior: A must be square d x d");
    // LU factorization for log|det|
    Vec lu = A;
    double logdet = 0.0;
    for (int k = 0; k < d; ++k) {
        int piv = k;
        double best = std::abs(lu[static_cast<std::size_t>(k) * d + k]);
        for (int i = k + 1; i < d; ++i) {
            const double a = std::abs(lu[static_cast<std::size_t>(i) * d + k]);
            if (a > best) { best = a; piv = i; }
        }
        if (best < 1e-12) throw std::invalid_argument("affine_prior: singular A");
        if (piv != k)
            for (int j = 0; j < d; ++j)
                std::swap(lu[static_cast<std::size_t>(k) * d + j], lu[static_cast<std::size_t>(piv) * d + j]);
        logdet += std::log(std::abs(lu[static_cast<std::size_t>(k) * d + k]));
        for (int i = k + 1; i < d; ++i) {
            const double f = lu[static_cast<std::size_t>(i) * d + k] / lu[static_cast<std::size_t>(k) * d + k];
            for (int j = k; j < d; ++j)
                lu[static_cast<std::size_t>(i) * d + j] -= f * lu[static_cast<std::size_t>(k) * d + j];
        }
    }
    PriorMap p;
    p.kind = PriorKind::affine;
    p.d_noise = p.d_latent = p.d_data = d;
    p.has_exact_logdet = true;
    p.logdet = logdet;
    p.A = A;
    p.b = b;
    return p;
}

inline PriorMap swiss_roll_prior() {
    PriorMap p;
    p.kind = PriorKind::swiss_roll;
    p.d_noise = p.d_latent = p.d_data = 2;
    return p;
}

inline PriorMap mlp_generator_prior(MlpParams params) {
    params.validate();
    PriorMap p;
    p.kind = PriorKind::mlp_generator;
    p.d_noise = p.d_latent = params.input_dim();
    p.d_data = params.output_dim();
    p.gen = std::move(params);
    return p;
}

/// f(w, xi) = mu(w) + exp(log_sigma(w)) * xi, z = (w, xi).
inline PriorMap vae_decoder_prior(MlpParams mu_net, MlpParams log_sigma_net) {
    mu_net.validate();
    log_sigma_net.validate();
    if (log_sigma_net.output_dim() != 1)
        throw std::invalid_argument("vae_decoder_prior: log_sigma_net must output a scalar");
    if (log_sigma_net.input_dim() != mu_net.input_dim())
        throw std::invalid_argument("vae_decoder_prior: net input dims differ");
    PriorMap p;
    p.kind = PriorKind::vae_decoder;
    p.d_latent = mu_net.input_dim();
    p.d_data = mu_net.output_dim();
    p.d_noise = p.d_latent + p.d_data;
    p.mu_net = std::move(mu_net);
    p.log_sigma_net = std::move(log_sigma_net);
    return p;
}

inline PriorMap cnf_prior(VelocityField vf) {
    vf.net.validate();
    if (vf.n_euler < 1) throw std::invalid_argument("cnf_prior: n_euler must be >= 1");
    if (vf.net.input_dim() != vf.net.output_dim() + 2)
        throw std::invalid_argument("cnf_prior: velocity net must map (x, t-embed) -> velocity");
    PriorMap p;
    p.kind = PriorKind::cnf;
    p.d_noise = p.d_latent = p.d_data = vf.net.output_dim();
    p.vf = std::move(vf);
    return p;
}

// ---- toy datasets -----------------------------------------------------

enum class ToyDataset { two_moons, swiss_roll_2d, eight_gaussians };

struct ToyDatasetSpec {
    ToyDataset name = ToyDataset::two_moons;
    double noise_scale = 0.05;
    int count = 10000;
};

inline Vec sample_eight_gaussians(RngStream& rng) {
    constexpr double pi = 3.14159265358979323846;
    const int k = static_cast<int>(rng.uniform() * 8.0) % 8;
    const double a = 2.0 * pi * k / 8.0;
    return {2.0 * std::cos(a) + 0.1 * rng.normal(), 2.0 * std::sin(a) + 0.1 * rng.normal()};
}

inline std::vector<Vec> generate_toy_data(const ToyDatasetSpec& spec, RngStream& rng) {
    if (spec.noise_scale < 0.0) throw std::invalid_argument("generate_toy_data: noise_scale < 0");
    constexpr double pi = 3.14159265358979323846;
    std::vector<Vec> out;
    out.reserve(static_cast<std::size_t>(spec.count));
    for (int i = 0; i < spec.count; ++i) {
        switch (spec.name) {
            case ToyDataset::two_moons: {
                const double t = pi * rng.uniform();
                const bool upper = rng.uniform() < 0.5;
                Vec x = upper ? Vec{std::cos(t), std::sin(t)}
                              : Vec{1.0 - std::cos(t), 0.5 - std::sin(t)};
                x[0] += spec.noise_scale * rng.normal();
                x[1] += spec.noise_scale * rng.normal();
                out.push_back(std::move(x));
                break;
            }
            case ToyDataset::swiss_roll_2d:
                out.push_back(swiss_roll_map({rng.normal(), rng.normal()}));
                break;
            case ToyDataset::eight_gaussians:
                out.push_back(sample_eight_gaussians(rng));
                break;
        }
    }
    return out;
}

// ---- flow-matching training -------------------------------------------

enum class FlowSource { gaussian, eight_gaussians };

struct IcfmConfig {
    std::vector<int> hidden = {64, 64};
    int n_euler = 45;
    int steps = 20000;
    int batch = 64;
    double lr = 1e-3;
    std::uint64_t seed = 0;
};

/// Independent-coupling flow matching: minimize E||v(x_t, t) - (x1 - x0)||^2
/// with x_t = (1-t) x0 + t x1, x0 ~ source, x1 ~ data, t ~ U(0,1).
inline VelocityField train_icfm(const std::vector<Vec>& data, FlowSource source,
                                const IcfmConfig& cfg) {
    if (data.empty()) throw std::invalid_argument("train_icfm: empty dataset");
    const int d = static_cast<int>(data.front().size());
    RngStream init_rng(cfg.seed, 1000);
    VelocityField vf;
    vf.n_euler = cfg.n_euler;
    vf.net = make_mlp(d + 2, cfg.hidden, d, Activation::tanh, init_rng);

    Vec flat = flatten(vf.net);
    AdamState adam(flat.size(), AdamConfig{cfg.lr});
    RngStream rng(cfg.seed, 1001);
    for (int step = 0; step < cfg.steps; ++step) {
        Tape t;
        MlpNodes nodes = stage_params(t, vf.net);
        std::vector<Tape::NodeId> losses;
        for (int bi = 0; bi < cfg.batch; ++bi) {
            Vec x0(static_cast<std::size_t>(d));
            if (source == FlowSource::gaussian) {
                for (double& v : x0) v = rng.normal();
            } else {
                x0 = sample_eight_gaussians(rng);
            }
            const Vec& x1 = data[static_cast<std::size_t>(rng.uniform() * data.size()) % data.size()];
            const double tt = rng.uniform();
            Vec xt(static_cast<std::size_t>(d)), target(static_cast<std::size_t>(d));
            for (int i = 0; i < d; ++i) {
                xt[static_cast<std::size_t>(i)] = (1.0 - tt) * x0[static_cast<std::size_t>(i)] + tt * x1[static_cast<std::size_t>(i)];
                target[static_cast<std::size_t>(i)] = x1[static_cast<std::size_t>(i)] - x0[static_cast<std::size_t>(i)];
            }
            Vec in = xt;
            const Vec emb = detail::time_embedding(tt);
            in.insert(in.end(), emb.begin(), emb.end());
            Tape::NodeId v = mlp_forward(t, vf.net, nodes, t.leaf(in));
            losses.push_back(op::sumsq(t, op::sub(t, v, t.leaf(target))));
        }
        Tape::NodeId loss = op::scale(t, op::sum(t, op::stack(t, losses)), 1.0 / cfg.batch);
        if (!std::isfinite(t.scalar(loss)))
            throw std::runtime_error("train_icfm: loss diverged (NaN)");
        t.backward(loss);
        Vec grads = collect_grads(t, nodes);
        adam_step(adam, flat, grads);
        unflatten(vf.net, flat);
    }
    return vf;
}

}  // namespace outsampler
