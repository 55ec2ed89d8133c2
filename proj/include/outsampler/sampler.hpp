#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <optional>
#include <stdexcept>
#include <vector>

#include "outsampler/adam.hpp"
#include "outsampler/mlp.hpp"
#include "outsampler/rng.hpp"
#include "outsampler/tape.hpp"
#include "outsampler/target.hpp"

namespace outsampler {

/// Discretized VP noising schedule. gamma_i plays the per-step noise rate;
/// the backward (noising) kernel at step i is
/// N(z_{i-1}; sqrt(1 - gamma_i dt) z_i, gamma_i dt I).
struct SdeSchedule {
    int T = 25;
    double dt = 1.0 / 25.0;
    Vec gamma;

    static SdeSchedule linear(int T, double gamma_start, double gamma_end) {
        if (T < 1) throw std::invalid_argument("SdeSchedule: T must be >= 1");
        SdeSchedule s;
        s.T = T;
        s.dt = 1.0 / T;
        s.gamma.resize(static_cast<std::size_t>(T));
        for (int i = 0; i < T; ++i) {
            const double f = T == 1 ? 0.0 : static_cast<double>(i) / (T - 1);
            s.gamma[static_cast<std::size_t>(i)] = gamma_start + (gamma_end - gamma_start) * f;
        }
        s.validate();
        return s;
    }

    double step_var(int i) const { return gamma[static_cast<std::size_t>(i - 1)] * dt; }
    double mean_factor(int i) const { return std::sqrt(1.0 - gamma[static_cast<std::size_t>(i - 1)] * dt); }

    /// Product of per-step VP mean factors; near 0 means the backward
    /// marginal at t=0 is close to N(0, I).
    double cumulative_mean_factor() const {
        double p = 1.0;
        for (int i = 1; i <= T; ++i) p *= mean_factor(i);
        return p;
    }

    void validate() const {
        if (static_cast<int>(gamma.size()) != T)
            throw std::invalid_argument("SdeSchedule: gamma size != T");
        for (double g : gamma) {
            if (g <= 0.0) throw std::invalid_argument("SdeSchedule: gamma must be positive");
            if (g * dt >= 1.0) throw std::invalid_argument("SdeSchedule: gamma*dt must be < 1");
        }
        if (cumulative_mean_factor() > 0.1)
            throw std::invalid_argument("SdeSchedule: cumulative mean factor exceeds 0.1");
    }
};

enum class TrajOrigin { on_policy, exploration, buffer };

struct Trajectory {
    std::vector<Vec> states;  // T+1 states z_0 .. z_1
    TrajOrigin origin = TrajOrigin::on_policy;
    double terminal_log_r = 0.0;  // cached for reward-proportional buffer draws only
};

struct SamplerState {
    MlpParams drift;  // (z, sin 2*pi*t, cos 2*pi*t) -> drift
    double log_Z = 0.0;
    AdamState adam_drift;
    AdamState adam_logz;
    long step = 0;

    int dim() const { return drift.output_dim(); }
};

inline SamplerState make_sampler_state(int d, const std::vector<int>& hidden, double lr_drift,
                                       double lr_logz, std::uint64_t seed) {
    SamplerState s;
    RngStream rng(seed, 2000);
    // zero-initialized last layer: the initial policy is the pure reference process
    s.drift = make_mlp(d + 2, hidden, d, Activation::tanh, rng, /*zero_last=*/true);
    s.adam_drift = AdamState(s.drift.num_params(), AdamConfig{lr_drift});
    s.adam_logz = AdamState(1, AdamConfig{lr_logz});
    return s;
}

/// FIFO replay buffer over trajectories.
class ReplayBuffer {
public:
    enum class Mode { uniform, mixed_reward };

    explicit ReplayBuffer(std::size_t capacity = 10000, Mode mode = Mode::uniform,
                          double reward_fraction = 0.25)
        : capacity_(capacity), mode_(mode), reward_fraction_(reward_fraction) {}

    void insert(Trajectory traj) {
        items_.push_back(std::move(traj));
        if (items_.size() > capacity_) items_.pop_front();
        ++insertions_;
    }

    std::size_t size() const { return items_.size(); }
    long insertions() const { return insertions_; }
    const Trajectory& at(std::size_t i) const { return items_[i]; }

    std::vector<const Trajectory*> sample(int n, RngStream& rng) const {
        std::vector<const Trajectory*> out;
        if (items_.empty()) return out;
        n = std::min<int>(n, static_cast<int>(items_.size()));
        int n_reward = mode_ == Mode::mixed_reward
                           ? static_cast<int>(std::lround(reward_fraction_ * n))
                           : 0;
        for (int i = 0; i < n - n_reward; ++i) {
            const std::size_t k = static_cast<std::size_t>(rng.uniform() * items_.size()) % items_.size();
            out.push_back(&items_[k]);
        }
        if (n_reward > 0) {
            // weights proportional to reward r = exp(log r), shifted for stability
            double mx = items_[0].terminal_log_r;
            for (const auto& it : items_) mx = std::max(mx, it.terminal_log_r);
            Vec w(items_.size());
            double total = 0.0;
            for (std::size_t i = 0; i < items_.size(); ++i) {
                w[i] = std::exp(items_[i].terminal_log_r - mx);
                total += w[i];
            }
            for (int i = 0; i < n_reward; ++i) {
                double u = rng.uniform() * total;
                std::size_t k = 0;
                while (k + 1 < items_.size() && u > w[k]) u -= w[k], ++k;
                out.push_back(&items_[k]);
            }
        }
        return out;
    }

private:
    std::size_t capacity_;
    Mode mode_;
    double reward_fraction_;
    std::deque<Trajectory> items_;
    long insertions_ = 0;
};

struct TrainConfig {
    int T = 25;
    double gamma_start = 12.0;  // noise rate at t=0 (noise end)
    double gamma_end = 0.1;    // noise rate at t=1 (data end)
    int batch = 64;
    double lr_drift = 1e-3;
    double lr_logz = 1e-1;
    long steps = 2000;
    double buffer_prob = 0.2;  // alpha
    double exploration_scale = 0.1;
    TemperatureSchedule temperature;
    std::size_t buffer_capacity = 10000;
    ReplayBuffer::Mode buffer_mode = ReplayBuffer::Mode::uniform;
    double buffer_reward_fraction = 0.25;
    std::vector<int> hidden = {128, 128, 128};
    std::uint64_t seed = 0;
    long metrics_every = 50;

    void validate() const {
        if (T < 1 || batch < 1 || steps < 0) throw std::invalid_argument("TrainConfig: non-positive size");
        if (buffer_prob < 0.0 || buffer_prob > 1.0)
            throw std::invalid_argument("TrainConfig: buffer_prob must be in [0,1]");
        if (exploration_scale < 0.0) throw std::invalid_argument("TrainConfig: exploration_scale < 0");
        if (lr_drift <= 0.0 || lr_logz <= 0.0) throw std::invalid_argument("TrainConfig: lr <= 0");
    }
};

inline Vec drift_input(const Vec& z, double t) {
    Vec in = z;
    const Vec emb = detail::time_embedding(t);
    in.insert(in.end(), emb.begin(), emb.end());
    return in;
}

/// Euler-Maruyama rollout of the forward policy:
/// z_i = z_{i-1} + u(z_{i-1}, t_{i-1}) dt + sqrt(gamma_i dt) (1+exploration) eps_i.
inline Trajectory simulate_forward(const SamplerState& state, const SdeSchedule& sched,
                                   RngStream& rng, double exploration_scale = 0.0) {
    if (exploration_scale < 0.0)
        throw std::invalid_argument("simulate_forward: exploration_scale < 0");
    const int d = state.dim();
    Trajectory traj;
    traj.origin = exploration_scale > 0.0 ? TrajOrigin::exploration : TrajOrigin::on_policy;
    traj.states.reserve(static_cast<std::size_t>(sched.T) + 1);
    Vec z = rng.normal_vec(d);
    traj.states.push_back(z);
    for (int i = 1; i <= sched.T; ++i) {
        const double t = (i - 1) * sched.dt;
        const Vec u = mlp_forward(state.drift, drift_input(z, t));
        const double sd = std::sqrt(sched.step_var(i)) * (1.0 + exploration_scale);
        for (int j = 0; j < d; ++j)
            z[static_cast<std::size_t>(j)] += u[static_cast<std::size_t>(j)] * sched.dt + sd * rng.normal();
        if (!all_finite(z)) throw std::runtime_error("simulate_forward: non-finite state");
        traj.states.push_back(z);
    }
    return traj;
}

/// log p_F(tau) = log p(z_0) + sum_i log N(z_i; z_{i-1} + u dt, gamma_i dt I),
/// always recomputed under the current parameters.
inline double log_pf(const SamplerState& state, const SdeSchedule& sched, const Trajectory& traj) {
    if (static_cast<int>(traj.states.size()) != sched.T + 1)
        throw std::invalid_argument("log_pf: trajectory/schedule mismatch");
    double acc = gaussian_logpdf_std(traj.states.front());
    for (int i = 1; i <= sched.T; ++i) {
        const Vec& prev = traj.states[static_cast<std::size_t>(i - 1)];
        const Vec u = mlp_forward(state.drift, drift_input(prev, (i - 1) * sched.dt));
        Vec mean = prev;
        for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += u[j] * sched.dt;
        acc += gaussian_logpdf(traj.states[static_cast<std::size_t>(i)], mean, sched.step_var(i));
    }
    return acc;
}

/// log p_B(tau | z_1) = sum_i log N(z_{i-1}; sqrt(1 - gamma_i dt) z_i, gamma_i dt I).
/// Parameter-free. No z_1 marginal term (it lives in R).
inline double log_pb(const SdeSchedule& sched, const Trajectory& traj) {
    if (static_cast<int>(traj.states.size()) != sched.T + 1)
        throw std::invalid_argument("log_pb: trajectory/schedule mismatch");
    double acc = 0.0;
    for (int i = 1; i <= sched.T; ++i) {
        const Vec& next = traj.states[static_cast<std::size_t>(i)];
        Vec mean(next.size());
        const double mf = sched.mean_factor(i);
        for (std::size_t j = 0; j < mean.size(); ++j) mean[j] = mf * next[j];
        acc += gaussian_logpdf(traj.states[static_cast<std::size_t>(i - 1)], mean, sched.step_var(i));
    }
    return acc;
}

/// Taped TB residual: log_Z + log p_F(tau) - log R(z_1) - log p_B(tau).
/// Trajectory states are constants; gradients flow through the p_F means
/// into the drift net and into log_Z.
struct TbLossNodes {
    Tape::NodeId loss;
    Tape::NodeId residual;
    MlpNodes drift_nodes;
    Tape::NodeId logz_node;
};

inline TbLossNodes tb_loss(Tape& t, const SamplerState& state, const SdeSchedule& sched,
                           const OutsourcedTarget& target, const Trajectory& traj,
                           double beta_now) {
    if (static_cast<int>(traj.states.size()) != sched.T + 1)
        throw std::invalid_argument("tb_loss: trajectory/schedule mismatch");
    for (const auto& s : traj.states)
        if (!all_finite(s)) throw std::invalid_argument("tb_loss: non-finite trajectory state");

    const double log_R = target.log_R(traj.states.back(), beta_now);
    const double const_part = -log_R - log_pb(sched, traj) +
                              gaussian_logpdf_std(traj.states.front());

    TbLossNodes out;
    out.drift_nodes = stage_params(t, state.drift);
    out.logz_node = t.leaf(state.log_Z);

    std::vector<Tape::NodeId> step_terms;
    for (int i = 1; i <= sched.T; ++i) {
        const Vec& prev = traj.states[static_cast<std::size_t>(i - 1)];
        Tape::NodeId in = t.leaf(drift_input(prev, (i - 1) * sched.dt));
        Tape::NodeId u = mlp_forward(t, state.drift, out.drift_nodes, in);
        Tape::NodeId mean = op::add_scaled(t, t.leaf(prev), u, sched.dt);
        step_terms.push_back(op::gaussian_logpdf(
            t, t.leaf(traj.states[static_cast<std::size_t>(i)]), mean, sched.step_var(i)));
    }
    Tape::NodeId logpf_steps = op::sum(t, op::stack(t, step_terms));
    out.residual = op::add(t, op::add(t, out.logz_node, logpf_steps), t.leaf(const_part));
    out.loss = op::square(t, out.residual);
    return out;
}

struct MetricsRow {
    long step;
    double loss;
    double log_Z;
    double mean_log_r;
    long buffer_size;
    double beta;
};

struct TrainResult {
    SamplerState state;
    std::vector<MetricsRow> metrics;
    bool diverged = false;
    std::string divergence_note;
};

/// Off-policy TB training: with probability alpha replay a stored batch,
/// otherwise simulate fresh exploratory trajectories and store them.
inline TrainResult train(const TrainConfig& cfg, const OutsourcedTarget& target) {
    cfg.validate();
    const SdeSchedule sched = SdeSchedule::linear(cfg.T, cfg.gamma_start, cfg.gamma_end);
    const int d = target.prior.d_noise;

    TrainResult res;
    res.state = make_sampler_state(d, cfg.hidden, cfg.lr_drift, cfg.lr_logz, cfg.seed);
    SamplerState& state = res.state;
    ReplayBuffer buffer(cfg.buffer_capacity, cfg.buffer_mode, cfg.buffer_reward_fraction);

    Vec drift_flat = flatten(state.drift);
    RngStream decision_rng(cfg.seed, 3000);

    for (long step = 0; step < cfg.steps; ++step) {
        const double beta_now = cfg.temperature.beta(step);
        const bool use_buffer = buffer.size() > 0 && decision_rng.uniform() < cfg.buffer_prob;

        std::vector<Trajectory> fresh;
        std::vector<const Trajectory*> batch;
        if (use_buffer) {
            batch = buffer.sample(cfg.batch, decision_rng);
        } else {
            fresh.reserve(static_cast<std::size_t>(cfg.batch));
            for (int bi = 0; bi < cfg.batch; ++bi) {
                // per-trajectory stream keyed by (seed, step, index): identical
                // results for any evaluation parallelism
                RngStream traj_rng(cfg.seed, 4000 + static_cast<std::uint64_t>(step) * 1024 +
                                                  static_cast<std::uint64_t>(bi));
                Trajectory tr = simulate_forward(state, sched, traj_rng, cfg.exploration_scale);
                tr.terminal_log_r = target.constraint.log_r(target.prior.apply(tr.states.back()));
                fresh.push_back(std::move(tr));
            }
            for (const auto& tr : fresh) batch.push_back(&tr);
        }

        double mean_loss = 0.0, mean_log_r = 0.0;
        Vec grad_sum(drift_flat.size(), 0.0);
        double logz_grad = 0.0;
        bool bad = false;
        std::string note;
        for (const Trajectory* tr : batch) {
            Tape t;
            TbLossNodes nodes;
            try {
                nodes = tb_loss(t, state, sched, target, *tr, beta_now);
            } catch (const std::exception& e) {
                bad = true;
                note = e.what();
                break;
            }
            const double l = t.scalar(nodes.loss);
            if (!std::isfinite(l)) {
                bad = true;
                note = "non-finite TB loss";
                break;
            }
            mean_loss += l;
            t.backward(nodes.loss);
            const Vec g = collect_grads(t, nodes.drift_nodes);
            for (std::size_t i = 0; i < grad_sum.size(); ++i) grad_sum[i] += g[i];
            logz_grad += t.grad(nodes.logz_node)[0];
            mean_log_r += tr->terminal_log_r;
        }
        if (bad || !std::isfinite(state.log_Z)) {
            res.diverged = true;
            res.divergence_note = note.empty() ? "non-finite log_Z" : note;
            return res;
        }
        const double nb = static_cast<double>(batch.size());
        mean_loss /= nb;
        mean_log_r /= nb;
        for (double& g : grad_sum) g /= nb;
        logz_grad /= nb;

        adam_step(state.adam_drift, drift_flat, grad_sum);
        unflatten(state.drift, drift_flat);
        Vec logz_vec{state.log_Z};
        adam_step(state.adam_logz, logz_vec, Vec{logz_grad});
        state.log_Z = logz_vec[0];
        ++state.step;

        if (!use_buffer)
            for (auto& tr : fresh) buffer.insert(std::move(tr));

        if (step % cfg.metrics_every == 0 || step + 1 == cfg.steps)
            res.metrics.push_back({step, mean_loss, state.log_Z, mean_log_r,
                                   static_cast<long>(buffer.size()), beta_now});
    }
    return res;
}

struct PosteriorSamples {
    std::vector<Vec> noise;
    std::vector<Vec> data;
    Vec log_r;
};

/// n forward simulations without exploration, pushed through the prior.
inline PosteriorSamples sample_posterior(const SamplerState& state, const SdeSchedule& sched,
                                         const OutsourcedTarget& target, int n,
                                         std::uint64_t seed) {
    PosteriorSamples out;
    out.noise.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        RngStream rng(seed, 5000 + static_cast<std::uint64_t>(i));
        Trajectory tr = simulate_forward(state, sched, rng, 0.0);
        out.noise.push_back(tr.states.back());
    }
    out.data = target.pushforward_samples(out.noise);
    out.log_r.reserve(out.data.size());
    for (const auto& x : out.data) out.log_r.push_back(target.constraint.log_r(x));
    return out;
}

}  // namespace outsampler
