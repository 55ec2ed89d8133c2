#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "outsampler/adam.hpp"
#include "outsampler/mlp.hpp"
#include "outsampler/rng.hpp"
#include "outsampler/sampler.hpp"

namespace outsampler {

struct DistillConfig {
    std::vector<int> hidden = {64, 64};
    long steps = 5000;
    int batch = 128;
    double lr = 1e-3;
    double lambda_var = 0.1;
    std::uint64_t seed = 0;
};

struct StudentParams {
    MlpParams net;  // z_0 -> z_1, both in R^d_noise
    DistillConfig cfg;
};

/// Deterministic drift-only Euler flow of the teacher SDE:
/// z_i = z_{i-1} + u(z_{i-1}, t_{i-1}) dt, noise suppressed.
inline Vec teacher_ode_sample(const SamplerState& teacher, const SdeSchedule& sched, Vec z) {
    for (int i = 1; i <= sched.T; ++i) {
        const Vec u = mlp_forward(teacher.drift, drift_input(z, (i - 1) * sched.dt));
        for (std::size_t j = 0; j < z.size(); ++j) z[j] += u[j] * sched.dt;
        if (!all_finite(z)) throw std::runtime_error("teacher_ode_sample: non-finite state");
    }
    return z;
}

/// One-step student trained on (z_0, teacher ODE endpoint) pairs with MSE
/// plus a per-dimension batch-std matching regularizer.
inline StudentParams distill(const SamplerState& teacher, const SdeSchedule& sched,
                             const DistillConfig& cfg) {
    const int d = teacher.dim();
    StudentParams student;
    student.cfg = cfg;
    RngStream init_rng(cfg.seed, 8000);
    student.net = make_mlp(d, cfg.hidden, d, Activation::tanh, init_rng);

    Vec flat = flatten(student.net);
    AdamState adam(flat.size(), AdamConfig{cfg.lr});
    RngStream rng(cfg.seed, 8001);

    for (long step = 0; step < cfg.steps; ++step) {
        Tape t;
        MlpNodes nodes = stage_params(t, student.net);
        std::vector<Tape::NodeId> mse_terms;
        std::vector<Tape::NodeId> outputs;
        std::vector<Vec> targets;
        for (int bi = 0; bi < cfg.batch; ++bi) {
            Vec z0 = rng.normal_vec(d);
            Vec z1 = teacher_ode_sample(teacher, sched, z0);
            Tape::NodeId out = mlp_forward(t, student.net, nodes, t.leaf(z0));
            mse_terms.push_back(op::sumsq(t, op::sub(t, out, t.leaf(z1))));
            outputs.push_back(out);
            targets.push_back(std::move(z1));
        }
        Tape::NodeId loss = op::scale(t, op::sum(t, op::stack(t, mse_terms)), 1.0 / cfg.batch);

        if (cfg.lambda_var > 0.0) {
            // sum over dims of (std_batch(student) - std_batch(teacher))^2;
            // teacher stds are constants
            std::vector<Tape::NodeId> var_terms;
            for (int j = 0; j < d; ++j) {
                std::vector<Tape::NodeId> comps;
                double tmean = 0.0, tsq = 0.0;
                for (int bi = 0; bi < cfg.batch; ++bi) {
                    comps.push_back(op::slice(t, outputs[static_cast<std::size_t>(bi)], j, 1));
                    const double v = targets[static_cast<std::size_t>(bi)][static_cast<std::size_t>(j)];
                    tmean += v;
                    tsq += v * v;
                }
                tmean /= cfg.batch;
                const double t_std = std::sqrt(std::max(0.0, tsq / cfg.batch - tmean * tmean) + 1e-12);
                Tape::NodeId col = op::stack(t, comps);
                Tape::NodeId mean = op::scale(t, op::sum(t, col), 1.0 / cfg.batch);
                Tape::NodeId meansq = op::scale(t, op::sumsq(t, col), 1.0 / cfg.batch);
                Tape::NodeId var = op::add(t, op::sub(t, meansq, op::square(t, mean)), t.leaf(1e-12));
                Tape::NodeId std_node = op::sqrt(t, var);
                var_terms.push_back(op::square(t, op::sub(t, std_node, t.leaf(t_std))));
            }
            loss = op::add(t, loss, op::scale(t, op::sum(t, op::stack(t, var_terms)), cfg.lambda_var));
        }

        if (!std::isfinite(t.scalar(loss))) throw std::runtime_error("distill: loss diverged");
        t.backward(loss);
        Vec grads = collect_grads(t, nodes);
        adam_step(adam, flat, grads);
        unflatten(student.net, flat);
    }
    return student;
}

/// z_1 = g(z_0), z_0 ~ N(0, I); one forward pass per sample.
inline std::vector<Vec> student_sample(const StudentParams& student, int n, RngStream& rng) {
    std::vector<Vec> out;
    out.reserve(static_cast<std::size_t>(n));
    const int d = student.net.input_dim();
    for (int i = 0; i < n; ++i) out.push_back(mlp_forward(student.net, rng.normal_vec(d)));
    return out;
}

}  // namespace outsampler
