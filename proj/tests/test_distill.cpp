#include <doctest.h>

#include <chrono>
#include <cmath>

#include "outsampler/distill.hpp"
#include "outsampler/eval.hpp"

using namespace outsampler;

namespace {

OutsourcedTarget gauss1d_target() {
    return make_target(affine_prior({1.0}, {0.0}),
                       gaussian_mixture_constraint({{1.0}}, {1.0}, 1.0));
}

SamplerState zero_drift_teacher(int d) { return make_sampler_state(d, {4}, 1e-3, 1e-1, 0); }

struct Stats {
    double mean = 0.0;
    double var = 0.0;
};

Stats stats_1d(const std::vector<Vec>& samples) {
    double s1 = 0, s2 = 0;
    for (const Vec& z : samples) {
        s1 += z[0];
        s2 += z[0] * z[0];
    }
    const double n = static_cast<double>(samples.size());
    Stats st;
    st.mean = s1 / n;
    st.var = s2 / n - st.mean * st.mean;
    return st;
}

}  // namespace

TEST_CASE("teacher ODE: zero drift is the identity, and it is deterministic") {
    SamplerState teacher = zero_drift_teacher(2);
    SdeSchedule sched = SdeSchedule::linear(25, 12.0, 0.1);
    const Vec z = {0.4, -1.1};
    const Vec a = teacher_ode_sample(teacher, sched, z);
    const Vec b = teacher_ode_sample(teacher, sched, z);
    CHECK(a == z);
    CHECK(a == b);
}

TEST_CASE("distill: zero-drift teacher yields an approximate identity map") {
    SamplerState teacher = zero_drift_teacher(1);
    SdeSchedule sched = SdeSchedule::linear(25, 12.0, 0.1);
    DistillConfig cfg;
    cfg.steps = 5000;
    cfg.seed = 101;
    StudentParams student = distill(teacher, sched, cfg);
    RngStream rng(102, 0);
    double err = 0.0;
    const int probes = 1000;
    for (int i = 0; i < probes; ++i) {
        const Vec z = rng.normal_vec(1);
        err += std::abs(mlp_forward(student.net, z)[0] - z[0]);
    }
    CHECK(err / probes < 0.05);
}

TEST_CASE("distill: reproducible under a fixed seed, lambda_var changes the result") {
    SamplerState teacher = zero_drift_teacher(1);
    SdeSchedule sched = SdeSchedule::linear(25, 12.0, 0.1);
    DistillConfig cfg;
    cfg.steps = 20;
    cfg.batch = 16;
    cfg.seed = 103;
    cfg.lambda_var = 0.0;
    StudentParams a = distill(teacher, sched, cfg);
    StudentParams b = distill(teacher, sched, cfg);
    CHECK(flatten(a.net) == flatten(b.net));
    cfg.lambda_var = 0.5;
    StudentParams c = distill(teacher, sched, cfg);
    CHECK(flatten(a.net) != flatten(c.net));
}

TEST_CASE("distill: 1D closed-form teacher transfers statistics to the student") {
    OutsourcedTarget target = gauss1d_target();
    TrainConfig tcfg;
    tcfg.hidden = {64, 64};
    tcfg.steps = 1200;
    tcfg.gamma_start = 12.0;
    tcfg.gamma_end = 0.1;
    tcfg.lr_drift = 3e-3;
    tcfg.seed = 104;
    TrainResult teacher = train(tcfg, target);
    REQUIRE_FALSE(teacher.diverged);
    const SdeSchedule sched = SdeSchedule::linear(tcfg.T, tcfg.gamma_start, tcfg.gamma_end);

    DistillConfig cfg;
    cfg.steps = 4000;
    cfg.seed = 105;
    StudentParams student = distill(teacher.state, sched, cfg);

    // compare student outputs to the teacher's own ODE endpoints
    RngStream rng(106, 0);
    std::vector<Vec> teacher_ode, student_out;
    for (int i = 0; i < 10000; ++i) {
        const Vec z0 = rng.normal_vec(1);
        teacher_ode.push_back(teacher_ode_sample(teacher.state, sched, z0));
        student_out.push_back(mlp_forward(student.net, z0));
    }
    const Stats ts = stats_1d(teacher_ode);
    const Stats ss = stats_1d(student_out);
    CHECK(std::abs(ss.mean - ts.mean) < 0.1 * std::max(std::abs(ts.mean), 0.1));
    CHECK(std::abs(ss.var - ts.var) < 0.1 * std::max(ts.var, 0.05));

    const double t_lr = mean_log_reward(teacher_ode, target.constraint);
    const double s_lr = mean_log_reward(student_out, target.constraint);
    CHECK(std::abs(s_lr - t_lr) / std::abs(t_lr) < 0.05);

    // distribution-level agreement
    RngStream ed_rng(107, 0);
    CHECK(energy_distance(student_out, teacher_ode, 200000, ed_rng) < 0.05);

    // batch-std ratio sanity under the default regularizer
    CHECK(ss.var / ts.var > 0.8 * 0.8);
    CHECK(ss.var / ts.var < 1.2 * 1.2);
}

TEST_CASE("student_sample: n=0, determinism, and one-step speedup") {
    // teacher drift gets the same capacity as the student so the speedup
    // reflects the 25-step vs 1-step difference, not network size
    SamplerState teacher = make_sampler_state(1, {64, 64}, 1e-3, 1e-1, 0);
    SdeSchedule sched = SdeSchedule::linear(25, 12.0, 0.1);
    DistillConfig cfg;
    cfg.steps = 50;
    cfg.seed = 108;
    StudentParams student = distill(teacher, sched, cfg);

    RngStream rng(109, 0);
    CHECK(student_sample(student, 0, rng).empty());
    RngStream r1(109, 1), r2(109, 1);
    const auto a = student_sample(student, 10, r1);
    const auto b = student_sample(student, 10, r2);
    for (int i = 0; i < 10; ++i) CHECK(a[static_cast<std::size_t>(i)] == b[static_cast<std::size_t>(i)]);

    using clock = std::chrono::steady_clock;
    const int batch = 1024;
    const auto t0 = clock::now();
    RngStream rs(109, 2);
    student_sample(student, batch, rs);
    const auto t1 = clock::now();
    RngStream rt(109, 3);
    for (int i = 0; i < batch; ++i) simulate_forward(teacher, sched, rt, 0.0);
    const auto t2 = clock::now();
    const double student_time = std::chrono::duration<double>(t1 - t0).count();
    const double teacher_time = std::chrono::duration<double>(t2 - t1).count();
    CHECK(teacher_time > 5.0 * student_time);
}
