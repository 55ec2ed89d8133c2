#include <doctest.h>

#include <cmath>

#include "outsampler/eval.hpp"

using namespace outsampler;

namespace {

OutsourcedTarget gauss1d_target() {
    return make_target(affine_prior({1.0}, {0.0}),
                       gaussian_mixture_constraint({{1.0}}, {1.0}, 1.0));
}

std::vector<Vec> gaussian_cloud_2d(int n, double mean_x, std::uint64_t seed, std::uint64_t stream) {
    RngStream rng(seed, stream);
    std::vector<Vec> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out.push_back({mean_x + rng.normal(), rng.normal()});
    return out;
}

}  // namespace

TEST_CASE("is_oracle: vacuous constraint gives log_Z_hat = 0 and ESS = N") {
    OutsourcedTarget t = make_target(affine_prior({1.0}, {0.0}), uniform_constraint());
    RngStream rng(81, 0);
    OracleEstimate est = is_oracle(t, 1000, rng);
    CHECK(est.log_Z_hat == doctest::Approx(0.0).scale(1.0));
    CHECK(est.ess == doctest::Approx(1000.0).epsilon(1e-9));
    double total = 0.0;
    for (double w : est.weights) {
        CHECK(w >= 0.0);
        total += w;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(is_oracle(t, 0, rng), std::invalid_argument);
}

TEST_CASE("is_oracle: 1D closed-form evidence at N=1e6") {
    OutsourcedTarget t = gauss1d_target();
    RngStream rng(82, 0);
    OracleEstimate est = is_oracle(t, 1000000, rng);
    CHECK(est.log_Z_hat == doctest::Approx(-1.5155122).epsilon(0.0066));  // +- 0.01
    CHECK(std::abs(est.log_Z_hat - -1.5155122) < 0.01);
    CHECK(est.ess <= 1000000.0);
    CHECK(est.ess > 100000.0);  // well-conditioned conjugate case
}

TEST_CASE("is_oracle: conjugate affine case matches analytic evidence within 3 SE") {
    // f(z) = 2z + 1, constraint N(x; 0, 1): evidence = N(0; 1, 4 + 1)
    OutsourcedTarget t = make_target(affine_prior({2.0}, {1.0}),
                                     gaussian_mixture_constraint({{0.0}}, {1.0}, 1.0));
    const double analytic = gaussian_logpdf({0.0}, {1.0}, 5.0);
    const int reps = 20, N = 20000;
    Vec estimates(reps);
    for (int r = 0; r < reps; ++r) {
        RngStream rng(83, static_cast<std::uint64_t>(r));
        estimates[static_cast<std::size_t>(r)] = is_oracle(t, N, rng).log_Z_hat;
    }
    double m = 0, s2 = 0;
    for (double e : estimates) m += e;
    m /= reps;
    for (double e : estimates) s2 += (e - m) * (e - m);
    const double se = std::sqrt(s2 / (reps - 1)) / std::sqrt(static_cast<double>(reps));
    CHECK(std::abs(m - analytic) < 3.0 * se + 1e-4);
}

TEST_CASE("is_oracle: estimator std shrinks like 1/sqrt(N)") {
    OutsourcedTarget t = gauss1d_target();
    auto spread = [&](int N, std::uint64_t stream_base) {
        const int reps = 20;
        Vec est(reps);
        for (int r = 0; r < reps; ++r) {
            RngStream rng(84, stream_base + static_cast<std::uint64_t>(r));
            est[static_cast<std::size_t>(r)] = is_oracle(t, N, rng).log_Z_hat;
        }
        double m = 0, s2 = 0;
        for (double e : est) m += e;
        m /= reps;
        for (double e : est) s2 += (e - m) * (e - m);
        return std::sqrt(s2 / (reps - 1));
    };
    const double s1 = spread(2000, 0);
    const double s4 = spread(8000, 100);
    CHECK(s1 / s4 == doctest::Approx(2.0).epsilon(0.2));  // 4x samples halves the std
}

TEST_CASE("is_oracle: degenerate all-zero weights are surfaced") {
    // constraint so far away that every log-weight is -inf
    OutsourcedTarget t = make_target(affine_prior({1.0}, {0.0}),
                                     gaussian_mixture_constraint({{1e200}}, {1.0}, 1e-6));
    RngStream rng(85, 0);
    CHECK_THROWS_AS(is_oracle(t, 100, rng), std::runtime_error);
}

TEST_CASE("systematic_resample follows the weights") {
    RngStream rng(86, 0);
    const Vec w = {0.0, 1.0, 0.0};
    const auto idx = systematic_resample(w, 10, rng);
    for (std::size_t i : idx) CHECK(i == 1);
    const Vec uniform = {0.25, 0.25, 0.25, 0.25};
    const auto idx2 = systematic_resample(uniform, 4, rng);
    // systematic resampling with equal weights picks each ancestor exactly once
    Vec counts(4, 0.0);
    for (std::size_t i : idx2) counts[i] += 1.0;
    for (double c : counts) CHECK(c == 1.0);
}

TEST_CASE("grid2d: cell mapping and sentinel") {
    Grid2d g;
    g.x_min = 0;
    g.x_max = 1;
    g.y_min = 0;
    g.y_max = 1;
    g.bins_x = g.bins_y = 2;
    CHECK(g.cell({0.25, 0.25}) == 0);
    CHECK(g.cell({0.25, 0.75}) == 1);
    CHECK(g.cell({0.75, 0.25}) == 2);
    CHECK(g.cell({5.0, 0.5}) == 4);  // out-of-bounds sentinel
    CHECK(g.num_cells() == 5);
    g.bins_x = 1;
    CHECK_THROWS_AS(g.validate(), std::invalid_argument);
}

TEST_CASE("fit_grid adds a 10% margin") {
    Grid2d g = fit_grid({{0.0, 0.0}, {1.0, 2.0}}, 10);
    CHECK(g.x_min == doctest::Approx(-0.1));
    CHECK(g.x_max == doctest::Approx(1.1));
    CHECK(g.y_min == doctest::Approx(-0.2));
    CHECK(g.y_max == doctest::Approx(2.2));
}

TEST_CASE("weighted_histogram_tv: axioms") {
    const std::vector<Vec> a = gaussian_cloud_2d(2000, 0.0, 87, 0);
    const std::vector<Vec> b = gaussian_cloud_2d(2000, 1.0, 87, 1);
    Grid2d g = fit_grid(a);
    CHECK(weighted_histogram_tv(a, {}, a, {}, g) == 0.0);
    const double ab = weighted_histogram_tv(a, {}, b, {}, g);
    const double ba = weighted_histogram_tv(b, {}, a, {}, g);
    CHECK(ab == ba);
    CHECK(ab >= 0.0);
    CHECK(ab <= 1.0);
    // disjoint supports
    const std::vector<Vec> far = {{100.0, 100.0}, {101.0, 100.0}};
    CHECK(weighted_histogram_tv(a, {}, far, {}, g) == doctest::Approx(1.0));
    CHECK_THROWS_AS(weighted_histogram_tv({}, {}, a, {}, g), std::invalid_argument);
}

TEST_CASE("weighted_histogram_tv: N(0,1) vs N(3,1) quadrature value") {
    // TV = 2*Phi(1.5) - 1 = 0.8664
    const int n = 100000;
    RngStream rng(88, 0);
    std::vector<Vec> a, b;
    a.reserve(n);
    b.reserve(n);
    for (int i = 0; i < n; ++i) {
        a.push_back({rng.normal(), 0.0});
        b.push_back({3.0 + rng.normal(), 0.0});
    }
    Grid2d g;
    g.x_min = -6;
    g.x_max = 6;
    g.y_min = -1;
    g.y_max = 1;
    g.bins_x = 50;
    g.bins_y = 2;
    CHECK(weighted_histogram_tv(a, {}, b, {}, g) == doctest::Approx(0.8664).epsilon(0.0231));
}

TEST_CASE("mean_log_reward: trivial cases and the closed-form posterior value") {
    Constraint unit = uniform_constraint();
    CHECK(mean_log_reward({{0.0}, {5.0}}, unit) == 0.0);
    Constraint g = gaussian_mixture_constraint({{1.0}}, {1.0}, 1.0);
    // E_{N(0.5,0.5)}[log N(x;1,1)] = -0.9189385 - (0.5 + 0.25)/2
    RngStream rng(89, 0);
    std::vector<Vec> samples;
    for (int i = 0; i < 100000; ++i) samples.push_back({0.5 + std::sqrt(0.5) * rng.normal()});
    CHECK(mean_log_reward(samples, g) == doctest::Approx(-1.2939).epsilon(0.01));
    CHECK(mean_log_reward(samples, g, 2.0) == doctest::Approx(2.0 * mean_log_reward(samples, g)).epsilon(1e-12));
    CHECK_THROWS_AS(mean_log_reward({}, g), std::invalid_argument);
}

TEST_CASE("pairwise_diversity: trivial and gaussian-cloud values") {
    RngStream rng(90, 0);
    CHECK(pairwise_diversity({{1.0, 1.0}, {1.0, 1.0}, {1.0, 1.0}}, 100, rng) == 0.0);
    CHECK(pairwise_diversity({{0.0, 0.0}, {3.0, 0.0}}, 100, rng) == doctest::Approx(3.0));
    const std::vector<Vec> cloud = gaussian_cloud_2d(20000, 0.0, 90, 1);
    // E||X - Y|| with X - Y ~ N(0, 2 I_2): sqrt(pi) ~= 1.7725
    CHECK(pairwise_diversity(cloud, 200000, rng) == doctest::Approx(std::sqrt(3.14159265358979)).epsilon(0.02));
    CHECK_THROWS_AS(pairwise_diversity({{0.0}}, 10, rng), std::invalid_argument);
}

TEST_CASE("mode_weights: assignment, symmetry, and normalization") {
    CHECK_THROWS_AS(mode_weights({{0.0}}, {}, {}, 1.0), std::invalid_argument);
    const std::vector<Vec> at_first = {{1.0, 0.0}, {1.01, 0.0}};
    Vec w = mode_weights(at_first, {}, {{1.0, 0.0}, {-1.0, 0.0}}, 0.1);
    CHECK(w[0] == doctest::Approx(1.0));
    CHECK(w[1] == 0.0);
    CHECK(w[2] == 0.0);

    // symmetric two-mode cloud
    RngStream rng(91, 0);
    std::vector<Vec> samples;
    for (int i = 0; i < 100000; ++i) {
        const double c = rng.uniform() < 0.5 ? 1.0 : -1.0;
        samples.push_back({c + 0.05 * rng.normal(), 0.05 * rng.normal()});
    }
    w = mode_weights(samples, {}, {{1.0, 0.0}, {-1.0, 0.0}}, 0.3);
    CHECK(w[0] == doctest::Approx(0.5).epsilon(0.04));  // +- 0.02
    CHECK(w[1] == doctest::Approx(0.5).epsilon(0.04));
    CHECK(w[0] + w[1] + w[2] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(w[2] == doctest::Approx(0.0).scale(1.0));  // radius covers everything
}

TEST_CASE("energy_distance: zero for same law, positive for shifted laws") {
    RngStream rng(92, 0);
    const std::vector<Vec> a = gaussian_cloud_2d(5000, 0.0, 92, 1);
    const std::vector<Vec> b = gaussian_cloud_2d(5000, 0.0, 92, 2);
    const std::vector<Vec> c = gaussian_cloud_2d(5000, 2.0, 92, 3);
    CHECK(std::abs(energy_distance(a, b, 100000, rng)) < 0.05);
    CHECK(energy_distance(a, c, 100000, rng) > 0.5);
    CHECK_THROWS_AS(energy_distance({}, a, 10, rng), std::invalid_argument);
}

TEST_CASE("rtb equivalence: identical policies give zero discrepancy") {
    RngStream init(93, 0);
    MlpParams net = make_mlp(3, {16}, 1, Activation::tanh, init);
    RtbCheckSetup setup;
    setup.prior_drift = net;
    setup.posterior_drift = net;
    setup.T = 10;
    setup.dt = 0.1;
    setup.sigma.assign(10, 0.7);
    setup.log_r = [](const Vec&) { return 0.0; };
    setup.trajectories = 20;
    setup.log_Z = 0.0;
    RngStream rng(93, 1);
    CHECK(rtb_equivalence_check(setup, rng) < 1e-12);
}

TEST_CASE("rtb equivalence: random nets, 100 trajectories, discrepancy <= 1e-9") {
    RngStream init(94, 0);
    RtbCheckSetup setup;
    setup.prior_drift = make_mlp(4, {16}, 2, Activation::tanh, init);
    setup.posterior_drift = make_mlp(4, {16}, 2, Activation::tanh, init);
    setup.T = 10;
    setup.dt = 0.1;
    setup.sigma = {0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2};
    setup.log_r = [](const Vec& x) { return -0.5 * (x[0] * x[0] + x[1] * x[1]); };
    setup.trajectories = 100;
    setup.log_Z = 0.37;
    RngStream rng(94, 1);
    CHECK(rtb_equivalence_check(setup, rng) <= 1e-9);

    // the identity holds for any schedule: doubling sigma must not break it
    for (double& s : setup.sigma) s *= 2.0;
    RngStream rng2(94, 2);
    CHECK(rtb_equivalence_check(setup, rng2) <= 1e-9);
}

TEST_CASE("rtb equivalence rejects incompatible nets") {
    RngStream init(95, 0);
    RtbCheckSetup setup;
    setup.prior_drift = make_mlp(4, {8}, 2, Activation::tanh, init);
    setup.posterior_drift = make_mlp(3, {8}, 1, Activation::tanh, init);
    setup.sigma.assign(10, 1.0);
    setup.log_r = [](const Vec&) { return 0.0; };
    RngStream rng(95, 1);
    CHECK_THROWS_AS(rtb_equivalence_check(setup, rng), std::invalid_argument);
}
