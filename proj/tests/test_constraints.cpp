#include <doctest.h>

#include <cmath>

#include "outsampler/constraints.hpp"

using namespace outsampler;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double taped_log_r(const Constraint& c, const Vec& x) {
    Tape t;
    return t.scalar(c.log_r(t, t.leaf(x)));
}

Vec taped_grad(const Constraint& c, const Vec& x) {
    Tape t;
    Tape::NodeId xn = t.leaf(x);
    t.backward(c.log_r(t, xn));
    return t.grad(xn);
}

}  // namespace

TEST_CASE("temperature schedule: linear ramp then constant") {
    TemperatureSchedule s{1.0, 5.0, 100};
    CHECK(s.beta(0) == doctest::Approx(1.0));
    CHECK(s.beta(50) == doctest::Approx(3.0));
    CHECK(s.beta(100) == doctest::Approx(5.0));
    CHECK(s.beta(10000) == doctest::Approx(5.0));
    TemperatureSchedule flat{1.0, 2.5, 0};
    CHECK(flat.beta(0) == doctest::Approx(2.5));
}

TEST_CASE("uniform constraint is identically zero") {
    Constraint c = uniform_constraint();
    CHECK(c.log_r({3.0, -1.0}) == 0.0);
    CHECK(taped_log_r(c, {3.0, -1.0}) == 0.0);
}

TEST_CASE("single gaussian constraint reduces to the gaussian logpdf") {
    Constraint c = gaussian_mixture_constraint({{1.0, -1.0}}, {1.0}, 0.25);
    const Vec x = {0.5, 0.5};
    CHECK(c.log_r(x) == doctest::Approx(gaussian_logpdf(x, {1.0, -1.0}, 0.25)).epsilon(1e-14));
    CHECK(taped_log_r(c, x) == doctest::Approx(c.log_r(x)).epsilon(1e-14));
}

TEST_CASE("two-component mixture: hand-evaluated logsumexp") {
    Constraint c =
        gaussian_mixture_constraint({{1.0, 0.0}, {-1.0, 0.0}}, {0.5, 0.5}, 1.0);
    const Vec x = {0.0, 0.0};
    // both components are equidistant: log r = log(0.5) + logN + log 2 = logN(x; c, I)
    const double expected = gaussian_logpdf(x, {1.0, 0.0}, 1.0);
    CHECK(c.log_r(x) == doctest::Approx(expected).epsilon(1e-14));
    // at the midpoint the gradient cancels by symmetry
    const Vec g = taped_grad(c, x);
    CHECK(g[0] == doctest::Approx(0.0).scale(1.0));
    CHECK(g[1] == doctest::Approx(0.0).scale(1.0));
}

TEST_CASE("mixture constraint validates its inputs") {
    CHECK_THROWS_AS(gaussian_mixture_constraint({{0.0}}, {1.0}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(gaussian_mixture_constraint({}, {}, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(gaussian_mixture_constraint({{0.0}}, {0.7}, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(gaussian_mixture_constraint({{0.0}, {1.0}}, {1.2, -0.2}, 1.0),
                    std::invalid_argument);
}

TEST_CASE("halfspace constraint: closed-form values and saturation") {
    Constraint c = halfspace_logistic_constraint({0.0, 1.0}, 0.25, 20.0);
    // on the boundary normal.x = offset: log sigmoid(0) = -log 2
    CHECK(c.log_r({5.0, 0.25}) == doctest::Approx(-std::log(2.0)).epsilon(1e-14));
    // deep inside: log r -> 0
    CHECK(c.log_r({0.0, -10.0}) == doctest::Approx(0.0).scale(1.0));
    // deep outside: log r ~ sharpness * (offset - x2), never -inf
    const double far = c.log_r({0.0, 10.0});
    CHECK(far == doctest::Approx(20.0 * (0.25 - 10.0)).epsilon(1e-6));
    CHECK(std::isfinite(far));
    CHECK(taped_log_r(c, {0.3, 0.1}) == doctest::Approx(c.log_r({0.3, 0.1})).epsilon(1e-14));
}

TEST_CASE("halfspace constraint: gradient matches the sigmoid complement") {
    Constraint c = halfspace_logistic_constraint({0.0, 1.0}, 0.25, 20.0);
    const Vec x = {0.7, 0.3};
    // d/dx2 log sigmoid(s*(o - x2)) = -s * sigmoid(-s*(o - x2))
    const double a = 20.0 * (0.25 - x[1]);
    const Vec g = taped_grad(c, x);
    CHECK(g[0] == doctest::Approx(0.0).scale(1.0));
    CHECK(g[1] == doctest::Approx(-20.0 * sigmoid(-a)).epsilon(1e-12));
}

TEST_CASE("halfspace constraint validates its inputs") {
    CHECK_THROWS_AS(halfspace_logistic_constraint({0.0, 0.0}, 0.0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(halfspace_logistic_constraint({0.0, 1.0}, 0.0, 0.0), std::invalid_argument);
}

TEST_CASE("lower moon constraint selects points below the cut") {
    Constraint c = lower_moon_constraint();
    CHECK(c.log_r({0.5, -0.5}) > std::log(0.99));
    CHECK(c.log_r({0.0, 1.0}) < std::log(1e-9));
}

TEST_CASE("classifier constraint: log softmax and normalization") {
    MlpParams net;
    net.act = Activation::identity;
    net.layers.push_back(Layer{2, 3, {1, 0, 0, 1, 0, 0}, {0, 0, 0.5}});
    Constraint c0 = classifier_constraint(net, 0);
    Constraint c1 = classifier_constraint(net, 1);
    Constraint c2 = classifier_constraint(net, 2);
    const Vec x = {0.3, -0.4};
    const double total = std::exp(c0.log_r(x)) + std::exp(c1.log_r(x)) + std::exp(c2.log_r(x));
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    const Vec logits = {0.3, -0.4, 0.5};
    CHECK(c1.log_r(x) == doctest::Approx(logits[1] - logsumexp(logits)).epsilon(1e-12));
    CHECK(taped_log_r(c1, x) == doctest::Approx(c1.log_r(x)).epsilon(1e-13));
    CHECK_THROWS_AS(classifier_constraint(net, 3), std::invalid_argument);
}

TEST_CASE("classifier constraint gradient matches finite differences") {
    RngStream rng(13, 0);
    MlpParams net = make_mlp(2, {8}, 2, Activation::tanh, rng);
    Constraint c = classifier_constraint(net, 1);
    const Vec x = {0.2, -0.9};
    const Vec g = taped_grad(c, x);
    const double h = 1e-6;
    for (int i = 0; i < 2; ++i) {
        Vec xp = x, xm = x;
        xp[static_cast<std::size_t>(i)] += h;
        xm[static_cast<std::size_t>(i)] -= h;
        const double fd = (c.log_r(xp) - c.log_r(xm)) / (2.0 * h);
        CHECK(g[static_cast<std::size_t>(i)] == doctest::Approx(fd).epsilon(1e-5));
    }
}

TEST_CASE("tempering scales log r linearly") {
    Constraint c = gaussian_mixture_constraint({{0.0}}, {1.0}, 1.0);
    const Vec x = {0.7};
    CHECK(tempered_log_r(c, x, 3.0) == doctest::Approx(3.0 * c.log_r(x)).epsilon(1e-14));
    CHECK_THROWS_AS(tempered_log_r(c, x, 0.0), std::invalid_argument);
}
