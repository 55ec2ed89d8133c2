#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "outsampler/mlp.hpp"
#include "outsampler/tape.hpp"

namespace outsampler {

/// Linear ramp beta_start -> beta_final over anneal_steps, constant after.
struct TemperatureSchedule {
    double beta_start = 1.0;
    double beta_final = 1.0;
    long anneal_steps = 0;

    double beta(long step) const {
        if (anneal_steps <= 0) return beta_final;
        const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(anneal_steps));
        return beta_start + (beta_final - beta_start) * frac;
    }
};

enum class ConstraintKind { gaussian_mixture, halfspace_logistic, classifier, uniform };

/// Positive constraint function r(x, y), exposed as log r.
struct Constraint {
    ConstraintKind kind = ConstraintKind::uniform;
    bool differentiable = true;

    // gaussian_mixture
    std::vector<Vec> centers;
    Vec weights;
    double var = 1.0;
    // halfspace_logistic
    Vec normal;
    double offset = 0.0;
    double sharpness = 1.0;
    // classifier
    MlpParams net;
    int label = 0;

    double log_r(const Vec& x) const {
        switch (kind) {
            case ConstraintKind::uniform:
                return 0.0;
            case ConstraintKind::gaussian_mixture: {
                Vec terms(centers.size());
                for (std::size_t k = 0; k < centers.size(); ++k)
                    terms[k] = std::log(weights[k]) + gaussian_logpdf(x, centers[k], var);
                return logsumexp(terms);
            }
            case ConstraintKind::halfspace_logistic: {
                double a = offset;
                for (std::size_t i = 0; i < normal.size(); ++i) a -= normal[i] * x[i];
                const double s = sharpness * a;
                return s >= 0.0 ? -std::log1p(std::exp(-s)) : s - std::log1p(std::exp(s));
            }
            case ConstraintKind::classifier: {
                const Vec logits = mlp_forward(net, x);
                return logits[static_cast<std::size_t>(label)] - logsumexp(logits);
            }
        }
        throw std::logic_error("Constraint::log_r: unknown kind");
    }

    Tape::NodeId log_r(Tape& t, Tape::NodeId x) const {
        if (!differentiable) throw std::invalid_argument("Constraint: not differentiable");
        switch (kind) {
            case ConstraintKind::uniform:
                return t.leaf(0.0);
            case ConstraintKind::gaussian_mixture: {
                std::vector<Tape::NodeId> terms;
                for (std::size_t k = 0; k < centers.size(); ++k) {
                    Tape::NodeId lp = op::gaussian_logpdf(t, x, t.leaf(centers[k]), var);
                    terms.push_back(op::add(t, lp, t.leaf(std::log(weights[k]))));
                }
                return op::logsumexp(t, op::stack(t, terms));
            }
            case ConstraintKind::halfspace_logistic: {
                Tape::NodeId proj = op::dot(t, t.leaf(normal), x);
                Tape::NodeId arg = op::scale(t, op::sub(t, t.leaf(offset), proj), sharpness);
                return op::log_sigmoid(t, arg);
            }
            case ConstraintKind::classifier: {
                MlpNodes n = stage_params(t, net);
                Tape::NodeId logits = mlp_forward(t, net, n, x);
                return op::log_softmax_at(t, logits, label);
            }
        }
        throw std::logic_error("Constraint::log_r(tape): unknown kind");
    }
};

/// log r(x) = logsumexp_k [log w_k + log N(x; c_k, var I)].
inline Constraint gaussian_mixture_constraint(std::vector<Vec> centers, Vec weights, double var) {
    if (var <= 0.0) throw std::invalid_argument("gaussian_mixture_constraint: var <= 0");
    if (centers.empty() || centers.size() != weights.size())
        throw std::invalid_argument("gaussian_mixture_constraint: centers/weights mismatch");
    double sum = 0.0;
    for (double w : weights) {
        if (w <= 0.0) throw std::invalid_argument("gaussian_mixture_constraint: weights must be positive");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("gaussian_mixture_constraint: weights must sum to 1");
    Constraint c;
    c.kind = ConstraintKind::gaussian_mixture;
    c.centers = std::move(centers);
    c.weights = std::move(weights);
    c.var = var;
    return c;
}

/// log r(x) = log sigmoid(sharpness * (offset - normal . x)).
inline Constraint halfspace_logistic_constraint(Vec normal, double offset, double sharpness) {
    double nrm = 0.0;
    for (double v : normal) nrm += v * v;
    if (nrm <= 0.0) throw std::invalid_argument("halfspace_logistic_constraint: zero normal");
    if (sharpness <= 0.0) throw std::invalid_argument("halfspace_logistic_constraint: sharpness <= 0");
    Constraint c;
    c.kind = ConstraintKind::halfspace_logistic;
    c.normal = std::move(normal);
    c.offset = offset;
    c.sharpness = sharpness;
    return c;
}

/// Default instantiation of the lower-moon constraint.
inline Constraint lower_moon_constraint() {
    return halfspace_logistic_constraint({0.0, 1.0}, -0.1, 20.0);
}

/// log r(x) = log softmax(net(x))[label].
inline Constraint classifier_constraint(MlpParams net, int label) {
    net.validate();
    if (label < 0 || label >= net.output_dim())
        throw std::invalid_argument("classifier_constraint: label out of range");
    Constraint c;
    c.kind = ConstraintKind::classifier;
    c.net = std::move(net);
    c.label = label;
    return c;
}

inline Constraint uniform_constraint() { return Constraint{}; }

inline double tempered_log_r(const Constraint& c, const Vec& x, double beta) {
    if (beta <= 0.0) throw std::invalid_argument("tempered_log_r: beta <= 0");
    return beta * c.log_r(x);
}

}  // namespace outsampler
