#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace outsampler {

using Vec = std::vector<double>;

inline bool all_finite(const Vec& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline double gaussian_logpdf(const Vec& x, const Vec& mean, double var) {
    if (var <= 0.0) throw std::invalid_argument("gaussian_logpdf: var must be positive");
    if (x.size() != mean.size()) throw std::invalid_argument("gaussian_logpdf: dimension mismatch");
    constexpr double log2pi = 1.8378770664093454835606594728112;
    double acc = 0.0;
    const double inv2v = 0.5 / var;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - mean[i];
        acc -= d * d * inv2v;
    }
    return acc - 0.5 * static_cast<double>(x.size()) * (log2pi + std::log(var));
}

inline double gaussian_logpdf_std(const Vec& x) {
    constexpr double log2pi = 1.8378770664093454835606594728112;
    double acc = 0.0;
    for (double xi : x) acc -= 0.5 * xi * xi;
    return acc - 0.5 * static_cast<double>(x.size()) * log2pi;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x * 0.70710678118654752440); }
inline double normal_pdf(double x) {
    return 0.3989422804014326779399461 * std::exp(-0.5 * x * x);
}

inline double logsumexp(const Vec& v) {
    double m = v[0];
    for (double x : v) m = std::max(m, x);
    double acc = 0.0;
    for (double x : v) acc += std::exp(x - m);
    return m + std::log(acc);
}

/// Reverse-mode tape over vector-valued nodes. Nodes are appended in
/// topological order; backward() walks them once in reverse. One tape per
/// loss evaluation; single writer.
class Tape {
public:
    using NodeId = int;

    NodeId next_id() const { return static_cast<NodeId>(nodes_.size()); }

    NodeId push(Vec value, std::function<void(Tape&)> back = nullptr) {
        nodes_.push_back(Node{std::move(value), {}, std::move(back)});
        return static_cast<NodeId>(nodes_.size()) - 1;
    }

    /// Leaf with no parents (parameters and constants alike; constants simply
    /// never have their grad read).
    NodeId leaf(Vec value) { return push(std::move(value)); }
    NodeId leaf(double v) { return push(Vec{v}); }

    const Vec& value(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
    double scalar(NodeId id) const {
        const Vec& v = value(id);
        if (v.size() != 1) throw std::invalid_argument("Tape::scalar: node is not scalar");
        return v[0];
    }
    int dim(NodeId id) const { return static_cast<int>(value(id).size()); }

    Vec& grad(NodeId id) {
        Node& n = nodes_.at(static_cast<std::size_t>(id));
        if (n.grad.size() != n.value.size()) n.grad.assign(n.value.size(), 0.0);
        return n.grad;
    }

    /// Reverse sweep from a scalar loss node. Visits each node exactly once.
    void backward(NodeId loss) {
        if (loss < 0 || loss >= next_id())
            throw std::invalid_argument("backward: dangling node id");
        if (nodes_[static_cast<std::size_t>(loss)].value.size() != 1)
            throw std::invalid_argument("backward: loss node must be scalar");
        for (auto& n : nodes_) n.grad.assign(n.value.size(), 0.0);
        nodes_[static_cast<std::size_t>(loss)].grad[0] = 1.0;
        for (int i = loss; i >= 0; --i) {
            auto& n = nodes_[static_cast<std::size_t>(i)];
            if (n.back) n.back(*this);
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Vec value;
        Vec grad;
        std::function<void(Tape&)> back;
    };
    std::vector<Node> nodes_;
};

// Primitive ops. Each records a node whose backward lambda scatters the
// output cotangent into its parents' grad slots.
namespace op {

using NodeId = Tape::NodeId;

inline NodeId add(Tape& t, NodeId a, NodeId b) {
    const Vec& va = t.value(a);
    const Vec& vb = t.value(b);
    if (va.size() != vb.size()) throw std::invalid_argument("op::add: dimension mismatch");
    Vec out(va.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
    const NodeId self = t.next_id();
    return t.push(std::move(out), [self, a, b](Tape& tp) {
        const Vec g = tp.grad(self);
        Vec& ga = tp.grad(a);
        Vec& gb = tp.grad(b);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i];
            gb[i] += g[i];
        }
    });
}

inline NodeId sub(Tape& t, NodeId a, NodeId b) {
    const Vec& va = t.value(a);
    const Vec& vb = t.value(b);
    if (va.size() != vb.size()) throw std::invalid_argument("op::sub: dimension mismatch");
    Vec out(va.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] - vb[i];
    const NodeId self = t.next_id();
    return t.push(std::move(out), [self, a, b](Tape& tp) {
        const Vec g = tp.grad(self);
        Vec& ga = tp.grad(a);
        Vec& gb = tp.grad(b);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i];
            gb[i] -= g[i];
        }
    });
}

inline NodeId mul(Tape& t, NodeId a, NodeId b) {
    const Vec& va = t.value(a);
    const Vec& vb = t.value(b);
    if (va.size() != vb.size()) throw std::invalid_argument("op::mul: dimension mismatch");
    Vec out(va.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
    const NodeId self = t.next_id();
    return t.push(std::move(out), [self, a, b](Tape& tp) {
        const Vec g = tp.grad(self);
        const Vec& va2 = tp.value(a);
        const Vec& vb2 = tp.value(b);
        Vec& ga = tp.grad(a);
        Vec& gb = tp.grad(b);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] * vb2[i];
            gb[i] += g[i] * va2[i];
        }
    });
}

inline NodeId scale(Tape& t, NodeId a, double c) {
    Vec out = t.value(a);
    for (double& x : out) x *= c;
    const NodeId self = t.next_id();
    return t.push(std::move(out), [self, a, c](Tape& tp) {
        const Vec g = tp.grad(self);
        Vec& ga = tp.grad(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
}

/// a + c*b, elementwise.
inline NodeId add_scaled(Tape& t, NodeId a, NodeId b, double c) {
    const Vec& va = t.value(a);
    const Vec& vb = t.value(b);
    if (va.size() != vb.size()) throw std::invalid_argument("op::add_scaled: dimension mismatch");
    Vec out(va.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + c * vb[i];
    const NodeId self = t.next_id();
    return t.push(std::move(out), [self, a, b, c](Tape& tp) {
        const Vec g = tp.grad(self);
        Vec& ga = tp.grad(a);
        Vec& gb = tp.grad(b);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i];
            gb[i] += c * g[i];
        }
    });
}

/// Scalar node times vector node.
inline NodeId scalar_mul(Tape& t, NodeId s, NodeId v) {
    const double sv = t.scalar(s);
    Vec out = t.value(v);
    for (double& x : out) x *= sv;
    const NodeId self = t.next_id();
    return t.push(std::move(out), [self, s, v](Tape& tp) {
        const Vec g = tp.grad(self);
        const double sv2 = tp.scalar(s);
        const Vec& vv = tp.value(v);
        Vec& gs = tp.grad(s);
        Vec& gv = tp.grad(v);
        for (std::size_t i = 0; i < g.size(); ++i) {
            gv[i] += sv2 * g[i];
            gs[0] += vv[i] * g[i];
        }
    });
}

/// Dense matrix (rows x cols, row-major, as a node) times vector node.
inline NodeId matvec(Tape& t, NodeId W, NodeId x, int rows, int cols) {
    const Vec& w = t.value(W);
    const Vec& v = t.value(x);
    if (static_cast<int>(w.size()) != rows * cols || static_cast<int>(v.size()) != cols)
        throw std::invalid_argument("op::matvec: dimension mismatch");
    Vec out(static_cast<std::size_t>(rows), 0.0);
    for (int i = 0; i < rows; ++i) {
        const double* row = w.data() + static_cast<std::size_t>(i) * cols;
        double acc = 0.0;
        for (int j = 0; j < cols; ++j) acc += row[j] * v[j];
        out[static_cast<std::size_t>(i)] = acc;
    }
    const NodeId self = t.next_id();
    return t.push(std::move(out), [self, W, x, rows, cols](Tape& tp) {
        const Vec g = tp.grad(self);
        const Vec& w2 = tp.value(W);
        const Vec& v2 = tp.value(x);
        Vec& gw = tp.grad(W);
        Vec& gx = tp.grad(x);
        for (int i = 0; i < rows; ++i) {
            const double gi = g[static_cast<std::size_t>(i)];
            if (gi == 0.0) continue;
            const double* row = w2.data() + static_cast<std::size_t>(i) * cols;
            double* grow = gw.data() + static_cast<std::size_t>(i) * cols;
            for (int j = 0; j < cols; ++j) {
                grow[j] += gi * v2[j];
                gx[static_cast<std::size_t>(j)] += gi * row[j];
            }
        }
    });
}

template <typename F, typename DF>
inline NodeId unary_elementwise(Tape& t, NodeId a, F f, DF df) {
    const Vec& va = t.value(a);
    Vec out(va.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(va[i]);
    const NodeId self = t.next_id();
    return t.push(std::move(out), [self, a, df](Tape& tp) {
        const Vec g = tp.grad(self);
        const Vec& va2 = tp.value(a);
        Vec& ga = tp.grad(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(va2[i]);
    });
}

inline NodeId tanh(Tape& t, NodeId a) {
    return unary_elementwise(
        t, a, [](double x) { return std::tanh(x); },
        [](double x) {
            const double th = std::tanh(x);
            return 1.0 - th * th;
        });
}

inline NodeId gelu(Tape& t, NodeId a) {
    // exact (erf-based) GELU
    return unary_elementwise(
        t, a, [](double x) { return x * normal_cdf(x); },
        [](double x) { return normal_cdf(x) + x * normal_pdf(x); });
}

inline NodeId sin(Tape& t, NodeId a) {
    return unary_elementwise(
        t, a, [](double x) { return std::sin(x); }, [](double x) { return std::cos(x); });
}

inline NodeId cos(Tape& t, NodeId a) {
    return unary_elementwise(
        t, a, [](double x) { return std::cos(x); }, [](double x) { return -std::sin(x); });
}

inline NodeId exp(Tape& t, NodeId a) {
    return unary_elementwise(
        t, a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

inline NodeId sqrt(Tape& t, NodeId a) {
    return unary_elementwise(
        t, a, [](double x) { return std::sqrt(x); },
        [](double x) { return 0.5 / std::sqrt(x); });
}

inline NodeId norm_cdf(Tape& t, NodeId a) {
    return unary_elementwise(
        t, a, [](double x) { return normal_cdf(x); }, [](double x) { return normal_pdf(x); });
}

/// log(sigmoid(x)), computed stably.
inline NodeId log_sigmoid(Tape& t, NodeId a) {
    return unary_elementwise(
        t, a,
        [](double x) { return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); },
        [](double x) { return x >= 0.0 ? std::exp(-x) / (1.0 + std::exp(-x)) : 1.0 / (1.0 + std::exp(x)); });
}

inline NodeId sum(Tape& t, NodeId a) {
    const Vec& va = t.value(a);
    double acc = 0.0;
    for (double x : va) acc += x;
    const NodeId self = t.next_id();
    return t.push(Vec{acc}, [self, a](Tape& tp) {
        const double g = tp.grad(self)[0];
        Vec& ga = tp.grad(a);
        for (double& x : ga) x += g;
    });
}

inline NodeId dot(Tape& t, NodeId a, NodeId b) { return sum(t, mul(t, a, b)); }

/// Sum of squared entries (scalar).
inline NodeId sumsq(Tape& t, NodeId a) {
    const Vec& va = t.value(a);
    double acc = 0.0;
    for (double x : va) acc += x * x;
    const NodeId self = t.next_id();
    return t.push(Vec{acc}, [self, a](Tape& tp) {
        const double g = tp.grad(self)[0];
        const Vec& va2 = tp.value(a);
        Vec& ga = tp.grad(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += 2.0 * g * va2[i];
    });
}

inline NodeId square(Tape& t, NodeId a) {
    return unary_elementwise(
        t, a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

inline NodeId concat(Tape& t, const std::vector<NodeId>& parts) {
    Vec out;
    std::vector<int> sizes;
    for (NodeId p : parts) {
        const Vec& v = t.value(p);
        sizes.push_back(static_cast<int>(v.size()));
        out.insert(out.end(), v.begin(), v.end());
    }
    const NodeId self = t.next_id();
    return t.push(std::move(out), [self, parts, sizes](Tape& tp) {
        const Vec g = tp.grad(self);
        std::size_t off = 0;
        for (std::size_t k = 0; k < parts.size(); ++k) {
            Vec& gp = tp.grad(parts[k]);
            for (int i = 0; i < sizes[k]; ++i) gp[static_cast<std::size_t>(i)] += g[off + static_cast<std::size_t>(i)];
            off += static_cast<std::size_t>(sizes[k]);
        }
    });
}

inline NodeId slice(Tape& t, NodeId a, int start, int len) {
    const Vec& va = t.value(a);
    if (start < 0 || start + len > static_cast<int>(va.size()))
        throw std::invalid_argument("op::slice: out of range");
    Vec out(va.begin() + start, va.begin() + start + len);
    const NodeId self = t.next_id();
    return t.push(std::move(out), [self, a, start, len](Tape& tp) {
        const Vec g = tp.grad(self);
        Vec& ga = tp.grad(a);
        for (int i = 0; i < len; ++i) ga[static_cast<std::size_t>(start + i)] += g[static_cast<std::size_t>(i)];
    });
}

/// Stack scalar nodes into one vector node.
inline NodeId stack(Tape& t, const std::vector<NodeId>& scalars) {
    Vec out;
    out.reserve(scalars.size());
    for (NodeId s : scalars) out.push_back(t.scalar(s));
    const NodeId self = t.next_id();
    return t.push(std::move(out), [self, scalars](Tape& tp) {
        const Vec g = tp.grad(self);
        for (std::size_t i = 0; i < scalars.size(); ++i) tp.grad(scalars[i])[0] += g[i];
    });
}

inline NodeId logsumexp(Tape& t, NodeId a) {
    const Vec& va = t.value(a);
    const double lse = outsampler::logsumexp(va);
    const NodeId self = t.next_id();
    return t.push(Vec{lse}, [self, a, lse](Tape& tp) {
        const double g = tp.grad(self)[0];
        const Vec& va2 = tp.value(a);
        Vec& ga = tp.grad(a);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * std::exp(va2[i] - lse);
    });
}

/// log softmax(logits)[index], as a scalar node.
inline NodeId log_softmax_at(Tape& t, NodeId logits, int index) {
    const Vec& v = t.value(logits);
    if (index < 0 || index >= static_cast<int>(v.size()))
        throw std::invalid_argument("op::log_softmax_at: index out of range");
    const double lse = outsampler::logsumexp(v);
    const double out = v[static_cast<std::size_t>(index)] - lse;
    const NodeId self = t.next_id();
    return t.push(Vec{out}, [self, logits, index, lse](Tape& tp) {
        const double g = tp.grad(self)[0];
        const Vec& v2 = tp.value(logits);
        Vec& gl = tp.grad(logits);
        for (std::size_t i = 0; i < gl.size(); ++i) {
            const double p = std::exp(v2[i] - lse);
            gl[i] += g * ((static_cast<int>(i) == index ? 1.0 : 0.0) - p);
        }
    });
}

/// Diagonal Gaussian log-density with scalar variance: sum_i log N(x_i; mean_i, var).
/// Differentiable w.r.t. x and mean; var is a constant.
inline NodeId gaussian_logpdf(Tape& t, NodeId x, NodeId mean, double var) {
    if (var <= 0.0) throw std::invalid_argument("op::gaussian_logpdf: var must be positive");
    const Vec& vx = t.value(x);
    const Vec& vm = t.value(mean);
    if (vx.size() != vm.size()) throw std::invalid_argument("op::gaussian_logpdf: dimension mismatch");
    const double val = outsampler::gaussian_logpdf(vx, vm, var);
    const NodeId self = t.next_id();
    return t.push(Vec{val}, [self, x, mean, var](Tape& tp) {
        const double g = tp.grad(self)[0];
        const Vec& vx2 = tp.value(x);
        const Vec& vm2 = tp.value(mean);
        Vec& gx = tp.grad(x);
        Vec& gm = tp.grad(mean);
        for (std::size_t i = 0; i < vx2.size(); ++i) {
            const double d = (vx2[i] - vm2[i]) / var;
            gx[i] -= g * d;
            gm[i] += g * d;
        }
    });
}

}  // namespace op

}  // namespace outsampler
