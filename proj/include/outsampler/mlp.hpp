#pragma once

#include <stdexcept>
#include <vector>

#include "outsampler/rng.hpp"
#include "outsampler/tape.hpp"

namespace outsampler {

enum class Activation { tanh, gelu, identity };

struct Layer {
    int in = 0;
    int out = 0;
    Vec W;  // out x in, row-major
    Vec b;  // out
};

/// Dense network parameters. Hidden layers use `act`; the final layer is
/// always linear.
struct MlpParams {
    std::vector<Layer> layers;
    Activation act = Activation::tanh;

    int input_dim() const { return layers.empty() ? 0 : layers.front().in; }
    int output_dim() const { return layers.empty() ? 0 : layers.back().out; }

    std::size_t num_params() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.W.size() + l.b.size();
        return n;
    }

    void validate() const {
        if (layers.empty()) throw std::invalid_argument("MlpParams: no layers");
        for (std::size_t k = 0; k < layers.size(); ++k) {
            const auto& l = layers[k];
            if (static_cast<int>(l.W.size()) != l.in * l.out ||
                static_cast<int>(l.b.size()) != l.out)
                throw std::invalid_argument("MlpParams: layer shape mismatch");
            if (k > 0 && layers[k - 1].out != l.in)
                throw std::invalid_argument("MlpParams: consecutive layer dims do not chain");
            if (!all_finite(l.W) || !all_finite(l.b))
                throw std::invalid_argument("MlpParams: non-finite entry");
        }
    }
};

/// Weights ~ N(0, 1/fan_in), biases 0. zero_last zeroes the final layer so
/// the network starts as the constant-zero map.
inline MlpParams make_mlp(int in, const std::vector<int>& hidden, int out, Activation act,
                          RngStream& rng, bool zero_last = false) {
    MlpParams p;
    p.act = act;
    std::vector<int> dims;
    dims.push_back(in);
    for (int h : hidden) dims.push_back(h);
    dims.push_back(out);
    for (std::size_t k = 0; k + 1 < dims.size(); ++k) {
        Layer l;
        l.in = dims[k];
        l.out = dims[k + 1];
        l.W.resize(static_cast<std::size_t>(l.in) * l.out);
        l.b.assign(static_cast<std::size_t>(l.out), 0.0);
        const bool zero = zero_last && k + 2 == dims.size();
        const double s = 1.0 / std::sqrt(static_cast<double>(l.in));
        for (double& w : l.W) w = zero ? 0.0 : s * rng.normal();
        p.layers.push_back(std::move(l));
    }
    return p;
}

inline Vec apply_activation(Activation act, Vec v) {
    switch (act) {
        case Activation::tanh:
            for (double& x : v) x = std::tanh(x);
            break;
        case Activation::gelu:
            for (double& x : v) x = x * normal_cdf(x);
            break;
        case Activation::identity:
            break;
    }
    return v;
}

inline Vec mlp_forward(const MlpParams& p, const Vec& input) {
    if (static_cast<int>(input.size()) != p.input_dim())
        throw std::invalid_argument("mlp_forward: input dimension mismatch");
    if (!all_finite(input)) throw std::invalid_argument("mlp_forward: non-finite input");
    Vec x = input;
    for (std::size_t k = 0; k < p.layers.size(); ++k) {
        const Layer& l = p.layers[k];
        Vec y(static_cast<std::size_t>(l.out));
        for (int i = 0; i < l.out; ++i) {
            const double* row = l.W.data() + static_cast<std::size_t>(i) * l.in;
            double acc = l.b[static_cast<std::size_t>(i)];
            for (int j = 0; j < l.in; ++j) acc += row[j] * x[static_cast<std::size_t>(j)];
            y[static_cast<std::size_t>(i)] = acc;
        }
        x = (k + 1 < p.layers.size()) ? apply_activation(p.act, std::move(y)) : std::move(y);
    }
    return x;
}

/// Tape node ids of one network's parameters, for taped forward passes.
struct MlpNodes {
    std::vector<Tape::NodeId> W, b;
};

inline MlpNodes stage_params(Tape& t, const MlpParams& p) {
    MlpNodes n;
    for (const auto& l : p.layers) {
        n.W.push_back(t.leaf(l.W));
        n.b.push_back(t.leaf(l.b));
    }
    return n;
}

inline Tape::NodeId mlp_forward(Tape& t, const MlpParams& p, const MlpNodes& nodes,
                                Tape::NodeId input) {
    if (t.dim(input) != p.input_dim())
        throw std::invalid_argument("mlp_forward(tape): input dimension mismatch");
    Tape::NodeId x = input;
    for (std::size_t k = 0; k < p.layers.size(); ++k) {
        const Layer& l = p.layers[k];
        Tape::NodeId y = op::add(t, op::matvec(t, nodes.W[k], x, l.out, l.in), nodes.b[k]);
        if (k + 1 < p.layers.size()) {
            switch (p.act) {
                case Activation::tanh: y = op::tanh(t, y); break;
                case Activation::gelu: y = op::gelu(t, y); break;
                case Activation::identity: break;
            }
        }
        x = y;
    }
    return x;
}

inline Vec flatten(const MlpParams& p) {
    Vec out;
    out.reserve(p.num_params());
    for (const auto& l : p.layers) {
        out.insert(out.end(), l.W.begin(), l.W.end());
        out.insert(out.end(), l.b.begin(), l.b.end());
    }
    return out;
}

inline void unflatten(MlpParams& p, const Vec& flat) {
    if (flat.size() != p.num_params())
        throw std::invalid_argument("unflatten: size mismatch");
    std::size_t off = 0;
    for (auto& l : p.layers) {
        std::copy(flat.begin() + static_cast<long>(off), flat.begin() + static_cast<long>(off + l.W.size()), l.W.begin());
        off += l.W.size();
        std::copy(flat.begin() + static_cast<long>(off), flat.begin() + static_cast<long>(off + l.b.size()), l.b.begin());
        off += l.b.size();
    }
}

/// Collect d(loss)/d(params) from a tape after backward(), flattened in the
/// same order as flatten().
inline Vec collect_grads(Tape& t, const MlpNodes& nodes) {
    Vec out;
    for (std::size_t k = 0; k < nodes.W.size(); ++k) {
        const Vec& gw = t.grad(nodes.W[k]);
        out.insert(out.end(), gw.begin(), gw.end());
        const Vec& gb = t.grad(nodes.b[k]);
        out.insert(out.end(), gb.begin(), gb.end());
    }
    return out;
}

}  // namespace outsampler
