#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "otlab/autodiff.hpp"
#include "otlab/rng.hpp"
#include "otlab/tensor.hpp"

namespace otlab {

enum class Activation { softplus, leaky_relu };

inline NodePtr activate(const NodePtr& x, Activation act, double slope) {
    return act == Activation::softplus ? softplus(x) : leaky_relu(x, slope);
}

// ---------------------------------------------------------------------------
// MLP: plain multilayer perceptron, used for transport maps t and for
// unconstrained potentials psi.
// ---------------------------------------------------------------------------

struct MlpModel {
    std::size_t in_dim = 0;
    std::size_t out_dim = 0;
    std::vector<std::size_t> hidden;
    Activation act = Activation::leaky_relu;
    double leaky_slope = 0.2;
    std::vector<Tensor> weights;  // (out, in) per layer
    std::vector<Tensor> biases;

    std::vector<Tensor*> params() {
        std::vector<Tensor*> p;
        for (auto& w : weights) p.push_back(&w);
        for (auto& b : biases) p.push_back(&b);
        return p;
    }
    std::vector<const Tensor*> params() const {
        std::vector<const Tensor*> p;
        for (auto& w : weights) p.push_back(&w);
        for (auto& b : biases) p.push_back(&b);
        return p;
    }
};

/// Weights ~ N(0, init_std^2), biases zero; deterministic per rng state.
inline MlpModel make_mlp(std::size_t in_dim, std::vector<std::size_t> hidden, std::size_t out_dim,
                         Activation act, double init_std, Rng& rng) {
    if (!(init_std > 0)) throw std::invalid_argument("make_mlp: init_std must be positive");
    MlpModel m;
    m.in_dim = in_dim;
    m.out_dim = out_dim;
    m.hidden = std::move(hidden);
    m.act = act;
    std::size_t prev = in_dim;
    for (std::size_t w : m.hidden) {
        m.weights.push_back(rng.normal_tensor({w, prev}, 0.0, init_std));
        m.biases.push_back(Tensor::zeros({w}));
        prev = w;
    }
    m.weights.push_back(rng.normal_tensor({out_dim, prev}, 0.0, init_std));
    m.biases.push_back(Tensor::zeros({out_dim}));
    return m;
}

struct MlpLeaves {
    std::vector<NodePtr> weights, biases;

    static MlpLeaves make(const MlpModel& m, bool trainable = true) {
        MlpLeaves l;
        for (const auto& w : m.weights)
            l.weights.push_back(trainable ? leaf(w) : constant(w));
        for (const auto& b : m.biases)
            l.biases.push_back(trainable ? leaf(b) : constant(b));
        return l;
    }
    std::vector<NodePtr> all() const {
        std::vector<NodePtr> p(weights);
        p.insert(p.end(), biases.begin(), biases.end());
        return p;
    }
};

inline NodePtr mlp_node(const MlpModel& m, const MlpLeaves& l, NodePtr x) {
    if (x->value.rank() != 2 || x->value.cols() != m.in_dim)
        throw std::invalid_argument("mlp_forward: input " + shape_str(x->value) +
                                    " does not match model dim " + std::to_string(m.in_dim));
    NodePtr h = std::move(x);
    for (std::size_t i = 0; i + 1 < m.weights.size(); ++i)
        h = activate(affine(h, l.weights[i], l.biases[i]), m.act, m.leaky_slope);
    return affine(h, l.weights.back(), l.biases.back());
}

struct GraphOut {
    NodePtr out;
    std::vector<NodePtr> params;
};

inline GraphOut mlp_graph(const MlpModel& m, const NodePtr& x) {
    auto l = MlpLeaves::make(m);
    return {mlp_node(m, l, x), l.all()};
}

inline Tensor mlp_forward(const MlpModel& m, const Tensor& x) {
    auto l = MlpLeaves::make(m, false);
    return mlp_node(m, l, constant(x))->value;
}

/// Per-row input gradient of a scalar-output MLP, shape (B, in_dim).
inline Tensor mlp_input_grad(const MlpModel& m, const Tensor& x) {
    if (m.out_dim != 1)
        throw std::invalid_argument("mlp_input_grad: model output must be scalar");
    auto l = MlpLeaves::make(m, false);
    auto xn = leaf(x);
    auto root = sum(mlp_node(m, l, xn));
    backward(root);
    return grad_of(xn);
}

// ---------------------------------------------------------------------------
// ICNN: dense input-convex network. Hidden-to-hidden weights (and the hidden
// readout) are constrained entrywise nonnegative, activations are softplus,
// every layer takes an unconstrained skip connection from the input. Output is
// scale * (core(x) + alpha/2 * |x|^2) per row.
// ---------------------------------------------------------------------------

struct IcnnModel {
    std::size_t in_dim = 0;
    std::vector<std::size_t> hidden;
    std::vector<Tensor> skip_w;    // (w_l, in_dim), unconstrained
    std::vector<Tensor> hidden_w;  // (w_{l+1}, w_l), entries >= 0
    std::vector<Tensor> biases;    // (w_l)
    Tensor readout_w;              // (1, w_last), entries >= 0
    Tensor readout_skip;           // (1, in_dim), unconstrained
    Tensor readout_b;              // (1)
    double alpha = 0.0;            // strong-convexity coefficient
    double scale = 1.0;            // output multiplier a

    std::vector<Tensor*> params() {
        std::vector<Tensor*> p;
        for (auto& w : skip_w) p.push_back(&w);
        for (auto& w : hidden_w) p.push_back(&w);
        for (auto& b : biases) p.push_back(&b);
        p.push_back(&readout_w);
        p.push_back(&readout_skip);
        p.push_back(&readout_b);
        return p;
    }
    std::vector<const Tensor*> params() const {
        std::vector<const Tensor*> p;
        for (auto& w : skip_w) p.push_back(&w);
        for (auto& w : hidden_w) p.push_back(&w);
        for (auto& b : biases) p.push_back(&b);
        p.push_back(&readout_w);
        p.push_back(&readout_skip);
        p.push_back(&readout_b);
        return p;
    }
};

/// Weights ~ N(0, init_std^2); constrained matrices take absolute values at
/// initialization so the nonnegativity invariant holds from the start.
inline IcnnModel make_icnn(std::size_t in_dim, std::vector<std::size_t> hidden, double init_std,
                           double alpha, double scale, Rng& rng) {
    if (hidden.empty()) throw std::invalid_argument("make_icnn: needs at least one hidden layer");
    if (!(init_std > 0)) throw std::invalid_argument("make_icnn: init_std must be positive");
    if (alpha < 0) throw std::invalid_argument("make_icnn: alpha must be nonnegative");
    if (!(scale > 0)) throw std::invalid_argument("make_icnn: scale must be positive");
    IcnnModel m;
    m.in_dim = in_dim;
    m.hidden = std::move(hidden);
    m.alpha = alpha;
    m.scale = scale;
    for (std::size_t l = 0; l < m.hidden.size(); ++l) {
        m.skip_w.push_back(rng.normal_tensor({m.hidden[l], in_dim}, 0.0, init_std));
        m.biases.push_back(Tensor::zeros({m.hidden[l]}));
        if (l + 1 < m.hidden.size()) {
            Tensor w = rng.normal_tensor({m.hidden[l + 1], m.hidden[l]}, 0.0, init_std);
            for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::abs(w[i]);
            m.hidden_w.push_back(std::move(w));
        }
    }
    Tensor rw = rng.normal_tensor({1, m.hidden.back()}, 0.0, init_std);
    for (std::size_t i = 0; i < rw.size(); ++i) rw[i] = std::abs(rw[i]);
    m.readout_w = std::move(rw);
    m.readout_skip = rng.normal_tensor({1, in_dim}, 0.0, init_std);
    m.readout_b = Tensor::zeros({1});
    return m;
}

/// Clamp constrained weights at zero; all other parameters unchanged.
inline IcnnModel project_nonneg(IcnnModel m) {
    for (auto& w : m.hidden_w)
        for (std::size_t i = 0; i < w.size(); ++i)
            if (w[i] < 0) w[i] = 0;
    for (std::size_t i = 0; i < m.readout_w.size(); ++i)
        if (m.readout_w[i] < 0) m.readout_w[i] = 0;
    return m;
}

inline void check_nonneg(const IcnnModel& m) {
    for (const auto& w : m.hidden_w)
        for (std::size_t i = 0; i < w.size(); ++i)
            if (w[i] < 0)
                throw std::runtime_error("IcnnModel: hidden weight invariant violated (entry " +
                                         std::to_string(w[i]) + " < 0)");
    for (std::size_t i = 0; i < m.readout_w.size(); ++i)
        if (m.readout_w[i] < 0)
            throw std::runtime_error("IcnnModel: readout weight invariant violated");
}

struct IcnnLeaves {
    std::vector<NodePtr> skip_w, hidden_w, biases;
    NodePtr readout_w, readout_skip, readout_b;

    static IcnnLeaves make(const IcnnModel& m, bool trainable = true) {
        auto wrap = [trainable](const Tensor& t) { return trainable ? leaf(t) : constant(t); };
        IcnnLeaves l;
        for (const auto& w : m.skip_w) l.skip_w.push_back(wrap(w));
        for (const auto& w : m.hidden_w) l.hidden_w.push_back(wrap(w));
        for (const auto& b : m.biases) l.biases.push_back(wrap(b));
        l.readout_w = wrap(m.readout_w);
        l.readout_skip = wrap(m.readout_skip);
        l.readout_b = wrap(m.readout_b);
        return l;
    }
    std::vector<NodePtr> all() const {
        std::vector<NodePtr> p(skip_w);
        p.insert(p.end(), hidden_w.begin(), hidden_w.end());
        p.insert(p.end(), biases.begin(), biases.end());
        p.push_back(readout_w);
        p.push_back(readout_skip);
        p.push_back(readout_b);
        return p;
    }
};

namespace detail {

/// Pre-activation nodes u_l for every layer plus the raw core readout (B,1).
struct IcnnTrace {
    std::vector<NodePtr> pre;  // u_l
    NodePtr core;              // (B,1)
};

inline IcnnTrace icnn_trace(const IcnnModel& m, const IcnnLeaves& l, const NodePtr& x) {
    if (x->value.rank() != 2 || x->value.cols() != m.in_dim)
        throw std::invalid_argument("icnn_forward: input " + shape_str(x->value) +
                                    " does not match model dim " + std::to_string(m.in_dim));
    check_nonneg(m);
    IcnnTrace tr;
    NodePtr z;
    for (std::size_t layer = 0; layer < m.hidden.size(); ++layer) {
        NodePtr u = affine(x, l.skip_w[layer], l.biases[layer]);
        if (layer > 0) u = add(u, affine(z, l.hidden_w[layer - 1]));
        tr.pre.push_back(u);
        z = softplus(u);
    }
    tr.core = add(affine(z, l.readout_w, l.readout_b), affine(x, l.readout_skip));
    return tr;
}

}  // namespace detail

/// Scalar-per-row convex output, shape (B,).
inline NodePtr icnn_value_node(const IcnnModel& m, const IcnnLeaves& l, const NodePtr& x) {
    auto tr = detail::icnn_trace(m, l, x);
    const std::size_t B = x->value.rows();
    NodePtr out = reshape(tr.core, {B});
    if (m.alpha != 0.0) out = add(out, scale(dot(x, x), m.alpha / 2.0));
    return scale(out, m.scale);
}

/// Input gradient as an explicit graph, shape (B, in_dim). The gradient is a
/// composition of primitives, so it stays differentiable with respect to both
/// the parameters and the input batch (second-order path).
inline NodePtr icnn_grad_node(const IcnnModel& m, const IcnnLeaves& l, const NodePtr& x) {
    auto tr = detail::icnn_trace(m, l, x);
    const std::size_t B = x->value.rows();
    const std::size_t L = m.hidden.size();
    auto ones = constant(Tensor::full({B, 1}, 1.0));
    NodePtr delta = mul(logistic(tr.pre[L - 1]), matmul(ones, l.readout_w));
    NodePtr xg = matmul(delta, l.skip_w[L - 1]);
    for (std::size_t layer = L - 1; layer-- > 0;) {
        delta = mul(logistic(tr.pre[layer]), matmul(delta, l.hidden_w[layer]));
        xg = add(xg, matmul(delta, l.skip_w[layer]));
    }
    xg = add(xg, matmul(ones, l.readout_skip));
    if (m.alpha != 0.0) xg = add(xg, scale(x, m.alpha));
    return scale(xg, m.scale);
}

inline GraphOut icnn_graph(const IcnnModel& m, const NodePtr& x) {
    auto l = IcnnLeaves::make(m);
    return {icnn_value_node(m, l, x), l.all()};
}

inline GraphOut icnn_grad_graph(const IcnnModel& m, const NodePtr& x) {
    auto l = IcnnLeaves::make(m);
    return {icnn_grad_node(m, l, x), l.all()};
}

inline Tensor icnn_forward(const IcnnModel& m, const Tensor& x) {
    auto l = IcnnLeaves::make(m, false);
    return icnn_value_node(m, l, constant(x))->value;
}

inline Tensor icnn_input_grad(const IcnnModel& m, const Tensor& x) {
    auto l = IcnnLeaves::make(m, false);
    return icnn_grad_node(m, l, constant(x))->value;
}

// ---------------------------------------------------------------------------
// Potential wrapper. A potential is either a plain MLP psi(y), or the
// c-concave form psi(y) = |y|^2/2 - v(y) with v an ICNN (quadratic cost).
// ---------------------------------------------------------------------------

enum class PotentialKind { mlp, cconcave_icnn };

struct PotentialModel {
    PotentialKind kind = PotentialKind::mlp;
    MlpModel mlp;
    IcnnModel icnn;

    std::vector<Tensor*> params() {
        return kind == PotentialKind::mlp ? mlp.params() : icnn.params();
    }
};

struct PotentialLeaves {
    PotentialKind kind;
    MlpLeaves mlp;
    IcnnLeaves icnn;

    static PotentialLeaves make(const PotentialModel& p, bool trainable = true) {
        PotentialLeaves l;
        l.kind = p.kind;
        if (p.kind == PotentialKind::mlp)
            l.mlp = MlpLeaves::make(p.mlp, trainable);
        else
            l.icnn = IcnnLeaves::make(p.icnn, trainable);
        return l;
    }
    std::vector<NodePtr> all() const {
        return kind == PotentialKind::mlp ? mlp.all() : icnn.all();
    }
};

/// psi values per row, shape (B,).
inline NodePtr potential_node(const PotentialModel& p, const PotentialLeaves& l, const NodePtr& y) {
    if (p.kind == PotentialKind::mlp) {
        const std::size_t B = y->value.rows();
        return reshape(mlp_node(p.mlp, l.mlp, y), {B});
    }
    return sub(scale(dot(y, y), 0.5), icnn_value_node(p.icnn, l.icnn, y));
}

inline Tensor potential_values(const PotentialModel& p, const Tensor& y) {
    auto l = PotentialLeaves::make(p, false);
    return potential_node(p, l, constant(y))->value;
}

/// Per-row input gradient of psi, shape (B, n).
inline Tensor potential_input_grad(const PotentialModel& p, const Tensor& y) {
    if (p.kind == PotentialKind::mlp) return mlp_input_grad(p.mlp, y);
    Tensor g = icnn_input_grad(p.icnn, y);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = y[i] - g[i];
    return g;
}

}  // namespace otlab
