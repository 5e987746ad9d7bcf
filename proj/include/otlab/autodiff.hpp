#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_set>
#include <vector>

#include "otlab/tensor.hpp"

namespace otlab {

// Reverse-mode differentiation over an enumerated primitive set. Graphs are
// built eagerly (values computed at construction) and used once per batch.
// Adding a primitive means adding its forward builder, its backward rule in
// backward(), and a finite-difference check in the test suite.

enum class Op {
    leaf,
    affine,      // x:(B,k) w:(m,k) [b:(m)] -> x*w^T + b
    matmul,      // x:(B,k) w:(k,m) -> x*w
    softplus,
    logistic,
    leaky_relu,  // attr = negative slope
    square,
    mul,         // elementwise, same shape
    dot,         // 1-D: scalar; 2-D: row-wise -> (B,)
    sum,         // -> scalar
    mean,        // -> scalar
    scale,       // attr = constant factor
    add,
    sub,
    concat,      // along axis 0
    clamp_min,   // attr = floor
    reshape,
    pow_const,   // attr = exponent, inputs > 0
};

inline const char* op_name(Op op) {
    switch (op) {
        case Op::leaf: return "leaf";
        case Op::affine: return "affine";
        case Op::matmul: return "matmul";
        case Op::softplus: return "softplus";
        case Op::logistic: return "logistic";
        case Op::leaky_relu: return "leaky_relu";
        case Op::square: return "square";
        case Op::mul: return "mul";
        case Op::dot: return "dot";
        case Op::sum: return "sum";
        case Op::mean: return "mean";
        case Op::scale: return "scale";
        case Op::add: return "add";
        case Op::sub: return "sub";
        case Op::concat: return "concat";
        case Op::clamp_min: return "clamp_min";
        case Op::reshape: return "reshape";
        case Op::pow_const: return "pow_const";
    }
    return "?";
}

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Op op = Op::leaf;
    std::vector<NodePtr> parents;
    double attr = 0.0;
    bool requires_grad = true;
    Tensor grad;
    bool grad_set = false;
};

inline NodePtr leaf(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    return n;
}

/// Leaf that never receives a gradient (frozen parameters, raw data).
inline NodePtr constant(Tensor v) {
    auto n = leaf(std::move(v));
    n->requires_grad = false;
    return n;
}

namespace detail {

inline NodePtr make_node(Op op, Tensor value, std::vector<NodePtr> parents, double attr = 0.0) {
    auto n = std::make_shared<Node>();
    n->op = op;
    n->value = std::move(value);
    n->parents = std::move(parents);
    n->attr = attr;
    n->requires_grad = false;
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    return n;
}

[[noreturn]] inline void shape_error(Op op, const std::string& msg) {
    throw std::invalid_argument(std::string(op_name(op)) + ": " + msg);
}

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<EMat>;
using MapC = Eigen::Map<const EMat>;

inline double stable_softplus(double x) {
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double stable_logistic(double x) {
    if (x >= 0) {
        const double e = std::exp(-x);
        return 1.0 / (1.0 + e);
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace detail

inline NodePtr affine(const NodePtr& x, const NodePtr& w, const NodePtr& b = nullptr) {
    using namespace detail;
    if (x->value.rank() != 2 || w->value.rank() != 2)
        shape_error(Op::affine, "expects 2-D input and weight, got " + shape_str(x->value) +
                                    " and " + shape_str(w->value));
    const std::size_t B = x->value.rows(), k = x->value.cols();
    const std::size_t m = w->value.rows();
    if (w->value.cols() != k)
        shape_error(Op::affine, "weight " + shape_str(w->value) + " does not match input " +
                                    shape_str(x->value));
    if (b && !(b->value.rank() == 1 && b->value.dim(0) == m))
        shape_error(Op::affine, "bias " + shape_str(b->value) + " does not match weight rows");
    Tensor y({B, m});
    MapC X(x->value.data(), B, k), W(w->value.data(), m, k);
    MapM Y(y.data(), B, m);
    Y.noalias() = X * W.transpose();
    if (b)
        for (std::size_t i = 0; i < B; ++i)
            for (std::size_t j = 0; j < m; ++j) y(i, j) += b->value[j];
    std::vector<NodePtr> parents = {x, w};
    if (b) parents.push_back(b);
    return make_node(Op::affine, std::move(y), std::move(parents));
}

inline NodePtr matmul(const NodePtr& x, const NodePtr& w) {
    using namespace detail;
    if (x->value.rank() != 2 || w->value.rank() != 2)
        shape_error(Op::matmul, "expects 2-D operands");
    const std::size_t B = x->value.rows(), k = x->value.cols(), m = w->value.cols();
    if (w->value.rows() != k)
        shape_error(Op::matmul, "inner dimensions differ: " + shape_str(x->value) + " vs " +
                                    shape_str(w->value));
    Tensor y({B, m});
    MapC X(x->value.data(), B, k), W(w->value.data(), k, m);
    MapM Y(y.data(), B, m);
    Y.noalias() = X * W;
    return make_node(Op::matmul, std::move(y), {x, w});
}

namespace detail {
inline NodePtr elementwise(Op op, const NodePtr& x, const std::function<double(double)>& f,
                           double attr = 0.0) {
    Tensor y(x->value.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(x->value[i]);
    return make_node(op, std::move(y), {x}, attr);
}
}  // namespace detail

inline NodePtr softplus(const NodePtr& x) {
    return detail::elementwise(Op::softplus, x, detail::stable_softplus);
}

inline NodePtr logistic(const NodePtr& x) {
    return detail::elementwise(Op::logistic, x, detail::stable_logistic);
}

inline NodePtr leaky_relu(const NodePtr& x, double slope) {
    return detail::elementwise(
        Op::leaky_relu, x, [slope](double v) { return v > 0 ? v : slope * v; }, slope);
}

inline NodePtr square(const NodePtr& x) {
    return detail::elementwise(Op::square, x, [](double v) { return v * v; });
}

inline NodePtr clamp_min(const NodePtr& x, double floor) {
    return detail::elementwise(
        Op::clamp_min, x, [floor](double v) { return v < floor ? floor : v; }, floor);
}

inline NodePtr pow_const(const NodePtr& x, double p) {
    return detail::elementwise(
        Op::pow_const, x, [p](double v) { return std::pow(v, p); }, p);
}

inline NodePtr scale(const NodePtr& x, double c) {
    return detail::elementwise(
        Op::scale, x, [c](double v) { return c * v; }, c);
}

namespace detail {
inline NodePtr binary_same_shape(Op op, const NodePtr& a, const NodePtr& b,
                                 const std::function<double(double, double)>& f) {
    if (!a->value.same_shape(b->value))
        shape_error(op, "operands differ: " + shape_str(a->value) + " vs " + shape_str(b->value));
    Tensor y(a->value.shape());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = f(a->value[i], b->value[i]);
    return make_node(op, std::move(y), {a, b});
}
}  // namespace detail

inline NodePtr add(const NodePtr& a, const NodePtr& b) {
    return detail::binary_same_shape(Op::add, a, b, [](double x, double y) { return x + y; });
}

inline NodePtr sub(const NodePtr& a, const NodePtr& b) {
    return detail::binary_same_shape(Op::sub, a, b, [](double x, double y) { return x - y; });
}

inline NodePtr mul(const NodePtr& a, const NodePtr& b) {
    return detail::binary_same_shape(Op::mul, a, b, [](double x, double y) { return x * y; });
}

/// 1-D pair: scalar inner product. 2-D pair of equal shape: row-wise inner
/// product, shape (B,).
inline NodePtr dot(const NodePtr& a, const NodePtr& b) {
    using namespace detail;
    if (!a->value.same_shape(b->value))
        shape_error(Op::dot, "operands differ: " + shape_str(a->value) + " vs " +
                                 shape_str(b->value));
    if (a->value.rank() == 1) {
        double s = 0;
        for (std::size_t i = 0; i < a->value.size(); ++i) s += a->value[i] * b->value[i];
        return make_node(Op::dot, Tensor::scalar(s), {a, b});
    }
    if (a->value.rank() == 2) {
        const std::size_t B = a->value.rows(), n = a->value.cols();
        Tensor y({B});
        for (std::size_t i = 0; i < B; ++i) {
            double s = 0;
            for (std::size_t j = 0; j < n; ++j) s += a->value(i, j) * b->value(i, j);
            y[i] = s;
        }
        return make_node(Op::dot, std::move(y), {a, b});
    }
    shape_error(Op::dot, "expects rank 1 or 2, got " + shape_str(a->value));
}

inline NodePtr sum(const NodePtr& x) {
    double s = 0;
    for (std::size_t i = 0; i < x->value.size(); ++i) s += x->value[i];
    return detail::make_node(Op::sum, Tensor::scalar(s), {x});
}

inline NodePtr mean(const NodePtr& x) {
    double s = 0;
    for (std::size_t i = 0; i < x->value.size(); ++i) s += x->value[i];
    return detail::make_node(Op::mean, Tensor::scalar(s / static_cast<double>(x->value.size())),
                             {x});
}

inline NodePtr concat(const NodePtr& a, const NodePtr& b) {
    using namespace detail;
    if (a->value.rank() != b->value.rank() || a->value.rank() == 0 || a->value.rank() > 2)
        shape_error(Op::concat, "expects two rank-1 or rank-2 tensors");
    if (a->value.rank() == 2 && a->value.cols() != b->value.cols())
        shape_error(Op::concat, "column counts differ");
    std::vector<std::size_t> shape = a->value.shape();
    shape[0] += b->value.shape()[0];
    Tensor y(shape);
    std::copy(a->value.data(), a->value.data() + a->value.size(), y.data());
    std::copy(b->value.data(), b->value.data() + b->value.size(), y.data() + a->value.size());
    return make_node(Op::concat, std::move(y), {a, b});
}

inline NodePtr reshape(const NodePtr& x, std::vector<std::size_t> shape) {
    if (Tensor::count(shape) != x->value.size())
        detail::shape_error(Op::reshape, "element count mismatch");
    Tensor y(std::move(shape), std::vector<double>(x->value.data(),
                                                   x->value.data() + x->value.size()));
    return detail::make_node(Op::reshape, std::move(y), {x});
}

/// Value of the composite function at the root (graphs evaluate eagerly).
inline const Tensor& forward_eval(const NodePtr& root) { return root->value; }

namespace detail {

inline void topo_order(const NodePtr& root, std::vector<Node*>& order) {
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.push_back({root.get(), 0});
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node* p = n->parents[idx].get();
            ++idx;
            if (!seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
}

inline Tensor& grad_buf(Node* n) {
    if (!n->grad_set) {
        n->grad = Tensor::zeros(n->value.shape().empty() ? std::vector<std::size_t>{}
                                                         : n->value.shape());
        n->grad_set = true;
    }
    return n->grad;
}

inline void backward_into(Node* n) {
    const Tensor& g = n->grad;
    auto want = [](const NodePtr& p) { return p->requires_grad; };
    switch (n->op) {
        case Op::leaf:
            return;
        case Op::affine: {
            Node* x = n->parents[0].get();
            Node* w = n->parents[1].get();
            const std::size_t B = x->value.rows(), k = x->value.cols(), m = w->value.rows();
            MapC G(g.data(), B, m), X(x->value.data(), B, k), W(w->value.data(), m, k);
            if (want(n->parents[0])) {
                MapM DX(grad_buf(x).data(), B, k);
                DX.noalias() += G * W;
            }
            if (want(n->parents[1])) {
                MapM DW(grad_buf(w).data(), m, k);
                DW.noalias() += G.transpose() * X;
            }
            if (n->parents.size() == 3 && want(n->parents[2])) {
                Tensor& db = grad_buf(n->parents[2].get());
                for (std::size_t i = 0; i < B; ++i)
                    for (std::size_t j = 0; j < m; ++j) db[j] += g(i, j);
            }
            return;
        }
        case Op::matmul: {
            Node* x = n->parents[0].get();
            Node* w = n->parents[1].get();
            const std::size_t B = x->value.rows(), k = x->value.cols(), m = w->value.cols();
            MapC G(g.data(), B, m), X(x->value.data(), B, k), W(w->value.data(), k, m);
            if (want(n->parents[0])) {
                MapM DX(grad_buf(x).data(), B, k);
                DX.noalias() += G * W.transpose();
            }
            if (want(n->parents[1])) {
                MapM DW(grad_buf(w).data(), k, m);
                DW.noalias() += X.transpose() * G;
            }
            return;
        }
        case Op::softplus: {
            if (!want(n->parents[0])) return;
            Node* x = n->parents[0].get();
            Tensor& dx = grad_buf(x);
            for (std::size_t i = 0; i < dx.size(); ++i)
                dx[i] += g[i] * stable_logistic(x->value[i]);
            return;
        }
        case Op::logistic: {
            if (!want(n->parents[0])) return;
            Tensor& dx = grad_buf(n->parents[0].get());
            for (std::size_t i = 0; i < dx.size(); ++i) {
                const double s = n->value[i];
                dx[i] += g[i] * s * (1.0 - s);
            }
            return;
        }
        case Op::leaky_relu: {
            if (!want(n->parents[0])) return;
            Node* x = n->parents[0].get();
            Tensor& dx = grad_buf(x);
            for (std::size_t i = 0; i < dx.size(); ++i)
                dx[i] += g[i] * (x->value[i] > 0 ? 1.0 : n->attr);
            return;
        }
        case Op::square: {
            if (!want(n->parents[0])) return;
            Node* x = n->parents[0].get();
            Tensor& dx = grad_buf(x);
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * 2.0 * x->value[i];
            return;
        }
        case Op::mul: {
            Node* a = n->parents[0].get();
            Node* b = n->parents[1].get();
            if (want(n->parents[0])) {
                Tensor& da = grad_buf(a);
                for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i] * b->value[i];
            }
            if (want(n->parents[1])) {
                Tensor& db = grad_buf(b);
                for (std::size_t i = 0; i < db.size(); ++i) db[i] += g[i] * a->value[i];
            }
            return;
        }
        case Op::dot: {
            Node* a = n->parents[0].get();
            Node* b = n->parents[1].get();
            if (a->value.rank() == 1) {
                const double gs = g[0];
                if (want(n->parents[0])) {
                    Tensor& da = grad_buf(a);
                    for (std::size_t i = 0; i < da.size(); ++i) da[i] += gs * b->value[i];
                }
                if (want(n->parents[1])) {
                    Tensor& db = grad_buf(b);
                    for (std::size_t i = 0; i < db.size(); ++i) db[i] += gs * a->value[i];
                }
            } else {
                const std::size_t B = a->value.rows(), m = a->value.cols();
                if (want(n->parents[0])) {
                    Tensor& da = grad_buf(a);
                    for (std::size_t i = 0; i < B; ++i)
                        for (std::size_t j = 0; j < m; ++j) da(i, j) += g[i] * b->value(i, j);
                }
                if (want(n->parents[1])) {
                    Tensor& db = grad_buf(b);
                    for (std::size_t i = 0; i < B; ++i)
                        for (std::size_t j = 0; j < m; ++j) db(i, j) += g[i] * a->value(i, j);
                }
            }
            return;
        }
        case Op::sum: {
            if (!want(n->parents[0])) return;
            Tensor& dx = grad_buf(n->parents[0].get());
            const double gs = g[0];
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += gs;
            return;
        }
        case Op::mean: {
            if (!want(n->parents[0])) return;
            Tensor& dx = grad_buf(n->parents[0].get());
            const double gs = g[0] / static_cast<double>(dx.size());
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += gs;
            return;
        }
        case Op::scale: {
            if (!want(n->parents[0])) return;
            Tensor& dx = grad_buf(n->parents[0].get());
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i] * n->attr;
            return;
        }
        case Op::add: {
            for (int side = 0; side < 2; ++side) {
                if (!want(n->parents[side])) continue;
                Tensor& d = grad_buf(n->parents[side].get());
                for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
            }
            return;
        }
        case Op::sub: {
            if (want(n->parents[0])) {
                Tensor& da = grad_buf(n->parents[0].get());
                for (std::size_t i = 0; i < da.size(); ++i) da[i] += g[i];
            }
            if (want(n->parents[1])) {
                Tensor& db = grad_buf(n->parents[1].get());
                for (std::size_t i = 0; i < db.size(); ++i) db[i] -= g[i];
            }
            return;
        }
        case Op::concat: {
            const std::size_t na = n->parents[0]->value.size();
            if (want(n->parents[0])) {
                Tensor& da = grad_buf(n->parents[0].get());
                for (std::size_t i = 0; i < na; ++i) da[i] += g[i];
            }
            if (want(n->parents[1])) {
                Tensor& db = grad_buf(n->parents[1].get());
                for (std::size_t i = 0; i < db.size(); ++i) db[i] += g[na + i];
            }
            return;
        }
        case Op::clamp_min: {
            if (!want(n->parents[0])) return;
            Node* x = n->parents[0].get();
            Tensor& dx = grad_buf(x);
            for (std::size_t i = 0; i < dx.size(); ++i)
                if (x->value[i] > n->attr) dx[i] += g[i];
            return;
        }
        case Op::reshape: {
            if (!want(n->parents[0])) return;
            Tensor& dx = grad_buf(n->parents[0].get());
            for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[i];
            return;
        }
        case Op::pow_const: {
            if (!want(n->parents[0])) return;
            Node* x = n->parents[0].get();
            Tensor& dx = grad_buf(x);
            const double p = n->attr;
            for (std::size_t i = 0; i < dx.size(); ++i)
                dx[i] += g[i] * p * std::pow(x->value[i], p - 1.0);
            return;
        }
    }
}

}  // namespace detail

/// Reverse pass from a scalar root. Fills `grad` on every node that requires
/// one; leaves not reachable from the root keep no gradient (read them with
/// grad_of, which returns zeros).
inline void backward(const NodePtr& root) {
    if (!root->value.is_scalar())
        throw std::invalid_argument("backward: root must be a scalar, got shape " +
                                    shape_str(root->value));
    std::vector<Node*> order;
    detail::topo_order(root, order);
    for (Node* n : order) n->grad_set = false;
    detail::grad_buf(root.get())[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (!n->grad_set || !n->requires_grad) continue;
        detail::backward_into(n);
    }
}

/// Gradient of a node after backward(); zeros when the node was unreachable.
inline Tensor grad_of(const NodePtr& n) {
    if (n->grad_set) return n->grad;
    return Tensor::zeros(n->value.shape());
}

/// Runs backward and collects gradients for the given leaves.
inline std::vector<Tensor> gradients(const NodePtr& root, const std::vector<NodePtr>& leaves) {
    backward(root);
    std::vector<Tensor> out;
    out.reserve(leaves.size());
    for (const auto& l : leaves) out.push_back(grad_of(l));
    return out;
}

/// Central finite differences, coordinate by coordinate. Test oracle for the
/// reverse-mode rules.
inline Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               double eps) {
    if (!(eps > 0)) throw std::invalid_argument("finite_diff_grad: eps must be positive");
    Tensor g(x.shape());
    Tensor xp = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = xp[i];
        xp[i] = orig + eps;
        const double fp = f(xp);
        xp[i] = orig - eps;
        const double fm = f(xp);
        xp[i] = orig;
        g[i] = (fp - fm) / (2.0 * eps);
    }
    return g;
}

}  // namespace otlab
