#pragma once

#include <functional>
#include <stdexcept>

#include "otlab/models.hpp"

namespace otlab {

// ---------------------------------------------------------------------------
// Costs. c(x,y) = coeff * d(x,y)^p with Euclidean d; coeff is 1/p (power cost)
// or a fixed 1/2. The internal default is the quadratic cost |x-y|^2/2; ground
// truths store their optimal value under d^2 and convert via cost_coeff.
// ---------------------------------------------------------------------------

struct CostFn {
    double p = 2.0;
    enum class Scaling { one_over_p, half } scaling = Scaling::one_over_p;
};

inline double cost_coeff(const CostFn& c) {
    return c.scaling == CostFn::Scaling::half ? 0.5 : 1.0 / c.p;
}

inline bool is_quadratic(const CostFn& c) { return c.p == 2.0; }

inline void require_quadratic(const CostFn& c, const char* where) {
    if (!is_quadratic(c))
        throw std::invalid_argument(std::string(where) + ": requires quadratic cost (p=2)");
}

/// Per-row cost c(x_i, y_i), shape (B,).
inline NodePtr cost_rows_node(const CostFn& c, const NodePtr& x, const NodePtr& y) {
    if (!(c.p > 1.0)) throw std::invalid_argument("CostFn: p must exceed 1");
    auto d = sub(x, y);
    auto r = dot(d, d);  // squared norms
    if (is_quadratic(c)) return scale(r, cost_coeff(c));
    return scale(pow_const(clamp_min(r, 1e-300), c.p / 2.0), cost_coeff(c));
}

inline Tensor cost_rows(const CostFn& c, const Tensor& x, const Tensor& y) {
    return cost_rows_node(c, constant(x), constant(y))->value;
}

inline double mean_cost(const CostFn& c, const Tensor& x, const Tensor& y) {
    Tensor r = cost_rows(c, x, y);
    double s = 0;
    for (std::size_t i = 0; i < r.size(); ++i) s += r[i];
    return s / static_cast<double>(r.size());
}

/// Scales an optimal cost stored under the d^2 convention into the configured
/// one (only meaningful for quadratic costs).
inline double convert_cost_d2(const CostFn& c, double cost_d2) {
    require_quadratic(c, "convert_cost_d2");
    return cost_d2 * cost_coeff(c);
}

// ---------------------------------------------------------------------------
// Objective variants.
// ---------------------------------------------------------------------------

enum class Method { otp, monge_map, max_corr, otm };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::otp: return "otp";
        case Method::monge_map: return "monge_map";
        case Method::max_corr: return "max_corr";
        case Method::otm: return "otm";
    }
    return "?";
}

struct ObjectiveKind {
    Method variant = Method::otp;
    double penalty_weight = 0.0;  // nonzero only for otm (default there: 0.1)

    static ObjectiveKind make(Method m) {
        ObjectiveKind k;
        k.variant = m;
        k.penalty_weight = (m == Method::otm) ? 0.1 : 0.0;
        return k;
    }
};

inline void check_objective(const ObjectiveKind& k) {
    if (k.variant != Method::otm && k.penalty_weight != 0.0)
        throw std::invalid_argument("ObjectiveKind: penalty weight must be zero unless otm");
    if (k.penalty_weight < 0.0)
        throw std::invalid_argument("ObjectiveKind: penalty weight must be nonnegative");
}

// ---------------------------------------------------------------------------
// Empirical saddle functionals. Graph forms keep both players' parameters as
// leaves; closure forms serve the metric path.
// ---------------------------------------------------------------------------

struct SemiDualGraph {
    NodePtr value;
    std::vector<NodePtr> map_params;
    std::vector<NodePtr> pot_params;
};

/// F(psi,t) on batches: mean c(x,t(x)) - mean psi(t(x)) + mean psi(y).
inline SemiDualGraph semi_dual_graph(const MlpModel& t, const PotentialModel& psi, const Tensor& x,
                                     const Tensor& y, const CostFn& cost, bool train_map = true,
                                     bool train_pot = true) {
    auto tl = MlpLeaves::make(t, train_map);
    auto pl = PotentialLeaves::make(psi, train_pot);
    auto xn = constant(x);
    auto tx = mlp_node(t, tl, xn);
    if (tx->value.cols() != y.cols())
        throw std::invalid_argument("semi_dual_value: map output dim " +
                                    std::to_string(tx->value.cols()) +
                                    " does not match potential input dim " +
                                    std::to_string(y.cols()));
    auto value = add(sub(mean(cost_rows_node(cost, xn, tx)), mean(potential_node(psi, pl, tx))),
                     mean(potential_node(psi, pl, constant(y))));
    return {value, tl.all(), pl.all()};
}

inline double semi_dual_value(const MlpModel& t, const PotentialModel& psi, const Tensor& x,
                              const Tensor& y, const CostFn& cost) {
    return semi_dual_graph(t, psi, x, y, cost, false, false).value.get()->value.item();
}

using BatchFn = std::function<Tensor(const Tensor&)>;

/// Closure form: t maps (B,n)->(B,m), psi maps (B,m)->(B,).
inline double semi_dual_value(const BatchFn& t, const BatchFn& psi, const Tensor& x,
                              const Tensor& y, const CostFn& cost) {
    Tensor tx = t(x);
    Tensor psi_tx = psi(tx);
    Tensor psi_y = psi(y);
    double c = mean_cost(cost, x, tx);
    double a = 0, b = 0;
    for (std::size_t i = 0; i < psi_tx.size(); ++i) a += psi_tx[i];
    for (std::size_t i = 0; i < psi_y.size(); ++i) b += psi_y[i];
    return c - a / static_cast<double>(psi_tx.size()) + b / static_cast<double>(psi_y.size());
}

struct MaxCorrGraph {
    NodePtr value;
    std::vector<NodePtr> map_params;
    std::vector<NodePtr> pot_params;
};

/// F~(t,v) = mean <x,t(x)> - mean v(t(x)) + mean v(y); maximized over t,
/// minimized over convex v.
inline MaxCorrGraph maxcorr_graph(const MlpModel& t, const IcnnModel& v, const Tensor& x,
                                  const Tensor& y, bool train_map = true, bool train_pot = true) {
    auto tl = MlpLeaves::make(t, train_map);
    auto vl = IcnnLeaves::make(v, train_pot);
    auto xn = constant(x);
    auto tx = mlp_node(t, tl, xn);
    if (tx->value.cols() != y.cols())
        throw std::invalid_argument("maxcorr_value: map output dim does not match target dim");
    auto value = add(sub(mean(dot(xn, tx)), mean(icnn_value_node(v, vl, tx))),
                     mean(icnn_value_node(v, vl, constant(y))));
    return {value, tl.all(), vl.all()};
}

inline double maxcorr_value(const MlpModel& t, const IcnnModel& v, const Tensor& x,
                            const Tensor& y) {
    return maxcorr_graph(t, v, x, y, false, false).value->value.item();
}

inline double maxcorr_value(const BatchFn& t, const BatchFn& v, const Tensor& x, const Tensor& y) {
    Tensor tx = t(x);
    Tensor vtx = v(tx);
    Tensor vy = v(y);
    double corr = 0;
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) corr += x(i, j) * tx(i, j);
    corr /= static_cast<double>(x.rows());
    double a = 0, b = 0;
    for (std::size_t i = 0; i < vtx.size(); ++i) a += vtx[i];
    for (std::size_t i = 0; i < vy.size(); ++i) b += vy[i];
    return corr - a / static_cast<double>(vtx.size()) + b / static_cast<double>(vy.size());
}

struct PenaltyGraph {
    NodePtr value;
    std::vector<NodePtr> map_params;
    std::vector<NodePtr> pot_params;
};

/// Gradient-optimality residual mean |x - grad v(t(x))|^2; the first-order
/// optimality gap of the inner sup over t in the max-correlation objective.
inline PenaltyGraph otm_penalty_graph(const MlpModel& t, const IcnnModel& v, const Tensor& x,
                                      bool train_map = true, bool train_pot = true) {
    auto tl = MlpLeaves::make(t, train_map);
    auto vl = IcnnLeaves::make(v, train_pot);
    auto xn = constant(x);
    auto tx = mlp_node(t, tl, xn);
    auto r = sub(xn, icnn_grad_node(v, vl, tx));
    return {mean(dot(r, r)), tl.all(), vl.all()};
}

inline double otm_penalty(const MlpModel& t, const IcnnModel& v, const Tensor& x) {
    return otm_penalty_graph(t, v, x, false, false).value->value.item();
}

/// Transport map induced by a convex potential: grad of the ICNN per row.
inline Tensor map_from_potential(const IcnnModel& phi, const Tensor& x, const CostFn& cost) {
    require_quadratic(cost, "map_from_potential");
    return icnn_input_grad(phi, x);
}

}  // namespace otlab
