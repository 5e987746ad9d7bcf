#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "otlab/assignment.hpp"
#include "otlab/objectives.hpp"
#include "otlab/rng.hpp"
#include "otlab/tensor.hpp"

namespace otlab {

// Exact discrete optimal transport on equal-weight empirical measures. With
// uniform weights the Kantorovich problem over the Birkhoff polytope reduces
// to an assignment problem, so every dual statement can be checked to
// round-off rather than solver tolerance.

struct DiscreteInstance {
    Tensor x_points;     // (n, d)
    Tensor y_points;     // (n, d)
    Tensor cost_matrix;  // (n, n), C[i][j] = c(x_i, y_j)

    std::size_t n() const { return x_points.rows(); }
};

struct DualPair {
    std::vector<double> phi;  // over x-points
    std::vector<double> psi;  // over y-points
};

inline DiscreteInstance make_instance(Tensor x, Tensor y, const CostFn& cost) {
    if (x.rank() != 2 || y.rank() != 2 || x.rows() != y.rows() || x.cols() != y.cols())
        throw std::invalid_argument("make_instance: point sets must match in count and dim");
    const std::size_t n = x.rows(), d = x.cols();
    const double coeff = cost_coeff(cost);
    Tensor C({n, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = x(i, k) - y(j, k);
                s += diff * diff;
            }
            C(i, j) = cost.p == 2.0 ? coeff * s : coeff * std::pow(s, cost.p / 2.0);
        }
    DiscreteInstance inst{std::move(x), std::move(y), std::move(C)};
    return inst;
}

inline DiscreteInstance random_instance(std::size_t n, std::size_t d, const CostFn& cost,
                                        Rng& rng) {
    Tensor x({n, d}), y({n, d});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = -3.0 + 6.0 * rng.uniform();
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = -3.0 + 6.0 * rng.uniform();
    return make_instance(std::move(x), std::move(y), cost);
}

enum class Side { x, y };  // domain the input potential lives on

/// c-transform: for psi on Y returns psi^c over x-points; for phi on X returns
/// phi^c over y-points.
inline std::vector<double> c_transform(const std::vector<double>& pot, const Tensor& C,
                                       Side side) {
    const std::size_t n = C.rows();
    if (pot.size() != n) throw std::invalid_argument("c_transform: potential size mismatch");
    std::vector<double> out(n);
    for (std::size_t a = 0; a < n; ++a) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t b = 0; b < n; ++b) {
            const double v = (side == Side::y ? C(a, b) : C(b, a)) - pot[b];
            best = std::min(best, v);
        }
        out[a] = best;
    }
    return out;
}

/// Double transform psi^{cc}, back on Y.
inline std::vector<double> double_c_transform(const std::vector<double>& psi, const Tensor& C) {
    return c_transform(c_transform(psi, C, Side::y), C, Side::x);
}

struct AssignmentSolution {
    std::vector<std::size_t> perm;  // sigma*: x_i -> y_{perm[i]}
    double optimal_cost = 0.0;      // K* = (1/n) sum C[i][perm[i]]
    DualPair duals;                 // feasible, tight on the matching
};

inline AssignmentSolution solve_assignment(const DiscreteInstance& inst) {
    const std::size_t n = inst.n();
    if (n > 4096) throw std::invalid_argument("solve_assignment: n exceeds 4096");
    auto r = solve_assignment_matrix(inst.cost_matrix);
    AssignmentSolution sol;
    sol.perm = std::move(r.perm);
    sol.optimal_cost = r.total_cost / static_cast<double>(n);
    sol.duals.phi = std::move(r.row_dual);
    sol.duals.psi = std::move(r.col_dual);
    return sol;
}

inline void check_dual_feasible(const DualPair& d, const Tensor& C, double tol = 1e-9) {
    const std::size_t n = C.rows();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (d.phi[i] + d.psi[j] > C(i, j) + tol)
                throw std::runtime_error("DualPair: feasibility violated");
}

/// Discrete semi-dual objective (1/n) sum_i psi^c(x_i) + (1/n) sum_j psi_j.
inline double semidual_value(const std::vector<double>& psi, const DiscreteInstance& inst) {
    const std::size_t n = inst.n();
    auto psic = c_transform(psi, inst.cost_matrix, Side::y);
    double a = 0, b = 0;
    for (std::size_t i = 0; i < n; ++i) a += psic[i];
    for (std::size_t j = 0; j < n; ++j) b += psi[j];
    return (a + b) / static_cast<double>(n);
}

/// Net target weights of an index map: w_j = 1 - #{i : t(i) = j}. Zero for
/// every j exactly when t is a bijection.
inline std::vector<long> pushforward_deficit(const std::vector<std::size_t>& t, std::size_t n) {
    std::vector<long> w(n, 1);
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i] >= n) throw std::invalid_argument("index map out of range");
        w[t[i]] -= 1;
    }
    return w;
}

/// Discrete F(psi, t) = (1/n) sum_i C[i][t(i)] + (1/n) sum_j w_j psi_j with
/// integer net weights w. For bijections the potential term is identically
/// zero, so the cancellation of Theorem-style flatness is exact in floating
/// point, not merely up to rounding.
inline double discrete_F(const DiscreteInstance& inst, const std::vector<double>& psi,
                         const std::vector<std::size_t>& t) {
    const std::size_t n = inst.n();
    if (t.size() != n || psi.size() != n)
        throw std::invalid_argument("discrete_F: size mismatch");
    auto w = pushforward_deficit(t, n);
    double cost = 0, pot = 0;
    for (std::size_t i = 0; i < n; ++i) cost += inst.cost_matrix(i, t[i]);
    for (std::size_t j = 0; j < n; ++j)
        if (w[j] != 0) pot += static_cast<double>(w[j]) * psi[j];
    return (cost + pot) / static_cast<double>(n);
}

inline bool is_bijection(const std::vector<std::size_t>& t, std::size_t n) {
    auto w = pushforward_deficit(t, n);
    return std::all_of(w.begin(), w.end(), [](long v) { return v == 0; });
}

/// Max spread of F(psi, sigma) over random potentials; exactly zero for any
/// bijection sigma.
inline double flatness_witness(const DiscreteInstance& inst, const std::vector<std::size_t>& sigma,
                               std::size_t trials, Rng& rng) {
    const std::size_t n = inst.n();
    if (!is_bijection(sigma, n))
        throw std::invalid_argument("flatness_witness: sigma must be a bijection");
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        std::vector<double> psi(n);
        for (auto& v : psi) v = rng.normal(0.0, 2.0);
        const double f = discrete_F(inst, psi, sigma);
        lo = std::min(lo, f);
        hi = std::max(hi, f);
    }
    return hi - lo;
}

struct UnboundednessWitness {
    std::vector<std::size_t> set_a;  // y-indices with positive deficit
    double sigma_a = 0.0;            // (nu - t#mu)(A) > 0
    double base_f = 0.0;             // F(0, t)
    std::vector<double> values;      // F(M 1_A, t) per requested M
};

/// Theorem-style divergence witness: for non-measure-preserving t, choosing
/// A = {j : w_j > 0} gives F(M 1_A, t) = F(0, t) + M (nu - t#mu)(A), which
/// grows without bound in M.
inline UnboundednessWitness unboundedness_witness(const DiscreteInstance& inst,
                                                  const std::vector<std::size_t>& t,
                                                  const std::vector<double>& m_list) {
    const std::size_t n = inst.n();
    auto w = pushforward_deficit(t, n);
    UnboundednessWitness out;
    long total = 0;
    for (std::size_t j = 0; j < n; ++j)
        if (w[j] > 0) {
            out.set_a.push_back(j);
            total += w[j];
        }
    if (out.set_a.empty())
        throw std::invalid_argument(
            "unboundedness_witness: map is measure-preserving, no witness set exists");
    out.sigma_a = static_cast<double>(total) / static_cast<double>(n);
    std::vector<double> psi(n, 0.0);
    out.base_f = discrete_F(inst, psi, t);
    for (double m : m_list) {
        for (std::size_t j : out.set_a) psi[j] = m;
        out.values.push_back(discrete_F(inst, psi, t));
    }
    return out;
}

/// (1/n) sum_j (psi^{cc}_j - psi_j); nonnegative, zero exactly on c-concave
/// potentials.
inline double cconcavity_gap(const std::vector<double>& psi, const DiscreteInstance& inst) {
    auto psicc = double_c_transform(psi, inst.cost_matrix);
    double s = 0;
    for (std::size_t j = 0; j < psi.size(); ++j) s += psicc[j] - psi[j];
    return s / static_cast<double>(psi.size());
}

/// Minimum of the discrete F(psi, t) over all n^n index maps, evaluated by the
/// separable pointwise minimum. Brute-force enumeration in the tests confirms
/// the identity for small n.
inline double min_over_maps(const DiscreteInstance& inst, const std::vector<double>& psi) {
    const std::size_t n = inst.n();
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < n; ++j) best = std::min(best, inst.cost_matrix(i, j) - psi[j]);
        total += best;
    }
    double meanpsi = 0;
    for (double v : psi) meanpsi += v;
    return total / static_cast<double>(n) + meanpsi / static_cast<double>(n);
}

}  // namespace otlab
