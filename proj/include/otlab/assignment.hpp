#pragma once

#include <limits>
#include <stdexcept>
#include <vector>

#include "otlab/tensor.hpp"

namespace otlab {

struct AssignmentResult {
    std::vector<std::size_t> perm;  // row i -> column perm[i]
    double total_cost = 0.0;        // sum of matched entries
    std::vector<double> row_dual;   // u, over rows
    std::vector<double> col_dual;   // v, over columns
};

/// Exact minimum-cost assignment on a square matrix via shortest augmenting
/// paths with potentials, O(n^3). The returned duals are feasible
/// (u_i + v_j <= C_ij) and tight on matched pairs, so they double as optimal
/// Kantorovich duals for uniform empirical measures.
inline AssignmentResult solve_assignment_matrix(const Tensor& C) {
    if (C.rank() != 2 || C.rows() != C.cols())
        throw std::invalid_argument("solve_assignment_matrix: cost matrix must be square");
    const std::size_t n = C.rows();
    const double inf = std::numeric_limits<double>::infinity();

    // 1-based with column 0 as sentinel.
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        match[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = match[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = C(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    AssignmentResult res;
    res.perm.assign(n, 0);
    res.row_dual.assign(n, 0.0);
    res.col_dual.assign(n, 0.0);
    for (std::size_t j = 1; j <= n; ++j) res.perm[match[j] - 1] = j - 1;
    for (std::size_t i = 1; i <= n; ++i) res.row_dual[i - 1] = u[i];
    for (std::size_t j = 1; j <= n; ++j) res.col_dual[j - 1] = v[j];
    for (std::size_t i = 0; i < n; ++i) res.total_cost += C(i, res.perm[i]);
    return res;
}

}  // namespace otlab
