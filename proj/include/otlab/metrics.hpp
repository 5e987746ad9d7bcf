#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "otlab/assignment.hpp"
#include "otlab/benchmarks.hpp"
#include "otlab/objectives.hpp"

namespace otlab {

struct MetricReport {
    double map_l2 = 0;
    double map_cos = 0;
    double pot_mse_centered = 0;
    double pot_grad_mse = 0;
    double flatness = 0;
    double dkr = 0;
    std::size_t n_eval = 0;
};

/// Mean squared deviation between the learned and true maps on an eval batch.
inline double map_l2_error(const Tensor& t_out, const Tensor& true_out) {
    if (!t_out.same_shape(true_out))
        throw std::invalid_argument("map_l2_error: shape mismatch");
    const std::size_t B = t_out.rows(), d = t_out.cols();
    double s = 0;
    for (std::size_t i = 0; i < B; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = t_out(i, j) - true_out(i, j);
            s += diff * diff;
        }
    return s / static_cast<double>(B);
}

/// Mean row-wise cosine similarity; zero-norm rows are skipped and counted.
inline double map_cosine(const Tensor& t_out, const Tensor& true_out,
                         std::size_t* skipped = nullptr) {
    if (!t_out.same_shape(true_out))
        throw std::invalid_argument("map_cosine: shape mismatch");
    const std::size_t B = t_out.rows(), d = t_out.cols();
    double s = 0;
    std::size_t used = 0, skip = 0;
    for (std::size_t i = 0; i < B; ++i) {
        double ab = 0, a2 = 0, b2 = 0;
        for (std::size_t j = 0; j < d; ++j) {
            ab += t_out(i, j) * true_out(i, j);
            a2 += t_out(i, j) * t_out(i, j);
            b2 += true_out(i, j) * true_out(i, j);
        }
        if (a2 == 0 || b2 == 0) {
            ++skip;
            continue;
        }
        s += ab / (std::sqrt(a2) * std::sqrt(b2));
        ++used;
    }
    if (skipped) *skipped = skip;
    if (used == 0) throw std::runtime_error("map_cosine: all rows have zero norm");
    return s / static_cast<double>(used);
}

/// MSE after removing the additive gauge from both sides.
inline double centered_potential_mse(const Tensor& psi_vals, const Tensor& psi_star_vals) {
    if (psi_vals.size() != psi_star_vals.size())
        throw std::invalid_argument("centered_potential_mse: size mismatch");
    const std::size_t n = psi_vals.size();
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += psi_vals[i];
        mb += psi_star_vals[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double diff = (psi_vals[i] - ma) - (psi_star_vals[i] - mb);
        s += diff * diff;
    }
    return s / static_cast<double>(n);
}

inline double potential_grad_mse(const Tensor& psi_grads, const Tensor& psi_star_grads) {
    if (!psi_grads.same_shape(psi_star_grads))
        throw std::invalid_argument("potential_grad_mse: shape mismatch");
    const std::size_t B = psi_grads.rows(), d = psi_grads.cols();
    double s = 0;
    for (std::size_t i = 0; i < B; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const double diff = psi_grads(i, j) - psi_star_grads(i, j);
            s += diff * diff;
        }
    return s / static_cast<double>(B);
}

/// |F(t, psi) - C*| under the configured cost convention.
inline double flatness(const MlpModel& t, const PotentialModel& psi, const BenchmarkProblem& prob,
                       const Tensor& x_eval, const Tensor& y_eval, const CostFn& cost) {
    if (!prob.truth) throw std::invalid_argument("flatness: optimal cost unavailable");
    const double f = semi_dual_value(t, psi, x_eval, y_eval, cost);
    return std::abs(f - optimal_cost(prob, cost));
}

/// Exact empirical 1-Wasserstein distance between two equal-size samples under
/// the Euclidean metric: minimum-cost perfect matching divided by n. On
/// bounded domains this upper-bounds the Kantorovich-Rubinstein distance, so
/// using it as the d_KR estimate only enlarges the stability bound's right
/// side.
inline double empirical_dkr(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols())
        throw std::invalid_argument("empirical_dkr: samples must be (n,d) with equal d");
    if (a.rows() != b.rows())
        throw std::invalid_argument("empirical_dkr: sample counts differ; resample to equal n");
    const std::size_t n = a.rows(), d = a.cols();
    if (n > 4096)
        throw std::invalid_argument("empirical_dkr: n exceeds 4096; subsample the inputs");
    Tensor C({n, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0;
            for (std::size_t k = 0; k < d; ++k) {
                const double diff = a(i, k) - b(j, k);
                s += diff * diff;
            }
            C(i, j) = std::sqrt(s);
        }
    return solve_assignment_matrix(C).total_cost / static_cast<double>(n);
}

struct Theorem4Fit {
    double fitted_c = 0.0;       // max_k map_l2 / (flatness + dkr + eps)
    std::size_t argmax_row = 0;
    bool finite = true;
};

struct HistoryRow {
    std::size_t iteration = 0;
    double F = 0;
    double map_l2 = 0;
    double map_cos = 0;
    double pot_mse = 0;
    double pot_grad_mse = 0;
    double flatness = 0;
    double dkr = 0;
    double wall_ms = 0;
};

/// Smallest constant validating map_l2 <= C (flatness + dkr) across a run.
inline Theorem4Fit theorem4_check(const std::vector<HistoryRow>& rows, double eps = 1e-12) {
    if (rows.empty()) throw std::invalid_argument("theorem4_check: empty history");
    Theorem4Fit fit;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const double r = rows[k].map_l2 / (rows[k].flatness + rows[k].dkr + eps);
        if (!std::isfinite(r)) fit.finite = false;
        if (r > fit.fitted_c) {
            fit.fitted_c = r;
            fit.argmax_row = k;
        }
    }
    return fit;
}

/// Spearman rank correlation with average ranks on ties.
inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2)
        throw std::invalid_argument("spearman: need two equal-length series");
    auto ranks = [](const std::vector<double>& v) {
        const std::size_t n = v.size();
        std::vector<std::size_t> idx(n);
        for (std::size_t i = 0; i < n; ++i) idx[i] = i;
        std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
        std::vector<double> r(n, 0.0);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
            const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    auto ra = ranks(a), rb = ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0, va = 0, vb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va == 0 || vb == 0) throw std::invalid_argument("spearman: constant series");
    return cov / std::sqrt(va * vb);
}

}  // namespace otlab
