#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "otlab/benchmarks.hpp"
#include "otlab/metrics.hpp"
#include "otlab/objectives.hpp"

namespace otlab {

enum class OptimKind { sgd, adam };

struct SolverConfig {
    Method method = Method::otp;
    PotentialKind potential = PotentialKind::mlp;
    CostFn cost;
    std::size_t K = 10;
    double eta_t = 1e-3;
    double eta_psi = 1e-3;
    std::size_t outer = 2000;
    std::size_t batch = 256;
    OptimKind optimizer = OptimKind::adam;
    std::uint64_t seed = 1;
    std::size_t eval_every = 50;
    std::size_t eval_batch = 512;
    std::vector<std::size_t> map_hidden = {32, 32};
    std::vector<std::size_t> pot_hidden = {32, 32};
    double init_std = 0.14;
    double icnn_alpha = 0.05;
    double penalty_weight = 0.1;  // otm only
    double divergence_guard = 1e6;
    // Perturbation protocol: after `perturb_at` outer iterations the potential
    // parameters receive Gaussian noise (std = perturb_noise * per-tensor
    // parameter std) and training continues for `extra_steps` more iterations.
    std::size_t perturb_at = 0;  // 0 disables
    std::size_t extra_steps = 0;
    double perturb_noise = 0.1;
};

inline void check_config(const SolverConfig& c) {
    if (c.K < 1) throw std::invalid_argument("SolverConfig: K must be >= 1");
    if (!(c.eta_t >= 0) || !(c.eta_psi >= 0))
        throw std::invalid_argument("SolverConfig: learning rates must be nonnegative");
    if (c.batch < 1 || c.eval_batch < 1 || c.eval_every < 1)
        throw std::invalid_argument("SolverConfig: batch sizes and eval cadence must be >= 1");
    if (c.method == Method::max_corr || c.method == Method::otm) {
        if (c.potential != PotentialKind::cconcave_icnn)
            throw std::invalid_argument(
                "SolverConfig: max-correlation variants require the convex potential");
        require_quadratic(c.cost, "SolverConfig(max_corr/otm)");
    }
    if (c.potential == PotentialKind::cconcave_icnn)
        require_quadratic(c.cost, "SolverConfig(c-concave potential)");
}

/// Relative timescale of the two players.
inline double kappa(const SolverConfig& c) {
    if (!(c.eta_psi > 0)) throw std::invalid_argument("kappa: eta_psi must be positive");
    return static_cast<double>(c.K) * c.eta_t / c.eta_psi;
}

// ---------------------------------------------------------------------------
// Optimizers.
// ---------------------------------------------------------------------------

struct OptimState {
    OptimKind kind = OptimKind::adam;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::size_t t = 0;
    std::vector<Tensor> m, v;

    void ensure(const std::vector<Tensor*>& params) {
        if (!m.empty()) return;
        for (const Tensor* p : params) {
            m.push_back(Tensor::zeros(p->shape()));
            v.push_back(Tensor::zeros(p->shape()));
        }
    }
};

inline void apply_step(std::vector<Tensor*> params, const std::vector<Tensor>& grads,
                       OptimState& st, double eta) {
    if (params.size() != grads.size())
        throw std::invalid_argument("apply_step: parameter/gradient count mismatch");
    if (st.kind == OptimKind::sgd) {
        for (std::size_t k = 0; k < params.size(); ++k)
            for (std::size_t i = 0; i < params[k]->size(); ++i)
                (*params[k])[i] -= eta * grads[k][i];
        return;
    }
    st.ensure(params);
    st.t += 1;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor& m = st.m[k];
        Tensor& v = st.v[k];
        Tensor& p = *params[k];
        const Tensor& g = grads[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g[i];
            v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g[i] * g[i];
            p[i] -= eta * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + st.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Training state and the two alternating phases.
// ---------------------------------------------------------------------------

struct TrainState {
    MlpModel map;
    PotentialModel pot;
    OptimState opt_map, opt_pot;
    Rng rng;
    std::size_t iter = 0;

    TrainState() : rng(0) {}
};

struct TrainHistory {
    std::vector<HistoryRow> rows;
    bool aborted = false;
    std::string abort_reason;
};

namespace detail {

struct PhaseGraph {
    NodePtr loss;
    std::vector<NodePtr> leaves;
};

inline PhaseGraph map_phase_graph(const TrainState& st, const SolverConfig& cfg, const Tensor& x) {
    auto tl = MlpLeaves::make(st.map, true);
    auto xn = constant(x);
    auto tx = mlp_node(st.map, tl, xn);
    NodePtr loss;
    if (cfg.method == Method::otp || cfg.method == Method::monge_map) {
        auto pl = PotentialLeaves::make(st.pot, false);
        loss = sub(mean(cost_rows_node(cfg.cost, xn, tx)),
                   mean(potential_node(st.pot, pl, tx)));
    } else {
        auto vl = IcnnLeaves::make(st.pot.icnn, false);
        // Ascent on the inner max-correlation objective as descent on its
        // negation.
        loss = sub(mean(icnn_value_node(st.pot.icnn, vl, tx)), mean(dot(xn, tx)));
        if (cfg.method == Method::otm) {
            auto r = sub(xn, icnn_grad_node(st.pot.icnn, vl, tx));
            loss = add(loss, scale(mean(dot(r, r)), cfg.penalty_weight));
        }
    }
    return {loss, tl.all()};
}

inline PhaseGraph potential_phase_graph(const TrainState& st, const SolverConfig& cfg,
                                        const Tensor& x, const Tensor& y) {
    Tensor tx = mlp_forward(st.map, x);  // map frozen in this phase
    auto pl = PotentialLeaves::make(st.pot, true);
    // Gradient ascent on F in psi implemented as descent on
    // mean psi(t(x)) - mean psi(y); for the c-concave form this coincides with
    // descent of the convex potential v in the max-correlation objective.
    auto loss = sub(mean(potential_node(st.pot, pl, constant(tx))),
                    mean(potential_node(st.pot, pl, constant(y))));
    (void)cfg;
    return {loss, pl.all()};
}

inline void check_finite_loss(double v, double guard, const char* phase) {
    if (!std::isfinite(v))
        throw std::runtime_error(std::string(phase) + ": non-finite loss");
    if (std::abs(v) > guard)
        throw std::runtime_error(std::string(phase) + ": |loss| " + std::to_string(v) +
                                 " exceeds divergence guard");
}

inline std::vector<Tensor> collect_grads(const PhaseGraph& g, const char* phase) {
    backward(g.loss);
    std::vector<Tensor> grads;
    grads.reserve(g.leaves.size());
    for (const auto& l : g.leaves) {
        Tensor t = grad_of(l);
        if (!t.all_finite())
            throw std::runtime_error(std::string(phase) + ": non-finite gradient");
        grads.push_back(std::move(t));
    }
    return grads;
}

}  // namespace detail

/// K descent steps on the map with the potential frozen; fresh batch per step.
inline void inner_map_steps(TrainState& st, const SolverConfig& cfg,
                            const BenchmarkProblem& prob) {
    st.opt_map.kind = cfg.optimizer;
    for (std::size_t k = 0; k < cfg.K; ++k) {
        Tensor x = prob.sample_source(cfg.batch, st.rng);
        auto g = detail::map_phase_graph(st, cfg, x);
        detail::check_finite_loss(g.loss->value.item(), cfg.divergence_guard, "inner_map_steps");
        auto grads = detail::collect_grads(g, "inner_map_steps");
        apply_step(st.map.params(), grads, st.opt_map, cfg.eta_t);
    }
}

/// One ascent step on the potential with the map frozen; projection keeps the
/// convex parameterization inside its constraint set.
inline void potential_step(TrainState& st, const SolverConfig& cfg,
                           const BenchmarkProblem& prob) {
    st.opt_pot.kind = cfg.optimizer;
    Tensor x = prob.sample_source(cfg.batch, st.rng);
    Tensor y = prob.sample_target(cfg.batch, st.rng);
    auto g = detail::potential_phase_graph(st, cfg, x, y);
    detail::check_finite_loss(g.loss->value.item(), cfg.divergence_guard, "potential_step");
    auto grads = detail::collect_grads(g, "potential_step");
    apply_step(st.pot.params(), grads, st.opt_pot, cfg.eta_psi);
    if (st.pot.kind == PotentialKind::cconcave_icnn)
        st.pot.icnn = project_nonneg(std::move(st.pot.icnn));
}

inline TrainState init_state(const BenchmarkProblem& prob, const SolverConfig& cfg) {
    check_config(cfg);
    TrainState st;
    st.rng = Rng(mix64(cfg.seed, 0x747261696eULL));
    Rng init_rng(mix64(cfg.seed, 0x696e6974ULL));
    st.map = make_mlp(prob.dim, cfg.map_hidden, prob.dim, Activation::leaky_relu, cfg.init_std,
                      init_rng);
    st.pot.kind = cfg.potential;
    if (cfg.potential == PotentialKind::mlp)
        st.pot.mlp = make_mlp(prob.dim, cfg.pot_hidden, 1, Activation::leaky_relu, cfg.init_std,
                              init_rng);
    else
        st.pot.icnn = make_icnn(prob.dim, cfg.pot_hidden, cfg.init_std, cfg.icnn_alpha, 1.0,
                                init_rng);
    st.opt_map.kind = cfg.optimizer;
    st.opt_pot.kind = cfg.optimizer;
    return st;
}

/// Parameter-wise Gaussian noise scaled by each tensor's own standard
/// deviation; the convex parameterization is re-projected afterwards.
inline void perturb_potential(TrainState& st, double noise_factor, Rng& rng) {
    for (Tensor* p : st.pot.params()) {
        double mean = 0;
        for (std::size_t i = 0; i < p->size(); ++i) mean += (*p)[i];
        mean /= static_cast<double>(p->size());
        double var = 0;
        for (std::size_t i = 0; i < p->size(); ++i)
            var += ((*p)[i] - mean) * ((*p)[i] - mean);
        const double std = std::sqrt(var / static_cast<double>(p->size()));
        if (std == 0.0) continue;
        for (std::size_t i = 0; i < p->size(); ++i)
            (*p)[i] += rng.normal(0.0, noise_factor * std);
    }
    if (st.pot.kind == PotentialKind::cconcave_icnn)
        st.pot.icnn = project_nonneg(std::move(st.pot.icnn));
}

namespace detail {

struct EvalSet {
    Tensor x_eval;
    Tensor true_map_out;
    PotentialPairs pairs;
};

inline EvalSet make_eval_set(const BenchmarkProblem& prob, const SolverConfig& cfg) {
    Rng rng(mix64(cfg.seed, 0x6576616cULL));
    EvalSet ev;
    ev.x_eval = prob.sample_source(cfg.eval_batch, rng);
    if (prob.truth && prob.truth->map) ev.true_map_out = prob.truth->map(ev.x_eval);
    ev.pairs = target_potential_pairs(prob, cfg.eval_batch, rng);
    return ev;
}

inline HistoryRow eval_row(const TrainState& st, const SolverConfig& cfg,
                           const BenchmarkProblem& prob, const EvalSet& ev, double wall_ms) {
    HistoryRow row;
    row.iteration = st.iter;
    Tensor tx = mlp_forward(st.map, ev.x_eval);
    row.map_l2 = map_l2_error(tx, ev.true_map_out);
    row.map_cos = map_cosine(tx, ev.true_map_out);

    const bool compare_v =
        (cfg.method == Method::max_corr || cfg.method == Method::otm);
    if (compare_v) {
        // Max-correlation methods learn the convex target potential; compare
        // v against the conjugate Brenier potential on exact pairs.
        Tensor vvals = icnn_forward(st.pot.icnn, ev.pairs.y);
        Tensor vgrads = icnn_input_grad(st.pot.icnn, ev.pairs.y);
        row.pot_mse = centered_potential_mse(vvals, ev.pairs.phi_star);
        row.pot_grad_mse = potential_grad_mse(vgrads, ev.pairs.phi_star_grad);
    } else {
        Tensor pvals = potential_values(st.pot, ev.pairs.y);
        Tensor pgrads = potential_input_grad(st.pot, ev.pairs.y);
        row.pot_mse = centered_potential_mse(pvals, ev.pairs.psi_star);
        row.pot_grad_mse = potential_grad_mse(pgrads, ev.pairs.psi_star_grad);
    }

    row.F = semi_dual_value(st.map, st.pot, ev.x_eval, ev.pairs.y, cfg.cost);
    row.flatness = std::abs(row.F - optimal_cost(prob, cfg.cost));
    row.dkr = empirical_dkr(tx, ev.pairs.y);
    row.wall_ms = wall_ms;
    return row;
}

}  // namespace detail

/// Full two-timescale run: `outer` iterations of (K map steps; one potential
/// step), metrics every `eval_every` iterations on held-out batches, optional
/// potential perturbation followed by `extra_steps` more iterations.
inline TrainHistory run_training(const BenchmarkProblem& prob, const SolverConfig& cfg) {
    TrainState st = init_state(prob, cfg);
    auto ev = detail::make_eval_set(prob, cfg);
    Rng perturb_rng(mix64(cfg.seed, 0x6e6f697365ULL));

    const auto t0 = std::chrono::steady_clock::now();
    auto wall_ms = [&t0]() {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
            .count();
    };

    TrainHistory hist;
    hist.rows.push_back(detail::eval_row(st, cfg, prob, ev, wall_ms()));

    const std::size_t total = cfg.outer + (cfg.perturb_at > 0 ? cfg.extra_steps : 0);
    for (std::size_t iter = 1; iter <= total; ++iter) {
        if (cfg.perturb_at > 0 && iter == cfg.perturb_at + 1)
            perturb_potential(st, cfg.perturb_noise, perturb_rng);
        try {
            inner_map_steps(st, cfg, prob);
            potential_step(st, cfg, prob);
        } catch (const std::runtime_error& e) {
            st.iter = iter;
            hist.aborted = true;
            hist.abort_reason = e.what();
            hist.rows.push_back(detail::eval_row(st, cfg, prob, ev, wall_ms()));
            return hist;
        }
        st.iter = iter;
        const bool at_perturb = cfg.perturb_at > 0 && iter == cfg.perturb_at;
        if (iter % cfg.eval_every == 0 || iter == total || at_perturb)
            hist.rows.push_back(detail::eval_row(st, cfg, prob, ev, wall_ms()));
    }
    return hist;
}

}  // namespace otlab
