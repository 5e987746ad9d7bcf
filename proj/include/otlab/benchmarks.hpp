#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <utility>

#include "otlab/models.hpp"
#include "otlab/objectives.hpp"
#include "otlab/rng.hpp"

namespace otlab {

// ---------------------------------------------------------------------------
// Gaussian specs (diagonal covariance) and their closed-form transport.
// ---------------------------------------------------------------------------

struct GaussianSpec {
    Tensor mean;  // (d,)
    Tensor std;   // (d,), entries > 0

    std::size_t dim() const { return mean.dim(0); }
};

inline void check_gaussian(const GaussianSpec& g) {
    if (g.mean.rank() != 1 || g.std.rank() != 1 || g.mean.dim(0) != g.std.dim(0))
        throw std::invalid_argument("GaussianSpec: mean/std must be vectors of equal length");
    for (std::size_t i = 0; i < g.std.size(); ++i)
        if (!(g.std[i] > 0)) throw std::invalid_argument("GaussianSpec: std entries must be > 0");
}

inline Tensor sample_gaussian(const GaussianSpec& g, std::size_t n, Rng& rng) {
    check_gaussian(g);
    if (n == 0) throw std::invalid_argument("sample_gaussian: n must be >= 1");
    const std::size_t d = g.dim();
    Tensor out({n, d});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out(i, j) = rng.normal(g.mean[j], g.std[j]);
    return out;
}

/// Ground truth bundle. Potential diagnostics on arbitrary points exist only
/// when closed forms do (Gaussian pairs); the pair-based diagnostics below
/// work for every benchmark.
struct GroundTruth {
    std::function<Tensor(const Tensor&)> map;          // T*, (B,d) -> (B,d)
    std::function<Tensor(const Tensor&)> inverse_map;  // S*, optional
    std::function<Tensor(const Tensor&)> brenier;      // Phi(x), (B,d) -> (B,)
    std::function<Tensor(const Tensor&)> psi_star;       // optional closed form
    std::function<Tensor(const Tensor&)> psi_star_grad;  // optional closed form
    double cost_d2 = 0.0;       // optimal cost under the d^2 convention
    double cost_se = 0.0;       // Monte-Carlo standard error when estimated
    bool cost_exact = true;
};

struct BenchmarkProblem {
    std::string name;
    std::size_t dim = 0;
    std::function<Tensor(std::size_t, Rng&)> sample_source;
    std::function<Tensor(std::size_t, Rng&)> sample_target;
    std::optional<GroundTruth> truth;
    std::shared_ptr<IcnnModel> generator_icnn;  // set for ICNN benchmarks
};

struct AffineMapRecord {
    Tensor ratio;   // dst.std / src.std, per coordinate
    Tensor offset;  // dst.mean - ratio * src.mean
};

/// T*(x)_i = dst.mean_i + (dst.std_i/src.std_i)(x_i - src.mean_i) together
/// with the quadratic Brenier potential, its conjugate, the c-concave
/// potential and the exact optimal cost (stored under d^2).
inline BenchmarkProblem gaussian_benchmark(const GaussianSpec& src, const GaussianSpec& dst) {
    check_gaussian(src);
    check_gaussian(dst);
    if (src.dim() != dst.dim())
        throw std::invalid_argument("gaussian_benchmark: dimension mismatch between specs");
    const std::size_t d = src.dim();

    AffineMapRecord rec;
    rec.ratio = Tensor({d});
    rec.offset = Tensor({d});
    double cost_d2 = 0;
    for (std::size_t i = 0; i < d; ++i) {
        rec.ratio[i] = dst.std[i] / src.std[i];
        rec.offset[i] = dst.mean[i] - rec.ratio[i] * src.mean[i];
        const double dm = dst.mean[i] - src.mean[i];
        const double ds = dst.std[i] - src.std[i];
        cost_d2 += dm * dm + ds * ds;
    }

    auto apply_affine = [d](const Tensor& ratio, const Tensor& offset, const Tensor& x) {
        Tensor y({x.rows(), d});
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < d; ++j) y(i, j) = offset[j] + ratio[j] * x(i, j);
        return y;
    };

    GroundTruth truth;
    truth.map = [rec, apply_affine](const Tensor& x) {
        return apply_affine(rec.ratio, rec.offset, x);
    };
    {
        Tensor inv_ratio({d}), inv_offset({d});
        for (std::size_t i = 0; i < d; ++i) {
            inv_ratio[i] = 1.0 / rec.ratio[i];
            inv_offset[i] = -rec.offset[i] / rec.ratio[i];
        }
        truth.inverse_map = [inv_ratio, inv_offset, apply_affine](const Tensor& y) {
            return apply_affine(inv_ratio, inv_offset, y);
        };
    }
    // Phi(x) = sum_i [m_i x_i + r_i (x_i - mu_i)^2 / 2], grad Phi = T*.
    {
        Tensor m = dst.mean, r = rec.ratio, mu = src.mean;
        truth.brenier = [m, r, mu, d](const Tensor& x) {
            Tensor out({x.rows()});
            for (std::size_t i = 0; i < x.rows(); ++i) {
                double s = 0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double c = x(i, j) - mu[j];
                    s += m[j] * x(i, j) + 0.5 * r[j] * c * c;
                }
                out[i] = s;
            }
            return out;
        };
        // Phi*(y) = sum_i [mu_i (y_i - m_i) + (y_i - m_i)^2 / (2 r_i)];
        // psi*(y) = |y|^2/2 - Phi*(y), grad psi*(y) = y - S*(y).
        auto inv = truth.inverse_map;
        truth.psi_star = [m, r, mu, d](const Tensor& y) {
            Tensor out({y.rows()});
            for (std::size_t i = 0; i < y.rows(); ++i) {
                double q = 0, conj = 0;
                for (std::size_t j = 0; j < d; ++j) {
                    const double c = y(i, j) - m[j];
                    q += 0.5 * y(i, j) * y(i, j);
                    conj += mu[j] * c + 0.5 * c * c / r[j];
                }
                out[i] = q - conj;
            }
            return out;
        };
        truth.psi_star_grad = [inv](const Tensor& y) {
            Tensor s = inv(y);
            Tensor out(y.shape());
            for (std::size_t i = 0; i < y.size(); ++i) out[i] = y[i] - s[i];
            return out;
        };
    }
    truth.cost_d2 = cost_d2;
    truth.cost_exact = true;

    BenchmarkProblem prob;
    prob.name = "gaussian";
    prob.dim = d;
    prob.sample_source = [src](std::size_t n, Rng& rng) { return sample_gaussian(src, n, rng); };
    prob.sample_target = [dst](std::size_t n, Rng& rng) { return sample_gaussian(dst, n, rng); };
    prob.truth = std::move(truth);
    return prob;
}

// ---------------------------------------------------------------------------
// Gaussian mixture source (Appendix-style generator) and the ICNN-pushforward
// benchmark built on top of it.
// ---------------------------------------------------------------------------

struct MixtureSpec {
    std::size_t dim = 16;
    std::size_t components = 24;
    double radius = 2.5;
    double weight_logit_std = 1.25;
    double component_scale = 0.35;
    double log_scale_std = 0.9;
    std::uint64_t seed = 0;
};

struct Mixture {
    std::vector<Tensor> means;    // (d,) each, norm = radius
    std::vector<Tensor> stds;     // (d,) each, component_scale * s_j
    std::vector<double> weights;  // softmax of logits

    std::size_t pick_component(double u) const {
        double acc = 0;
        for (std::size_t k = 0; k + 1 < weights.size(); ++k) {
            acc += weights[k];
            if (u < acc) return k;
        }
        return weights.size() - 1;
    }

    Tensor sample(std::size_t n, Rng& rng) const {
        const std::size_t d = means[0].dim(0);
        Tensor out({n, d});
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t j = pick_component(rng.uniform());
            for (std::size_t k = 0; k < d; ++k)
                out(i, k) = rng.normal(means[j][k], stds[j][k]);
        }
        return out;
    }
};

/// Means are random directions scaled to `radius`; weights are a softmax of
/// N(0, weight_logit_std^2) logits; per-component log-scales are drawn with
/// std log_scale_std and mean-centered over coordinates within each component.
inline Mixture build_mixture(const MixtureSpec& spec) {
    if (spec.components == 0 || spec.dim == 0)
        throw std::invalid_argument("build_mixture: empty spec");
    Rng rng(mix64(spec.seed, 0x6d69780aULL));
    Mixture mix;
    std::vector<double> logits(spec.components);
    for (std::size_t j = 0; j < spec.components; ++j) {
        Tensor dir({spec.dim});
        double norm = 0;
        do {
            for (std::size_t k = 0; k < spec.dim; ++k) dir[k] = rng.normal();
            norm = std::sqrt(sq_norm(dir));
        } while (norm < 1e-12);
        for (std::size_t k = 0; k < spec.dim; ++k) dir[k] *= spec.radius / norm;
        mix.means.push_back(std::move(dir));

        Tensor ls({spec.dim});
        double lmean = 0;
        for (std::size_t k = 0; k < spec.dim; ++k) {
            ls[k] = rng.normal(0.0, spec.log_scale_std);
            lmean += ls[k];
        }
        lmean /= static_cast<double>(spec.dim);
        Tensor sd({spec.dim});
        for (std::size_t k = 0; k < spec.dim; ++k)
            sd[k] = spec.component_scale * std::exp(ls[k] - lmean);
        mix.stds.push_back(std::move(sd));

        logits[j] = rng.normal(0.0, spec.weight_logit_std);
    }
    double zmax = logits[0];
    for (double l : logits) zmax = std::max(zmax, l);
    double z = 0;
    for (double l : logits) z += std::exp(l - zmax);
    for (double l : logits) mix.weights.push_back(std::exp(l - zmax) / z);
    return mix;
}

struct IcnnBenchConfig {
    std::vector<std::size_t> hidden;  // default: 5 layers of width dim
    double init_std = 0.14;
    double alpha = 0.05;
    std::uint64_t seed = 1;
};

/// Builds Phi = a * Phi0 from a randomly initialized ICNN, with the scale
/// calibrated on `calib_samples` source draws:
///   a = sqrt(E|X|^2) / sqrt(E|grad Phi0(X)|^2).
/// Ground truth map is grad Phi; the optimal cost is the Monte-Carlo mean of
/// c(x, T*(x)) under d^2 with its standard error (exact-in-expectation since
/// the map is exact).
inline BenchmarkProblem make_icnn_benchmark(const MixtureSpec& mix_spec, IcnnBenchConfig cfg,
                                            std::size_t calib_samples) {
    if (calib_samples == 0)
        throw std::invalid_argument("make_icnn_benchmark: calib_samples must be >= 1");
    Mixture mix = build_mixture(mix_spec);
    if (cfg.hidden.empty()) cfg.hidden.assign(5, mix_spec.dim);

    Rng init_rng(mix64(cfg.seed, 0x69636e6eULL));
    auto icnn = std::make_shared<IcnnModel>(
        make_icnn(mix_spec.dim, cfg.hidden, cfg.init_std, cfg.alpha, 1.0, init_rng));

    Rng calib_rng(mix64(cfg.seed, 0x63616cULL));
    Tensor xs = mix.sample(calib_samples, calib_rng);
    Tensor grads = icnn_input_grad(*icnn, xs);
    double ex2 = 0, eg2 = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        ex2 += xs[i] * xs[i];
        eg2 += grads[i] * grads[i];
    }
    ex2 /= static_cast<double>(calib_samples);
    eg2 /= static_cast<double>(calib_samples);
    if (!(eg2 > 0))
        throw std::runtime_error("make_icnn_benchmark: degenerate calibration (zero gradients)");
    icnn->scale = std::sqrt(ex2) / std::sqrt(eg2);

    GroundTruth truth;
    truth.map = [icnn](const Tensor& x) { return icnn_input_grad(*icnn, x); };
    truth.brenier = [icnn](const Tensor& x) { return icnn_forward(*icnn, x); };

    // Monte-Carlo optimal cost under d^2 on a held-out sample.
    Rng cost_rng(mix64(cfg.seed, 0x636f7374ULL));
    const std::size_t m = 4096;
    Tensor xc = mix.sample(m, cost_rng);
    Tensor yc = icnn_input_grad(*icnn, xc);
    double s1 = 0, s2 = 0;
    for (std::size_t i = 0; i < m; ++i) {
        double row = 0;
        for (std::size_t k = 0; k < mix_spec.dim; ++k) {
            const double diff = xc(i, k) - yc(i, k);
            row += diff * diff;
        }
        s1 += row;
        s2 += row * row;
    }
    truth.cost_d2 = s1 / m;
    truth.cost_se = std::sqrt(std::max(0.0, s2 / m - truth.cost_d2 * truth.cost_d2) / m);
    truth.cost_exact = false;

    BenchmarkProblem prob;
    prob.name = "icnn";
    prob.dim = mix_spec.dim;
    prob.sample_source = [mix](std::size_t n, Rng& rng) { return mix.sample(n, rng); };
    prob.sample_target = [mix, icnn](std::size_t n, Rng& rng) {
        return icnn_input_grad(*icnn, mix.sample(n, rng));
    };
    prob.truth = std::move(truth);
    prob.generator_icnn = icnn;
    return prob;
}

// ---------------------------------------------------------------------------
// Pair-based target-potential diagnostics. For y = T*(x) = grad Phi(x):
//   Phi*(y) = <x,y> - Phi(x), grad Phi*(y) = x,
//   psi*(y) = |y|^2/2 - Phi*(y), grad psi*(y) = y - x.
// Everything is computed from (x, y, Phi(x)) only.
// ---------------------------------------------------------------------------

struct PotentialPairs {
    Tensor x, y;
    Tensor phi_star, phi_star_grad;
    Tensor psi_star, psi_star_grad;
};

inline PotentialPairs target_potential_pairs(const BenchmarkProblem& prob, std::size_t n,
                                             Rng& rng) {
    if (!prob.truth || !prob.truth->map || !prob.truth->brenier)
        throw std::invalid_argument("target_potential_pairs: benchmark has no ground truth");
    PotentialPairs pp;
    pp.x = prob.sample_source(n, rng);
    pp.y = prob.truth->map(pp.x);
    Tensor phix = prob.truth->brenier(pp.x);
    const std::size_t d = prob.dim;
    pp.phi_star = Tensor({n});
    pp.psi_star = Tensor({n});
    pp.phi_star_grad = pp.x;
    pp.psi_star_grad = Tensor({n, d});
    for (std::size_t i = 0; i < n; ++i) {
        double xy = 0, q = 0;
        for (std::size_t k = 0; k < d; ++k) {
            xy += pp.x(i, k) * pp.y(i, k);
            q += 0.5 * pp.y(i, k) * pp.y(i, k);
            pp.psi_star_grad(i, k) = pp.y(i, k) - pp.x(i, k);
        }
        pp.phi_star[i] = xy - phix[i];
        pp.psi_star[i] = q - pp.phi_star[i];
    }
    return pp;
}

/// Optimal cost under the configured convention.
inline double optimal_cost(const BenchmarkProblem& prob, const CostFn& cost) {
    if (!prob.truth) throw std::invalid_argument("optimal_cost: benchmark has no ground truth");
    return convert_cost_d2(cost, prob.truth->cost_d2);
}

}  // namespace otlab
