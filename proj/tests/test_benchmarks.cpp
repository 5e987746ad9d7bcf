#include <gtest/gtest.h>

#include <chrono>
#include <cmath>

#include "otlab/benchmarks.hpp"

using namespace otlab;

namespace {

const CostFn kHalfSq{2.0, CostFn::Scaling::one_over_p};

GaussianSpec spec1d(double mean, double std) {
    return {Tensor::row({mean}), Tensor::row({std})};
}

GaussianSpec spec2d(double mean, double std) {
    return {Tensor::row({mean, mean}), Tensor::row({std, std})};
}

}  // namespace

TEST(Gaussian, SamplerDeterministicPerState) {
    GaussianSpec g = spec2d(0.5, 1.5);
    Rng a(7), b(7);
    Tensor s1 = sample_gaussian(g, 16, a), s2 = sample_gaussian(g, 16, b);
    for (std::size_t i = 0; i < s1.size(); ++i) EXPECT_EQ(s1[i], s2[i]);
}

TEST(Gaussian, DegenerateStdConcentratesAtMean) {
    GaussianSpec g{Tensor::row({3.0}), Tensor::row({1e-9})};
    Rng rng(1);
    Tensor s = sample_gaussian(g, 100, rng);
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(s[i], 3.0, 1e-7);
    GaussianSpec bad{Tensor::row({0.0}), Tensor::row({0.0})};
    EXPECT_THROW(sample_gaussian(bad, 1, rng), std::invalid_argument);
}

TEST(Gaussian, EmpiricalMeanWithinCltBound) {
    GaussianSpec g = spec2d(1.0, 2.0);
    Rng rng(11);
    const std::size_t n = 100000;
    Tensor s = sample_gaussian(g, n, rng);
    for (std::size_t j = 0; j < 2; ++j) {
        double m = 0;
        for (std::size_t i = 0; i < n; ++i) m += s(i, j);
        m /= n;
        EXPECT_NEAR(m, 1.0, 3.0 * 2.0 / std::sqrt(double(n)));
    }
}

TEST(AnalyticMap, PaperOneDimensionalPair) {
    auto prob = gaussian_benchmark(spec1d(0, 1), spec1d(2, 1.5));
    Tensor x = Tensor::matrix(3, 1, {-1, 0, 2});
    Tensor y = prob.truth->map(x);
    EXPECT_DOUBLE_EQ(y[0], 0.5);
    EXPECT_DOUBLE_EQ(y[1], 2.0);
    EXPECT_DOUBLE_EQ(y[2], 5.0);
    EXPECT_DOUBLE_EQ(prob.truth->cost_d2, 4.25);
    EXPECT_DOUBLE_EQ(optimal_cost(prob, kHalfSq), 2.125);

    // Inverse map and Brenier gradient consistency.
    Tensor back = prob.truth->inverse_map(y);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(back[i], x[i], 1e-12);
    auto f = [&](const Tensor& xx) { return prob.truth->brenier(xx)[0]; };
    Tensor g = finite_diff_grad(f, Tensor::matrix(1, 1, {0.7}), 1e-6);
    EXPECT_NEAR(g[0], 2.0 + 1.5 * 0.7, 1e-6);
}

TEST(AnalyticMap, IdenticalSpecsGiveIdentity) {
    auto prob = gaussian_benchmark(spec2d(1, 2), spec2d(1, 2));
    Tensor x = Tensor::matrix(2, 2, {0.3, -1, 2, 0});
    Tensor y = prob.truth->map(x);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_DOUBLE_EQ(y[i], x[i]);
    EXPECT_DOUBLE_EQ(prob.truth->cost_d2, 0.0);
}

TEST(AnalyticMap, TwoDimensionalPaperPair) {
    auto prob = gaussian_benchmark(spec2d(0, 1), spec2d(1, 2));
    Tensor x = Tensor::matrix(1, 2, {0.5, -0.5});
    Tensor y = prob.truth->map(x);
    EXPECT_DOUBLE_EQ(y(0, 0), 2.0);
    EXPECT_DOUBLE_EQ(y(0, 1), 0.0);
    EXPECT_DOUBLE_EQ(prob.truth->cost_d2, 4.0);
}

TEST(AnalyticMap, MismatchedDimsRejected) {
    EXPECT_THROW(gaussian_benchmark(spec1d(0, 1), spec2d(0, 1)), std::invalid_argument);
}

TEST(AnalyticMap, PsiStarClosedFormMatchesPairDiagnostics) {
    auto prob = gaussian_benchmark(spec1d(0, 1), spec1d(2, 1.5));
    Rng rng(5);
    auto pairs = target_potential_pairs(prob, 64, rng);
    Tensor psi = prob.truth->psi_star(pairs.y);
    Tensor psig = prob.truth->psi_star_grad(pairs.y);
    for (std::size_t i = 0; i < 64; ++i) {
        EXPECT_NEAR(psi[i], pairs.psi_star[i], 1e-9);
        EXPECT_NEAR(psig[i], pairs.psi_star_grad[i], 1e-9);
    }
}

TEST(AnalyticMap, MonteCarloCostMatchesClosedForm) {
    auto prob = gaussian_benchmark(spec1d(0, 1), spec1d(2, 1.5));
    Rng rng(6);
    Tensor x = prob.sample_source(100000, rng);
    Tensor y = prob.truth->map(x);
    double mc = 0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const double d = x[i] - y[i];
        mc += d * d;
    }
    mc /= x.rows();
    EXPECT_NEAR(mc, prob.truth->cost_d2, 0.02 * prob.truth->cost_d2);
}

TEST(AnalyticMap, PushforwardMatchesTargetMoments) {
    auto prob = gaussian_benchmark(spec2d(0, 1), spec2d(1, 2));
    Rng rng(7);
    Tensor pushed = prob.truth->map(prob.sample_source(10000, rng));
    Tensor direct = prob.sample_target(10000, rng);
    for (std::size_t j = 0; j < 2; ++j) {
        double m1 = 0, m2 = 0, v1 = 0, v2 = 0;
        for (std::size_t i = 0; i < 10000; ++i) {
            m1 += pushed(i, j);
            m2 += direct(i, j);
        }
        m1 /= 10000;
        m2 /= 10000;
        for (std::size_t i = 0; i < 10000; ++i) {
            v1 += (pushed(i, j) - m1) * (pushed(i, j) - m1);
            v2 += (direct(i, j) - m2) * (direct(i, j) - m2);
        }
        v1 /= 10000;
        v2 /= 10000;
        EXPECT_NEAR(m1, m2, 0.05 * 4.0);  // tolerance scaled to std=2
        EXPECT_NEAR(v1 / v2, 1.0, 0.05);
    }
}

TEST(Mixture, SingleComponentAtRadius) {
    MixtureSpec spec;
    spec.dim = 4;
    spec.components = 1;
    spec.seed = 3;
    Mixture mix = build_mixture(spec);
    EXPECT_NEAR(std::sqrt(sq_norm(mix.means[0])), 2.5, 1e-12);
    EXPECT_DOUBLE_EQ(mix.weights[0], 1.0);

    // Log-scales are mean-centered within the component.
    double prod = 1.0;
    for (std::size_t k = 0; k < 4; ++k) prod *= mix.stds[0][k] / spec.component_scale;
    EXPECT_NEAR(std::log(prod), 0.0, 1e-9);
}

TEST(Mixture, WeightsSumToOneAndFrequenciesMatch) {
    MixtureSpec spec;
    spec.dim = 2;
    spec.components = 8;
    spec.seed = 5;
    Mixture mix = build_mixture(spec);
    double wsum = 0;
    for (double w : mix.weights) wsum += w;
    EXPECT_NEAR(wsum, 1.0, 1e-12);

    // Component draw frequencies over 100k samples: multinomial CI.
    Rng rng(6);
    const std::size_t n = 100000;
    std::vector<double> freq(8, 0.0);
    for (std::size_t i = 0; i < n; ++i) freq[mix.pick_component(rng.uniform())] += 1.0;
    for (std::size_t j = 0; j < 8; ++j) {
        const double p = mix.weights[j];
        const double sd = std::sqrt(p * (1 - p) / n);
        EXPECT_NEAR(freq[j] / n, p, 4 * sd);
    }
}

TEST(Mixture, PaperConfigurationBuilds) {
    MixtureSpec spec;
    spec.dim = 192;
    spec.components = 24;
    spec.seed = 9;
    Mixture mix = build_mixture(spec);
    EXPECT_EQ(mix.means.size(), 24u);
    EXPECT_EQ(mix.means[0].dim(0), 192u);
}

TEST(IcnnBenchmark, CalibrationFixedPointForPureQuadratic) {
    // If grad Phi0 = x the calibration formula returns exactly 1.
    MixtureSpec spec;
    spec.dim = 3;
    spec.components = 2;
    spec.seed = 11;
    IcnnBenchConfig cfg;
    cfg.hidden = {4};
    cfg.alpha = 1.0;
    cfg.seed = 12;
    auto prob = make_icnn_benchmark(spec, cfg, 256);
    auto& icnn = *prob.generator_icnn;
    for (Tensor* p : icnn.params())
        for (std::size_t i = 0; i < p->size(); ++i) (*p)[i] = 0.0;
    icnn.scale = 1.0;

    Rng rng(13);
    Mixture mix = build_mixture(spec);
    Tensor xs = mix.sample(512, rng);
    Tensor g = icnn_input_grad(icnn, xs);
    double ex2 = 0, eg2 = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        ex2 += xs[i] * xs[i];
        eg2 += g[i] * g[i];
    }
    EXPECT_NEAR(std::sqrt(ex2) / std::sqrt(eg2), 1.0, 1e-12);
}

TEST(IcnnBenchmark, CalibrationRecomputationMatches) {
    MixtureSpec spec;
    spec.dim = 8;
    spec.components = 4;
    spec.seed = 21;
    IcnnBenchConfig cfg;
    cfg.seed = 22;
    auto prob = make_icnn_benchmark(spec, cfg, 512);

    // Recompute a from the stored model and the same calibration stream.
    IcnnModel unscaled = *prob.generator_icnn;
    const double a = unscaled.scale;
    unscaled.scale = 1.0;
    Rng calib(mix64(cfg.seed, 0x63616cULL));
    Mixture mix = build_mixture(spec);
    Tensor xs = mix.sample(512, calib);
    Tensor g = icnn_input_grad(unscaled, xs);
    double ex2 = 0, eg2 = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        ex2 += xs[i] * xs[i];
        eg2 += g[i] * g[i];
    }
    EXPECT_NEAR(a, std::sqrt(ex2) / std::sqrt(eg2), 1e-9);
}

TEST(IcnnBenchmark, PairsReplayBitExactAndFast) {
    const auto t0 = std::chrono::steady_clock::now();
    MixtureSpec spec;
    spec.dim = 16;
    spec.components = 8;
    spec.seed = 31;
    IcnnBenchConfig cfg;
    cfg.seed = 32;
    auto prob = make_icnn_benchmark(spec, cfg, 1024);

    Rng r1(99), r2(99);
    auto p1 = target_potential_pairs(prob, 256, r1);
    auto p2 = target_potential_pairs(prob, 256, r2);
    for (std::size_t i = 0; i < p1.y.size(); ++i) EXPECT_EQ(p1.y[i], p2.y[i]);

    // Pairs satisfy y = grad Phi(x) by construction; fresh recomputation
    // agrees bitwise.
    Tensor g = icnn_input_grad(*prob.generator_icnn, p1.x);
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(g[i], p1.y[i]);

    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EXPECT_LT(secs, 5.0);
}

TEST(IcnnBenchmark, PushforwardMomentInvariant) {
    MixtureSpec spec;
    spec.dim = 6;
    spec.components = 4;
    spec.seed = 41;
    IcnnBenchConfig cfg;
    cfg.seed = 42;
    auto prob = make_icnn_benchmark(spec, cfg, 1024);
    Rng rng(43);
    Tensor pushed = prob.truth->map(prob.sample_source(10000, rng));
    Tensor direct = prob.sample_target(10000, rng);
    double n1 = 0, n2 = 0;
    for (std::size_t i = 0; i < pushed.size(); ++i) n1 += pushed[i] * pushed[i];
    for (std::size_t i = 0; i < direct.size(); ++i) n2 += direct[i] * direct[i];
    EXPECT_NEAR(n1 / pushed.rows(), n2 / direct.rows(), 0.05 * (n2 / direct.rows()));
}

TEST(PotentialPairs, SelfConjugateQuadratic) {
    // Phi = |x|^2/2: y = x, Phi*(y) = |y|^2/2, psi* = 0, grad psi* = 0.
    BenchmarkProblem prob;
    prob.name = "quad";
    prob.dim = 2;
    prob.sample_source = [](std::size_t n, Rng& rng) {
        Tensor t({n, 2});
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
        return t;
    };
    prob.sample_target = prob.sample_source;
    GroundTruth gt;
    gt.map = [](const Tensor& x) { return x; };
    gt.brenier = [](const Tensor& x) {
        Tensor out({x.rows()});
        for (std::size_t i = 0; i < x.rows(); ++i)
            out[i] = 0.5 * (x(i, 0) * x(i, 0) + x(i, 1) * x(i, 1));
        return out;
    };
    gt.cost_d2 = 0;
    prob.truth = gt;

    Rng rng(51);
    auto pairs = target_potential_pairs(prob, 32, rng);
    for (std::size_t i = 0; i < 32; ++i) {
        double q = 0.5 * (pairs.y(i, 0) * pairs.y(i, 0) + pairs.y(i, 1) * pairs.y(i, 1));
        EXPECT_NEAR(pairs.phi_star[i], q, 1e-12);
        EXPECT_NEAR(pairs.psi_star[i], 0.0, 1e-12);
        EXPECT_NEAR(pairs.psi_star_grad(i, 0), 0.0, 1e-12);
        EXPECT_NEAR(pairs.psi_star_grad(i, 1), 0.0, 1e-12);
    }

    // Translation: Phi = |x|^2/2 + <c,x> gives grad psi*(y) = c.
    GroundTruth gt2 = *prob.truth;
    gt2.map = [](const Tensor& x) {
        Tensor y = x;
        for (std::size_t i = 0; i < y.rows(); ++i) {
            y(i, 0) += 0.7;
            y(i, 1) -= 0.3;
        }
        return y;
    };
    gt2.brenier = [](const Tensor& x) {
        Tensor out({x.rows()});
        for (std::size_t i = 0; i < x.rows(); ++i)
            out[i] = 0.5 * (x(i, 0) * x(i, 0) + x(i, 1) * x(i, 1)) + 0.7 * x(i, 0) - 0.3 * x(i, 1);
        return out;
    };
    prob.truth = gt2;
    auto pairs2 = target_potential_pairs(prob, 16, rng);
    for (std::size_t i = 0; i < 16; ++i) {
        EXPECT_NEAR(pairs2.psi_star_grad(i, 0), 0.7, 1e-12);
        EXPECT_NEAR(pairs2.psi_star_grad(i, 1), -0.3, 1e-12);
    }
}

TEST(PotentialPairs, InverseMapIdentityOnIcnnBenchmark) {
    MixtureSpec spec;
    spec.dim = 8;
    spec.components = 4;
    spec.seed = 61;
    IcnnBenchConfig cfg;
    cfg.seed = 62;
    auto prob = make_icnn_benchmark(spec, cfg, 512);
    Rng rng(63);
    auto pairs = target_potential_pairs(prob, 512, rng);
    // grad Phi(grad Phi*(y)) = y with grad Phi*(y) the stored x.
    Tensor mapped = prob.truth->map(pairs.phi_star_grad);
    for (std::size_t i = 0; i < mapped.size(); ++i) EXPECT_NEAR(mapped[i], pairs.y[i], 1e-6);

    BenchmarkProblem no_truth;
    no_truth.sample_source = prob.sample_source;
    EXPECT_THROW(target_potential_pairs(no_truth, 4, rng), std::invalid_argument);
}

TEST(PotentialPairs, CenteringRemovesGauge) {
    // Centered comparison of psi* and psi* + const is exact.
    auto prob = gaussian_benchmark(spec1d(0, 1), spec1d(2, 1.5));
    Rng rng(71);
    auto pairs = target_potential_pairs(prob, 128, rng);
    double m = 0;
    for (std::size_t i = 0; i < 128; ++i) m += pairs.psi_star[i];
    m /= 128;
    double mse = 0;
    for (std::size_t i = 0; i < 128; ++i) {
        const double shifted = pairs.psi_star[i] + 17.0;
        const double centered_shift = shifted - (m + 17.0);
        const double centered = pairs.psi_star[i] - m;
        mse += (centered_shift - centered) * (centered_shift - centered);
    }
    EXPECT_NEAR(mse, 0.0, 1e-18);
}
