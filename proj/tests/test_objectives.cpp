#include <gtest/gtest.h>

#include <cmath>

#include "otlab/objectives.hpp"

using namespace otlab;

namespace {

double rel_err(const Tensor& got, const Tensor& want) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        num += (got[i] - want[i]) * (got[i] - want[i]);
        den += want[i] * want[i];
    }
    return std::sqrt(num) / std::max(std::sqrt(den), 1e-6);
}

Tensor rand_batch(Rng& rng, std::size_t B, std::size_t n, double lo = -2.0, double hi = 2.0) {
    Tensor t({B, n});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = lo + (hi - lo) * rng.uniform();
    return t;
}

MlpModel identity_map(std::size_t n) {
    Rng rng(1);
    MlpModel m = make_mlp(n, {}, n, Activation::leaky_relu, 0.1, rng);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) m.weights[0](i, j) = (i == j) ? 1.0 : 0.0;
    for (std::size_t i = 0; i < n; ++i) m.biases[0][i] = 0.0;
    return m;
}

MlpModel affine_map_1d(double w, double b) {
    Rng rng(1);
    MlpModel m = make_mlp(1, {}, 1, Activation::leaky_relu, 0.1, rng);
    m.weights[0][0] = w;
    m.biases[0][0] = b;
    return m;
}

PotentialModel constant_potential(std::size_t n, double k) {
    Rng rng(1);
    PotentialModel p;
    p.kind = PotentialKind::mlp;
    p.mlp = make_mlp(n, {}, 1, Activation::leaky_relu, 0.1, rng);
    for (std::size_t j = 0; j < n; ++j) p.mlp.weights[0][j] = 0.0;
    p.mlp.biases[0][0] = k;
    return p;
}

PotentialModel linear_potential_1d(double w, double b) {
    PotentialModel p = constant_potential(1, b);
    p.mlp.weights[0][0] = w;
    return p;
}

IcnnModel zeroed_icnn(std::size_t dim, double alpha, double a) {
    Rng rng(1);
    IcnnModel m = make_icnn(dim, {4}, 0.1, alpha, a, rng);
    for (Tensor* p : m.params())
        for (std::size_t i = 0; i < p->size(); ++i) (*p)[i] = 0.0;
    return m;
}

const CostFn kHalfSq{2.0, CostFn::Scaling::one_over_p};

}  // namespace

TEST(Cost, ConventionsAndBasics) {
    Tensor x = Tensor::matrix(2, 2, {0, 0, 1, 1});
    Tensor y = Tensor::matrix(2, 2, {0, 0, 3, 1});
    CostFn half{2.0, CostFn::Scaling::half};
    Tensor r = cost_rows(kHalfSq, x, y);
    EXPECT_DOUBLE_EQ(r[0], 0.0);  // c(x,x)=0
    EXPECT_DOUBLE_EQ(r[1], 2.0);  // |(1,1)-(3,1)|^2 / 2
    // Symmetry and nonnegativity.
    Tensor r2 = cost_rows(kHalfSq, y, x);
    EXPECT_DOUBLE_EQ(r2[1], r[1]);
    EXPECT_DOUBLE_EQ(cost_coeff(half), 0.5);
    EXPECT_DOUBLE_EQ(convert_cost_d2(kHalfSq, 4.25), 2.125);

    CostFn p3{3.0, CostFn::Scaling::one_over_p};
    Tensor r3 = cost_rows(p3, x, y);
    EXPECT_NEAR(r3[1], 8.0 / 3.0, 1e-12);
    CostFn bad{1.0, CostFn::Scaling::one_over_p};
    EXPECT_THROW(cost_rows(bad, x, y), std::invalid_argument);
}

TEST(SemiDual, IdentityMapZeroPotentialIsZero) {
    Rng rng(5);
    MlpModel t = identity_map(2);
    PotentialModel psi = constant_potential(2, 0.0);
    Tensor x = rand_batch(rng, 16, 2), y = rand_batch(rng, 16, 2);
    EXPECT_DOUBLE_EQ(semi_dual_value(t, psi, x, y, kHalfSq), 0.0);
}

TEST(SemiDual, ConstantPotentialCancelsExactly) {
    Rng rng(6);
    MlpModel t = identity_map(2);
    PotentialModel psi = constant_potential(2, 17.25);
    Tensor x = rand_batch(rng, 8, 2), y = rand_batch(rng, 8, 2);
    EXPECT_DOUBLE_EQ(semi_dual_value(t, psi, x, y, kHalfSq), 0.0);
}

TEST(SemiDual, PointMassHandExample) {
    // mu = delta_0, nu = delta_2, t(x) = x + 2, psi(y) = y, half-quadratic
    // cost: F = 2 - 2 + 2 = 2.
    MlpModel t = affine_map_1d(1.0, 2.0);
    PotentialModel psi = linear_potential_1d(1.0, 0.0);
    Tensor x = Tensor::matrix(4, 1, {0, 0, 0, 0});
    Tensor y = Tensor::matrix(4, 1, {2, 2, 2, 2});
    EXPECT_DOUBLE_EQ(semi_dual_value(t, psi, x, y, kHalfSq), 2.0);
}

TEST(SemiDual, GraphAndClosureAgree) {
    Rng rng(7);
    MlpModel t = make_mlp(2, {5}, 2, Activation::leaky_relu, 0.4, rng);
    PotentialModel psi;
    psi.kind = PotentialKind::mlp;
    psi.mlp = make_mlp(2, {6}, 1, Activation::softplus, 0.4, rng);
    Tensor x = rand_batch(rng, 12, 2), y = rand_batch(rng, 9, 2);
    double via_model = semi_dual_value(t, psi, x, y, kHalfSq);
    double via_fn = semi_dual_value([&](const Tensor& b) { return mlp_forward(t, b); },
                                    [&](const Tensor& b) { return potential_values(psi, b); }, x,
                                    y, kHalfSq);
    EXPECT_NEAR(via_model, via_fn, 1e-12);
}

TEST(SemiDual, PlanCoupledEvaluationIsPotentialIndependent) {
    // y-batch exactly t(x)-batch: the potential terms cancel (identical values
    // mean-reduced in the same order), leaving only final-combine rounding.
    Rng rng(8);
    MlpModel t = make_mlp(1, {4}, 1, Activation::leaky_relu, 0.5, rng);
    Tensor x = rand_batch(rng, 32, 1);
    Tensor y = mlp_forward(t, x);
    double base = mean_cost(kHalfSq, x, y);
    double lo = base, hi = base;
    for (int i = 0; i < 100; ++i) {
        PotentialModel psi;
        psi.kind = PotentialKind::mlp;
        psi.mlp = make_mlp(1, {8}, 1, Activation::softplus, 1.0, rng);
        double f = semi_dual_value(t, psi, x, y, kHalfSq);
        EXPECT_NEAR(f, base, 1e-12);
        lo = std::min(lo, f);
        hi = std::max(hi, f);
    }
    EXPECT_LT(hi - lo, 1e-9);
}

TEST(SemiDual, ConstantShiftInvarianceOnEqualBatches) {
    Rng rng(9);
    MlpModel t = make_mlp(2, {4}, 2, Activation::leaky_relu, 0.4, rng);
    PotentialModel psi;
    psi.kind = PotentialKind::mlp;
    psi.mlp = make_mlp(2, {5}, 1, Activation::softplus, 0.5, rng);
    Tensor x = rand_batch(rng, 16, 2), y = rand_batch(rng, 16, 2);
    double f0 = semi_dual_value(t, psi, x, y, kHalfSq);
    PotentialModel shifted = psi;
    shifted.mlp.biases.back()[0] += 3.25;
    double f1 = semi_dual_value(t, shifted, x, y, kHalfSq);
    EXPECT_NEAR(f1 - f0, 0.0, 1e-12);
}

TEST(SemiDual, AffineInPotentialOutputs) {
    // Doubling the readout layer scales the non-cost part exactly (powers of
    // two are exact in floating point).
    Rng rng(10);
    MlpModel t = make_mlp(2, {4}, 2, Activation::leaky_relu, 0.4, rng);
    PotentialModel psi;
    psi.kind = PotentialKind::mlp;
    psi.mlp = make_mlp(2, {5}, 1, Activation::softplus, 0.5, rng);
    Tensor x = rand_batch(rng, 8, 2), y = rand_batch(rng, 8, 2);
    double cost = mean_cost(kHalfSq, x, mlp_forward(t, x));
    double f1 = semi_dual_value(t, psi, x, y, kHalfSq);
    PotentialModel doubled = psi;
    for (std::size_t j = 0; j < doubled.mlp.weights.back().size(); ++j)
        doubled.mlp.weights.back()[j] *= 2.0;
    doubled.mlp.biases.back()[0] *= 2.0;
    double f2 = semi_dual_value(t, doubled, x, y, kHalfSq);
    EXPECT_NEAR(f2 - cost, 2.0 * (f1 - cost), 1e-12);
}

TEST(SemiDual, DimensionMismatchRejected) {
    Rng rng(11);
    MlpModel t = make_mlp(2, {}, 3, Activation::leaky_relu, 0.3, rng);
    PotentialModel psi = constant_potential(2, 0.0);
    Tensor x = rand_batch(rng, 4, 2), y = rand_batch(rng, 4, 2);
    EXPECT_THROW(semi_dual_value(t, psi, x, y, kHalfSq), std::invalid_argument);
}

TEST(MaxCorr, IdentityMapZeroPotential) {
    Rng rng(12);
    MlpModel t = identity_map(2);
    IcnnModel v = zeroed_icnn(2, 0.0, 1.0);
    Tensor x = rand_batch(rng, 16, 2), y = rand_batch(rng, 16, 2);
    double want = 0;
    for (std::size_t i = 0; i < 16; ++i)
        want += x(i, 0) * x(i, 0) + x(i, 1) * x(i, 1);
    want /= 16;
    EXPECT_NEAR(maxcorr_value(t, v, x, y), want, 1e-12);
}

TEST(MaxCorr, QuadraticPotentialArithmetic) {
    Rng rng(13);
    MlpModel t = identity_map(2);
    IcnnModel v = zeroed_icnn(2, 1.0, 1.0);  // v(y) = |y|^2/2
    Tensor x = rand_batch(rng, 8, 2), y = rand_batch(rng, 8, 2);
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < 8; ++i) {
        mx += x(i, 0) * x(i, 0) + x(i, 1) * x(i, 1);
        my += y(i, 0) * y(i, 0) + y(i, 1) * y(i, 1);
    }
    mx /= 8;
    my /= 8;
    EXPECT_NEAR(maxcorr_value(t, v, x, y), mx - 0.5 * mx + 0.5 * my, 1e-12);
}

TEST(MaxCorr, PointMassHandExample) {
    // mu = delta_1, nu = delta_3 in 1D, t == 3, v(y) = y^2/2: 3 - 4.5 + 4.5.
    MlpModel t = affine_map_1d(0.0, 3.0);
    IcnnModel v = zeroed_icnn(1, 1.0, 1.0);
    Tensor x = Tensor::matrix(3, 1, {1, 1, 1});
    Tensor y = Tensor::matrix(3, 1, {3, 3, 3});
    EXPECT_DOUBLE_EQ(maxcorr_value(t, v, x, y), 3.0);
}

TEST(OtmPenalty, VanishesAtFirstOrderOptimality) {
    Rng rng(14);
    MlpModel t = identity_map(3);
    IcnnModel v = zeroed_icnn(3, 1.0, 1.0);  // grad v = y
    Tensor x = rand_batch(rng, 10, 3);
    EXPECT_NEAR(otm_penalty(t, v, x), 0.0, 1e-18);

    // t(x) = x + c gives penalty |c|^2.
    MlpModel tc = identity_map(3);
    tc.biases[0] = Tensor::row({0.5, -1.0, 2.0});
    EXPECT_NEAR(otm_penalty(tc, v, x), 0.25 + 1.0 + 4.0, 1e-12);
}

TEST(OtmPenalty, GradCheckBothPlayers) {
    Rng rng(15);
    MlpModel t = make_mlp(2, {4}, 2, Activation::leaky_relu, 0.4, rng);
    IcnnModel v = make_icnn(2, {4, 3}, 0.4, 0.05, 1.1, rng);
    Tensor x = rand_batch(rng, 3, 2);

    auto g = otm_penalty_graph(t, v, x);
    backward(g.value);

    auto tp = t.params();
    for (std::size_t pi = 0; pi < tp.size(); ++pi) {
        auto fp = [&](const Tensor& pv) {
            MlpModel tt = t;
            *tt.params()[pi] = pv;
            return otm_penalty(tt, v, x);
        };
        EXPECT_LT(rel_err(grad_of(g.map_params[pi]), finite_diff_grad(fp, *tp[pi], 1e-5)), 1e-4)
            << "map param " << pi;
    }
    auto vp = v.params();
    for (std::size_t pi = 0; pi < vp.size(); ++pi) {
        auto fp = [&](const Tensor& pv) {
            IcnnModel vv = v;
            *vv.params()[pi] = pv;
            return otm_penalty(t, vv, x);
        };
        EXPECT_LT(rel_err(grad_of(g.pot_params[pi]), finite_diff_grad(fp, *vp[pi], 1e-5)), 1e-4)
            << "pot param " << pi;
    }
}

TEST(MapFromPotential, QuadraticAndTranslation) {
    Rng rng(16);
    IcnnModel phi = zeroed_icnn(2, 1.0, 1.0);
    Tensor x = rand_batch(rng, 5, 2);
    Tensor m1 = map_from_potential(phi, x, kHalfSq);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(m1[i], x[i], 1e-12);

    IcnnModel shifted = phi;
    shifted.readout_skip = Tensor::matrix(1, 2, {0.7, -0.2});
    Tensor m2 = map_from_potential(shifted, x, kHalfSq);
    for (std::size_t i = 0; i < 5; ++i) {
        EXPECT_NEAR(m2(i, 0), x(i, 0) + 0.7, 1e-12);
        EXPECT_NEAR(m2(i, 1), x(i, 1) - 0.2, 1e-12);
    }

    CostFn cubic{3.0, CostFn::Scaling::one_over_p};
    EXPECT_THROW(map_from_potential(phi, x, cubic), std::invalid_argument);
}

TEST(ObjectiveKind, PenaltyWeightInvariant) {
    ObjectiveKind ok = ObjectiveKind::make(Method::otm);
    EXPECT_DOUBLE_EQ(ok.penalty_weight, 0.1);
    EXPECT_NO_THROW(check_objective(ok));
    ObjectiveKind bad = ObjectiveKind::make(Method::max_corr);
    bad.penalty_weight = 0.1;
    EXPECT_THROW(check_objective(bad), std::invalid_argument);
}

TEST(SemiDual, EndToEndGradCheck) {
    Rng rng(17);
    MlpModel t = make_mlp(2, {4}, 2, Activation::leaky_relu, 0.4, rng);
    PotentialModel psi;
    psi.kind = PotentialKind::cconcave_icnn;
    psi.icnn = make_icnn(2, {4}, 0.4, 0.05, 1.0, rng);
    Tensor x = rand_batch(rng, 3, 2), y = rand_batch(rng, 3, 2);

    auto g = semi_dual_graph(t, psi, x, y, kHalfSq);
    backward(g.value);

    auto tp = t.params();
    for (std::size_t pi = 0; pi < tp.size(); ++pi) {
        auto fp = [&](const Tensor& pv) {
            MlpModel tt = t;
            *tt.params()[pi] = pv;
            return semi_dual_value(tt, psi, x, y, kHalfSq);
        };
        EXPECT_LT(rel_err(grad_of(g.map_params[pi]), finite_diff_grad(fp, *tp[pi], 1e-5)), 1e-4);
    }
    auto pp = psi.params();
    for (std::size_t pi = 0; pi < pp.size(); ++pi) {
        auto fp = [&](const Tensor& pv) {
            PotentialModel qq = psi;
            *qq.params()[pi] = pv;
            return semi_dual_value(t, qq, x, y, kHalfSq);
        };
        EXPECT_LT(rel_err(grad_of(g.pot_params[pi]), finite_diff_grad(fp, *pp[pi], 1e-5)), 1e-4);
    }
}
