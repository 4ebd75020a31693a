#include <gtest/gtest.h>

#include "ccm/observer.hpp"
#include "ccm/sim.hpp"

using ccm::ControlAffineSystem;
using ccm::PolyExpr;
using ccm::PolyMatrix;
using ccm::ReducedObserverDesign;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd vec2(double a, double b) {
    VectorXd v(2);
    v << a, b;
    return v;
}
VectorXd vec1(double a) {
    VectorXd v(1);
    v << a;
    return v;
}

ReducedObserverDesign mg_design(double m21, double lambda = 0.5) {
    ReducedObserverDesign d;
    d.p = 1;
    d.M21 = MatrixXd::Constant(1, 1, m21);
    d.M22 = MatrixXd::Identity(1, 1);
    d.lambda = lambda;
    d.region = ccm::Region::box(vec2(0, 0), vec2(2, 2));
    return d;
}

std::vector<VectorXd> phi_grid() {
    std::vector<VectorXd> grid;
    for (double phi : ccm::linspace(-2.0, 2.0, 41)) grid.push_back(vec2(0.0, phi));
    return grid;
}

ControlAffineSystem scalar_measured() {
    // xdot = x, y = x.
    auto vars = ccm::detail::make_vars(1, 1, 0);
    PolyMatrix f(1, 1, vars), B(1, 1, vars), g(1, 1, vars);
    f.at(0, 0) = PolyExpr::variable(vars, 0);
    B.at(0, 0) = PolyExpr::constant(vars, 0.0);
    g.at(0, 0) = PolyExpr::variable(vars, 0);
    return ControlAffineSystem(1, 1, 0, f, B, std::nullopt, g);
}

}  // namespace

TEST(Coordinates, NormalizeIdentityAndSwap) {
    MatrixXd C1(1, 2);
    C1 << 1, 0;
    EXPECT_TRUE(ccm::coordinate_normalize(C1).isApprox(MatrixXd::Identity(2, 2), 1e-12));
    MatrixXd C2(1, 2);
    C2 << 0, 1;
    MatrixXd expect(2, 2);
    expect << 0, 1, 1, 0;
    EXPECT_TRUE(ccm::coordinate_normalize(C2).isApprox(expect, 1e-12));
}

TEST(Coordinates, RandomFullRankResidual) {
    MatrixXd C(2, 4);
    uint64_t h = 9;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 4; ++j) {
            h = ccm::splitmix64(h);
            C(i, j) = 2.0 * ccm::u64_to_unit(h) - 1.0;
        }
    MatrixXd T = ccm::coordinate_normalize(C);
    MatrixXd reduced = C * T.inverse();
    EXPECT_LT((reduced.leftCols(2) - MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT(reduced.rightCols(2).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Coordinates, RankDeficientRejected) {
    MatrixXd C(2, 3);
    C << 1, 2, 3, 2, 4, 6;
    EXPECT_THROW(ccm::coordinate_normalize(C), std::invalid_argument);
}

TEST(ReducedCondition, SurgeDesignBoundary) {
    auto sys = ccm::builtin("moore-greitzer");
    auto grid = phi_grid();
    auto pass = ccm::check_m22_condition(sys, mg_design(-2.0), grid);
    EXPECT_TRUE(pass.pass);
    EXPECT_NEAR(pass.worst_margin, 0.0, 1e-9);
    EXPECT_NEAR(pass.worst_x(1), -1.0, 1e-12);
    auto fail = ccm::check_m22_condition(sys, mg_design(-1.9), grid);
    EXPECT_FALSE(fail.pass);
}

TEST(ReducedCondition, SignFlipWithinTolerance) {
    auto sys = ccm::builtin("moore-greitzer");
    auto grid = phi_grid();
    EXPECT_TRUE(ccm::check_m22_condition(sys, mg_design(-2.0 - 1e-4), grid).pass);
    EXPECT_FALSE(ccm::check_m22_condition(sys, mg_design(-2.0 + 1e-4), grid).pass);
}

TEST(ReducedCondition, ValidatesBlocks) {
    auto sys = ccm::builtin("moore-greitzer");
    auto d = mg_design(-2.0);
    d.M22 = MatrixXd::Constant(1, 1, -1.0);
    EXPECT_THROW(ccm::check_m22_condition(sys, d, phi_grid()), std::invalid_argument);
}

TEST(ObserverSim, ParticularSolution) {
    auto sys = ccm::builtin("moore-greitzer");
    auto design = mg_design(-2.0);
    VectorXd x0 = vec2(0.1, 0.1);
    auto truth = ccm::integrate(
        [&](double t, const VectorXd& x) { return sys.eval_dynamics(x, vec1(0.0), t); }, x0, 0.0,
        10.0, 1e-3);
    auto y_signal = [&](double t) {
        long k = std::lround(t / 1e-3);
        k = std::min(std::max(k, 0L), long(truth.x.size() - 1));
        return vec1(truth.x[size_t(k)](0));
    };
    auto est = ccm::simulate_observer(sys, design, y_signal, x0, 0.0, 10.0, 1e-3);
    double worst = 0.0;
    for (size_t k = 0; k < est.t.size(); ++k) {
        worst = std::max(worst, (est.xhat[k] - truth.x[k]).norm());
    }
    EXPECT_LE(worst, 1e-6);
}

TEST(ObserverSim, NoiselessDecayRate) {
    auto sys = ccm::builtin("moore-greitzer");
    auto design = mg_design(-2.0);
    VectorXd x0 = vec2(0.1, 0.1);
    auto truth = ccm::integrate(
        [&](double t, const VectorXd& x) { return sys.eval_dynamics(x, vec1(0.0), t); }, x0, 0.0,
        10.0, 1e-3);
    auto y_signal = [&](double t) {
        long k = std::lround(t / 1e-3);
        k = std::min(std::max(k, 0L), long(truth.x.size() - 1));
        return vec1(truth.x[size_t(k)](0));
    };
    auto est = ccm::simulate_observer(sys, design, y_signal, vec2(0.1, 2.1), 0.0, 10.0, 1e-3);
    std::vector<double> err;
    for (size_t k = 0; k < est.t.size(); ++k)
        err.push_back(std::abs(est.xhat[k](1) - truth.x[k](1)));
    double rate = ccm::fit_decay_rate(est.t, err, 0.0, 8.0);
    EXPECT_GE(rate, 0.45);
}

TEST(ObserverSim, StepGuard) {
    auto sys = ccm::builtin("moore-greitzer");
    EXPECT_THROW(ccm::simulate_observer(sys, mg_design(-2.0), [](double) { return vec1(0.0); },
                                        vec2(0, 0), 0.0, 1.0, 0.0),
                 std::invalid_argument);
}

TEST(Ocm, ScalarMeasured) {
    auto sys = scalar_measured();
    auto M = [](const VectorXd&) { return MatrixXd::Identity(1, 1); };
    std::vector<VectorXd> grid = {vec1(-1.0), vec1(0.0), vec1(1.0)};
    auto rep = ccm::check_ocm(sys, M, 4.0, 0.5, grid);
    EXPECT_TRUE(rep.full.pass);
    EXPECT_NEAR(rep.full.worst_margin, -1.0, 1e-9);
    // Full-rank measurement leaves an empty kernel.
    EXPECT_EQ(rep.kernel.worst_margin, -ccm::kInf);
}

TEST(Ocm, NoMeasurementUnstable) {
    // y has zero Jacobian, so the kernel form sees the full unstable space.
    auto vars = ccm::detail::make_vars(1, 1, 0);
    PolyMatrix f(1, 1, vars), B(1, 1, vars), g(1, 1, vars);
    f.at(0, 0) = PolyExpr::variable(vars, 0);
    B.at(0, 0) = PolyExpr::constant(vars, 0.0);
    g.at(0, 0) = PolyExpr::constant(vars, 1.0);
    ControlAffineSystem sys(1, 1, 0, f, B, std::nullopt, g);
    auto M = [](const VectorXd&) { return MatrixXd::Identity(1, 1); };
    std::vector<VectorXd> grid = {vec1(0.0)};
    for (double rho : {0.0, 10.0, 1e4}) {
        auto rep = ccm::check_ocm(sys, M, rho, 0.1, grid);
        EXPECT_FALSE(rep.kernel.pass);
    }
}

TEST(Ocm, BlockStructureMatchesReducedCondition) {
    // M = [[m11, M21],[M21, M22]] with large constant m11: the kernel form of
    // the observer condition reproduces the reduced-block margins.
    auto sys = ccm::builtin("moore-greitzer");
    double m11 = 50.0, m21 = -2.0, m22 = 1.0, lambda = 0.5;
    MatrixXd Mc(2, 2);
    Mc << m11, m21, m21, m22;
    auto M = [&](const VectorXd&) { return Mc; };
    auto design = mg_design(m21, lambda);
    for (double phi : {-1.5, -1.0, 0.0, 0.7}) {
        std::vector<VectorXd> grid = {vec2(0.0, phi)};
        auto ocm = ccm::check_ocm(sys, M, 0.0, lambda, grid);
        auto red = ccm::check_m22_condition(sys, design, grid);
        // Kernel of C = [1, 0] is e2; the projected quantity is the scalar
        // reduced condition.
        EXPECT_NEAR(ocm.kernel.worst_margin, red.worst_margin, 1e-8);
    }
}

TEST(Ocm, DualityWithControlForm) {
    // For constant data, the observer condition on (A, C) equals the
    // rho-form control condition on (A', C').
    uint64_t h = 31;
    for (int trial = 0; trial < 10; ++trial) {
        MatrixXd A(2, 2);
        VectorXd Cv(2);
        for (int i = 0; i < 2; ++i) {
            for (int j = 0; j < 2; ++j) {
                h = ccm::splitmix64(h);
                A(i, j) = 2.0 * ccm::u64_to_unit(h) - 1.0;
            }
            h = ccm::splitmix64(h);
            Cv(i) = 2.0 * ccm::u64_to_unit(h) - 1.0;
        }
        MatrixXd Mc(2, 2);
        Mc << 2.0, 0.2, 0.2, 1.0;
        double rho = 1.7, lambda = 0.3;

        // Observer side, built directly.
        MatrixXd obs = A.transpose() * Mc + Mc * A - rho * (Cv * Cv.transpose()) + 2.0 * lambda * Mc;

        // Control side: transposed data through assemble_rho_lmi with W = M.
        auto vars = ccm::detail::make_vars(2, 1, 0);
        PolyMatrix f(2, 1, vars), B(2, 1, vars), g(1, 1, vars);
        MatrixXd At = A.transpose();
        for (int i = 0; i < 2; ++i) {
            PolyExpr acc = PolyExpr::constant(vars, 0.0);
            for (int j = 0; j < 2; ++j)
                acc = acc + PolyExpr::constant(vars, At(i, j)) * PolyExpr::variable(vars, j);
            f.at(i, 0) = acc;
            B.at(i, 0) = PolyExpr::constant(vars, Cv(i));
        }
        g.at(0, 0) = PolyExpr::variable(vars, 0);
        ControlAffineSystem dual(2, 1, 0, f, B, std::nullopt, g);
        PolyMatrix W = PolyMatrix::constant(Mc, vars);
        PolyExpr rho_p = PolyExpr::constant(vars, -rho);  // rho-form subtracts rho B B'
        MatrixXd ctl = ccm::assemble_rho_lmi(dual, W, PolyExpr::constant(vars, rho), lambda,
                                             vec2(0.1, -0.2), vec1(0.0));
        // -Wdot + A' W + W A - rho C C' + 2 lambda W with constant W.
        EXPECT_LT((ctl - obs).cwiseAbs().maxCoeff(), 1e-12);
        (void)rho_p;
    }
}

TEST(Diffeo, IdentityCandidatePasses) {
    // phi = (y, x2) = identity for f = -x, y = x1, Q = I, rho = 0.
    MatrixXd A = -MatrixXd::Identity(2, 2);
    auto vars = ccm::detail::make_vars(2, 1, 0);
    PolyMatrix f(2, 1, vars), B(2, 1, vars), g(1, 1, vars);
    f.at(0, 0) = PolyExpr::variable(vars, 0) * -1.0;
    f.at(1, 0) = PolyExpr::variable(vars, 1) * -1.0;
    B.at(0, 0) = PolyExpr::constant(vars, 0.0);
    B.at(1, 0) = PolyExpr::constant(vars, 1.0);
    g.at(0, 0) = PolyExpr::variable(vars, 0);
    ControlAffineSystem sys(2, 1, 0, f, B, std::nullopt, g);

    ccm::DiffeoCandidate cand;
    cand.r = PolyMatrix(1, 1, vars);
    cand.r.at(0, 0) = PolyExpr::variable(vars, 1);
    cand.Q = MatrixXd::Identity(2, 2);
    cand.rho = PolyExpr::constant(vars, 0.0);
    cand.mu = 1.0;
    std::vector<VectorXd> grid = {vec2(0, 0), vec2(0.5, -0.5), vec2(-1, 1)};

    // Constant-matrix oracle: Phi = I, F = -I, so the contraction block is
    // (Phi+F)'(Phi+F) + Q - 2(Phi-F) + 4 lambda I = I(4 lambda - 3), which is
    // nonpositive iff lambda <= 0.75.
    cand.lambda = 0.25;
    auto rep = ccm::check_diffeo_conditions(sys, cand, grid);
    EXPECT_TRUE(rep.pass);
    EXPECT_NEAR(rep.contraction.worst_margin, 4.0 * 0.25 - 3.0, 1e-12);
    EXPECT_NEAR(rep.invertibility.worst_margin, 0.0, 1e-12);
    cand.lambda = 0.8;
    EXPECT_FALSE(ccm::check_diffeo_conditions(sys, cand, grid).pass);
    // mu exceeding the smallest eigenvalue of sym(Phi) fails invertibility.
    cand.lambda = 0.25;
    cand.mu = 1.5;
    auto rep2 = ccm::check_diffeo_conditions(sys, cand, grid);
    EXPECT_FALSE(rep2.invertibility.pass);
}

TEST(Diffeo, PolarisationBound) {
    // -(Phi-F)' Q^{-1} (Phi-F) <= Q - (Phi-F) - (Phi-F)' for any Q > 0.
    uint64_t h = 77;
    for (int trial = 0; trial < 100; ++trial) {
        MatrixXd S(2, 2), Qh(2, 2);
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
                h = ccm::splitmix64(h);
                S(i, j) = 4.0 * ccm::u64_to_unit(h) - 2.0;
                h = ccm::splitmix64(h);
                Qh(i, j) = 2.0 * ccm::u64_to_unit(h) - 1.0;
            }
        MatrixXd Q = Qh * Qh.transpose() + 0.1 * MatrixXd::Identity(2, 2);
        MatrixXd lhs = -S.transpose() * Q.inverse() * S;
        MatrixXd rhs = Q - S - S.transpose();
        MatrixXd diff = lhs - rhs;
        EXPECT_LE(ccm::lambda_max(MatrixXd(0.5 * (diff + diff.transpose()))), 1e-10);
    }
}

TEST(Diffeo, RejectsBadQ) {
    auto sys = ccm::builtin("moore-greitzer");
    auto vars = sys.variables();
    ccm::DiffeoCandidate cand;
    cand.r = PolyMatrix(1, 1, vars);
    cand.r.at(0, 0) = PolyExpr::variable(vars, 1);
    cand.Q = -MatrixXd::Identity(2, 2);
    cand.rho = PolyExpr::constant(vars, 0.0);
    EXPECT_THROW(ccm::check_diffeo_conditions(sys, cand, {vec2(0, 0)}), std::invalid_argument);
}
