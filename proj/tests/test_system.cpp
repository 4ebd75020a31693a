#include <gtest/gtest.h>

#include "ccm/system.hpp"

using ccm::ControlAffineSystem;
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
}  // namespace

TEST(System, SurgeModelEquilibrium) {
    auto sys = ccm::builtin("moore-greitzer");
    EXPECT_EQ(sys.n(), 2);
    EXPECT_EQ(sys.m(), 1);
    EXPECT_EQ(sys.p_w(), 1);
    VectorXd xdot = sys.eval_dynamics(vec2(0, 0), vec1(0), vec1(0));
    EXPECT_DOUBLE_EQ(xdot(0), 0.0);
    EXPECT_DOUBLE_EQ(xdot(1), 0.0);
}

TEST(System, SurgeModelCubicDrift) {
    auto sys = ccm::builtin("moore-greitzer");
    VectorXd xdot = sys.eval_dynamics(vec2(0, 1), vec1(0), vec1(0));
    EXPECT_DOUBLE_EQ(xdot(0), 1.0);
    EXPECT_DOUBLE_EQ(xdot(1), -2.0);
    // Input enters the first state, disturbance the second.
    xdot = sys.eval_dynamics(vec2(0, 1), vec1(0.3), vec1(0.7));
    EXPECT_DOUBLE_EQ(xdot(0), 1.3);
    EXPECT_DOUBLE_EQ(xdot(1), -1.3);
}

TEST(System, DoubleIntegrator) {
    auto sys = ccm::builtin("double-integrator");
    VectorXd xdot = sys.eval_dynamics(vec2(1, 2), vec1(3));
    EXPECT_DOUBLE_EQ(xdot(0), 2.0);
    EXPECT_DOUBLE_EQ(xdot(1), 3.0);
}

TEST(System, UnknownBuiltinRejected) {
    EXPECT_THROW(ccm::builtin("unknown"), std::invalid_argument);
}

TEST(System, SurgeJacobian) {
    auto sys = ccm::builtin("moore-greitzer");
    MatrixXd A0 = sys.jacobian_A(vec2(0, 0), vec1(0));
    MatrixXd expect(2, 2);
    expect << 0, 1, -1, 0;
    EXPECT_TRUE(A0.isApprox(expect, 1e-14));
    MatrixXd Am1 = sys.jacobian_A(vec2(0, -1), vec1(0));
    EXPECT_DOUBLE_EQ(Am1(1, 1), 1.5);  // -3 phi - 1.5 phi^2 at phi = -1
}

TEST(System, LinearJacobianConstant) {
    auto sys = ccm::builtin("mass-spring-damper");
    MatrixXd A1 = sys.jacobian_A(vec2(0.3, -0.9), vec1(2.0));
    MatrixXd A2 = sys.jacobian_A(vec2(-5.0, 7.0), vec1(-1.0));
    EXPECT_TRUE(A1.isApprox(A2, 1e-14));
    MatrixXd expect(2, 2);
    expect << 0, 1, -1, -0.2;
    EXPECT_TRUE(A1.isApprox(expect, 1e-14));
}

TEST(System, FiniteDiffMatchesSymbolic) {
    for (const char* name : {"moore-greitzer", "double-integrator", "mass-spring-damper"}) {
        auto sys = ccm::builtin(name);
        for (int k = 0; k < 100; ++k) {
            uint64_t h = ccm::splitmix64(uint64_t(k) + 17);
            VectorXd x = vec2(4.0 * ccm::u64_to_unit(h) - 2.0,
                              4.0 * ccm::u64_to_unit(ccm::splitmix64(h)) - 2.0);
            VectorXd u = vec1(2.0 * ccm::u64_to_unit(ccm::splitmix64(h + 1)) - 1.0);
            MatrixXd A = sys.jacobian_A(x, u);
            MatrixXd Afd = sys.finite_diff_jacobian(x, u, 0.0, 1e-5);
            EXPECT_LT((A - Afd).cwiseAbs().maxCoeff(), 1e-6) << name;
        }
    }
}

TEST(System, FiniteDiffExactForLinear) {
    auto sys = ccm::builtin("double-integrator");
    MatrixXd A = sys.jacobian_A(vec2(0.1, 0.2), vec1(0.5));
    MatrixXd Afd = sys.finite_diff_jacobian(vec2(0.1, 0.2), vec1(0.5), 0.0, 0.37);
    EXPECT_LT((A - Afd).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(System, FiniteDiffStepGuard) {
    auto sys = ccm::builtin("double-integrator");
    EXPECT_THROW(sys.finite_diff_jacobian(vec2(0, 0), vec1(0), 0.0, 0.0), std::invalid_argument);
}

TEST(System, JacobianAffineInU) {
    auto sys = ccm::builtin("moore-greitzer");
    for (int k = 0; k < 20; ++k) {
        double t = -2.0 + 0.2 * k;
        VectorXd x = vec2(0.3 * t, -0.5 * t);
        MatrixXd a = sys.jacobian_A(x, vec1(t));
        MatrixXd b = sys.jacobian_A(x, vec1(-t));
        MatrixXd mid = sys.jacobian_A(x, vec1(0.0));
        EXPECT_LT((a + b - 2.0 * mid).cwiseAbs().maxCoeff(), 1e-14);
    }
}

TEST(System, DimensionMismatchRejected) {
    auto sys = ccm::builtin("moore-greitzer");
    VectorXd x3(3);
    x3 << 1, 2, 3;
    EXPECT_THROW(sys.eval_dynamics(x3, vec1(0), vec1(0)), std::invalid_argument);
    EXPECT_THROW(sys.eval_dynamics(vec2(0, 0), vec2(0, 0), vec1(0)), std::invalid_argument);
}

TEST(System, OutputMapAndJacobians) {
    auto sys = ccm::builtin("moore-greitzer");
    VectorXd y = sys.eval_output(vec2(0.4, 0.9), vec1(2.0));
    EXPECT_DOUBLE_EQ(y(0), 0.9 + 0.1 * 2.0);
    MatrixXd C = sys.output_jacobian_C(vec2(0.4, 0.9), vec1(2.0));
    MatrixXd D = sys.output_jacobian_D(vec2(0.4, 0.9), vec1(2.0));
    EXPECT_DOUBLE_EQ(C(0, 0), 0.0);
    EXPECT_DOUBLE_EQ(C(0, 1), 1.0);
    EXPECT_DOUBLE_EQ(D(0, 0), 0.1);
}

TEST(System, ModelFileRoundTrip) {
    auto sys = ccm::builtin("moore-greitzer");
    std::string text = ccm::write_model(sys);
    auto sys2 = ccm::parse_model(text);
    EXPECT_EQ(ccm::write_model(sys2), text);
    VectorXd x = vec2(0.3, -0.8);
    EXPECT_TRUE(sys.eval_dynamics(x, vec1(0.2), vec1(-0.1))
                    .isApprox(sys2.eval_dynamics(x, vec1(0.2), vec1(-0.1)), 1e-15));
}

TEST(System, DeterministicEvaluation) {
    auto sys = ccm::builtin("moore-greitzer");
    VectorXd x = vec2(0.123456789, -0.987654321);
    VectorXd a = sys.eval_dynamics(x, vec1(0.5), vec1(0.25));
    VectorXd b = sys.eval_dynamics(x, vec1(0.5), vec1(0.25));
    EXPECT_EQ(a(0), b(0));
    EXPECT_EQ(a(1), b(1));
}
