#pragma once

#include <Eigen/SVD>

#include "ccm/synthesis.hpp"

namespace ccm {

// Reduced-order observer data in coordinates where y = first p states.
// C_plus and P are recomputed from the stored blocks on demand.
struct ReducedObserverDesign {
    int p = 0;
    MatrixXd M21;  // (n-p) x p
    MatrixXd M22;  // (n-p) x (n-p), symmetric PD
    double lambda = 0.0;
    Region region;  // region for the unmeasured states

    void validate(int n) const {
        require(p >= 1 && p < n, "ReducedObserverDesign: need 1 <= p < n");
        require(M21.rows() == n - p && M21.cols() == p, "ReducedObserverDesign: M21 must be (n-p) x p");
        require(M22.rows() == n - p && M22.cols() == n - p,
                "ReducedObserverDesign: M22 must be (n-p) x (n-p)");
        require((M22 - M22.transpose()).norm() <= 1e-12 * (1.0 + M22.norm()),
                "ReducedObserverDesign: M22 must be symmetric");
        require(lambda_min(M22) > 0.0, "ReducedObserverDesign: M22 must be positive definite");
    }
    MatrixXd C_plus(int n) const {
        MatrixXd out = MatrixXd::Zero(n, p);
        out.topRows(p).setIdentity();
        out.bottomRows(n - p) = -M22.ldlt().solve(M21);
        return out;
    }
    MatrixXd P(int n) const {
        MatrixXd out(n - p, n);
        out.leftCols(p) = M22.ldlt().solve(M21);
        out.rightCols(n - p).setIdentity();
        return out;
    }
};

// T = [C; R] with the rows of R an orthonormal basis for ker C, so that in
// the coordinates z = T x the output map becomes [I_p, 0].
inline MatrixXd coordinate_normalize(const MatrixXd& C) {
    const int p = int(C.rows());
    const int n = int(C.cols());
    Eigen::JacobiSVD<MatrixXd> svd(C, Eigen::ComputeFullV);
    require(svd.rank() == p, "coordinate_normalize: C must have full row rank");
    MatrixXd R = svd.matrixV().rightCols(n - p).transpose();
    // Sign-normalize each kernel row so the basis is deterministic.
    for (int i = 0; i < R.rows(); ++i) {
        for (int j = 0; j < n; ++j) {
            if (std::abs(R(i, j)) > 1e-12) {
                if (R(i, j) < 0.0) R.row(i) = -R.row(i);
                break;
            }
        }
    }
    MatrixXd T(n, n);
    T.topRows(p) = C;
    T.bottomRows(n - p) = R;
    return T;
}

// Worst margin of M21 A12 + A12' M21' + M22 A22 + A22' M22 + 2 lambda M22
// over a grid of the region, for a system already in normalized coordinates.
inline VerificationReport check_m22_condition(const ControlAffineSystem& sys,
                                              const ReducedObserverDesign& design,
                                              const std::vector<VectorXd>& grid) {
    const int n = sys.n();
    design.validate(n);
    const int p = design.p;
    VerificationReport rep;
    VectorXd u0 = VectorXd::Zero(sys.m());
    for (const auto& x : grid) {
        MatrixXd A = sys.jacobian_A(x, u0);
        MatrixXd A12 = A.topRightCorner(p, n - p);
        MatrixXd A22 = A.bottomRightCorner(n - p, n - p);
        MatrixXd S = design.M21 * A12 + A12.transpose() * design.M21.transpose() +
                     design.M22 * A22 + A22.transpose() * design.M22 +
                     2.0 * design.lambda * design.M22;
        double mg = lambda_max(MatrixXd(0.5 * (S + S.transpose())));
        ++rep.grid_size;
        if (mg > rep.worst_margin) {
            rep.worst_margin = mg;
            rep.worst_x = x;
        }
    }
    rep.pass = rep.worst_margin <= 0.0;
    return rep;
}

struct ObserverTrajectory {
    std::vector<double> t;
    std::vector<VectorXd> xhat;
    std::vector<VectorXd> what;
};

// Reduced-order observer: what' = P f(xhat), with
// xhat = C_plus y + [0; what] reconstructed from the live measurement.
// The measurement signal is sampled by the caller-provided function of t.
inline ObserverTrajectory simulate_observer(const ControlAffineSystem& sys,
                                            const ReducedObserverDesign& design,
                                            const std::function<VectorXd(double)>& y_signal,
                                            const VectorXd& xhat0, double t0, double t1,
                                            double step) {
    require(step > 0.0, "simulate_observer: step must be positive");
    const int n = sys.n();
    design.validate(n);
    const int p = design.p;
    MatrixXd Cp = design.C_plus(n);
    MatrixXd P = design.P(n);
    VectorXd u0 = VectorXd::Zero(sys.m());

    auto reconstruct = [&](const VectorXd& w, const VectorXd& y) {
        VectorXd xh = Cp * y;
        xh.tail(n - p) += w;
        return xh;
    };
    auto rhs = [&](double t, const VectorXd& w) {
        VectorXd xh = reconstruct(w, y_signal(t));
        return VectorXd(P * sys.eval_dynamics(xh, u0));
    };

    // Initialize what so the reconstructed estimate matches xhat0 at t0.
    VectorXd w = xhat0.tail(n - p) + design.M22.ldlt().solve(design.M21) * y_signal(t0);

    ObserverTrajectory out;
    const long steps = std::lround((t1 - t0) / step);
    require(steps >= 1, "simulate_observer: empty time span");
    for (long k = 0; k <= steps; ++k) {
        double t = t0 + k * step;
        out.t.push_back(t);
        out.what.push_back(w);
        out.xhat.push_back(reconstruct(w, y_signal(t)));
        if (k == steps) break;
        VectorXd k1 = rhs(t, w);
        VectorXd k2 = rhs(t + 0.5 * step, w + 0.5 * step * k1);
        VectorXd k3 = rhs(t + 0.5 * step, w + 0.5 * step * k2);
        VectorXd k4 = rhs(t + step, w + step * k3);
        w += (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return out;
}

struct OcmReport {
    VerificationReport full;    // Mdot + A'M + MA - rho C'C + 2 lambda M
    VerificationReport kernel;  // same quantity projected onto ker C
};

// Observer-side contraction condition and its kernel (Finsler) equivalent.
// Mdot is computed by finite differences along the drift flow.
inline OcmReport check_ocm(const ControlAffineSystem& sys,
                           const std::function<MatrixXd(const VectorXd&)>& M, double rho,
                           double lambda, const std::vector<VectorXd>& grid) {
    const int n = sys.n();
    VectorXd u0 = VectorXd::Zero(sys.m());
    OcmReport rep;
    for (const auto& x : grid) {
        MatrixXd Mx = M(x);
        MatrixXd A = sys.jacobian_A(x, u0);
        MatrixXd C = sys.output_jacobian_C(x, u0);
        VectorXd xdot = sys.eval_dynamics(x, u0);
        MatrixXd Mdot = MatrixXd::Zero(n, n);
        const double h = 1e-6;
        for (int i = 0; i < n; ++i) {
            VectorXd xp = x, xm = x;
            xp(i) += h;
            xm(i) -= h;
            Mdot += (M(xp) - M(xm)) / (2.0 * h) * xdot(i);
        }
        MatrixXd S = Mdot + A.transpose() * Mx + Mx * A - rho * (C.transpose() * C) +
                     2.0 * lambda * Mx;
        S = 0.5 * (S + S.transpose());
        double mg_full = lambda_max(S);
        ++rep.full.grid_size;
        if (mg_full > rep.full.worst_margin) {
            rep.full.worst_margin = mg_full;
            rep.full.worst_x = x;
        }
        // Kernel form: project the rho-free part onto ker C.
        MatrixXd S0 = S + rho * (C.transpose() * C);
        double mg_ker;
        Eigen::JacobiSVD<MatrixXd> svd(C, Eigen::ComputeFullV);
        int rank = int(svd.rank());
        if (rank >= n) {
            mg_ker = -kInf;
        } else {
            MatrixXd N = svd.matrixV().rightCols(n - rank);
            mg_ker = lambda_max(MatrixXd(N.transpose() * S0 * N));
        }
        ++rep.kernel.grid_size;
        if (mg_ker > rep.kernel.worst_margin) {
            rep.kernel.worst_margin = mg_ker;
            rep.kernel.worst_x = x;
        }
    }
    rep.full.pass = rep.full.worst_margin <= 0.0;
    rep.kernel.pass = rep.kernel.worst_margin <= 0.0;
    return rep;
}

// Candidate change of coordinates phi(x) = [c(x); r(x)] for the
// diffeomorphism-based observer conditions.
struct DiffeoCandidate {
    PolyMatrix r;   // (n-p) x 1 augmentation of the output map
    MatrixXd Q;     // symmetric PD
    PolyExpr rho;   // output injection weight, in x
    double mu = 1.0;
    double lambda = 0.0;
};

struct DiffeoReport {
    VerificationReport contraction;  // (Phi+F)'Q^{-1}(Phi+F) + Q - (Phi-F) - (Phi-F)' - 2 rho C'C + 4 lambda I
    VerificationReport invertibility;  // 2 mu I - Phi - Phi'
    bool pass = false;
};

inline DiffeoReport check_diffeo_conditions(const ControlAffineSystem& sys,
                                            const DiffeoCandidate& cand,
                                            const std::vector<VectorXd>& grid) {
    const int n = sys.n();
    require(cand.mu > 0.0, "check_diffeo_conditions: mu must be positive");
    require((cand.Q - cand.Q.transpose()).norm() <= 1e-12 * (1.0 + cand.Q.norm()) &&
                lambda_min(cand.Q) > 0.0,
            "check_diffeo_conditions: Q must be symmetric positive definite");
    VectorXd u0 = VectorXd::Zero(sys.m());

    // phi(x) = [g(x); r(x)]; Phi = d phi/dx; F = d(Phi f)/dx, all symbolic.
    const auto vars = sys.variables();
    const int p = n - cand.r.rows();
    require(p >= 1, "check_diffeo_conditions: r has too many rows");
    PolyMatrix phi(n, 1, vars);
    for (int i = 0; i < p; ++i) phi.at(i, 0) = sys.g().at(i, 0);
    for (int i = 0; i < cand.r.rows(); ++i) phi.at(p + i, 0) = cand.r.at(i, 0);

    PolyMatrix Phi(n, n, vars);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) Phi.at(i, j) = phi.at(i, 0).derivative(j);
    // Phi f, then its Jacobian.
    PolyMatrix Phif(n, 1, vars);
    for (int i = 0; i < n; ++i) {
        PolyExpr acc = PolyExpr::constant(vars, 0.0);
        for (int j = 0; j < n; ++j) acc = acc + Phi.at(i, j) * sys.f().at(j, 0);
        Phif.at(i, 0) = acc;
    }
    PolyMatrix F(n, n, vars);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) F.at(i, j) = Phif.at(i, 0).derivative(j);

    MatrixXd Qinv = cand.Q.inverse();
    DiffeoReport rep;
    for (const auto& x : grid) {
        auto vals = sys.pack(x, u0, VectorXd::Zero(sys.p_w()));
        MatrixXd Phix = Phi.eval(vals);
        MatrixXd Fx = F.eval(vals);
        MatrixXd C = sys.output_jacobian_C(x, u0);
        double rho_v = cand.rho.eval(vals);
        MatrixXd Sp = Phix + Fx;
        MatrixXd Sm = Phix - Fx;
        MatrixXd S1 = Sp.transpose() * Qinv * Sp + cand.Q - Sm - Sm.transpose() -
                      2.0 * rho_v * (C.transpose() * C) +
                      4.0 * cand.lambda * MatrixXd::Identity(n, n);
        double m1 = lambda_max(MatrixXd(0.5 * (S1 + S1.transpose())));
        ++rep.contraction.grid_size;
        if (m1 > rep.contraction.worst_margin) {
            rep.contraction.worst_margin = m1;
            rep.contraction.worst_x = x;
        }
        MatrixXd S2 = 2.0 * cand.mu * MatrixXd::Identity(n, n) - Phix - Phix.transpose();
        double m2 = lambda_max(MatrixXd(0.5 * (S2 + S2.transpose())));
        ++rep.invertibility.grid_size;
        if (m2 > rep.invertibility.worst_margin) {
            rep.invertibility.worst_margin = m2;
            rep.invertibility.worst_x = x;
        }
    }
    rep.contraction.pass = rep.contraction.worst_margin <= 0.0;
    rep.invertibility.pass = rep.invertibility.worst_margin <= 0.0;
    rep.pass = rep.contraction.pass && rep.invertibility.pass;
    return rep;
}

}  // namespace ccm
