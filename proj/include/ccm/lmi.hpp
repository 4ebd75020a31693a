#pragma once

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <vector>

#include "ccm/common.hpp"

namespace ccm {

// Largest eigenvalue of a symmetric matrix together with a unit eigenvector
// (used for subgradients).  Input is symmetrized before the solve; asymmetry
// beyond 1e-9 relative or non-finite entries are rejected.
struct EigMaxResult {
    double value;
    VectorXd vector;
};

inline EigMaxResult lambda_max_pair(const MatrixXd& S) {
    require(S.rows() == S.cols(), "lambda_max: matrix must be square");
    require(S.allFinite(), "lambda_max: non-finite entries");
    double scale = std::max(1.0, S.cwiseAbs().maxCoeff());
    require((S - S.transpose()).cwiseAbs().maxCoeff() <= 1e-9 * scale,
            "lambda_max: matrix is not symmetric");
    MatrixXd A = 0.5 * (S + S.transpose());
    Eigen::SelfAdjointEigenSolver<MatrixXd> es;
    if (A.rows() <= 3)
        es.computeDirect(A);
    else
        es.compute(A);
    int last = int(A.rows()) - 1;
    return {es.eigenvalues()(last), es.eigenvectors().col(last)};
}

inline double lambda_max(const MatrixXd& S) { return lambda_max_pair(S).value; }

inline double lambda_min(const MatrixXd& S) { return -lambda_max(MatrixXd(-S)); }

// value(theta) = base + sum_i theta(i) * basis[i]; all blocks symmetric.
struct AffineMatrixFamily {
    MatrixXd base;
    std::vector<MatrixXd> basis;

    MatrixXd value(const VectorXd& theta) const {
        MatrixXd out = base;
        for (size_t i = 0; i < basis.size(); ++i) out += theta(int(i)) * basis[i];
        return out;
    }
    int theta_dim() const { return int(basis.size()); }
    int dim() const { return int(base.rows()); }
};

// Relative negative-definiteness margin: a constraint family is considered
// satisfied at theta when lambda_max(value(theta)) <= -margin.
inline double feasibility_margin(const AffineMatrixFamily& fam) {
    return 1e-6 * (1.0 + fam.base.norm());
}

struct SolveReport {
    VectorXd theta;
    double objective = kInf;     // max over constraints of lambda_max at theta
    double lower_bound = -kInf;  // certified lower bound on the optimum
    int iterations = 0;
    bool converged = false;
    int worst_constraint = -1;
};

struct MinimizeOpts {
    double tol = 1e-6;           // stop when objective - lower_bound <= tol*(1+|objective|)
    int max_iters = 5000;
    double trust_radius = 1e3;   // box around theta0, per coordinate
    double target = -kInf;       // early exit once objective <= target (feasibility found)
    double infeasible_above = kInf;  // early exit once lower_bound >= this (infeasibility proven)
    int max_cuts = 150;
};

namespace detail {

// Dense two-phase tableau simplex for
//   minimize c'x  s.t.  A x <= b,  lb <= x <= ub.
// Sized for the small master problems of the cutting-plane loop.
struct LpResult {
    VectorXd x;
    double value = 0.0;
    bool ok = false;
};

inline LpResult solve_lp_box(const VectorXd& c, const MatrixXd& A, const VectorXd& b,
                             const VectorXd& lb, const VectorXd& ub) {
    const int n = int(c.size());
    const int mc = int(A.rows());
    // Shift to y = x - lb >= 0 and append upper-bound rows y <= ub - lb.
    const int M = mc + n;
    MatrixXd G(M, n);
    VectorXd h(M);
    G.topRows(mc) = A;
    h.head(mc) = b - A * lb;
    G.bottomRows(n) = MatrixXd::Identity(n, n);
    h.tail(n) = ub - lb;

    // Tableau columns: n structural | M slacks | up to M artificials | rhs.
    std::vector<int> art_rows;
    for (int r = 0; r < M; ++r)
        if (h(r) < 0) art_rows.push_back(r);
    const int K = int(art_rows.size());
    const int cols = n + M + K + 1;
    MatrixXd T = MatrixXd::Zero(M, cols);
    std::vector<int> basis(M);
    for (int r = 0; r < M; ++r) {
        T.row(r).head(n) = G.row(r);
        T(r, n + r) = 1.0;
        T(r, cols - 1) = h(r);
        basis[r] = n + r;
    }
    for (int k = 0; k < K; ++k) {
        int r = art_rows[static_cast<size_t>(k)];
        T.row(r) = -T.row(r);  // make rhs nonnegative; slack coeff becomes -1
        T(r, n + M + k) = 1.0;
        basis[r] = n + M + k;
    }

    auto run_simplex = [&](const VectorXd& cost, int active_cols) -> bool {
        // cost has length active_cols (excluding rhs); returns false on
        // iteration blowup (treated as numerical failure).
        VectorXd z = cost;  // reduced costs
        // Price out the initial basis.  Basic columns beyond the active set
        // (artificials pinned at zero in redundant rows) carry zero cost.
        auto basic_cost = [&](int col) { return col < int(cost.size()) ? cost(col) : 0.0; };
        for (int r = 0; r < M; ++r) {
            double cb = basic_cost(basis[r]);
            if (cb != 0.0) z -= cb * T.row(r).head(active_cols).transpose();
        }
        const int soft_cap = 40 * (M + n) + 200;
        const int hard_cap = 4 * soft_cap;
        for (int it = 0;; ++it) {
            if (it > hard_cap) return false;
            bool bland = it > soft_cap;
            int enter = -1;
            double best = -1e-9;
            for (int j = 0; j < active_cols; ++j) {
                if (z(j) < best) {
                    if (bland) {
                        enter = j;
                        break;
                    }
                    best = z(j);
                    enter = j;
                }
            }
            if (enter < 0) return true;  // optimal
            int leave = -1;
            double best_ratio = kInf;
            for (int r = 0; r < M; ++r) {
                double a = T(r, enter);
                if (a > 1e-11) {
                    double ratio = T(r, cols - 1) / a;
                    if (ratio < best_ratio - 1e-12 ||
                        (ratio < best_ratio + 1e-12 && (leave < 0 || basis[r] < basis[leave]))) {
                        best_ratio = ratio;
                        leave = r;
                    }
                }
            }
            if (leave < 0) return true;  // unbounded column; box rows should prevent this
            // Pivot.
            double piv = T(leave, enter);
            T.row(leave) /= piv;
            for (int r = 0; r < M; ++r) {
                if (r == leave) continue;
                double a = T(r, enter);
                if (a != 0.0) T.row(r) -= a * T.row(leave);
            }
            double zc = z(enter);
            z -= zc * T.row(leave).head(active_cols).transpose();
            basis[leave] = enter;
        }
    };

    LpResult res;
    if (K > 0) {
        VectorXd cost1 = VectorXd::Zero(n + M + K);
        cost1.tail(K).setOnes();
        if (!run_simplex(cost1, n + M + K)) return res;
        double phase1 = 0.0;
        for (int r = 0; r < M; ++r)
            if (basis[r] >= n + M) phase1 += T(r, cols - 1);
        if (phase1 > 1e-7 * (1.0 + h.cwiseAbs().maxCoeff())) return res;  // infeasible
        // Pivot any lingering artificials out of the basis if possible.
        for (int r = 0; r < M; ++r) {
            if (basis[r] < n + M) continue;
            int enter = -1;
            for (int j = 0; j < n + M; ++j)
                if (std::abs(T(r, j)) > 1e-9) {
                    enter = j;
                    break;
                }
            if (enter < 0) continue;  // redundant row
            double piv = T(r, enter);
            T.row(r) /= piv;
            for (int rr = 0; rr < M; ++rr) {
                if (rr == r) continue;
                double a = T(rr, enter);
                if (a != 0.0) T.row(rr) -= a * T.row(r);
            }
            basis[r] = enter;
        }
    }
    VectorXd cost2 = VectorXd::Zero(n + M);
    cost2.head(n) = c;
    if (!run_simplex(cost2, n + M)) return res;
    VectorXd y = VectorXd::Zero(n);
    for (int r = 0; r < M; ++r)
        if (basis[r] < n) y(basis[r]) = T(r, cols - 1);
    res.x = y + lb;
    res.value = c.dot(res.x);
    res.ok = true;
    return res;
}

}  // namespace detail

// Minimize g(theta) = max_j lambda_max(constraints[j].value(theta)) -- convex
// and nonsmooth -- by Kelley cutting planes over a box trust region around
// theta0.  The subgradient at theta is v v' lifted through the affine map,
// with v the top eigenvector of the worst constraint.
inline SolveReport minimize_max_eig(const std::vector<AffineMatrixFamily>& constraints,
                                    const VectorXd& theta0, const MinimizeOpts& opts = {}) {
    require(!constraints.empty(), "minimize_max_eig: need at least one constraint");
    const int d = int(theta0.size());
    for (const auto& fam : constraints)
        require(fam.theta_dim() == d, "minimize_max_eig: theta dimension mismatch across families");

    auto evaluate = [&](const VectorXd& theta, int* worst_out, VectorXd* subgrad_out) {
        double worst = -kInf;
        int worst_j = -1;
        VectorXd worst_vec;
        for (size_t j = 0; j < constraints.size(); ++j) {
            auto r = lambda_max_pair(constraints[j].value(theta));
            if (r.value > worst) {
                worst = r.value;
                worst_j = int(j);
                worst_vec = r.vector;
            }
        }
        if (worst_out) *worst_out = worst_j;
        if (subgrad_out) {
            VectorXd s(d);
            const auto& fam = constraints[static_cast<size_t>(worst_j)];
            for (int i = 0; i < d; ++i) s(i) = worst_vec.dot(fam.basis[static_cast<size_t>(i)] * worst_vec);
            *subgrad_out = s;
        }
        return worst;
    };

    struct Cut {
        double g0;
        VectorXd slope;
        VectorXd at;
    };
    std::deque<Cut> cuts;

    SolveReport rep;
    rep.theta = theta0;
    VectorXd sg(d);
    int worst_j = -1;
    rep.objective = evaluate(theta0, &worst_j, &sg);
    rep.worst_constraint = worst_j;
    cuts.push_back({rep.objective, sg, theta0});

    VectorXd lb(d + 1), ub(d + 1), c = VectorXd::Zero(d + 1);
    lb.head(d) = theta0.array() - opts.trust_radius;
    ub.head(d) = theta0.array() + opts.trust_radius;
    c(d) = 1.0;  // minimize t

    double t_floor = rep.objective - 1e6 * (1.0 + std::abs(rep.objective));
    for (int it = 1; it <= opts.max_iters; ++it) {
        rep.iterations = it;
        if (rep.objective <= opts.target) {
            rep.converged = true;
            break;
        }
        // Master LP over (theta, t): min t s.t. t >= cut_k(theta).
        const int mc = int(cuts.size());
        MatrixXd A(mc, d + 1);
        VectorXd b(mc);
        for (int k = 0; k < mc; ++k) {
            const Cut& ct = cuts[static_cast<size_t>(k)];
            A.row(k).head(d) = ct.slope.transpose();
            A(k, d) = -1.0;
            b(k) = ct.slope.dot(ct.at) - ct.g0;
        }
        lb(d) = t_floor;
        ub(d) = rep.objective + 1.0;
        auto lp = detail::solve_lp_box(c, A, b, lb, ub);
        if (!lp.ok) break;  // numerical failure in the master; report best point
        double t_star = lp.value;
        if (t_star > t_floor + 1e-9 * (1.0 + std::abs(t_star))) rep.lower_bound = std::max(rep.lower_bound, t_star);
        if (rep.lower_bound >= opts.infeasible_above) {
            rep.converged = true;
            break;
        }
        if (rep.objective - rep.lower_bound <= opts.tol * (1.0 + std::abs(rep.objective))) {
            rep.converged = true;
            break;
        }
        VectorXd theta_new = lp.x.head(d);
        double g_new = evaluate(theta_new, &worst_j, &sg);
        cuts.push_back({g_new, sg, theta_new});
        if (int(cuts.size()) > opts.max_cuts) cuts.pop_front();
        if (g_new < rep.objective) {
            rep.objective = g_new;
            rep.theta = theta_new;
            rep.worst_constraint = worst_j;
        }
    }
    return rep;
}

// Monotone scalar bisection.  The predicate must differ at the two
// endpoints; the boundary is located to within tol and the endpoint on the
// predicate-true side of the final bracket is returned.
inline double bisect_scalar(const std::function<bool(double)>& predicate, double lo, double hi,
                            double tol) {
    require(tol > 0.0, "bisect_scalar: tol must be positive");
    require(lo < hi, "bisect_scalar: need lo < hi");
    bool plo = predicate(lo);
    bool phi = predicate(hi);
    if (plo == phi) throw std::runtime_error("bisect_scalar: predicate constant on [lo, hi] (no crossing)");
    while (hi - lo > tol) {
        double mid = 0.5 * (lo + hi);
        if (predicate(mid) == plo)
            lo = mid;
        else
            hi = mid;
    }
    return phi ? hi : lo;
}

// Solve Acl' X + X Acl = -Q for symmetric X by a vectorized direct solve.
// Requires Acl Hurwitz; X > 0 whenever Q > 0.
inline MatrixXd solve_lyapunov(const MatrixXd& Acl, const MatrixXd& Q) {
    const int n = int(Acl.rows());
    require(Acl.cols() == n, "solve_lyapunov: Acl must be square");
    require(Q.rows() == n && Q.cols() == n, "solve_lyapunov: Q dimension mismatch");
    Eigen::EigenSolver<MatrixXd> es(Acl);
    for (int i = 0; i < n; ++i)
        require(es.eigenvalues()(i).real() < 0.0, "solve_lyapunov: Acl is not Hurwitz");
    // (I (x) Acl' + Acl' (x) I) vec(X) = -vec(Q)
    MatrixXd At = Acl.transpose();
    MatrixXd Kr = MatrixXd::Zero(n * n, n * n);
    for (int i = 0; i < n; ++i)
        Kr.block(i * n, i * n, n, n) += At;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            for (int k = 0; k < n; ++k) Kr(i * n + k, j * n + k) += At(i, j);
    VectorXd q(n * n);
    for (int j = 0; j < n; ++j) q.segment(j * n, n) = -Q.col(j);
    VectorXd xv = Kr.fullPivLu().solve(q);
    MatrixXd X(n, n);
    for (int j = 0; j < n; ++j) X.col(j) = xv.segment(j * n, n);
    return 0.5 * (X + X.transpose());
}

}  // namespace ccm
