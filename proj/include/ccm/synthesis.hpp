#pragma once

#include <Eigen/SVD>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <unordered_set>

#include "ccm/geodesic.hpp"
#include "ccm/lmi.hpp"
#include "ccm/system.hpp"

namespace ccm {

// Compact validity region: a box or ball in state space plus boxes for the
// control and disturbance channels.
struct Region {
    enum class Kind { Box, Ball };
    Kind kind = Kind::Box;
    VectorXd center;
    VectorXd half_widths;  // per state dimension (ball: bounding box = radius)
    double radius = 0.0;   // ball only
    VectorXd u_lo, u_hi;
    VectorXd w_lo, w_hi;

    static Region box(const VectorXd& center, const VectorXd& half_widths) {
        require((half_widths.array() > 0.0).all(), "Region: half-widths must be positive");
        Region r;
        r.kind = Kind::Box;
        r.center = center;
        r.half_widths = half_widths;
        return r;
    }
    static Region ball(const VectorXd& center, double radius) {
        require(radius > 0.0, "Region: radius must be positive");
        Region r;
        r.kind = Kind::Ball;
        r.center = center;
        r.radius = radius;
        r.half_widths = VectorXd::Constant(center.size(), radius);
        return r;
    }

    bool contains(const VectorXd& x) const {
        if (kind == Kind::Ball) return (x - center).norm() <= radius + 1e-12;
        return ((x - center).cwiseAbs().array() <= half_widths.array() + 1e-12).all();
    }

    // Tensor grid with k points per state dimension (ball regions keep the
    // points inside the ball; the center is always present).
    std::vector<VectorXd> state_grid(int k) const {
        const int n = int(center.size());
        std::vector<std::vector<double>> axes;
        for (int i = 0; i < n; ++i)
            axes.push_back(linspace(center(i) - half_widths(i), center(i) + half_widths(i), k));
        std::vector<VectorXd> out;
        std::vector<int> idx(static_cast<size_t>(n), 0);
        while (true) {
            VectorXd x(n);
            for (int i = 0; i < n; ++i) x(i) = axes[static_cast<size_t>(i)][static_cast<size_t>(idx[static_cast<size_t>(i)])];
            if (kind == Kind::Box || (x - center).norm() <= radius + 1e-12) out.push_back(x);
            int i = 0;
            for (; i < n; ++i) {
                if (++idx[static_cast<size_t>(i)] < int(axes[static_cast<size_t>(i)].size())) break;
                idx[static_cast<size_t>(i)] = 0;
            }
            if (i == n) break;
        }
        if (kind == Kind::Ball) {
            bool has_center = false;
            for (const auto& x : out)
                if ((x - center).norm() == 0.0) has_center = true;
            if (!has_center) out.push_back(center);
        }
        return out;
    }

    // Control grid: box corners by default (the assembled LMIs are affine in
    // u, so endpoints suffice); k > 2 is kept as a paranoia option.
    std::vector<VectorXd> control_grid(int m, int k = 2) const {
        if (m == 0) return {VectorXd::Zero(0)};
        if (u_lo.size() == 0) return {VectorXd::Zero(m)};
        std::vector<std::vector<double>> axes;
        for (int i = 0; i < m; ++i) axes.push_back(linspace(u_lo(i), u_hi(i), std::max(k, 2)));
        std::vector<VectorXd> out;
        std::vector<int> idx(static_cast<size_t>(m), 0);
        while (true) {
            VectorXd u(m);
            for (int i = 0; i < m; ++i) u(i) = axes[static_cast<size_t>(i)][static_cast<size_t>(idx[static_cast<size_t>(i)])];
            out.push_back(u);
            int i = 0;
            for (; i < m; ++i) {
                if (++idx[static_cast<size_t>(i)] < int(axes[static_cast<size_t>(i)].size())) break;
                idx[static_cast<size_t>(i)] = 0;
            }
            if (i == m) break;
        }
        return out;
    }
};

struct GridSpec {
    int state_points = 41;    // per state dimension
    int control_points = 2;  // endpoints only; LMIs are affine in u
};

struct CcmCertificate {
    PolyMatrix W;   // symmetric, in x
    PolyMatrix Y;   // m x n, in (x, u) (affine in u)
    double lambda = 0.0;
    Region region;
    double alpha1 = 1e-3;  // floor enforced on W
    double alpha2 = kInf;  // max eig of W^{-1} over the verification grid
    GridSpec grid;
    double margin = 0.0;   // synthesis feasibility margin actually achieved
};

struct RobustCertificate {
    PolyMatrix W;
    PolyMatrix Y;
    double alpha = 0.0;     // certified differential L2 gain bound
    double lambda_min = 0.0;
    MatrixXd C;             // constant output matrices of the design
    MatrixXd D;
    Region region;
    double alpha1 = 1e-3;
    double alpha2 = kInf;
    GridSpec grid;
    double margin = 0.0;
};

struct VerificationReport {
    double worst_margin = -kInf;
    VectorXd worst_x, worst_u, worst_w;
    long grid_size = 0;
    bool pass = false;
};

// ---------------------------------------------------------------------------
// Pointwise LMI assembly
// ---------------------------------------------------------------------------

namespace detail {
inline MatrixXd w_dot(const ControlAffineSystem& sys, const PolyMatrix& W,
                      const std::vector<double>& vals, const VectorXd& xdot) {
    MatrixXd Wd = MatrixXd::Zero(W.rows(), W.cols());
    for (int i = 0; i < sys.n(); ++i) {
        if (W.degree() <= 0) break;  // constant metric
        Wd += W.derivative(i).eval(vals) * xdot(i);
    }
    return Wd;
}
}  // namespace detail

// Strong CCM form: -Wdot + A W + W A' + B Y + Y' B' + 2 lambda W, with
// Wdot the exact polynomial chain rule along xdot = f + B u.  Negative
// semidefinite iff the stabilizability condition holds at (x, u) with rate
// lambda.
inline MatrixXd assemble_strong_lmi(const ControlAffineSystem& sys, const PolyMatrix& W,
                                    const PolyMatrix& Y, double lambda, const VectorXd& x,
                                    const VectorXd& u) {
    require(W.rows() == sys.n() && W.cols() == sys.n(), "assemble_strong_lmi: W must be n x n");
    require(Y.rows() == std::max(sys.m(), 1) && Y.cols() == sys.n(), "assemble_strong_lmi: Y must be m x n");
    auto vals = sys.pack(x, u, VectorXd::Zero(sys.p_w()));
    MatrixXd A = sys.jacobian_A(x, u);
    MatrixXd Bm = sys.B().eval(vals);
    MatrixXd Wx = W.eval(vals);
    MatrixXd Yx = Y.eval(vals);
    VectorXd xdot = sys.eval_dynamics(x, u);
    MatrixXd Wd = detail::w_dot(sys, W, vals, xdot);
    MatrixXd S = -Wd + A * Wx + Wx * A.transpose() + Bm * Yx + Yx.transpose() * Bm.transpose() +
                 2.0 * lambda * Wx;
    return 0.5 * (S + S.transpose());
}

// rho form: -Wdot + A W + W A' - rho B B' + 2 lambda W.  Taking
// Y = -(1/2) rho B' reproduces the strong form exactly.
inline MatrixXd assemble_rho_lmi(const ControlAffineSystem& sys, const PolyMatrix& W,
                                 const PolyExpr& rho, double lambda, const VectorXd& x,
                                 const VectorXd& u) {
    require(W.rows() == sys.n() && W.cols() == sys.n(), "assemble_rho_lmi: W must be n x n");
    auto vals = sys.pack(x, u, VectorXd::Zero(sys.p_w()));
    MatrixXd A = sys.jacobian_A(x, u);
    MatrixXd Bm = sys.B().eval(vals);
    MatrixXd Wx = W.eval(vals);
    double rho_v = rho.eval(vals);
    VectorXd xdot = sys.eval_dynamics(x, u);
    MatrixXd Wd = detail::w_dot(sys, W, vals, xdot);
    MatrixXd S = -Wd + A * Wx + Wx * A.transpose() - rho_v * (Bm * Bm.transpose()) + 2.0 * lambda * Wx;
    return 0.5 * (S + S.transpose());
}

// Weak (kernel) form: worst eigenvalue of the open-loop condition projected
// onto ker B(x)'.  Returns -inf when the kernel is empty (m >= n).
inline double check_weak_form(const ControlAffineSystem& sys, const PolyMatrix& W, double lambda,
                              const VectorXd& x, const VectorXd& u) {
    auto vals = sys.pack(x, u, VectorXd::Zero(sys.p_w()));
    MatrixXd Bm = sys.B().eval(vals);
    Eigen::JacobiSVD<MatrixXd> svd(Bm, Eigen::ComputeFullU);
    require(svd.rank() == Bm.cols(), "check_weak_form: B(x) must have full column rank");
    if (Bm.cols() >= sys.n()) return -kInf;
    MatrixXd N = svd.matrixU().rightCols(sys.n() - int(Bm.cols()));  // orthonormal basis of ker B'
    MatrixXd A = sys.jacobian_A(x, u);
    MatrixXd Wx = W.eval(vals);
    VectorXd xdot = sys.eval_dynamics(x, u);
    MatrixXd Wd = detail::w_dot(sys, W, vals, xdot);
    MatrixXd G = -Wd + A * Wx + Wx * A.transpose() + 2.0 * lambda * Wx;
    return lambda_max(MatrixXd(N.transpose() * G * N));
}

// ---------------------------------------------------------------------------
// Decision-variable parameterization for synthesis
// ---------------------------------------------------------------------------

struct DegreeSpec {
    int w_degree = 0;   // degree of W entries in x
    int y_degree = 2;   // degree of Y entries in x
    bool y_affine_u = false;
};

namespace detail {

inline void enumerate_monomials(int nvars, int max_deg, std::vector<std::vector<int>>& out) {
    std::vector<int> e(static_cast<size_t>(nvars), 0);
    std::function<void(int, int)> rec = [&](int pos, int remaining) {
        if (pos == nvars) {
            out.push_back(e);
            return;
        }
        for (int d = 0; d <= remaining; ++d) {
            e[static_cast<size_t>(pos)] = d;
            rec(pos + 1, remaining - d);
        }
        e[static_cast<size_t>(pos)] = 0;
    };
    rec(0, max_deg);
}

// Maps a decision vector theta onto (W, Y) polynomial matrices.
struct CertParameterization {
    std::vector<std::string> vars;
    int n = 0, m = 0;
    DegreeSpec degrees;
    std::vector<std::vector<int>> w_monomials;  // exponent vectors over all vars (x part only used)
    std::vector<std::vector<int>> y_monomials;
    int theta_dim = 0;
    int w_params = 0;

    static CertParameterization make(const ControlAffineSystem& sys, const DegreeSpec& deg) {
        CertParameterization p;
        p.vars = sys.variables();
        p.n = sys.n();
        p.m = sys.m();
        p.degrees = deg;
        std::vector<std::vector<int>> xmono;
        enumerate_monomials(p.n, deg.w_degree, xmono);
        for (auto& e : xmono) {
            e.resize(p.vars.size(), 0);
            p.w_monomials.push_back(e);
        }
        std::vector<std::vector<int>> ymono_x;
        enumerate_monomials(p.n, deg.y_degree, ymono_x);
        for (auto& e : ymono_x) {
            e.resize(p.vars.size(), 0);
            p.y_monomials.push_back(e);
            if (deg.y_affine_u) {
                for (int k = 0; k < p.m; ++k) {
                    auto eu = e;
                    eu[static_cast<size_t>(p.n + k)] = 1;
                    p.y_monomials.push_back(eu);
                }
            }
        }
        p.w_params = int(p.w_monomials.size()) * p.n * (p.n + 1) / 2;
        p.theta_dim = p.w_params + int(p.y_monomials.size()) * std::max(p.m, 1) * p.n;
        return p;
    }

    std::pair<PolyMatrix, PolyMatrix> build(const VectorXd& theta) const {
        PolyMatrix W(n, n, vars);
        PolyMatrix Y(std::max(m, 1), n, vars);
        int idx = 0;
        for (int i = 0; i < n; ++i) {
            for (int j = i; j < n; ++j) {
                for (const auto& mono : w_monomials) {
                    double c = theta(idx++);
                    if (c != 0.0) {
                        W.at(i, j).add_term(c, mono);
                        if (i != j) W.at(j, i).add_term(c, mono);
                    }
                }
            }
        }
        for (int i = 0; i < std::max(m, 1); ++i) {
            for (int j = 0; j < n; ++j) {
                for (const auto& mono : y_monomials) {
                    double c = theta(idx++);
                    if (c != 0.0) Y.at(i, j).add_term(c, mono);
                }
            }
        }
        return {W, Y};
    }

    // theta for W = I, Y = 0 (the constant monomial is the all-zero exponent
    // vector, first in the enumeration).
    VectorXd identity_theta() const {
        VectorXd theta = VectorXd::Zero(theta_dim);
        int idx = 0;
        int nm = int(w_monomials.size());
        for (int i = 0; i < n; ++i) {
            for (int j = i; j < n; ++j) {
                if (i == j) theta(idx) = 1.0;
                idx += nm;
            }
        }
        return theta;
    }
};

// Builds an AffineMatrixFamily by probing a theta-affine matrix assembler at
// the origin and the unit directions.
inline AffineMatrixFamily affine_family(const std::function<MatrixXd(const VectorXd&)>& assemble,
                                        int theta_dim) {
    AffineMatrixFamily fam;
    fam.base = assemble(VectorXd::Zero(theta_dim));
    for (int i = 0; i < theta_dim; ++i) {
        VectorXd e = VectorXd::Zero(theta_dim);
        e(i) = 1.0;
        fam.basis.push_back(assemble(e) - fam.base);
    }
    return fam;
}

// Shifts each family by its relative feasibility margin and removes
// duplicates (gridded LMIs are frequently constant along some state
// directions); insertion order is preserved.
inline std::vector<AffineMatrixFamily> dedupe_and_shift(std::vector<AffineMatrixFamily> fams) {
    std::vector<AffineMatrixFamily> out;
    std::unordered_set<std::string> seen;
    for (auto& fam : fams) {
        std::string key;
        key.reserve(64);
        char buf[32];
        auto add = [&](double v) {
            std::snprintf(buf, sizeof buf, "%.12e,", v);
            key += buf;
        };
        for (int i = 0; i < fam.base.rows(); ++i)
            for (int j = 0; j <= i; ++j) add(fam.base(i, j));
        for (const auto& Bm : fam.basis)
            for (int i = 0; i < Bm.rows(); ++i)
                for (int j = 0; j <= i; ++j) add(Bm(i, j));
        if (!seen.insert(key).second) continue;
        double mrg = feasibility_margin(fam);
        fam.base += mrg * MatrixXd::Identity(fam.base.rows(), fam.base.cols());
        out.push_back(std::move(fam));
    }
    return out;
}

}  // namespace detail

// Synthesis failure carries the solver report for diagnosis.
class SynthesisError : public std::runtime_error {
  public:
    SynthesisError(const std::string& msg, SolveReport rep)
        : std::runtime_error(msg), report(std::move(rep)) {}
    SolveReport report;
};

// Re-evaluates a certificate's defining LMIs on a grid refined by `factor`
// over (x, u); reports the worst margin and where it occurs.
inline VerificationReport verify_certificate(const CcmCertificate& cert,
                                             const ControlAffineSystem& sys, int factor) {
    require(factor >= 2, "verify_certificate: refinement factor must be >= 2");
    VerificationReport rep;
    auto xs = cert.region.state_grid(cert.grid.state_points * factor);
    auto us = cert.region.control_grid(sys.m(), cert.grid.control_points);
    for (const auto& x : xs) {
        for (const auto& u : us) {
            MatrixXd S = assemble_strong_lmi(sys, cert.W, cert.Y, cert.lambda, x, u);
            double mg = lambda_max(S);
            auto vals = sys.pack(x, u, VectorXd::Zero(sys.p_w()));
            double wfloor =
                lambda_max(MatrixXd(cert.alpha1 * MatrixXd::Identity(sys.n(), sys.n()) - cert.W.eval(vals)));
            mg = std::max(mg, wfloor);
            ++rep.grid_size;
            if (mg > rep.worst_margin) {
                rep.worst_margin = mg;
                rep.worst_x = x;
                rep.worst_u = u;
            }
        }
    }
    rep.pass = rep.worst_margin <= 0.0;
    return rep;
}

inline MatrixXd robust_block_lmi(const ControlAffineSystem& sys, const PolyMatrix& W,
                                 const PolyMatrix& Y, const MatrixXd& C, const MatrixXd& D,
                                 double alpha, const VectorXd& x, const VectorXd& u) {
    auto vals = sys.pack(x, u, VectorXd::Zero(sys.p_w()));
    MatrixXd A = sys.jacobian_A(x, u);
    MatrixXd Bm = sys.B().eval(vals);
    MatrixXd Bw = sys.B_w().eval(vals);
    MatrixXd Wx = W.eval(vals);
    MatrixXd Yx = Y.eval(vals);
    VectorXd xdot = sys.eval_dynamics(x, u);
    MatrixXd Wd = detail::w_dot(sys, W, vals, xdot);
    MatrixXd Wcal = Wd - Wx * A.transpose() - A * Wx - Bm * Yx - Yx.transpose() * Bm.transpose() -
                    (1.0 / (alpha * alpha)) * (Bw * Bw.transpose());
    const int n = sys.n();
    const int q = int(C.rows());
    MatrixXd S(n + q, n + q);
    S.topLeftCorner(n, n) = Wcal;
    S.topRightCorner(n, q) = Wx * C.transpose() + Yx.transpose() * D.transpose();
    S.bottomLeftCorner(q, n) = S.topRightCorner(n, q).transpose();
    S.bottomRightCorner(q, q) = MatrixXd::Identity(q, q);
    return 0.5 * (S + S.transpose());
}

inline VerificationReport verify_certificate(const RobustCertificate& cert,
                                             const ControlAffineSystem& sys, int factor) {
    require(factor >= 2, "verify_certificate: refinement factor must be >= 2");
    VerificationReport rep;
    auto xs = cert.region.state_grid(cert.grid.state_points * factor);
    auto us = cert.region.control_grid(sys.m(), cert.grid.control_points);
    for (const auto& x : xs) {
        for (const auto& u : us) {
            // Eq-form block must be PSD: check lambda_max(-S) <= 0.
            MatrixXd S = robust_block_lmi(sys, cert.W, cert.Y, cert.C, cert.D, cert.alpha, x, u);
            double mg = lambda_max(MatrixXd(-S));
            MatrixXd stab = assemble_strong_lmi(sys, cert.W, cert.Y, 0.5 * cert.lambda_min, x, u);
            mg = std::max(mg, lambda_max(stab));
            auto vals = sys.pack(x, u, VectorXd::Zero(sys.p_w()));
            double wfloor =
                lambda_max(MatrixXd(cert.alpha1 * MatrixXd::Identity(sys.n(), sys.n()) - cert.W.eval(vals)));
            mg = std::max(mg, wfloor);
            ++rep.grid_size;
            if (mg > rep.worst_margin) {
                rep.worst_margin = mg;
                rep.worst_x = x;
                rep.worst_u = u;
            }
        }
    }
    rep.pass = rep.worst_margin <= 0.0;
    return rep;
}

struct SynthesisOpts {
    DegreeSpec degrees;
    GridSpec grid;
    double alpha1_floor = 1e-3;
    MinimizeOpts solver;
    int reverify_factor = 2;
};

// Grid-based CCM synthesis: decision vector = coefficients of W and Y;
// constraints = the strong LMI at every grid point plus the alpha1 floor on
// W.  Feasible points are re-verified on a finer grid before a certificate
// is returned.
inline CcmCertificate synthesize_ccm(const ControlAffineSystem& sys, Region region, double lambda,
                                     const SynthesisOpts& opts = {}) {
    require(opts.grid.state_points >= 3, "synthesize_ccm: need >= 3 grid points per dimension");
    auto param = detail::CertParameterization::make(sys, opts.degrees);
    auto xs = region.state_grid(opts.grid.state_points);
    auto us = region.control_grid(sys.m(), opts.grid.control_points);

    std::vector<AffineMatrixFamily> fams;
    for (const auto& x : xs) {
        for (const auto& u : us) {
            fams.push_back(detail::affine_family(
                [&](const VectorXd& th) {
                    auto [W, Y] = param.build(th);
                    return assemble_strong_lmi(sys, W, Y, lambda, x, u);
                },
                param.theta_dim));
        }
        // alpha1 floor: alpha1 I - W(x) <= 0.
        fams.push_back(detail::affine_family(
            [&](const VectorXd& th) {
                auto [W, Y] = param.build(th);
                auto vals = sys.pack(x, VectorXd::Zero(sys.m()), VectorXd::Zero(sys.p_w()));
                return MatrixXd(opts.alpha1_floor * MatrixXd::Identity(sys.n(), sys.n()) - W.eval(vals));
            },
            param.theta_dim));
    }
    fams = detail::dedupe_and_shift(std::move(fams));

    MinimizeOpts mo = opts.solver;
    mo.target = 0.0;  // families already carry their margins
    auto rep = minimize_max_eig(fams, param.identity_theta(), mo);
    if (rep.objective > 0.0)
        throw SynthesisError("synthesize_ccm: no feasible certificate found on the grid", rep);

    auto [W, Y] = param.build(rep.theta);
    CcmCertificate cert;
    cert.W = W;
    cert.Y = Y;
    cert.lambda = lambda;
    cert.region = region;
    cert.alpha1 = opts.alpha1_floor;
    cert.grid = opts.grid;
    cert.margin = -rep.objective;
    // alpha2 reported a posteriori from the verification grid.
    double a2 = 0.0;
    for (const auto& x : xs) {
        auto vals = sys.pack(x, VectorXd::Zero(sys.m()), VectorXd::Zero(sys.p_w()));
        a2 = std::max(a2, lambda_max(MatrixXd(cert.W.eval(vals).inverse())));
    }
    cert.alpha2 = a2;
    auto ver = verify_certificate(cert, sys, opts.reverify_factor);
    if (!ver.pass)
        throw SynthesisError("synthesize_ccm: certificate failed refined re-verification", rep);
    return cert;
}

struct RobustOpts {
    DegreeSpec degrees;
    GridSpec grid;
    double alpha1_floor = 1e-3;
    double alpha_lo = 0.02;
    double alpha_hi = 50.0;
    double alpha_rel_tol = 1e-2;
    MinimizeOpts solver;
    int reverify_factor = 2;
};

// Robust synthesis: bisect the gain bound alpha; each feasibility query
// grids the 2x2-block robust LMI plus the exponential-stability constraint
// at lambda_min over the region.  Returns the smallest certified alpha.
inline RobustCertificate synthesize_robust(const ControlAffineSystem& sys, const MatrixXd& C,
                                           const MatrixXd& D, Region region, double lambda_min,
                                           const RobustOpts& opts = {}) {
    require(C.cols() == sys.n(), "synthesize_robust: C must be q x n");
    require(D.rows() == C.rows() && D.cols() == std::max(sys.m(), 1),
            "synthesize_robust: D must be q x m");
    auto param = detail::CertParameterization::make(sys, opts.degrees);
    auto xs = region.state_grid(opts.grid.state_points);
    auto us = region.control_grid(sys.m(), opts.grid.control_points);

    std::optional<RobustCertificate> best;
    VectorXd warm = param.identity_theta();

    auto feasible = [&](double alpha) -> bool {
        std::vector<AffineMatrixFamily> fams;
        for (const auto& x : xs) {
            for (const auto& u : us) {
                fams.push_back(detail::affine_family(
                    [&](const VectorXd& th) {
                        auto [W, Y] = param.build(th);
                        return MatrixXd(-robust_block_lmi(sys, W, Y, C, D, alpha, x, u));
                    },
                    param.theta_dim));
                fams.push_back(detail::affine_family(
                    [&](const VectorXd& th) {
                        auto [W, Y] = param.build(th);
                        return assemble_strong_lmi(sys, W, Y, 0.5 * lambda_min, x, u);
                    },
                    param.theta_dim));
            }
            fams.push_back(detail::affine_family(
                [&](const VectorXd& th) {
                    auto [W, Y] = param.build(th);
                    auto vals = sys.pack(x, VectorXd::Zero(sys.m()), VectorXd::Zero(sys.p_w()));
                    return MatrixXd(opts.alpha1_floor * MatrixXd::Identity(sys.n(), sys.n()) - W.eval(vals));
                },
                param.theta_dim));
        }
        fams = detail::dedupe_and_shift(std::move(fams));
        MinimizeOpts mo = opts.solver;
        mo.target = 0.0;
        mo.infeasible_above = 0.0;
        auto rep = minimize_max_eig(fams, warm, mo);
        if (rep.objective > 0.0) return false;
        warm = rep.theta;
        auto [W, Y] = param.build(rep.theta);
        RobustCertificate cert;
        cert.W = W;
        cert.Y = Y;
        cert.alpha = alpha;
        cert.lambda_min = lambda_min;
        cert.C = C;
        cert.D = D;
        cert.region = region;
        cert.alpha1 = opts.alpha1_floor;
        cert.grid = opts.grid;
        cert.margin = -rep.objective;
        best = cert;
        return true;
    };

    if (!feasible(opts.alpha_hi)) {
        throw SynthesisError("synthesize_robust: infeasible at the upper alpha endpoint",
                             SolveReport{});
    }
    if (!feasible(opts.alpha_lo)) {
        // Bisect in log alpha so the relative tolerance is uniform.
        bisect_scalar([&](double la) { return feasible(std::exp(la)); }, std::log(opts.alpha_lo),
                      std::log(opts.alpha_hi), std::log1p(opts.alpha_rel_tol));
    }
    RobustCertificate cert = *best;
    // A certificate that fails refined verification is bumped to the next
    // bisection level until it verifies.
    for (int k = 0; k < 8; ++k) {
        auto ver = verify_certificate(cert, sys, opts.reverify_factor);
        if (ver.pass) return cert;
        double bumped = cert.alpha * (1.0 + opts.alpha_rel_tol);
        if (!feasible(bumped))
            throw SynthesisError("synthesize_robust: verification-driven bump became infeasible",
                                 SolveReport{});
        cert = *best;
    }
    throw SynthesisError("synthesize_robust: certificate never passed refined verification",
                         SolveReport{});
}

// ---------------------------------------------------------------------------
// Converse constructions
// ---------------------------------------------------------------------------

// Metric and gain induced by a feedback-linearizing change of coordinates:
// M(x) = Theta(x)' X Theta(x), K(x,u) = d ubar/dx + beta(x) L Theta(x).
struct FeedbackLinearization {
    std::function<MatrixXd(const VectorXd&)> Theta;     // Jacobian of theta(x), n x n
    std::function<MatrixXd(const VectorXd&)> ubar_jac;  // d ubar / dx, m x n
    std::function<MatrixXd(const VectorXd&)> beta;      // m x m, nonsingular
    MatrixXd L;                                         // m x n
};

struct FblinMetric {
    std::function<MatrixXd(const VectorXd&)> M;
    std::function<MatrixXd(const VectorXd&)> K;
};

inline FblinMetric fblin_metric(const FeedbackLinearization& fl, const MatrixXd& X) {
    require(lambda_min(X) > 0.0, "fblin_metric: X must be positive definite");
    auto Theta = fl.Theta;
    auto metric = [Theta, X](const VectorXd& x) {
        MatrixXd Th = Theta(x);
        require(std::abs(Th.determinant()) > 1e-12, "fblin_metric: singular Theta sample");
        return MatrixXd(Th.transpose() * X * Th);
    };
    auto ubar_jac = fl.ubar_jac;
    auto beta = fl.beta;
    MatrixXd L = fl.L;
    auto gain = [Theta, ubar_jac, beta, L](const VectorXd& x) {
        MatrixXd Th = Theta(x);
        require(std::abs(Th.determinant()) > 1e-12, "fblin_metric: singular Theta sample");
        return MatrixXd(ubar_jac(x) + beta(x) * L * Th);
    };
    return {metric, gain};
}

// Mechanical-system metric over (delta_qdot, delta_q) with R = C + D + K_D:
//   M = [ H K_P H   H K_P R ; R' K_P H   H + R' K_P R ]
// plus the PD control u = -K_D qdot - K_P (q - q0) + G(q).
struct MechanicalMetric {
    std::function<MatrixXd(const VectorXd&, const VectorXd&)> M;  // (q, qdot)
    std::function<VectorXd(const VectorXd&, const VectorXd&, const VectorXd&)> control;  // (q, qdot, q0)
};

inline MechanicalMetric mechanical_metric(
    const std::function<MatrixXd(const VectorXd&)>& H,
    const std::function<MatrixXd(const VectorXd&, const VectorXd&)>& C,
    const std::function<MatrixXd(const VectorXd&, const VectorXd&)>& D,
    const std::function<VectorXd(const VectorXd&)>& G, const MatrixXd& K_P, const MatrixXd& K_D) {
    require(lambda_min(K_P) >= 0.0, "mechanical_metric: K_P must be PSD");
    require(lambda_min(K_D) >= -1e-12, "mechanical_metric: K_D must be PSD");
    auto metric = [=](const VectorXd& q, const VectorXd& qd) {
        MatrixXd Hq = H(q);
        require(lambda_min(Hq) > 0.0, "mechanical_metric: H(q) must be positive definite");
        MatrixXd R = C(q, qd) + D(q, qd) + K_D;
        const int d = int(Hq.rows());
        MatrixXd M(2 * d, 2 * d);
        M.topLeftCorner(d, d) = Hq * K_P * Hq;
        M.topRightCorner(d, d) = Hq * K_P * R;
        M.bottomLeftCorner(d, d) = R.transpose() * K_P * Hq;
        M.bottomRightCorner(d, d) = Hq + R.transpose() * K_P * R;
        return MatrixXd(0.5 * (M + M.transpose()));
    };
    auto control = [=](const VectorXd& q, const VectorXd& qd, const VectorXd& q0) {
        return VectorXd(-K_D * qd - K_P * (q - q0) + G(q));
    };
    return {metric, control};
}

// Differential L2 analysis LMI at each grid point:
//   [ Mdot + A'M + MA + C'C    M B_w + C' D_w ]
//   [ B_w' M + D_w' C          D_w' D_w - alpha^2 I ]  <= 0
// with A evaluated at u = 0 and Mdot by finite differences along the flow.
inline VerificationReport verify_differential_l2(const ControlAffineSystem& sys,
                                                 const std::function<MatrixXd(const VectorXd&)>& M,
                                                 const MatrixXd& C, const MatrixXd& D_w, double alpha,
                                                 const std::vector<VectorXd>& grid) {
    VerificationReport rep;
    const int n = sys.n();
    const int q = int(C.rows());
    const int pw = std::max(sys.p_w(), 1);
    VectorXd u0 = VectorXd::Zero(sys.m());
    for (const auto& x : grid) {
        MatrixXd Mx = M(x);
        MatrixXd A = sys.jacobian_A(x, u0);
        auto vals = sys.pack(x, u0, VectorXd::Zero(sys.p_w()));
        MatrixXd Bw = sys.p_w() > 0 ? sys.B_w().eval(vals) : MatrixXd::Zero(n, pw);
        VectorXd xdot = sys.eval_dynamics(x, u0);
        // Mdot = sum_i dM/dx_i xdot_i via central differences.
        MatrixXd Mdot = MatrixXd::Zero(n, n);
        const double h = 1e-6;
        for (int i = 0; i < n; ++i) {
            VectorXd xp = x, xm = x;
            xp(i) += h;
            xm(i) -= h;
            Mdot += (M(xp) - M(xm)) / (2.0 * h) * xdot(i);
        }
        MatrixXd S(n + pw, n + pw);
        S.topLeftCorner(n, n) = Mdot + A.transpose() * Mx + Mx * A + C.transpose() * C;
        S.topRightCorner(n, pw) = Mx * Bw + C.transpose() * D_w;
        S.bottomLeftCorner(pw, n) = S.topRightCorner(n, pw).transpose();
        S.bottomRightCorner(pw, pw) = D_w.transpose() * D_w - alpha * alpha * MatrixXd::Identity(pw, pw);
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

// Metric field M = W^{-1} induced by a certificate.
template <typename Cert>
inline MetricField metric_from_certificate(const Cert& cert, const ControlAffineSystem& sys) {
    PolyMatrix W = cert.W;
    int n = sys.n(), m = sys.m(), pw = sys.p_w();
    MetricField f;
    f.alpha1 = 1.0 / std::max(cert.alpha2, 1e-300);
    f.alpha2 = 1.0 / cert.alpha1;
    f.M = [W, n, m, pw](const VectorXd& x) {
        std::vector<double> vals(static_cast<size_t>(n + m + pw), 0.0);
        for (int i = 0; i < n; ++i) vals[static_cast<size_t>(i)] = x(i);
        MatrixXd Wx = W.eval(vals);
        return MatrixXd(Wx.inverse());
    };
    return f;
}

// ---------------------------------------------------------------------------
// Certificate files: [meta] plus [W] / [Y] polynomial sections in the model
// polynomial format.
// ---------------------------------------------------------------------------

namespace detail {
inline std::string fmt_vec(const VectorXd& v) {
    std::string out;
    char buf[40];
    for (int i = 0; i < v.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", v(i));
        if (i) out += " ";
        out += buf;
    }
    return out;
}
inline VectorXd parse_vec(const std::string& s) {
    std::istringstream ss(s);
    std::vector<double> v;
    double x;
    while (ss >> x) v.push_back(x);
    VectorXd out(int(v.size()));
    for (size_t i = 0; i < v.size(); ++i) out(int(i)) = v[i];
    return out;
}
}  // namespace detail

inline std::string write_certificate(const RobustCertificate& cert, bool robust_kind = true) {
    std::ostringstream out;
    char buf[40];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return std::string(buf);
    };
    out << "[meta]\n";
    out << "kind = " << (robust_kind ? "robust" : "ccm") << "\n";
    out << "n = " << cert.W.rows() << "\n";
    out << "m = " << cert.Y.rows() << "\n";
    out << "lambda = " << num(cert.lambda_min) << "\n";
    if (robust_kind) out << "alpha = " << num(cert.alpha) << "\n";
    out << "alpha1 = " << num(cert.alpha1) << "\n";
    out << "alpha2 = " << num(cert.alpha2) << "\n";
    out << "margin = " << num(cert.margin) << "\n";
    out << "grid_state_points = " << cert.grid.state_points << "\n";
    out << "grid_control_points = " << cert.grid.control_points << "\n";
    out << "region_kind = " << (cert.region.kind == Region::Kind::Ball ? "ball" : "box") << "\n";
    out << "region_center = " << detail::fmt_vec(cert.region.center) << "\n";
    out << "region_half_widths = " << detail::fmt_vec(cert.region.half_widths) << "\n";
    if (cert.region.kind == Region::Kind::Ball) out << "region_radius = " << num(cert.region.radius) << "\n";
    if (cert.region.u_lo.size()) {
        out << "u_lo = " << detail::fmt_vec(cert.region.u_lo) << "\n";
        out << "u_hi = " << detail::fmt_vec(cert.region.u_hi) << "\n";
    }
    if (robust_kind) {
        out << "C = " << detail::fmt_vec(Eigen::Map<const VectorXd>(cert.C.data(), cert.C.size())) << "\n";
        out << "D = " << detail::fmt_vec(Eigen::Map<const VectorXd>(cert.D.data(), cert.D.size())) << "\n";
        out << "q = " << cert.C.rows() << "\n";
    }
    out << "\n[W]\n";
    for (int i = 0; i < cert.W.rows(); ++i)
        for (int j = 0; j < cert.W.cols(); ++j) out << cert.W.at(i, j).to_string() << "\n";
    out << "\n[Y]\n";
    for (int i = 0; i < cert.Y.rows(); ++i)
        for (int j = 0; j < cert.Y.cols(); ++j) out << cert.Y.at(i, j).to_string() << "\n";
    return out.str();
}

inline std::string write_certificate(const CcmCertificate& cert) {
    RobustCertificate rc;
    rc.W = cert.W;
    rc.Y = cert.Y;
    rc.lambda_min = cert.lambda;
    rc.region = cert.region;
    rc.alpha1 = cert.alpha1;
    rc.alpha2 = cert.alpha2;
    rc.grid = cert.grid;
    rc.margin = cert.margin;
    return write_certificate(rc, false);
}

struct LoadedCertificate {
    bool robust = false;
    CcmCertificate ccm;
    RobustCertificate rob;
};

inline LoadedCertificate parse_certificate(const std::string& text,
                                           const std::vector<std::string>& vars) {
    std::istringstream in(text);
    std::string line, section;
    std::map<std::string, std::string> meta;
    std::vector<std::string> wlines, ylines;
    while (std::getline(in, line)) {
        auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        if (line.front() == '#') continue;
        if (line.front() == '[') {
            section = line.substr(1, line.find(']') - 1);
            continue;
        }
        if (section == "meta") {
            auto eq = line.find('=');
            require(eq != std::string::npos, "parse_certificate: bad meta line: " + line);
            std::string key = line.substr(0, eq);
            key.erase(key.find_last_not_of(" \t") + 1);
            std::string val = line.substr(eq + 1);
            val.erase(0, val.find_first_not_of(" \t"));
            meta[key] = val;
        } else if (section == "W") {
            wlines.push_back(line);
        } else if (section == "Y") {
            ylines.push_back(line);
        }
    }
    int n = std::stoi(meta.at("n"));
    int m = std::stoi(meta.at("m"));
    RobustCertificate rc;
    rc.W = PolyMatrix(n, n, vars);
    rc.Y = PolyMatrix(m, n, vars);
    require(int(wlines.size()) == n * n, "parse_certificate: [W] entry count mismatch");
    require(int(ylines.size()) == m * n, "parse_certificate: [Y] entry count mismatch");
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) rc.W.at(i, j) = PolyExpr::parse(vars, wlines[static_cast<size_t>(i * n + j)]);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) rc.Y.at(i, j) = PolyExpr::parse(vars, ylines[static_cast<size_t>(i * n + j)]);
    rc.lambda_min = std::stod(meta.at("lambda"));
    rc.alpha1 = std::stod(meta.at("alpha1"));
    rc.alpha2 = std::stod(meta.at("alpha2"));
    rc.margin = std::stod(meta.at("margin"));
    rc.grid.state_points = std::stoi(meta.at("grid_state_points"));
    rc.grid.control_points = std::stoi(meta.at("grid_control_points"));
    VectorXd center = detail::parse_vec(meta.at("region_center"));
    VectorXd hw = detail::parse_vec(meta.at("region_half_widths"));
    if (meta.at("region_kind") == "ball")
        rc.region = Region::ball(center, std::stod(meta.at("region_radius")));
    else
        rc.region = Region::box(center, hw);
    if (meta.count("u_lo")) {
        rc.region.u_lo = detail::parse_vec(meta.at("u_lo"));
        rc.region.u_hi = detail::parse_vec(meta.at("u_hi"));
    }
    LoadedCertificate out;
    out.robust = meta.at("kind") == "robust";
    if (out.robust) {
        rc.alpha = std::stod(meta.at("alpha"));
        int q = std::stoi(meta.at("q"));
        VectorXd cv = detail::parse_vec(meta.at("C"));
        VectorXd dv = detail::parse_vec(meta.at("D"));
        rc.C = Eigen::Map<MatrixXd>(cv.data(), q, n);
        rc.D = Eigen::Map<MatrixXd>(dv.data(), q, m);
        out.rob = rc;
    } else {
        out.ccm.W = rc.W;
        out.ccm.Y = rc.Y;
        out.ccm.lambda = rc.lambda_min;
        out.ccm.region = rc.region;
        out.ccm.alpha1 = rc.alpha1;
        out.ccm.alpha2 = rc.alpha2;
        out.ccm.grid = rc.grid;
        out.ccm.margin = rc.margin;
    }
    return out;
}

}  // namespace ccm
