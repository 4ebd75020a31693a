#pragma once

#include "ccm/geodesic.hpp"
#include "ccm/synthesis.hpp"

namespace ccm {

struct GainResult {
    MatrixXd K;
    bool in_region = true;
};

// Differential feedback gain K(x, u) = Y(x, u) W(x)^{-1}, computed through a
// linear solve rather than an explicit inverse.
inline MatrixXd differential_gain(const ControlAffineSystem& sys, const PolyMatrix& W,
                                  const PolyMatrix& Y, const VectorXd& x, const VectorXd& u) {
    auto vals = sys.pack(x, u, VectorXd::Zero(sys.p_w()));
    MatrixXd Wx = W.eval(vals);
    MatrixXd Yx = Y.eval(vals);
    Eigen::LDLT<MatrixXd> ldlt(Wx);
    require(ldlt.info() == Eigen::Success && ldlt.isPositive(),
            "differential_gain: W(x) is not positive definite");
    // K W = Y  =>  W K' = Y'.
    return ldlt.solve(Yx.transpose()).transpose();
}

inline GainResult differential_gain(const CcmCertificate& cert, const ControlAffineSystem& sys,
                                    const VectorXd& x, const VectorXd& u) {
    GainResult out;
    out.K = differential_gain(sys, cert.W, cert.Y, x, u);
    out.in_region = cert.region.contains(x);
    return out;
}

struct ControllerOpts {
    GeodesicOpts geodesic;
    int rk4_steps = 0;  // 0: use the geodesic node count
};

// Tracking control by integrating du/ds = K(gamma(s), u(s)) gamma_s(s) along
// a geodesic from the reference state to the plant state, starting at the
// reference input.  Geodesic failure raises an error; simulation callers
// implement the hold-previous-control fallback.
class PathIntegralController {
  public:
    PathIntegralController(ControlAffineSystem sys, PolyMatrix W, PolyMatrix Y,
                           ControllerOpts opts = {})
        : sys_(std::move(sys)), W_(std::move(W)), Y_(std::move(Y)), opts_(opts) {
        metric_.M = [this](const VectorXd& x) {
            auto vals = sys_.pack(x, VectorXd::Zero(sys_.m()), VectorXd::Zero(sys_.p_w()));
            return MatrixXd(W_.eval(vals).inverse());
        };
    }
    PathIntegralController(const CcmCertificate& cert, const ControlAffineSystem& sys,
                           ControllerOpts opts = {})
        : PathIntegralController(sys, cert.W, cert.Y, opts) {}

    VectorXd compute(const VectorXd& xstar, const VectorXd& ustar, const VectorXd& x) const {
        if ((x - xstar).norm() == 0.0) return ustar;
        GeodesicResult geo = compute_geodesic(metric_, xstar, x, opts_.geodesic);
        if (!geo.converged)
            throw std::runtime_error("path_integral_control: geodesic solver did not converge");
        PathSpline spline(geo.path);
        VectorXd u = ustar;
        const int N = opts_.rk4_steps > 0 ? opts_.rk4_steps : opts_.geodesic.N;
        const double h = 1.0 / N;
        auto rhs = [&](double s, const VectorXd& uc) {
            return VectorXd(differential_gain(sys_, W_, Y_, spline.value(s), uc) * spline.derivative(s));
        };
        for (int k = 0; k < N; ++k) {
            double s = k * h;
            VectorXd k1 = rhs(s, u);
            VectorXd k2 = rhs(s + 0.5 * h, u + 0.5 * h * k1);
            VectorXd k3 = rhs(s + 0.5 * h, u + 0.5 * h * k2);
            VectorXd k4 = rhs(s + h, u + h * k3);
            u += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        return u;
    }

    const MetricField& metric() const { return metric_; }

  private:
    ControlAffineSystem sys_;
    PolyMatrix W_, Y_;
    ControllerOpts opts_;
    MetricField metric_;
};

inline VectorXd path_integral_control(const ControlAffineSystem& sys, const PolyMatrix& W,
                                      const PolyMatrix& Y, const VectorXd& xstar,
                                      const VectorXd& ustar, const VectorXd& x,
                                      const ControllerOpts& opts = {}) {
    return PathIntegralController(sys, W, Y, opts).compute(xstar, ustar, x);
}

// Minimum-norm control from the first variation of the geodesic energy: with
// a = B(x)' M(x) gamma_s(1) and drift rate c computed from the endpoint
// velocities (x_dot = f(x), reference velocity given), returns the smallest
// u with c + <gamma_s(1), B u>_M <= -lambda e:
//   u = 0 when the constraint already holds, else u = -((c + lambda e)/|a|^2) a.
inline VectorXd clf_control(const ControlAffineSystem& sys, const MetricField& metric,
                            const GeodesicResult& geo, const VectorXd& x, const VectorXd& xstar,
                            const VectorXd& xstar_dot, const VectorXd& ustar, double lambda) {
    require(geo.converged, "clf_control: geodesic result must be converged");
    (void)ustar;
    const int m = std::max(sys.m(), 1);
    if (geo.energy <= 1e-14) return VectorXd::Zero(m);

    VectorXd drift = sys.eval_dynamics(x, VectorXd::Zero(sys.m()));
    double c = first_variation(metric, geo, xstar_dot, drift);
    double excess = c + lambda * geo.energy;
    if (excess <= 0.0) return VectorXd::Zero(m);

    auto vals = sys.pack(x, VectorXd::Zero(sys.m()), VectorXd::Zero(sys.p_w()));
    MatrixXd Bm = sys.B().eval(vals);
    const auto& nodes = geo.path.nodes;
    VectorXd gs_end = double(geo.path.segments()) * (nodes.back() - nodes[nodes.size() - 2]);
    VectorXd a = Bm.transpose() * metric.M(x) * gs_end;
    double a2 = a.squaredNorm();
    if (a2 <= 1e-14 * (1.0 + gs_end.squaredNorm()))
        throw std::runtime_error(
            "clf_control: decrease constraint violated but the control direction vanishes");
    return VectorXd(-(excess / a2) * a);
}

}  // namespace ccm
