#pragma once

#include <cmath>
#include <fstream>

#include "ccm/system.hpp"

namespace ccm {

struct Trajectory {
    std::vector<double> t;
    std::vector<VectorXd> x;
    std::vector<VectorXd> u;
    std::vector<VectorXd> w;
    std::vector<VectorXd> y;
    // Paired reference signals (empty when not applicable).
    std::vector<VectorXd> x_ref;
    std::vector<VectorXd> u_ref;
    std::vector<VectorXd> w_ref;
    std::vector<VectorXd> y_ref;
    bool truncated = false;
    std::string truncation_reason;
};

// Deterministic counter-based Gaussian stream: hash(seed, index) seeds two
// 53-bit uniforms pushed through Box-Muller.  Same (seed, sigma, index)
// always yields the same sample.
struct NoiseStream {
    uint64_t seed = 0;
    double sigma = 0.2;

    double gaussian(uint64_t index) const {
        uint64_t h1 = splitmix64(seed ^ splitmix64(index));
        uint64_t h2 = splitmix64(h1);
        double u1 = u64_to_unit(h1);
        double u2 = u64_to_unit(h2);
        return sigma * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }
};

// Classical fixed-step RK4 over an autonomous-or-not vector field.
inline Trajectory integrate(const std::function<VectorXd(double, const VectorXd&)>& field,
                            const VectorXd& x0, double t0, double t1, double step) {
    require(step > 0.0, "integrate: step must be positive");
    const long steps = std::lround((t1 - t0) / step);
    require(steps >= 1, "integrate: empty time span");
    Trajectory traj;
    VectorXd x = x0;
    for (long k = 0; k <= steps; ++k) {
        double t = t0 + k * step;
        traj.t.push_back(t);
        traj.x.push_back(x);
        if (k == steps) break;
        VectorXd k1 = field(t, x);
        VectorXd k2 = field(t + 0.5 * step, x + 0.5 * step * k1);
        VectorXd k3 = field(t + 0.5 * step, x + 0.5 * step * k2);
        VectorXd k4 = field(t + step, x + step * k3);
        x += (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return traj;
}

struct ReferenceSignal {
    std::function<VectorXd(double)> x;
    std::function<VectorXd(double)> u;
    std::function<VectorXd(double)> w;  // optional; empty means zero
};

// Controller callback: (t, x, xstar, ustar) -> u.  Exceptions trigger the
// hold-previous-control fallback once and truncate the log if they persist.
using ControllerFn =
    std::function<VectorXd(double, const VectorXd&, const VectorXd&, const VectorXd&)>;

inline Trajectory closed_loop(const ControlAffineSystem& sys, const ControllerFn& controller,
                              const ReferenceSignal& ref,
                              const std::function<VectorXd(double)>& w_signal, const VectorXd& x0,
                              double t0, double t1, double step) {
    require(step > 0.0, "closed_loop: step must be positive");
    const long steps = std::lround((t1 - t0) / step);
    require(steps >= 1, "closed_loop: empty time span");

    auto wref_at = [&](double t) {
        return ref.w ? ref.w(t) : VectorXd::Zero(sys.p_w());
    };
    auto w_at = [&](double t) { return w_signal ? w_signal(t) : VectorXd::Zero(sys.p_w()); };

    // The reference must satisfy the dynamics at the sample times.
    const double fd = 1e-4;
    for (long k = 0; k <= steps; k += std::max<long>(1, steps / 16)) {
        double t = t0 + k * step;
        VectorXd xs = ref.x(t);
        VectorXd xdot_num = (ref.x(t + fd) - ref.x(t - fd)) / (2.0 * fd);
        VectorXd xdot_model = sys.eval_dynamics(xs, ref.u(t), wref_at(t), t);
        require((xdot_num - xdot_model).norm() <= 1e-6 * (1.0 + xdot_model.norm()) + 1e-6,
                "closed_loop: reference trajectory does not satisfy the dynamics");
    }

    Trajectory traj;
    VectorXd x = x0;
    VectorXd u_hold = ref.u(t0);
    for (long k = 0; k <= steps; ++k) {
        double t = t0 + k * step;
        VectorXd xs = ref.x(t);
        VectorXd us = ref.u(t);
        VectorXd wr = wref_at(t);
        VectorXd wv = w_at(t);
        VectorXd u;
        try {
            u = controller(t, x, xs, us);
            u_hold = u;
        } catch (const std::exception& e) {
            if (traj.truncated) {
                traj.truncation_reason = e.what();
                break;
            }
            traj.truncated = true;
            traj.truncation_reason = e.what();
            u = u_hold;
        }
        traj.t.push_back(t);
        traj.x.push_back(x);
        traj.u.push_back(u);
        traj.w.push_back(wv);
        traj.y.push_back(sys.eval_output(x, u));
        traj.x_ref.push_back(xs);
        traj.u_ref.push_back(us);
        traj.w_ref.push_back(wr);
        traj.y_ref.push_back(sys.eval_output(xs, us));
        if (k == steps) break;
        auto field = [&](double tt, const VectorXd& xx) {
            return sys.eval_dynamics(xx, u, w_at(tt), tt);
        };
        VectorXd k1 = field(t, x);
        VectorXd k2 = field(t + 0.5 * step, x + 0.5 * step * k1);
        VectorXd k3 = field(t + 0.5 * step, x + 0.5 * step * k2);
        VectorXd k4 = field(t + step, x + step * k3);
        x += (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return traj;
}

// Ratio of trapezoidal integrals int |y - y*|^2 / int |w - w*|^2; returns
// -1.0 when the disturbance energy is below 1e-12 (ratio undefined).
inline double empirical_l2_ratio(const Trajectory& traj) {
    require(traj.t.size() >= 2 && traj.y.size() == traj.t.size() &&
                traj.y_ref.size() == traj.t.size() && traj.w.size() == traj.t.size() &&
                traj.w_ref.size() == traj.t.size(),
            "empirical_l2_ratio: trajectory must carry paired reference signals");
    double num = 0.0, den = 0.0;
    for (size_t k = 0; k + 1 < traj.t.size(); ++k) {
        double h = traj.t[k + 1] - traj.t[k];
        double ya = (traj.y[k] - traj.y_ref[k]).squaredNorm();
        double yb = (traj.y[k + 1] - traj.y_ref[k + 1]).squaredNorm();
        double wa = (traj.w[k] - traj.w_ref[k]).squaredNorm();
        double wb = (traj.w[k + 1] - traj.w_ref[k + 1]).squaredNorm();
        num += 0.5 * h * (ya + yb);
        den += 0.5 * h * (wa + wb);
    }
    if (den <= 1e-12) return -1.0;
    return num / den;
}

// Least-squares slope of log |e(t)| over [t_start, t_end]; the negated slope
// is the fitted exponential decay rate.
inline double fit_decay_rate(const std::vector<double>& t, const std::vector<double>& err,
                             double t_start, double t_end) {
    require(t.size() == err.size(), "fit_decay_rate: length mismatch");
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    long cnt = 0;
    for (size_t k = 0; k < t.size(); ++k) {
        if (t[k] < t_start || t[k] > t_end) continue;
        if (err[k] <= 0.0) continue;
        double lx = t[k], ly = std::log(err[k]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
        ++cnt;
    }
    require(cnt >= 3, "fit_decay_rate: not enough usable samples in window");
    double slope = (cnt * sxy - sx * sy) / (cnt * sxx - sx * sx);
    return -slope;
}

// Band-limited disturbance: zero-order hold at `hold_hz` over seeded Gaussian
// values, clamped to [-amp, amp].  The clamp count is written to *clamped
// when provided.
inline std::function<VectorXd(double)> zoh_disturbance(const NoiseStream& stream, int dim,
                                                       double hold_hz, double amp,
                                                       long* clamped = nullptr) {
    require(hold_hz > 0.0 && amp > 0.0, "zoh_disturbance: positive rate and amplitude required");
    return [stream, dim, hold_hz, amp, clamped](double t) {
        long cell = std::lround(std::floor(t * hold_hz));
        VectorXd w(dim);
        for (int i = 0; i < dim; ++i) {
            double v = stream.gaussian(uint64_t(cell) * 1000003ull + uint64_t(i));
            if (std::abs(v) > amp) {
                v = v > 0 ? amp : -amp;
                if (clamped) ++*clamped;
            }
            w(i) = v;
        }
        return w;
    };
}

// Trajectory CSV: t, x*, x, u, w, y, y* with 17-significant-digit decimals.
inline void write_trajectory_csv(const Trajectory& traj, std::ostream& out) {
    auto dims = [](const std::vector<VectorXd>& v) { return v.empty() ? 0 : int(v[0].size()); };
    int nx = dims(traj.x), nu = dims(traj.u), nw = dims(traj.w), ny = dims(traj.y);
    int nxs = dims(traj.x_ref), nys = dims(traj.y_ref);
    out << "t";
    for (int i = 0; i < nxs; ++i) out << ",xstar" << i + 1;
    for (int i = 0; i < nx; ++i) out << ",x" << i + 1;
    for (int i = 0; i < nu; ++i) out << ",u" << i + 1;
    for (int i = 0; i < nw; ++i) out << ",w" << i + 1;
    for (int i = 0; i < ny; ++i) out << ",y" << i + 1;
    for (int i = 0; i < nys; ++i) out << ",ystar" << i + 1;
    out << "\n";
    char buf[40];
    auto put = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << "," << buf;
    };
    for (size_t k = 0; k < traj.t.size(); ++k) {
        std::snprintf(buf, sizeof buf, "%.17g", traj.t[k]);
        out << buf;
        for (int i = 0; i < nxs; ++i) put(traj.x_ref[k](i));
        for (int i = 0; i < nx; ++i) put(traj.x[k](i));
        for (int i = 0; i < nu; ++i) put(traj.u[k](i));
        for (int i = 0; i < nw; ++i) put(traj.w[k](i));
        for (int i = 0; i < ny; ++i) put(traj.y[k](i));
        for (int i = 0; i < nys; ++i) put(traj.y_ref[k](i));
        out << "\n";
    }
}

inline void write_path_csv(const std::vector<VectorXd>& nodes, std::ostream& out) {
    require(!nodes.empty(), "write_path_csv: empty path");
    int n = int(nodes[0].size());
    out << "s";
    for (int i = 0; i < n; ++i) out << ",x" << i + 1;
    out << "\n";
    char buf[40];
    for (size_t k = 0; k < nodes.size(); ++k) {
        double s = nodes.size() > 1 ? double(k) / double(nodes.size() - 1) : 0.0;
        std::snprintf(buf, sizeof buf, "%.17g", s);
        out << buf;
        for (int i = 0; i < n; ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", nodes[k](i));
            out << "," << buf;
        }
        out << "\n";
    }
}

}  // namespace ccm
