#pragma once

#include <Eigen/Cholesky>
#include <cmath>
#include <functional>
#include <vector>

#include "ccm/common.hpp"

namespace ccm {

// Riemannian metric as an evaluator x -> M(x) (symmetric positive definite)
// with uniform bounds alpha1 I <= M(x) <= alpha2 I on the working region.
struct MetricField {
    std::function<MatrixXd(const VectorXd&)> M;
    double alpha1 = 0.0;
    double alpha2 = kInf;
};

// Discrete path on the uniform parameter grid s_k = k/N, endpoints exact.
struct Path {
    std::vector<VectorXd> nodes;  // N+1 nodes

    int segments() const { return int(nodes.size()) - 1; }
    int dim() const { return int(nodes.front().size()); }
};

inline Path straight_line(const VectorXd& a, const VectorXd& b, int N) {
    require(N >= 2, "straight_line: need N >= 2");
    Path p;
    for (int k = 0; k <= N; ++k) {
        double s = double(k) / double(N);
        p.nodes.push_back((1.0 - s) * a + s * b);
    }
    p.nodes.front() = a;
    p.nodes.back() = b;
    return p;
}

// Composite midpoint quadrature of <gamma_s, gamma_s>: the velocity on each
// segment is the central difference (x_{k+1}-x_k)/h and the metric is taken
// at the segment midpoint.  Error O(1/N^2).
inline double path_energy(const MetricField& metric, const Path& path) {
    const int N = path.segments();
    require(N >= 2, "path_energy: need at least 2 segments");
    const double h = 1.0 / double(N);
    double e = 0.0;
    for (int k = 0; k < N; ++k) {
        VectorXd d = path.nodes[static_cast<size_t>(k + 1)] - path.nodes[static_cast<size_t>(k)];
        VectorXd mid = 0.5 * (path.nodes[static_cast<size_t>(k + 1)] + path.nodes[static_cast<size_t>(k)]);
        e += d.dot(metric.M(mid) * d) / h;
    }
    return e;
}

inline double path_length(const MetricField& metric, const Path& path) {
    const int N = path.segments();
    require(N >= 2, "path_length: need at least 2 segments");
    const double h = 1.0 / double(N);
    double l = 0.0;
    for (int k = 0; k < N; ++k) {
        VectorXd d = path.nodes[static_cast<size_t>(k + 1)] - path.nodes[static_cast<size_t>(k)];
        VectorXd mid = 0.5 * (path.nodes[static_cast<size_t>(k + 1)] + path.nodes[static_cast<size_t>(k)]);
        double q = d.dot(metric.M(mid) * d) / (h * h);
        l += h * std::sqrt(std::max(q, 0.0));
    }
    return l;
}

struct GeodesicOpts {
    int N = 32;
    double tol = 1e-8;        // converged when grad norm <= tol*(1+energy)
    int max_iters = 200;
    int starts = 3;
    double fd_step = 1e-6;    // finite-difference step for metric derivatives
};

struct GeodesicResult {
    Path path;
    double energy = 0.0;
    double length = 0.0;
    bool converged = false;
    int iterations = 0;
    int start_index = 0;
};

namespace detail {

// Gradient of the discrete energy with respect to the interior nodes.
// Metric derivatives are obtained by central finite differences.
inline void energy_gradient(const MetricField& metric, const Path& path, double fd_step,
                            std::vector<VectorXd>& grad) {
    const int N = path.segments();
    const int n = path.dim();
    const double h = 1.0 / double(N);
    grad.assign(static_cast<size_t>(N - 1), VectorXd::Zero(n));
    for (int k = 0; k < N; ++k) {
        VectorXd d = path.nodes[static_cast<size_t>(k + 1)] - path.nodes[static_cast<size_t>(k)];
        VectorXd mid = 0.5 * (path.nodes[static_cast<size_t>(k + 1)] + path.nodes[static_cast<size_t>(k)]);
        MatrixXd Mm = metric.M(mid);
        VectorXd Md = Mm * d;
        // d/dx of the quadratic term through the endpoints of segment k.
        if (k >= 1) grad[static_cast<size_t>(k - 1)] += (-2.0 / h) * Md;
        if (k <= N - 2) grad[static_cast<size_t>(k)] += (2.0 / h) * Md;
        // Metric dependence on the midpoint (weight 1/2 per endpoint).
        VectorXd mgrad(n);
        for (int i = 0; i < n; ++i) {
            VectorXd mp = mid, mm = mid;
            mp(i) += fd_step;
            mm(i) -= fd_step;
            MatrixXd dM = (metric.M(mp) - metric.M(mm)) / (2.0 * fd_step);
            mgrad(i) = d.dot(dM * d) / h;
        }
        if (k >= 1) grad[static_cast<size_t>(k - 1)] += 0.5 * mgrad;
        if (k <= N - 2) grad[static_cast<size_t>(k)] += 0.5 * mgrad;
    }
}

// Damped Gauss-Newton on the interior nodes: the Hessian of the energy with
// the metric frozen is block tridiagonal and positive definite.
inline GeodesicResult minimize_energy(const MetricField& metric, Path path, const GeodesicOpts& opts) {
    const int N = path.segments();
    const int n = path.dim();
    const double h = 1.0 / double(N);
    const int nv = (N - 1) * n;

    GeodesicResult res;
    res.energy = path_energy(metric, path);
    std::vector<VectorXd> grad;
    for (int it = 0; it < opts.max_iters; ++it) {
        res.iterations = it;
        energy_gradient(metric, path, opts.fd_step, grad);
        double gnorm = 0.0;
        for (const auto& g : grad) gnorm += g.squaredNorm();
        gnorm = std::sqrt(gnorm);
        if (gnorm <= opts.tol * (1.0 + res.energy)) {
            res.converged = true;
            break;
        }
        // Frozen-metric Hessian blocks.
        MatrixXd H = MatrixXd::Zero(nv, nv);
        for (int k = 0; k < N; ++k) {
            VectorXd mid = 0.5 * (path.nodes[static_cast<size_t>(k + 1)] + path.nodes[static_cast<size_t>(k)]);
            MatrixXd Mm = (2.0 / h) * metric.M(mid);
            if (k >= 1) H.block((k - 1) * n, (k - 1) * n, n, n) += Mm;
            if (k <= N - 2) H.block(k * n, k * n, n, n) += Mm;
            if (k >= 1 && k <= N - 2) {
                H.block((k - 1) * n, k * n, n, n) -= Mm;
                H.block(k * n, (k - 1) * n, n, n) -= Mm;
            }
        }
        VectorXd g(nv);
        for (int j = 0; j < N - 1; ++j) g.segment(j * n, n) = grad[static_cast<size_t>(j)];
        VectorXd step = H.ldlt().solve(-g);
        // Backtracking line search on the true energy.
        double t = 1.0;
        bool accepted = false;
        for (int ls = 0; ls < 30; ++ls) {
            Path trial = path;
            for (int j = 0; j < N - 1; ++j)
                trial.nodes[static_cast<size_t>(j + 1)] += t * step.segment(j * n, n);
            double e = path_energy(metric, trial);
            if (e < res.energy - 1e-14) {
                path = trial;
                res.energy = e;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (!accepted) {
            // Stationary to line-search resolution.
            res.converged = gnorm <= 1e3 * opts.tol * (1.0 + res.energy);
            break;
        }
    }
    res.path = std::move(path);
    res.length = path_length(metric, res.path);
    return res;
}

}  // namespace detail

// Minimal geodesic between a and b.  Multi-start: the straight line plus
// (starts-1) deterministic sine-bump perturbations of it; the lowest-energy
// converged result wins, ties broken by start index.
inline GeodesicResult compute_geodesic(const MetricField& metric, const VectorXd& a, const VectorXd& b,
                                       const GeodesicOpts& opts = {}) {
    require(a.size() == b.size(), "compute_geodesic: endpoint dimension mismatch");
    const int n = int(a.size());
    if ((a - b).norm() == 0.0) {
        GeodesicResult res;
        res.path = straight_line(a, b, opts.N);
        res.energy = 0.0;
        res.length = 0.0;
        res.converged = true;
        return res;
    }

    GeodesicResult best;
    bool have_best = false;
    double scale = std::max(1.0, (b - a).norm());
    for (int s = 0; s < opts.starts; ++s) {
        Path init = straight_line(a, b, opts.N);
        if (s > 0) {
            // Deterministic perturbation: a sine bump in a hashed direction.
            VectorXd dir(n);
            for (int i = 0; i < n; ++i)
                dir(i) = 2.0 * u64_to_unit(splitmix64(uint64_t(s) * 131 + uint64_t(i))) - 1.0;
            if (dir.norm() < 1e-12) dir.setOnes();
            dir.normalize();
            double amp = 0.25 * scale * double(s) / double(opts.starts);
            for (int k = 1; k < opts.N; ++k) {
                double sk = double(k) / double(opts.N);
                init.nodes[static_cast<size_t>(k)] += amp * std::sin(M_PI * sk) * dir;
            }
        }
        GeodesicResult r = detail::minimize_energy(metric, std::move(init), opts);
        r.start_index = s;
        if (!have_best || (r.converged && !best.converged) ||
            (r.converged == best.converged && r.energy < best.energy - 1e-12)) {
            best = std::move(r);
            have_best = true;
        }
    }
    return best;
}

// First variation of energy for moving endpoints:
//   1/2 de/dt = <gamma_s(1), x_dot>_{x(1)} - <gamma_s(0), xstar_dot>_{x(0)}
// with endpoint velocities from one-sided differences of the nodes.
inline double first_variation(const MetricField& metric, const GeodesicResult& result,
                              const VectorXd& xstar_dot, const VectorXd& x_dot) {
    require(result.converged, "first_variation: geodesic did not converge");
    const auto& nodes = result.path.nodes;
    const int N = result.path.segments();
    const double h = 1.0 / double(N);
    VectorXd gs0 = (nodes[1] - nodes[0]) / h;
    VectorXd gs1 = (nodes[static_cast<size_t>(N)] - nodes[static_cast<size_t>(N - 1)]) / h;
    const VectorXd& x0 = nodes.front();
    const VectorXd& x1 = nodes.back();
    return gs1.dot(metric.M(x1) * x_dot) - gs0.dot(metric.M(x0) * xstar_dot);
}

// Natural cubic spline through the path nodes over the uniform s grid;
// provides smooth gamma(s) and gamma_s(s) for the controller's s-integration.
class PathSpline {
  public:
    explicit PathSpline(const Path& path) : nodes_(path.nodes) {
        const int N = path.segments();
        const int n = path.dim();
        h_ = 1.0 / double(N);
        second_.assign(nodes_.size(), VectorXd::Zero(n));
        if (N < 2) return;
        // Tridiagonal solve for second derivatives, natural boundary.
        const int m = N - 1;
        std::vector<VectorXd> rhs(static_cast<size_t>(m));
        for (int i = 1; i <= m; ++i)
            rhs[static_cast<size_t>(i - 1)] =
                6.0 / (h_ * h_) * (nodes_[static_cast<size_t>(i + 1)] - 2.0 * nodes_[static_cast<size_t>(i)] + nodes_[static_cast<size_t>(i - 1)]);
        std::vector<double> diag(static_cast<size_t>(m), 4.0);
        // Forward sweep (sub/super diagonals are 1).
        for (int i = 1; i < m; ++i) {
            double w = 1.0 / diag[static_cast<size_t>(i - 1)];
            diag[static_cast<size_t>(i)] -= w;
            rhs[static_cast<size_t>(i)] -= w * rhs[static_cast<size_t>(i - 1)];
        }
        second_[static_cast<size_t>(m)] = rhs[static_cast<size_t>(m - 1)] / diag[static_cast<size_t>(m - 1)];
        for (int i = m - 1; i >= 1; --i)
            second_[static_cast<size_t>(i)] =
                (rhs[static_cast<size_t>(i - 1)] - second_[static_cast<size_t>(i + 1)]) / diag[static_cast<size_t>(i - 1)];
    }

    VectorXd value(double s) const {
        auto [k, u] = locate(s);
        double A = 1.0 - u, B = u;
        return A * nodes_[k] + B * nodes_[k + 1] +
               (h_ * h_ / 6.0) * ((A * A * A - A) * second_[k] + (B * B * B - B) * second_[k + 1]);
    }

    VectorXd derivative(double s) const {
        auto [k, u] = locate(s);
        double A = 1.0 - u, B = u;
        return (nodes_[k + 1] - nodes_[k]) / h_ +
               (h_ / 6.0) * ((3.0 * B * B - 1.0) * second_[k + 1] - (3.0 * A * A - 1.0) * second_[k]);
    }

  private:
    std::pair<size_t, double> locate(double s) const {
        s = std::min(std::max(s, 0.0), 1.0);
        int N = int(nodes_.size()) - 1;
        int k = std::min(int(s / h_), N - 1);
        return {static_cast<size_t>(k), (s - double(k) * h_) / h_};
    }

    std::vector<VectorXd> nodes_;
    std::vector<VectorXd> second_;
    double h_ = 0.0;
};

}  // namespace ccm
