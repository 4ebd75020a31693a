#pragma once

#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ccm/poly.hpp"

namespace ccm {

// Control-affine polynomial system
//   xdot = f(x) + B(x) u + B_w(x) w,   y = g(x, u).
//
// All polynomial data shares one variable list x1..xn, u1..um, w1..wp so
// matrices can be combined freely.  Everything is immutable after
// construction; evaluation is pure.
class ControlAffineSystem {
  public:
    ControlAffineSystem(int n, int m, int p_w, PolyMatrix f, PolyMatrix B,
                        std::optional<PolyMatrix> B_w, PolyMatrix g)
        : n_(n), m_(m), p_w_(p_w), f_(std::move(f)), B_(std::move(B)), g_(std::move(g)) {
        require(n_ > 0 && m_ >= 0 && p_w_ >= 0, "ControlAffineSystem: bad dimensions");
        require(f_.rows() == n_ && f_.cols() == 1, "ControlAffineSystem: f must be n x 1");
        require(B_.rows() == n_ && B_.cols() == std::max(m_, 1), "ControlAffineSystem: B must be n x m");
        if (p_w_ > 0) {
            require(B_w.has_value() && B_w->rows() == n_ && B_w->cols() == p_w_,
                    "ControlAffineSystem: B_w must be n x p_w");
            B_w_ = std::move(*B_w);
        } else {
            B_w_ = PolyMatrix(n_, 1, f_.variables());  // zero column, unused
        }
        require(g_.cols() == 1, "ControlAffineSystem: g must be a column");
        // f, B, B_w may depend on x only; g on (x, u).
        for (int i = 0; i < n_; ++i) {
            require(x_only(f_.at(i, 0)), "ControlAffineSystem: f must depend on x only");
            for (int j = 0; j < B_.cols(); ++j)
                require(x_only(B_.at(i, j)), "ControlAffineSystem: B must depend on x only");
            for (int j = 0; j < B_w_.cols(); ++j)
                require(x_only(B_w_.at(i, j)), "ControlAffineSystem: B_w must depend on x only");
        }
        for (int i = 0; i < g_.rows(); ++i)
            for (int k = 0; k < p_w_; ++k)
                require(g_.at(i, 0).degree_in(n_ + m_ + k) == 0, "ControlAffineSystem: g must depend on (x,u) only");
        // Precompute symbolic Jacobians.
        for (int j = 0; j < n_; ++j) {
            df_.push_back(f_.derivative(j));
            std::vector<PolyMatrix> dBj;
            for (int k = 0; k < m_; ++k) {
                // d/dx_j of column k of B
                PolyMatrix col(n_, 1, f_.variables());
                for (int i = 0; i < n_; ++i) col.at(i, 0) = B_.at(i, k).derivative(j);
                dBj.push_back(std::move(col));
            }
            dB_.push_back(std::move(dBj));
            dg_dx_.push_back(g_.derivative(j));
        }
        for (int k = 0; k < m_; ++k) dg_du_.push_back(g_.derivative(n_ + k));
    }

    int n() const { return n_; }
    int m() const { return m_; }
    int p_w() const { return p_w_; }
    int output_dim() const { return g_.rows(); }
    const PolyMatrix& f() const { return f_; }
    const PolyMatrix& B() const { return B_; }
    const PolyMatrix& B_w() const { return B_w_; }
    const PolyMatrix& g() const { return g_; }
    const std::vector<std::string>& variables() const { return f_.variables(); }

    std::vector<double> pack(const VectorXd& x, const VectorXd& u, const VectorXd& w) const {
        require(x.size() == n_, "state dimension mismatch");
        require(u.size() == m_, "control dimension mismatch");
        require(w.size() == p_w_, "disturbance dimension mismatch");
        std::vector<double> vals(static_cast<size_t>(n_ + m_ + p_w_), 0.0);
        for (int i = 0; i < n_; ++i) vals[static_cast<size_t>(i)] = x(i);
        for (int i = 0; i < m_; ++i) vals[static_cast<size_t>(n_ + i)] = u(i);
        for (int i = 0; i < p_w_; ++i) vals[static_cast<size_t>(n_ + m_ + i)] = w(i);
        return vals;
    }

    // f(x) + B(x) u + B_w(x) w
    VectorXd eval_dynamics(const VectorXd& x, const VectorXd& u, const VectorXd& w, double /*t*/ = 0.0) const {
        auto vals = pack(x, u, w);
        VectorXd xdot = f_.eval(vals).col(0);
        if (m_ > 0) xdot += B_.eval(vals) * u;
        if (p_w_ > 0) xdot += B_w_.eval(vals) * w;
        return xdot;
    }

    VectorXd eval_dynamics(const VectorXd& x, const VectorXd& u, double t = 0.0) const {
        return eval_dynamics(x, u, VectorXd::Zero(p_w_), t);
    }

    // A(x,u) = d/dx [f(x) + B(x)u], exact symbolic differentiation.
    MatrixXd jacobian_A(const VectorXd& x, const VectorXd& u, double /*t*/ = 0.0) const {
        auto vals = pack(x, u, VectorXd::Zero(p_w_));
        MatrixXd A(n_, n_);
        for (int j = 0; j < n_; ++j) {
            VectorXd col = df_[static_cast<size_t>(j)].eval(vals).col(0);
            for (int k = 0; k < m_; ++k)
                col += dB_[static_cast<size_t>(j)][static_cast<size_t>(k)].eval(vals).col(0) * u(k);
            A.col(j) = col;
        }
        return A;
    }

    // Output Jacobians C(x,u) = dg/dx (q x n) and D(x,u) = dg/du (q x m).
    MatrixXd output_jacobian_C(const VectorXd& x, const VectorXd& u) const {
        auto vals = pack(x, u, VectorXd::Zero(p_w_));
        MatrixXd C(g_.rows(), n_);
        for (int j = 0; j < n_; ++j) C.col(j) = dg_dx_[static_cast<size_t>(j)].eval(vals).col(0);
        return C;
    }
    MatrixXd output_jacobian_D(const VectorXd& x, const VectorXd& u) const {
        auto vals = pack(x, u, VectorXd::Zero(p_w_));
        MatrixXd D(g_.rows(), std::max(m_, 1));
        D.setZero();
        for (int k = 0; k < m_; ++k) D.col(k) = dg_du_[static_cast<size_t>(k)].eval(vals).col(0);
        return D;
    }

    VectorXd eval_output(const VectorXd& x, const VectorXd& u) const {
        auto vals = pack(x, u, VectorXd::Zero(p_w_));
        return g_.eval(vals).col(0);
    }

    // Central-difference Jacobian of f + Bu; error O(h^2).
    MatrixXd finite_diff_jacobian(const VectorXd& x, const VectorXd& u, double /*t*/, double h) const {
        require(h > 0.0, "finite_diff_jacobian: h must be positive");
        MatrixXd J(n_, n_);
        VectorXd w = VectorXd::Zero(p_w_);
        for (int j = 0; j < n_; ++j) {
            VectorXd xp = x, xm = x;
            xp(j) += h;
            xm(j) -= h;
            J.col(j) = (eval_dynamics(xp, u, w) - eval_dynamics(xm, u, w)) / (2.0 * h);
        }
        return J;
    }

  private:
    bool x_only(const PolyExpr& p) const {
        for (int k = 0; k < m_ + p_w_; ++k)
            if (p.degree_in(n_ + k) > 0) return false;
        return true;
    }

    int n_, m_, p_w_;
    PolyMatrix f_, B_, B_w_, g_;
    std::vector<PolyMatrix> df_;                // df_[j] = d f / d x_j (n x 1)
    std::vector<std::vector<PolyMatrix>> dB_;   // dB_[j][k] = d B_col_k / d x_j
    std::vector<PolyMatrix> dg_dx_, dg_du_;
};

namespace detail {
inline std::vector<std::string> make_vars(int n, int m, int p_w) {
    std::vector<std::string> v;
    for (int i = 1; i <= n; ++i) v.push_back("x" + std::to_string(i));
    for (int i = 1; i <= m; ++i) v.push_back("u" + std::to_string(i));
    for (int i = 1; i <= p_w; ++i) v.push_back("w" + std::to_string(i));
    return v;
}
}  // namespace detail

// Built-in example systems.
//
//   moore-greitzer      two-state compressor surge model, state (psi, phi):
//                       psidot = phi + u,  phidot = -psi - 3/2 phi^2 - 1/2 phi^3 + w,
//                       output y = phi + 0.1 u.
//   double-integrator   xdot = (x2, u), y = x1.
//   point-mass-mech     unit point mass, q ddot = u (state (q, qdot)).
//   mass-spring-damper  q ddot = -q - 0.2 qdot + u (unit mass/stiffness, damping 0.2).
inline ControlAffineSystem builtin(const std::string& name) {
    auto P = [](const std::vector<std::string>& vars, const std::string& s) {
        return PolyExpr::parse(vars, s);
    };
    if (name == "moore-greitzer") {
        auto vars = detail::make_vars(2, 1, 1);
        PolyMatrix f(2, 1, vars), B(2, 1, vars), Bw(2, 1, vars), g(1, 1, vars);
        f.at(0, 0) = P(vars, "x2");
        f.at(1, 0) = P(vars, "-1 * x1 + -1.5 * x2^2 + -0.5 * x2^3");
        B.at(0, 0) = P(vars, "1");
        Bw.at(1, 0) = P(vars, "1");
        g.at(0, 0) = P(vars, "x2 + 0.1 * u1");
        return ControlAffineSystem(2, 1, 1, f, B, Bw, g);
    }
    if (name == "double-integrator" || name == "point-mass-mech") {
        auto vars = detail::make_vars(2, 1, 0);
        PolyMatrix f(2, 1, vars), B(2, 1, vars), g(1, 1, vars);
        f.at(0, 0) = P(vars, "x2");
        B.at(1, 0) = P(vars, "1");
        g.at(0, 0) = P(vars, "x1");
        return ControlAffineSystem(2, 1, 0, f, B, std::nullopt, g);
    }
    if (name == "mass-spring-damper") {
        auto vars = detail::make_vars(2, 1, 0);
        PolyMatrix f(2, 1, vars), B(2, 1, vars), g(1, 1, vars);
        f.at(0, 0) = P(vars, "x2");
        f.at(1, 0) = P(vars, "-1 * x1 + -0.2 * x2");
        B.at(1, 0) = P(vars, "1");
        g.at(0, 0) = P(vars, "x1");
        return ControlAffineSystem(2, 1, 0, f, B, std::nullopt, g);
    }
    throw std::invalid_argument("builtin: unknown model '" + name + "'");
}

// ---------------------------------------------------------------------------
// Model files: structured plain text with [system], [f], [B], [B_w], [g]
// sections.  Polynomial entries appear one per line, row-major.  Writing a
// canonical-form system and re-parsing it is bit-exact.
// ---------------------------------------------------------------------------

inline std::string write_model(const ControlAffineSystem& sys) {
    std::ostringstream out;
    out << "[system]\n";
    out << "n = " << sys.n() << "\n";
    out << "m = " << sys.m() << "\n";
    out << "p_w = " << sys.p_w() << "\n";
    out << "q = " << sys.output_dim() << "\n";
    auto section = [&](const char* name, const PolyMatrix& M) {
        out << "\n[" << name << "]\n";
        for (int i = 0; i < M.rows(); ++i)
            for (int j = 0; j < M.cols(); ++j) out << M.at(i, j).to_string() << "\n";
    };
    section("f", sys.f());
    section("B", sys.B());
    if (sys.p_w() > 0) section("B_w", sys.B_w());
    section("g", sys.g());
    return out.str();
}

inline ControlAffineSystem parse_model(const std::string& text) {
    std::istringstream in(text);
    std::string line, section;
    std::map<std::string, std::vector<std::string>> body;
    std::map<std::string, int> dims;
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
        if (section == "system") {
            auto eq = line.find('=');
            require(eq != std::string::npos, "parse_model: bad [system] line: " + line);
            std::string key = line.substr(0, eq);
            key.erase(key.find_last_not_of(" \t") + 1);
            dims[key] = std::stoi(line.substr(eq + 1));
        } else {
            body[section].push_back(line);
        }
    }
    require(dims.count("n") && dims.count("m"), "parse_model: missing n/m in [system]");
    int n = dims["n"], m = dims["m"], p_w = dims.count("p_w") ? dims["p_w"] : 0;
    int q = dims.count("q") ? dims["q"] : 1;
    auto vars = detail::make_vars(n, m, p_w);
    auto read = [&](const std::string& name, int rows, int cols) {
        PolyMatrix M(rows, cols, vars);
        auto it = body.find(name);
        require(it != body.end(), "parse_model: missing section [" + name + "]");
        require(int(it->second.size()) == rows * cols,
                "parse_model: section [" + name + "] needs " + std::to_string(rows * cols) + " entries");
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j)
                M.at(i, j) = PolyExpr::parse(vars, it->second[static_cast<size_t>(i * cols + j)]);
        return M;
    };
    PolyMatrix f = read("f", n, 1);
    PolyMatrix B = read("B", n, std::max(m, 1));
    std::optional<PolyMatrix> Bw;
    if (p_w > 0) Bw = read("B_w", n, p_w);
    PolyMatrix g = read("g", q, 1);
    return ControlAffineSystem(n, m, p_w, f, B, Bw, g);
}

inline ControlAffineSystem load_model_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_model_file: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_model(ss.str());
}

}  // namespace ccm
