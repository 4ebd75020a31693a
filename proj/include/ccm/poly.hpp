#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ccm/common.hpp"

namespace ccm {

// Multivariate polynomial over a fixed, ordered variable list.  Terms are
// kept in canonical graded-lexicographic order with no zero coefficients and
// no repeated exponent vectors, so equality and serialization are
// deterministic.
class PolyExpr {
  public:
    struct Term {
        double coeff = 0.0;
        std::vector<int> exps;
    };

    PolyExpr() = default;

    explicit PolyExpr(std::vector<std::string> vars) : vars_(std::move(vars)) {}

    static PolyExpr constant(std::vector<std::string> vars, double c) {
        PolyExpr p(std::move(vars));
        if (c != 0.0) p.terms_.push_back({c, std::vector<int>(p.vars_.size(), 0)});
        return p;
    }

    static PolyExpr variable(std::vector<std::string> vars, int index) {
        PolyExpr p(std::move(vars));
        require(index >= 0 && index < int(p.vars_.size()), "PolyExpr: variable index out of range");
        std::vector<int> e(p.vars_.size(), 0);
        e[static_cast<size_t>(index)] = 1;
        p.terms_.push_back({1.0, std::move(e)});
        return p;
    }

    const std::vector<std::string>& variables() const { return vars_; }
    const std::vector<Term>& terms() const { return terms_; }
    int var_count() const { return int(vars_.size()); }
    bool is_zero() const { return terms_.empty(); }

    // Max total degree; -1 for the zero polynomial.
    int degree() const {
        int d = -1;
        for (const auto& t : terms_) d = std::max(d, total_degree(t.exps));
        return d;
    }

    // Max degree in a single variable.
    int degree_in(int var) const {
        int d = 0;
        for (const auto& t : terms_) d = std::max(d, t.exps[static_cast<size_t>(var)]);
        return d;
    }

    void add_term(double coeff, std::vector<int> exps) {
        require(exps.size() == vars_.size(), "PolyExpr: exponent vector length mismatch");
        terms_.push_back({coeff, std::move(exps)});
        canonicalize();
    }

    double eval(const std::vector<double>& vals) const {
        require(vals.size() == vars_.size(), "PolyExpr::eval: value count mismatch");
        double acc = 0.0;
        for (const auto& t : terms_) {
            double m = t.coeff;
            for (size_t i = 0; i < vals.size(); ++i) {
                for (int k = 0; k < t.exps[i]; ++k) m *= vals[i];
            }
            acc += m;
        }
        return acc;
    }

    PolyExpr derivative(int var) const {
        require(var >= 0 && var < var_count(), "PolyExpr::derivative: bad variable index");
        PolyExpr out(vars_);
        for (const auto& t : terms_) {
            int e = t.exps[static_cast<size_t>(var)];
            if (e == 0) continue;
            Term d;
            d.coeff = t.coeff * double(e);
            d.exps = t.exps;
            d.exps[static_cast<size_t>(var)] -= 1;
            out.terms_.push_back(std::move(d));
        }
        out.canonicalize();
        return out;
    }

    PolyExpr operator+(const PolyExpr& o) const {
        check_same_vars(o);
        PolyExpr out(vars_);
        out.terms_ = terms_;
        out.terms_.insert(out.terms_.end(), o.terms_.begin(), o.terms_.end());
        out.canonicalize();
        return out;
    }

    PolyExpr operator-(const PolyExpr& o) const { return *this + (o * -1.0); }

    PolyExpr operator*(const PolyExpr& o) const {
        check_same_vars(o);
        PolyExpr out(vars_);
        for (const auto& a : terms_) {
            for (const auto& b : o.terms_) {
                Term t;
                t.coeff = a.coeff * b.coeff;
                t.exps.resize(vars_.size());
                for (size_t i = 0; i < vars_.size(); ++i) t.exps[i] = a.exps[i] + b.exps[i];
                out.terms_.push_back(std::move(t));
            }
        }
        out.canonicalize();
        return out;
    }

    PolyExpr operator*(double c) const {
        PolyExpr out(vars_);
        if (c == 0.0) return out;
        out.terms_ = terms_;
        for (auto& t : out.terms_) t.coeff *= c;
        return out;
    }

    bool operator==(const PolyExpr& o) const {
        if (vars_ != o.vars_ || terms_.size() != o.terms_.size()) return false;
        for (size_t i = 0; i < terms_.size(); ++i) {
            if (terms_[i].coeff != o.terms_[i].coeff || terms_[i].exps != o.terms_[i].exps) return false;
        }
        return true;
    }

    // "c * v1^e1 * v2 * ..." terms joined by " + "; the zero polynomial
    // prints as "0".  Coefficients use %.17g so canonical-form polynomials
    // round-trip bit-exactly through parse().
    std::string to_string() const {
        if (terms_.empty()) return "0";
        std::string out;
        for (size_t k = 0; k < terms_.size(); ++k) {
            if (k > 0) out += " + ";
            char buf[40];
            std::snprintf(buf, sizeof buf, "%.17g", terms_[k].coeff);
            out += buf;
            for (size_t i = 0; i < vars_.size(); ++i) {
                int e = terms_[k].exps[i];
                if (e == 0) continue;
                out += " * " + vars_[i];
                if (e > 1) out += "^" + std::to_string(e);
            }
        }
        return out;
    }

    static PolyExpr parse(const std::vector<std::string>& vars, const std::string& text) {
        PolyExpr out(vars);
        // Terms are separated by '+'; negative coefficients carry their sign
        // (e.g. "-1.5 * x2^2"), which is what to_string() emits.
        std::string s = text;
        std::vector<std::string> pieces;
        size_t pos = 0;
        std::string cur;
        while (pos < s.size()) {
            if (s[pos] == '+' && pos > 0) {
                pieces.push_back(cur);
                cur.clear();
                ++pos;
                continue;
            }
            cur += s[pos];
            ++pos;
        }
        pieces.push_back(cur);
        for (auto& piece : pieces) {
            std::string trimmed = trim(piece);
            if (trimmed.empty()) continue;
            if (trimmed == "0") continue;
            Term t;
            t.coeff = 1.0;
            t.exps.assign(vars.size(), 0);
            std::stringstream ss(trimmed);
            std::string factor;
            bool saw_coeff = false;
            while (std::getline(ss, factor, '*')) {
                factor = trim(factor);
                if (factor.empty()) throw std::invalid_argument("PolyExpr::parse: empty factor in '" + text + "'");
                auto caret = factor.find('^');
                std::string base = trim(caret == std::string::npos ? factor : factor.substr(0, caret));
                int exp = 1;
                if (caret != std::string::npos) exp = std::stoi(factor.substr(caret + 1));
                auto it = std::find(vars.begin(), vars.end(), base);
                if (it != vars.end()) {
                    t.exps[static_cast<size_t>(it - vars.begin())] += exp;
                } else {
                    size_t consumed = 0;
                    double v = std::stod(base, &consumed);
                    if (consumed != base.size() || caret != std::string::npos)
                        throw std::invalid_argument("PolyExpr::parse: unknown symbol '" + base + "'");
                    t.coeff *= v;
                    saw_coeff = true;
                }
            }
            (void)saw_coeff;
            out.terms_.push_back(std::move(t));
        }
        out.canonicalize();
        return out;
    }

  private:
    static int total_degree(const std::vector<int>& e) {
        int d = 0;
        for (int x : e) d += x;
        return d;
    }

    // Graded-lexicographic: higher total degree first, ties broken
    // lexicographically on the exponent vector.
    static bool grlex_before(const std::vector<int>& a, const std::vector<int>& b) {
        int da = total_degree(a), db = total_degree(b);
        if (da != db) return da > db;
        return a > b;
    }

    void canonicalize() {
        std::sort(terms_.begin(), terms_.end(),
                  [](const Term& a, const Term& b) { return grlex_before(a.exps, b.exps); });
        std::vector<Term> merged;
        for (auto& t : terms_) {
            if (!merged.empty() && merged.back().exps == t.exps) {
                merged.back().coeff += t.coeff;
            } else {
                merged.push_back(std::move(t));
            }
        }
        terms_.clear();
        for (auto& t : merged) {
            if (t.coeff != 0.0) terms_.push_back(std::move(t));
        }
    }

    void check_same_vars(const PolyExpr& o) const {
        require(vars_ == o.vars_, "PolyExpr: operands defined over different variable lists");
    }

    static std::string trim(const std::string& s) {
        size_t a = s.find_first_not_of(" \t\r\n");
        if (a == std::string::npos) return "";
        size_t b = s.find_last_not_of(" \t\r\n");
        return s.substr(a, b - a + 1);
    }

    std::vector<std::string> vars_;
    std::vector<Term> terms_;
};

inline PolyExpr operator*(double c, const PolyExpr& p) { return p * c; }

// Dense grid of PolyExpr entries sharing one variable list.
class PolyMatrix {
  public:
    PolyMatrix() = default;

    PolyMatrix(int rows, int cols, std::vector<std::string> vars)
        : rows_(rows), cols_(cols), vars_(std::move(vars)) {
        require(rows > 0 && cols > 0, "PolyMatrix: dimensions must be positive");
        entries_.assign(static_cast<size_t>(rows * cols), PolyExpr(vars_));
    }

    static PolyMatrix constant(const MatrixXd& m, std::vector<std::string> vars) {
        PolyMatrix out(int(m.rows()), int(m.cols()), std::move(vars));
        for (int i = 0; i < m.rows(); ++i)
            for (int j = 0; j < m.cols(); ++j)
                out.at(i, j) = PolyExpr::constant(out.vars_, m(i, j));
        return out;
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    const std::vector<std::string>& variables() const { return vars_; }

    PolyExpr& at(int i, int j) {
        check_index(i, j);
        return entries_[static_cast<size_t>(i * cols_ + j)];
    }
    const PolyExpr& at(int i, int j) const {
        check_index(i, j);
        return entries_[static_cast<size_t>(i * cols_ + j)];
    }

    bool is_symmetric() const {
        if (rows_ != cols_) return false;
        for (int i = 0; i < rows_; ++i)
            for (int j = i + 1; j < cols_; ++j)
                if (!(at(i, j) == at(j, i))) return false;
        return true;
    }

    int degree() const {
        int d = -1;
        for (const auto& e : entries_) d = std::max(d, e.degree());
        return d;
    }

    MatrixXd eval(const std::vector<double>& vals) const {
        MatrixXd out(rows_, cols_);
        for (int i = 0; i < rows_; ++i)
            for (int j = 0; j < cols_; ++j) out(i, j) = at(i, j).eval(vals);
        return out;
    }

    PolyMatrix derivative(int var) const {
        PolyMatrix out(rows_, cols_, vars_);
        for (int i = 0; i < rows_; ++i)
            for (int j = 0; j < cols_; ++j) out.at(i, j) = at(i, j).derivative(var);
        return out;
    }

  private:
    void check_index(int i, int j) const {
        require(i >= 0 && i < rows_ && j >= 0 && j < cols_, "PolyMatrix: index out of range");
    }

    int rows_ = 0, cols_ = 0;
    std::vector<std::string> vars_;
    std::vector<PolyExpr> entries_;
};

}  // namespace ccm
