#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace ccm {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Uniform grid over [lo, hi] with k >= 2 points.  Endpoints are produced
// exactly, interior points via the fraction i/(k-1) so that symmetric
// intervals hit rational grid points (e.g. -1.0 on [-2,2] with 41 points)
// without rounding drift.
inline std::vector<double> linspace(double lo, double hi, int k) {
    if (k < 2) throw std::invalid_argument("linspace: need at least 2 points");
    std::vector<double> out(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) out[static_cast<size_t>(i)] = lo + (hi - lo) * (double(i) / double(k - 1));
    out.front() = lo;
    out.back() = hi;
    return out;
}

inline uint64_t splitmix64(uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Uniform double in (0, 1) from 53 high bits of a 64-bit word.
inline double u64_to_unit(uint64_t h) {
    return (double(h >> 11) + 0.5) * (1.0 / 9007199254740992.0);
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace ccm
