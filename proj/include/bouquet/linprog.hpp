#pragma once

#include <Eigen/Dense>

#include "bouquet/errors.hpp"

namespace bouquet {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class LpStatus { Optimal, Infeasible, Unbounded };

struct LpResult {
    LpStatus status;
    Vec x;             // maximizer when Optimal
    double objective;  // c.dot(x)
};

// Maximize c.x subject to A x <= b with x free. Dense two-phase simplex with
// Bland's rule, meant for the desk-scale problems this library produces
// (tens of rows and columns).
LpResult solve_lp_max(const Mat& A, const Vec& b, const Vec& c);

}  // namespace bouquet
