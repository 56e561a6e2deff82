#include "bouquet/linprog.hpp"

#include <cmath>
#include <vector>

namespace bouquet {

namespace {

constexpr double kPivotTol = 1e-11;
constexpr int kMaxIters = 20000;

// Tableau simplex on equality form: min obj.z subject to T z = rhs, z >= 0,
// starting from the given basis. Mutates tableau/rhs/basis in place.
// Returns false when the problem is unbounded below.
bool run_simplex(Mat& T, Vec& rhs, Vec& obj, std::vector<int>& basis, double& value) {
    const int m = static_cast<int>(T.rows());
    const int N = static_cast<int>(T.cols());

    // reduced costs r = obj - obj_B^T B^{-1} T maintained implicitly: we keep
    // the tableau in canonical form (basis columns are unit vectors), so the
    // objective row is updated by the same pivots.
    Vec cost = obj;
    value = 0.0;
    for (int i = 0; i < m; ++i) {
        if (std::abs(cost(basis[static_cast<size_t>(i)])) > 0.0) {
            double f = cost(basis[static_cast<size_t>(i)]);
            cost -= f * T.row(i).transpose();
            value -= f * rhs(i);
        }
    }

    for (int iter = 0; iter < kMaxIters; ++iter) {
        // Bland: entering = lowest index with negative reduced cost
        int enter = -1;
        for (int j = 0; j < N; ++j) {
            if (cost(j) < -kPivotTol) {
                enter = j;
                break;
            }
        }
        if (enter < 0) {  // optimal; stored accumulator is the negated objective
            value = -value;
            return true;
        }

        // ratio test, ties broken by lowest basis index (Bland)
        int leave = -1;
        double best = 0.0;
        for (int i = 0; i < m; ++i) {
            double a = T(i, enter);
            if (a > kPivotTol) {
                double ratio = rhs(i) / a;
                if (leave < 0 || ratio < best - 1e-15 ||
                    (std::abs(ratio - best) <= 1e-15 &&
                     basis[static_cast<size_t>(i)] < basis[static_cast<size_t>(leave)])) {
                    leave = i;
                    best = ratio;
                }
            }
        }
        if (leave < 0) return false;  // unbounded

        double piv = T(leave, enter);
        T.row(leave) /= piv;
        rhs(leave) /= piv;
        for (int i = 0; i < m; ++i) {
            if (i == leave) continue;
            double f = T(i, enter);
            if (f != 0.0) {
                T.row(i) -= f * T.row(leave);
                rhs(i) -= f * rhs(leave);
            }
        }
        double f = cost(enter);
        if (f != 0.0) {
            cost -= f * T.row(leave).transpose();
            value -= f * rhs(leave);
        }
        basis[static_cast<size_t>(leave)] = enter;
    }
    throw NoConvergence("simplex: iteration cap exceeded", 0.0);
}

}  // namespace

LpResult solve_lp_max(const Mat& A, const Vec& b, const Vec& c) {
    const int m = static_cast<int>(A.rows());
    const int n = static_cast<int>(A.cols());
    if (b.size() != m || c.size() != n)
        throw DomainError("solve_lp_max: dimension mismatch");

    // z = [x+, x-, slack, artificial]; A x+ - A x- + slack = b
    const int n_art = m;  // one artificial per row keeps the setup simple
    const int N = 2 * n + m + n_art;
    Mat T = Mat::Zero(m, N);
    Vec rhs = b;
    T.block(0, 0, m, n) = A;
    T.block(0, n, m, n) = -A;
    T.block(0, 2 * n, m, m) = Mat::Identity(m, m);
    for (int i = 0; i < m; ++i) {
        if (rhs(i) < 0.0) {
            T.row(i) = -T.row(i);
            rhs(i) = -rhs(i);
        }
        T(i, 2 * n + m + i) = 1.0;
    }

    std::vector<int> basis(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) basis[static_cast<size_t>(i)] = 2 * n + m + i;

    // phase 1: drive the artificials out
    Vec obj1 = Vec::Zero(N);
    obj1.tail(n_art).setOnes();
    double v1 = 0.0;
    run_simplex(T, rhs, obj1, basis, v1);
    double feas_scale = std::max(1.0, b.cwiseAbs().maxCoeff());
    if (v1 > 1e-9 * feas_scale)
        return LpResult{LpStatus::Infeasible, Vec::Zero(n), 0.0};

    // pivot any artificial still basic at zero level out of the basis
    for (int i = 0; i < m; ++i) {
        if (basis[static_cast<size_t>(i)] >= 2 * n + m) {
            int enter = -1;
            for (int j = 0; j < 2 * n + m; ++j) {
                if (std::abs(T(i, j)) > kPivotTol) {
                    enter = j;
                    break;
                }
            }
            if (enter < 0) continue;  // redundant row
            double piv = T(i, enter);
            T.row(i) /= piv;
            rhs(i) /= piv;
            for (int k = 0; k < m; ++k) {
                if (k == i) continue;
                double f = T(k, enter);
                if (f != 0.0) {
                    T.row(k) -= f * T.row(i);
                    rhs(k) -= f * rhs(i);
                }
            }
            basis[static_cast<size_t>(i)] = enter;
        }
    }

    // phase 2: forbid the artificials and maximize c.x = minimize -c.x
    Vec obj2 = Vec::Zero(N);
    obj2.head(n) = -c;
    obj2.segment(n, n) = c;
    for (int j = 2 * n + m; j < N; ++j) T.col(j).setZero();
    double v2 = 0.0;
    if (!run_simplex(T, rhs, obj2, basis, v2))
        return LpResult{LpStatus::Unbounded, Vec::Zero(n), 0.0};

    Vec z = Vec::Zero(N);
    for (int i = 0; i < m; ++i) z(basis[static_cast<size_t>(i)]) = rhs(i);
    Vec x = z.head(n) - z.segment(n, n);
    return LpResult{LpStatus::Optimal, x, c.dot(x)};
}

}  // namespace bouquet
