#pragma once

#include <utility>
#include <vector>

#include "bouquet/billiards.hpp"
#include "bouquet/polytope.hpp"

// Independent reference computations the implementation is checked against.
namespace testsupport {

struct UnfoldedPath {
    std::vector<Eigen::VectorXd> points;  // reflected copies; collinear for a billiard
    Eigen::MatrixXd fold_linear;          // linear part of the final unfolding isometry
    double collinearity_residual;         // worst distance of a point from the straight line
};

// Develops the trajectory by reflecting the tail across each hit face in turn.
// For a genuine billiard the developed points lie on one straight line and the
// endpoint distance equals the path length.
inline UnfoldedPath unfold(const bouquet::Polytope& P, const bouquet::BilliardTrajectory& T) {
    using Eigen::MatrixXd;
    using Eigen::VectorXd;
    const int n = P.dim();
    MatrixXd L = MatrixXd::Identity(n, n);
    VectorXd b = VectorXd::Zero(n);

    UnfoldedPath out;
    out.points.push_back(T.points[0]);
    for (size_t i = 1; i < T.points.size(); ++i) {
        out.points.push_back(L * T.points[i] + b);
        if (i <= T.faces.size()) {
            const auto& h = P.halfspaces()[static_cast<size_t>(T.faces[i - 1])];
            MatrixXd lr = MatrixXd::Identity(n, n) - 2.0 * h.normal * h.normal.transpose();
            VectorXd br = 2.0 * h.offset * h.normal;
            b = L * br + b;  // compose current map with the reflection on the right
            L = L * lr;
        }
    }
    out.fold_linear = L;

    VectorXd u = (out.points.back() - out.points.front()).normalized();
    out.collinearity_residual = 0.0;
    for (const auto& p : out.points) {
        VectorXd d = p - out.points.front();
        double res = (d - u.dot(d) * u).norm();
        out.collinearity_residual = std::max(out.collinearity_residual, res);
    }
    return out;
}

}  // namespace testsupport
