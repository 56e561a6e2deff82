#pragma once

#include <vector>

#include "bouquet/polytope.hpp"

// Stock polytopes used across the suites.
namespace testsupport {

inline bouquet::Polytope make_box(const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
    using bouquet::HalfSpace;
    const int n = static_cast<int>(lo.size());
    std::vector<HalfSpace> hs;
    for (int i = 0; i < n; ++i) {
        hs.push_back({Eigen::VectorXd::Unit(n, i), hi(i)});
        hs.push_back({-Eigen::VectorXd::Unit(n, i), -lo(i)});
    }
    return bouquet::Polytope(n, hs);
}

inline bouquet::Polytope unit_square() {
    Eigen::Vector2d lo(0.0, 0.0), hi(1.0, 1.0);
    return make_box(lo, hi);
}

inline bouquet::Polytope unit_cube3() {
    Eigen::Vector3d lo(0.0, 0.0, 0.0), hi(1.0, 1.0, 1.0);
    return make_box(lo, hi);
}

// Equilateral triangle with vertices on the unit circle (one at angle pi/2).
inline bouquet::Polytope equilateral_triangle() {
    using bouquet::HalfSpace;
    std::vector<HalfSpace> hs;
    for (int k = 0; k < 3; ++k) {
        double ang = -M_PI / 2.0 + 2.0 * M_PI * k / 3.0;
        Eigen::Vector2d n(std::cos(ang), std::sin(ang));
        hs.push_back({n, 0.5});  // inradius of a unit-circumradius equilateral triangle
    }
    return bouquet::Polytope(2, hs);
}

}  // namespace testsupport
