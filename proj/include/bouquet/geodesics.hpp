#pragma once

#include <optional>

#include "bouquet/billiards.hpp"

namespace bouquet {

// Billiard loop viewed in the double of the polytope: two mirror copies of X
// glued along the boundary, with the sheet flipping at every collision.
struct GeodesicLoop {
    BilliardTrajectory trajectory;  // is_loop() holds
    int start_sheet = 0;

    int end_sheet() const { return start_sheet ^ (trajectory.collision_count() & 1); }
    bool loop_in_double() const { return end_sheet() == start_sheet; }
    // closed smooth geodesic: the double path closes AND the velocity matches up
    bool closed_geodesic() const { return loop_in_double() && trajectory.is_periodic(); }

    const Vec& t0() const { return trajectory.directions.front(); }
    const Vec& t1() const { return trajectory.directions.back(); }
    double length() const { return trajectory.length; }
};

struct LiftResult {
    bool closed_in_double = false;
    int end_sheet = 0;
    // present exactly when the base trajectory is a loop with even collision
    // count, i.e. when it closes up in the double
    std::optional<GeodesicLoop> loop;
};

// Lifts a base trajectory to the double starting on the given sheet. A loop
// with an odd number of collisions ends on the other sheet and stays open.
LiftResult lift(const BilliardTrajectory& T, int start_sheet);

// Parallel transport along the lifted geodesic expressed in the base chart:
// the product dR_{F_k} ... dR_{F_1} of face reflections, applied first
// collision first. Orthogonal with determinant (-1)^k.
Mat parallel_transport(const Polytope& P, const BilliardTrajectory& T);

// Independent route to parallel_transport(T) * v: develops the trajectory by
// unfolding (validating that it straightens and that the developed endpoint
// distance equals the path length, both to 1e-10), carries v unchanged along
// the straight development, then folds back through the accumulated
// reflections one at a time. Throws NotABilliard when the development bends.
Vec transport_oracle(const Polytope& P, const BilliardTrajectory& T, const Vec& v);

}  // namespace bouquet
