#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bouquet/polytope.hpp"

namespace bouquet {

// Piecewise-linear billiard path: points x_0 .. x_{k+1}, faces F_1 .. F_k
// where x_{i} for 1 <= i <= k is the i-th collision and lies on face F_i.
// Directions are unit vectors per segment; the path is traversed at unit speed.
struct BilliardTrajectory {
    std::vector<Vec> points;
    std::vector<int> faces;
    bool proper = true;  // every collision lay in a face interior when produced

    std::vector<Vec> directions;  // size points.size()-1, recomputed from points
    double length = 0.0;

    int collision_count() const { return static_cast<int>(faces.size()); }
    const Vec& start() const { return points.front(); }
    const Vec& end() const { return points.back(); }

    bool is_loop(double tol = 1e-9) const;
    bool is_periodic(double tol = 1e-9) const;  // loop and first direction == last

    // Fills directions/length from points; throws DomainError on a zero segment.
    void recompute_derived();
};

struct ShootOptions {
    // stop after exactly this path length, possibly mid-segment; collisions
    // before the stop are still recorded
    std::optional<double> stop_time;
    // distance past the final collision (default: half the previous segment,
    // always capped to stay strictly interior)
    std::optional<double> post_roll;
};

// Shoot a ray from a strictly interior point with the billiard reflection law
// "direction after collision i = reflect_dir(F_i, direction before)".
// Throws SingularHit when a hit lands on the (n-2)-skeleton (two or more
// faces active within 1e-9 * scale), Escape when an unbounded polytope lets
// the ray run forever, DomainError on bad start/direction.
BilliardTrajectory shoot(const Polytope& P, const Vec& start, const Vec& dir,
                         int max_collisions, const ShootOptions& opts = {});

struct ValidationReport {
    bool valid = true;                    // on-hyperplane + reflection law + containment
    bool proper = true;                   // collisions avoid the skeleton
    bool loop = false;
    bool periodic = false;
    double max_reflection_residual = 0.0; // ||u_i - dR(u_{i-1})|| worst case
    double max_on_face_residual = 0.0;    // |slack| of collision vs its own face
    double min_face_interior_slack = 0.0; // collision margin against the other faces
    std::vector<std::string> failures;
};

// Re-derives every invariant of T against P at tolerance tol and reports all
// residuals; never throws on bad data, only on dimension mismatch.
ValidationReport validate(const Polytope& P, const BilliardTrajectory& T, double tol = 1e-9);

// Assembles base -> collisions... -> base, checks the reflection law at
// tolerance 1e-9 (NotABilliard on failure) and that collisions sit on their
// claimed faces (DomainError otherwise).
BilliardTrajectory loop_from_points(const Polytope& P, const Vec& base,
                                    const std::vector<Vec>& collisions,
                                    const std::vector<int>& faces);

}  // namespace bouquet
