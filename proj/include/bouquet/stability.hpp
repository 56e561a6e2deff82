#pragma once

#include <string>
#include <vector>

#include "bouquet/geodesics.hpp"
#include "bouquet/subspace.hpp"

namespace bouquet {

// Geodesic loops in the double sharing one strictly interior basepoint.
struct Bouquet {
    Vec basepoint;
    std::vector<GeodesicLoop> loops;
};

// Builds a bouquet from base-chart loop trajectories, enforcing the
// structural invariants: every trajectory is a loop at the basepoint (within
// 1e-10 * scale) with an even number of collisions, so it closes in the
// double. Reflection-law validity is NOT enforced here; run validate() per
// loop to audit that, so damaged data can still be certified and reported.
Bouquet assemble_bouquet(const Polytope& P, const Vec& basepoint,
                         const std::vector<BilliardTrajectory>& loops, int start_sheet = 0);

// Sum over loops of (outgoing start tangent - incoming end tangent); its norm
// is the first-variation residual of total length under basepoint motion.
double stationarity_residual(const Bouquet& B);
bool is_stationary(const Bouquet& B, double tol = 1e-9);

// D = P pi0 - pi1 acting on ambient vectors, where P is the loop's parallel
// transport and pi0/pi1 project orthogonally to the start/end tangents.
// v in ker D exactly when v admits a parallel normal extension along the loop.
struct DefectOperator {
    Mat D;
    Mat transport;  // P
    Vec t0, t1;     // unit tangents at the basepoint (start resp. end)
};

DefectOperator defect_operator(const Polytope& P, const GeodesicLoop& loop);

// ker D for a 2-collision loop: the hyperplane orthogonal to t0 + t1.
// DegenerateGeometry if t0 + t1 vanishes (back-and-forth loop).
Subspace kernel_two_collision(const GeodesicLoop& loop);

// ker D through a 2-dim transport-invariant plane W containing both tangents:
// ker D = E_1(P restricted to W-perp) + span{t0 - det(P|W) t1}.
// NotInvariant if P does not preserve W, DomainError if the tangents leave W.
Subspace kernel_invariant_plane(const Polytope& P, const GeodesicLoop& loop, const Subspace& W);

struct StabilityCertificate {
    enum class Verdict { Stable, Unstable, Indeterminate };

    double stationarity_residual = 0.0;
    bool stationary = false;
    std::vector<Subspace> loop_kernels;
    Subspace intersection = Subspace::zero(2);
    double triviality_margin = 0.0;
    // largest |cos| between distinct outgoing tangents across the bouquet;
    // < 1 is the no-common-direction half of the closed-geodesic exclusion
    double max_tangent_cos = 0.0;
    Verdict verdict = Verdict::Indeterminate;
    int unstable_dim = 0;  // dim of the kernel intersection when Unstable
    std::string indeterminate_reason;
    double tol = 0.0;
};

// Full stability certificate: per-loop kernels (fast 2-collision path
// cross-checked against the SVD nullspace when both apply), their
// intersection with triviality margin, and the verdict
//   Stable        residual small, intersection {0}, margin > tol
//   Unstable      intersection has positive dimension
//   Indeterminate not stationary, rank ambiguity, or margin below tol.
StabilityCertificate certify(const Polytope& P, const Bouquet& B, double tol = 1e-8);

// Piecewise-linear vector field along one loop, sampled in the base chart.
// segments[j] names the trajectory segment sample j lives on, which fixes the
// parallel frame used to read the vector (the frame jumps by a reflection at
// every collision even though the field itself is continuous in the double).
struct LoopField {
    std::vector<double> times;  // 0 = s_0 < ... < s_m = 1
    std::vector<int> segments;  // non-decreasing, consistent with collision times
    std::vector<Vec> vectors;
};

// Field over a whole bouquet: one LoopField per loop, all sharing the value
// at the basepoint (each loop's first and last vector equals base_vector).
struct DiscreteField {
    Vec base_vector;
    std::vector<LoopField> loops;
};

void validate_field(const Bouquet& B, const DiscreteField& V);  // throws DomainError

// Orthonormal frames of the normal space along the loop, one per segment,
// obtained by pushing a frame of t0-perp through the face reflections.
std::vector<Mat> transported_frame(const Polytope& P, const GeodesicLoop& loop);

// Second variation of length in the parallel frame: integral of |dV_perp/ds|^2
// with the piecewise-linear interpolation integrated exactly. Always at least
// ||D V(0)||^2 for loop-closing fields.
double index_form(const Polytope& P, const GeodesicLoop& loop, const LoopField& V);

// The length-neutral extension of a kernel vector v (|| D v || <= 1e-10):
// parallel transport of the normal part plus a linearly interpolated
// tangential part. Its index form vanishes.
LoopField null_extension(const Polytope& P, const GeodesicLoop& loop, const Vec& v);

}  // namespace bouquet
