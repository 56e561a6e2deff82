#pragma once

#include <optional>
#include <vector>

#include "bouquet/billiards.hpp"
#include "bouquet/stability.hpp"
#include "bouquet/subspace.hpp"

namespace bouquet {

// ---------------------------------------------------------------------------
// Family 1: D3-symmetric hexagon with three 2-collision loops from the center.
// Up to dilation the shape is determined by the interior angle theta at the
// three "loop" vertices, which sit at radius `scale` on the axes at angles
// 0, 2pi/3, 4pi/3.
// ---------------------------------------------------------------------------

struct HexagonFamilyParams {
    double theta = 1.3;  // radians, strictly inside (pi/3, pi/2)
    double scale = 1.0;  // distance from center to a theta-vertex
};

struct HexagonFamily {
    HexagonFamilyParams params;
    Polytope polytope;  // six edges, two per theta-vertex
    Bouquet bouquet;    // three loops, one per axis, based at the center
    StabilityCertificate certificate;
    std::vector<ValidationReport> loop_reports;
};

// Throws DomainError when theta leaves the open interval (pi/3, pi/2) and
// DegenerateGeometry when a collision point lands outside its open edge.
HexagonFamily build_hexagon(const HexagonFamilyParams& params);

// ---------------------------------------------------------------------------
// Family 2: rotated dual-simplex polytope with an n-loop bouquet at the origin.
// ---------------------------------------------------------------------------

// n unit vertices of the regular simplex in R^(n-1), centered (sum = 0),
// pairwise inner products -1/(n-1). Deterministic orientation.
std::vector<Vec> regular_simplex_vertices(int n);

// Hyperplanes in general position adapted to the simplex directions:
// Pi_i = span{x_i, ..., x_(i+n-3), v} (cyclic) for i < n-1, and the last one
// is span{x_0, ..., x_(n-1)}. Indices are 0-based; x_i lies in Pi_i for every
// i, all n meet only at the origin, and the first n-1 meet exactly in span{v}.
// DomainError when the x_i are not in general position (any n-1 must be
// linearly independent and the whole set must span a hyperplane) or when v
// lies in their span.
std::vector<Subspace> hyperplanes_from_simplex(const std::vector<Vec>& x, const Vec& v);

// Largest angle of the form angle(x_i, x_j, o) over distinct simplex vertices
// (the base angle of the isoceles central triangle); always below pi/4, which
// is what lets the rotated half-spaces keep every foreign vertex interior.
double regular_simplex_central_angles(int n);

struct SimplexFamilyParams {
    int n = 3;                      // ambient dimension, >= 3
    std::optional<double> epsilon;  // fixed loop half-angle; auto-selected if unset
};

struct SimplexFamily {
    SimplexFamilyParams params;
    double epsilon = 0.0;  // the value actually used
    double phi = 0.0;      // pi/4 + epsilon/2
    Polytope polytope;     // intersection of the 2n rotated half-spaces
    Bouquet bouquet;       // n congruent 2-collision loops based at the origin
    std::vector<Subspace> hyperplanes;  // Pi_0 .. Pi_(n-1)
    std::vector<Vec> vertices;          // lifted simplex vertices x_i in R^n
    std::vector<Vec> plane_normals;     // unit normals m_i of the Pi_i
    StabilityCertificate certificate;
    std::vector<ValidationReport> loop_reports;
};

// Builds the polytope cut out by rotating each dual-simplex facet by +-phi
// about its contact vertex, together with the n loops beta_i hitting the two
// rotated copies of facet i. With epsilon unset, starts at 0.1 and halves
// until the polytope is compact, every collision clears all foreign faces by
// more than 1e-6, all loops validate, and no two outgoing tangents are
// parallel; ConstructionFailed (naming the first failing check) if epsilon
// would drop below 1e-6, or immediately when a fixed epsilon fails.
SimplexFamily build_simplex_family(const SimplexFamilyParams& params);

}  // namespace bouquet
