#pragma once

#include <array>
#include <vector>

#include "bouquet/smoothing.hpp"

namespace bouquet {

// Triangle mesh produced by level-set extraction in ambient R^3.  Vertices
// are welded: triangles meeting across a grid cell share vertex indices, so
// topological checks (watertightness, Euler characteristic) are structural
// rather than tolerance-based.
struct SurfaceMesh {
    std::vector<Vec> vertices;
    std::vector<std::array<int, 3>> triangles;

    // Largest |field - level| over the vertices, measured after projection.
    double max_level_residual = 0.0;

    // True when every edge is shared by exactly two triangles.
    bool watertight() const;

    // V - E + F.  Meaningful for a watertight mesh.
    int euler_characteristic() const;

    // Genus of a closed connected surface: (2 - chi) / 2.
    int genus() const;
};

// Axis-aligned sampling box split into `cells` cubes per axis.
struct GridSpec {
    Vec lo;
    Vec hi;
    int cells = 48;
};

// Extracts the level set {field = level} as a triangle mesh on a uniform
// grid.  Each grid cube is split into six tetrahedra around its main
// diagonal (every cube identically, so neighbouring cubes agree on the
// shared face diagonals and the mesh closes up); within a tetrahedron the
// level set is a triangle or a quad, which has no ambiguous configurations.
// Each emitted vertex gets one Newton step toward the level set along the
// field gradient.
//
// Throws DomainError unless the field is three-dimensional and the grid is
// sane, and NotRegular when a crossing cell contains a near-zero gradient
// (the level is not regular at the resolution of the grid).
SurfaceMesh extract_surface(const ScalarField& field, double level,
                            const GridSpec& grid);

}  // namespace bouquet
