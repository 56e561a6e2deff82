#pragma once

#include <vector>

#include "bouquet/smoothing.hpp"
#include "bouquet/stability.hpp"

namespace bouquet {

// Level value at which geodesics of the smoothed double match the flat
// double's lengths: crossing the smoothed fold neither cuts the corner nor
// adds height.  Computed from the half-space model — the fold over a single
// face is a 1D profile half_width(x) = sigma * sqrt(c^2 - psi(x/sigma)) with
// psi the smoothed squared-distance of a half-line, and c^2 is chosen so the
// arc length across the fold equals the flat crossing length.  The constant
// is scale-free, so balanced_level(sigma) = sigma^2 * (1 + c*^2).
double balanced_level(double sigma);

struct RefineOptions {
    int segments_per_loop = 8;  // arcs per loop (chain has m-1 interior vertices)
    double disk_radius = 0.0;   // 0 = auto: quarter of the shortest chain arc
    int max_iterations = 5000;
    double gradient_tol = 1e-8;  // stop when |proj grad| < tol * total length

    // Spacing of the polyline that represents each geodesic arc on a level
    // surface (ignored by the flat chart, whose geodesics are straight).
    // Must resolve the fold: a few points per smoothing width.
    // 0 = auto: shortest arc / 24.
    double arc_spacing = 0.0;
};

// A bouquet of broken geodesics: chains of geodesic arcs with a common
// basepoint, each interior chain vertex pinned to a small disk transverse to
// its loop, together with the second-variation data of the total length over
// that constrained configuration space.
struct BrokenBouquet {
    Vec basepoint;
    std::vector<std::vector<Vec>> loops;  // interior chain vertices per loop

    // On a level surface each arc is carried by a fine polyline; these are
    // the full interior sequences (chain vertices and arc points, in order).
    // Empty for the flat chart, where arcs are straight.
    std::vector<std::vector<Vec>> fine_loops;

    double length = 0.0;            // total chain length at the solution
    double reference_length = 0.0;  // total length of the input bouquet
    double projected_gradient_norm = 0.0;
    int iterations = 0;

    // Reduced Hessian of the total chain length in the disk/surface
    // coordinates of the chain vertices, by central finite differences.
    std::vector<double> spectrum;  // ascending
    double lambda_min = 0.0;
    double noise_floor = 0.0;  // finite-difference noise estimate
    bool stable = false;       // lambda_min > 0 with 10x separation from noise

    // Independent route to the same spectrum on a level surface: Schur
    // complement of the analytic second variation of the fine chain onto the
    // chain-vertex block.  Empty for the flat chart.
    std::vector<double> spectrum_analytic;

    // Audits, recorded not enforced: smallest distance between two distinct
    // chain vertices (injectivity of the transfer) and the largest fraction
    // of a disk radius any vertex actually used.
    double min_pair_distance = 0.0;
    double max_disk_activation = 0.0;
};

// Shortens the bouquet inside the exact flat chart of the polytope double:
// each loop is developed through its reflection sequence into a straight
// chain whose far endpoint is the reflected copy of the basepoint, interior
// vertices slide in hyperplane disks orthogonal to the loop, the basepoint
// is free.  A valid bouquet is already stationary, so this recovers the
// input and reports the finite-dimensional second variation that the flat
// stability certificate predicts.
BrokenBouquet refine_flat(const Polytope& P, const Bouquet& B,
                          const RefineOptions& opts = {});

// Transfers the bouquet onto the level surface {field = level} (sheet-signed
// closest-point transfer of uniformly spaced samples), then minimizes the
// total chain length — each arc a surface polyline, chain vertices confined
// to surface ∩ disk, basepoint free on the surface — and reports the refined
// chains, the reduced Hessian spectrum over the chain-vertex constraint
// manifold, and the stability oracle.
//
// Throws DomainError on bad parameters, NoConvergence if the descent or a
// surface projection stalls, EscapedDisks if a chain vertex reaches its disk
// rim (disk radius too small, or the surface too far from the flat double).
BrokenBouquet refine_bouquet(const ScalarField& field, double level,
                             const Bouquet& B, const RefineOptions& opts = {});

}  // namespace bouquet
