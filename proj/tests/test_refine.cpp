#include <doctest.h>

#include <cmath>

#include "bouquet/constructions.hpp"
#include "bouquet/refine.hpp"
#include "bouquet/smoothing.hpp"

using namespace bouquet;

namespace {

// Offline integration of the fold-model balance (independent quadrature code
// path, 128-point adaptive Simpson over the same two integrals).
constexpr double kBalancedConstant = 0.33988373609274625;

QuadratureSpec fast_quadrature() {
    QuadratureSpec q;
    q.nodes_per_axis = 5;
    return q;
}

}  // namespace

TEST_CASE("balanced level matches the fold-model constant and scales by sigma^2") {
    CHECK(std::abs(balanced_level(1.0) - (1.0 + kBalancedConstant)) < 1e-5);
    double ratio = balanced_level(0.1) / balanced_level(0.05);
    CHECK(ratio == doctest::Approx(4.0).epsilon(1e-14));
    CHECK_THROWS_AS(balanced_level(0.0), DomainError);
    CHECK_THROWS_AS(balanced_level(-1.0), DomainError);
    CHECK_THROWS_AS(balanced_level(std::nan("")), DomainError);
}

TEST_CASE("flat refinement leaves a certified hexagon bouquet where it is") {
    HexagonFamily fam = build_hexagon({1.3, 1.0});
    BrokenBouquet r = refine_flat(fam.polytope, fam.bouquet, {});

    // The bouquet is already a geodesic bouquet: the chain problem is solved
    // by the sampled points themselves, up to rounding.
    CHECK(std::abs(r.length - r.reference_length) <
          1e-8 * r.reference_length);
    CHECK(r.projected_gradient_norm < 1e-8 * r.length);
    CHECK((r.basepoint - fam.bouquet.basepoint).norm() < 1e-8);
    CHECK(r.max_disk_activation < 1e-6);

    // Base moves in the plane (2 dof), each of the 3x7 chain vertices along
    // its disk (1 dof): 23 curvature directions, all positive.
    CHECK(r.spectrum.size() == 23);
    CHECK(r.lambda_min > 0.0);
    CHECK(r.lambda_min > 10.0 * r.noise_floor);
    CHECK(r.stable);
    CHECK(r.stable == (fam.certificate.verdict ==
                       StabilityCertificate::Verdict::Stable));
    CHECK(r.fine_loops.empty());
    CHECK(r.min_pair_distance > 0.05);
}

TEST_CASE("flat refinement of the rotated-simplex bouquet in R^3") {
    SimplexFamily fam = build_simplex_family({3, 0.1});
    BrokenBouquet r = refine_flat(fam.polytope, fam.bouquet, {});

    CHECK(std::abs(r.length - r.reference_length) <
          1e-8 * r.reference_length);
    CHECK(r.projected_gradient_norm < 1e-8 * r.length);
    // 3 base dof + 3 loops x 7 vertices x 2 disk dof.
    CHECK(r.spectrum.size() == 45);
    CHECK(r.lambda_min > 0.0);
    CHECK(r.stable);
}

TEST_CASE("refinement guards reject malformed requests") {
    HexagonFamily fam = build_hexagon({1.3, 1.0});

    RefineOptions opts;
    opts.segments_per_loop = 7;
    CHECK_THROWS_AS(refine_flat(fam.polytope, fam.bouquet, opts), DomainError);

    opts = {};
    opts.disk_radius = -0.1;
    CHECK_THROWS_AS(refine_flat(fam.polytope, fam.bouquet, opts), DomainError);

    opts = {};
    opts.max_iterations = 0;
    CHECK_THROWS_AS(refine_flat(fam.polytope, fam.bouquet, opts), DomainError);

    opts = {};
    opts.gradient_tol = 0.0;
    CHECK_THROWS_AS(refine_flat(fam.polytope, fam.bouquet, opts), DomainError);

    opts = {};
    opts.arc_spacing = -1.0;
    CHECK_THROWS_AS(refine_flat(fam.polytope, fam.bouquet, opts), DomainError);

    CHECK_THROWS_AS(refine_flat(fam.polytope, Bouquet{}, {}), DomainError);

    SmoothField field(fam.polytope, 0.05, fast_quadrature());
    CHECK_THROWS_AS(refine_bouquet(field, 0.0, fam.bouquet, {}), DomainError);
    CHECK_THROWS_AS(refine_bouquet(field, -1.0, fam.bouquet, {}), DomainError);

    // Field one dimension too high for the bouquet's base chart.
    SimplexFamily sf = build_simplex_family({3, 0.1});
    SmoothField wide(sf.polytope, 0.05, fast_quadrature());
    CHECK_THROWS_AS(refine_bouquet(wide, balanced_level(0.05), fam.bouquet, {}),
                    DomainError);
}

TEST_CASE("smoothed hexagon refinement certifies a nearby stable bouquet") {
    HexagonFamily fam = build_hexagon({1.3, 1.0});
    const double sigma = 0.05;
    SmoothField field(fam.polytope, sigma, fast_quadrature());
    const double level = balanced_level(sigma);

    BrokenBouquet r = refine_bouquet(field, level, fam.bouquet, {});

    // The balanced level is chosen so each fold crossing inserts zero extra
    // width to leading order: the refined length tracks the flat double's.
    CHECK(std::abs(r.length - r.reference_length) < 0.01 * r.reference_length);
    CHECK(r.projected_gradient_norm < 1e-8 * r.length);

    // Same model dimensions as the flat chart, one ambient dimension up:
    // base on the surface (2 dof), chain vertices on disk-surface curves
    // (1 dof each).
    CHECK(r.spectrum.size() == 23);
    CHECK(r.lambda_min > 0.0);
    CHECK(r.lambda_min > 10.0 * r.noise_floor);
    CHECK(r.stable);

    // Independent second-variation route: Schur complement of the analytic
    // full-chain Hessian onto the model coordinates.
    REQUIRE(r.spectrum_analytic.size() == r.spectrum.size());
    double scale = std::abs(r.spectrum.back());
    for (std::size_t i = 0; i < r.spectrum.size(); ++i) {
        CHECK(std::abs(r.spectrum[i] - r.spectrum_analytic[i]) < 0.02 * scale);
    }

    // Model shape: three loops of 7 chain vertices plus fine polylines.
    REQUIRE(r.loops.size() == 3);
    REQUIRE(r.fine_loops.size() == 3);
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(r.loops[j].size() == 7);
        CHECK(r.fine_loops[j].size() >= r.loops[j].size());
    }
    CHECK(r.max_disk_activation < 1.0);
    CHECK(r.min_pair_distance > 0.0);

    // Every reported point sits on the level surface.
    CHECK(std::abs(field.value(r.basepoint) - level) < 1e-11);
    for (const auto& loop : r.fine_loops) {
        for (const Vec& x : loop) {
            CHECK(std::abs(field.value(x) - level) < 1e-11);
        }
    }

    // The basepoint stays over the flat basepoint within a few widths.
    CHECK((r.basepoint.head(2) - fam.bouquet.basepoint).norm() < 3.0 * sigma);
}

TEST_CASE("tiny trust disks abort the smoothed refinement") {
    HexagonFamily fam = build_hexagon({1.3, 1.0});
    SmoothField field(fam.polytope, 0.05, fast_quadrature());
    RefineOptions opts;
    opts.disk_radius = 1e-7;
    CHECK_THROWS_AS(
        refine_bouquet(field, balanced_level(0.05), fam.bouquet, opts),
        EscapedDisks);
}

TEST_CASE("iteration cap surfaces as a convergence failure") {
    HexagonFamily fam = build_hexagon({1.3, 1.0});
    SmoothField field(fam.polytope, 0.05, fast_quadrature());
    RefineOptions opts;
    opts.max_iterations = 1;
    CHECK_THROWS_AS(
        refine_bouquet(field, balanced_level(0.05), fam.bouquet, opts),
        NoConvergence);
}
