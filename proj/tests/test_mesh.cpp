#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "bouquet/constructions.hpp"
#include "bouquet/errors.hpp"
#include "bouquet/mesh.hpp"

using namespace bouquet;

namespace {

// |x - c|^2 in R^3: level r^2 is the round sphere of radius r about c.
class SphereField : public ScalarField {
  public:
    explicit SphereField(Vec center) : center_(std::move(center)) {}
    int ambient_dim() const override { return 3; }
    double value(const Vec& x) const override { return (x - center_).squaredNorm(); }
    Vec gradient(const Vec& x) const override { return 2.0 * (x - center_); }
    Mat hessian(const Vec&) const override { return 2.0 * Mat::Identity(3, 3); }

  private:
    Vec center_;
};

// x^2 + y^2 - z^2: level 0 is a cone with a critical point at the origin.
class SaddleField : public ScalarField {
  public:
    int ambient_dim() const override { return 3; }
    double value(const Vec& x) const override {
        return x(0) * x(0) + x(1) * x(1) - x(2) * x(2);
    }
    Vec gradient(const Vec& x) const override {
        Vec g(3);
        g << 2.0 * x(0), 2.0 * x(1), -2.0 * x(2);
        return g;
    }
    Mat hessian(const Vec&) const override {
        Mat h = Mat::Identity(3, 3) * 2.0;
        h(2, 2) = -2.0;
        return h;
    }
};

// Dimension mismatch probe.
class PlanarField : public ScalarField {
  public:
    int ambient_dim() const override { return 2; }
    double value(const Vec& x) const override { return x.squaredNorm(); }
    Vec gradient(const Vec& x) const override { return 2.0 * x; }
    Mat hessian(const Vec&) const override { return 2.0 * Mat::Identity(2, 2); }
};

Vec vec3(double x, double y, double z) {
    Vec v(3);
    v << x, y, z;
    return v;
}

GridSpec box_grid(double half, int cells) {
    GridSpec g;
    g.lo = vec3(-half, -half, -half);
    g.hi = vec3(half, half, half);
    g.cells = cells;
    return g;
}

}  // namespace

TEST_CASE("unit sphere level set meshes as a watertight genus-zero surface") {
    SphereField field(vec3(0.0, 0.0, 0.0));
    GridSpec grid = box_grid(1.4, 24);
    SurfaceMesh mesh = extract_surface(field, 1.0, grid);

    CHECK(mesh.vertices.size() > 500);
    CHECK(mesh.triangles.size() > 1000);
    CHECK(mesh.watertight());
    CHECK(mesh.euler_characteristic() == 2);
    CHECK(mesh.genus() == 0);

    // One Newton step on an exactly quadratic field lands essentially on the
    // sphere: radii are pinned far inside the grid tolerance.
    double worst = 0.0;
    for (const Vec& v : mesh.vertices) {
        worst = std::max(worst, std::abs(v.norm() - 1.0));
    }
    CHECK(worst < 5e-4);
    CHECK(mesh.max_level_residual < 1e-3);

    // Triangles are consistently oriented with normals pointing outward.
    for (const auto& t : mesh.triangles) {
        Eigen::Vector3d p0 = mesh.vertices[static_cast<std::size_t>(t[0])].head<3>();
        Eigen::Vector3d p1 = mesh.vertices[static_cast<std::size_t>(t[1])].head<3>();
        Eigen::Vector3d p2 = mesh.vertices[static_cast<std::size_t>(t[2])].head<3>();
        Eigen::Vector3d normal = (p1 - p0).cross(p2 - p0);
        Eigen::Vector3d centroid = (p0 + p1 + p2) / 3.0;
        REQUIRE(normal.dot(centroid) > 0.0);
    }

    // Extraction is deterministic: a rerun reproduces the mesh exactly.
    SurfaceMesh again = extract_surface(field, 1.0, grid);
    REQUIRE(again.vertices.size() == mesh.vertices.size());
    REQUIRE(again.triangles.size() == mesh.triangles.size());
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        CHECK(again.vertices[i] == mesh.vertices[i]);
    }
    CHECK(std::equal(mesh.triangles.begin(), mesh.triangles.end(),
                     again.triangles.begin()));
}

TEST_CASE("off-center sphere is meshed without grid-alignment assumptions") {
    Vec center = vec3(0.2, -0.3, 0.15);
    SphereField field(center);
    GridSpec grid = box_grid(1.6, 25);
    SurfaceMesh mesh = extract_surface(field, 0.81, grid);

    CHECK(mesh.watertight());
    CHECK(mesh.genus() == 0);
    for (const Vec& v : mesh.vertices) {
        CHECK(std::abs((v - center).norm() - 0.9) < 5e-4);
    }
}

TEST_CASE("surface clipped by the grid box is detected as non-watertight") {
    SphereField field(vec3(0.0, 0.0, 0.0));
    // The sphere of radius 1 pokes through this box.
    SurfaceMesh mesh = extract_surface(field, 1.0, box_grid(0.8, 16));
    CHECK(mesh.vertices.size() > 0);
    CHECK_FALSE(mesh.watertight());
}

TEST_CASE("level through a grid saddle point is rejected as non-regular") {
    SaddleField saddle;
    // The symmetric box puts a lattice point exactly at the critical point of
    // the cone level {x^2 + y^2 = z^2}.
    CHECK_THROWS_AS(extract_surface(saddle, 0.0, box_grid(1.0, 8)), NotRegular);

    // A nearby regular level of the same field extracts fine; it is clipped
    // by the box, so it is a valid but open mesh.
    SurfaceMesh sheet = extract_surface(saddle, 0.25, box_grid(1.0, 8));
    CHECK(sheet.vertices.size() > 0);
    CHECK_FALSE(sheet.watertight());
}

TEST_CASE("field dimension and grid parameters are validated") {
    PlanarField flat;
    CHECK_THROWS_AS(extract_surface(flat, 1.0, box_grid(1.0, 8)), DomainError);

    SphereField field(vec3(0.0, 0.0, 0.0));
    GridSpec bad = box_grid(1.4, 8);
    bad.hi(1) = bad.lo(1);  // empty box
    CHECK_THROWS_AS(extract_surface(field, 1.0, bad), DomainError);
    CHECK_THROWS_AS(extract_surface(field, 1.0, box_grid(1.4, 1)), DomainError);
    CHECK_THROWS_AS(extract_surface(field, 1.0, box_grid(1.4, 300)), DomainError);
}

TEST_CASE("smoothed hexagon double meshes as a topological sphere") {
    HexagonFamily fam = build_hexagon({});
    const double sigma = 0.05;
    // Topology only needs the shell's shape, not derivative-grade quadrature,
    // so a light 5-node rule keeps the lattice sweep fast.
    QuadratureSpec quad;
    quad.nodes_per_axis = 5;
    SmoothField field(fam.polytope, sigma, quad);

    // The surface lives inside the hexagon (shrunk by a few sigma) and within
    // |h| <= sqrt(level - sigma^2) vertically.
    double extent = 0.0;
    for (const Vec& v : fam.polytope.vertices()) {
        extent = std::max(extent, v.lpNorm<Eigen::Infinity>());
    }
    const double level = 2.0 * sigma * sigma;
    GridSpec grid;
    grid.lo = vec3(-extent - sigma, -extent - sigma, -3.0 * sigma);
    grid.hi = vec3(extent + sigma, extent + sigma, 3.0 * sigma);
    grid.cells = 24;

    SurfaceMesh mesh = extract_surface(field, level, grid);
    CHECK(mesh.triangles.size() > 200);
    CHECK(mesh.watertight());
    CHECK(mesh.euler_characteristic() == 2);
    CHECK(mesh.genus() == 0);

    const double h_max = std::sqrt(level - sigma * sigma);
    for (const Vec& v : mesh.vertices) {
        // Vertices stay within the slab of reachable heights.  Horizontally
        // the smoothed shell may bulge past the polytope edges (the level is
        // above the boundary value of the convolved field) but only within a
        // sigma-sized collar.
        CHECK(std::abs(v(2)) < h_max + 0.02);
        double min_slack = std::numeric_limits<double>::infinity();
        for (int f = 0; f < fam.polytope.face_count(); ++f) {
            min_slack = std::min(min_slack, fam.polytope.face_slack(f, v.head(2)));
        }
        CHECK(min_slack > -sigma);
    }
}
