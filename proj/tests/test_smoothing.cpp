#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "bouquet/smoothing.hpp"
#include "support/random.hpp"
#include "support/shapes.hpp"

using namespace bouquet;
using testsupport::equilateral_triangle;
using testsupport::random_vec;
using testsupport::uniform;
using testsupport::unit_square;

namespace {

// Analytic |x|^2: its level sets are round spheres, so curvature results have
// closed forms to pin the ScalarField plumbing against.
class QuadraticField : public ScalarField {
  public:
    explicit QuadraticField(int dim) : dim_(dim) {}
    int ambient_dim() const override { return dim_; }
    double value(const Vec& x) const override { return x.squaredNorm(); }
    Vec gradient(const Vec& x) const override { return 2.0 * x; }
    Mat hessian(const Vec& x) const override { return 2.0 * Mat::Identity(dim_, dim_); }

  private:
    int dim_;
};

Vec lift3(double x, double y, double h) {
    Vec p(3);
    p << x, y, h;
    return p;
}

bool bits_equal(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

}  // namespace

TEST_CASE("nearest-point map matches the closed form on the unit square") {
    auto sq = unit_square();
    PolytopeDistance dist(sq);
    std::mt19937_64 rng(101);
    for (int trial = 0; trial < 200; ++trial) {
        Vec q = random_vec(rng, 2, -2.0, 3.0);
        Vec p = dist.project(q);
        Vec expect(2);
        expect << std::clamp(q(0), 0.0, 1.0), std::clamp(q(1), 0.0, 1.0);
        CHECK((p - expect).norm() < 1e-12);
        CHECK(dist.squared_distance(q) == doctest::Approx((q - expect).squaredNorm()).epsilon(1e-12));
    }
}

TEST_CASE("cyclic projection agrees with the active-set projector") {
    auto tri = equilateral_triangle();
    PolytopeDistance dist(tri);
    std::mt19937_64 rng(202);
    for (int trial = 0; trial < 100; ++trial) {
        Vec q = random_vec(rng, 2, -2.0, 2.0);
        double h = uniform(rng, -1.5, 1.5);
        Vec p3(3);
        p3 << q(0), q(1), h;
        Vec proj = project_to_polytope(tri, p3);
        CHECK(proj(2) == 0.0);
        CHECK((proj.head(2) - dist.project(q)).norm() < 1e-9);
        // Projections are idempotent and never increase distance.
        CHECK(tri.contains(proj.head(2), 1e-9).kind != MembershipKind::Outside);
    }
    CHECK_THROWS_AS(project_to_polytope(tri, Vec::Zero(2)), DomainError);
}

TEST_CASE("smoothed field is exactly quadratic in the sheet coordinate") {
    SmoothField field(unit_square(), 0.1);
    CHECK(field.ambient_dim() == 3);

    // Deep inside the square the planar part contributes nothing measurable:
    // value sigma^2 + h^2, vertical second derivative exactly 2.
    Vec x = lift3(0.5, 0.5, 0.3);
    auto e = field.eval(x);
    CHECK_FALSE(e.monte_carlo);
    CHECK(e.std_error == 0.0);
    CHECK(e.value == doctest::Approx(0.01 + 0.09).epsilon(1e-8));
    CHECK(std::abs(e.hessian(2, 2) - 2.0) < 1e-10);
    CHECK(std::abs(e.gradient(2) - 2.0 * 0.3) < 1e-10);

    // The vertical axis separates exactly, so its quadratic structure holds
    // even right above an edge.
    Vec y = lift3(1.0, 0.4, -0.2);
    auto ey = field.eval(y);
    CHECK(std::abs(ey.hessian(2, 2) - 2.0) < 1e-10);
    CHECK(std::abs(ey.hessian(2, 0)) < 1e-10);
    CHECK(std::abs(ey.hessian(2, 1)) < 1e-10);
}

TEST_CASE("the two sheets of the smoothed double agree bit for bit") {
    SmoothField field(unit_square(), 0.07);
    std::mt19937_64 rng(303);
    for (int trial = 0; trial < 20; ++trial) {
        Vec q = random_vec(rng, 2, -0.5, 1.5);
        double h = uniform(rng, 0.01, 0.8);
        auto up = field.eval(lift3(q(0), q(1), h));
        auto down = field.eval(lift3(q(0), q(1), -h));
        CHECK(bits_equal(up.value, down.value));
        CHECK(bits_equal(up.gradient(0), down.gradient(0)));
        CHECK(bits_equal(up.gradient(1), down.gradient(1)));
        CHECK(bits_equal(up.gradient(2), -down.gradient(2)));
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) {
                double expect = down.hessian(a, b);
                if ((a == 2) != (b == 2)) expect = -expect;
                CHECK(bits_equal(up.hessian(a, b), expect));
            }
    }
}

// The distance field is piecewise quadratic with seams on the face-support
// lines. A point is quadrature-generic when every tensor node stays inside
// one piece; there both the value rule and the kernel-transferred derivative
// rules are exact, so finite differences must match at machine level. Points
// whose node span straddles a seam only agree up to quadrature truncation.
TEST_CASE("gradient and Hessian agree with finite differences at generic points") {
    const double sigma = 0.05;
    SmoothField field(unit_square(), sigma);
    // Widest node offset of the 9-point rule is sqrt(2)*sigma*3.19 ~ 0.226.
    const double margin = 0.24;
    auto generic_coord = [&](std::mt19937_64& rng) {
        while (true) {
            double c = uniform(rng, -1.0, 2.0);
            if (std::abs(c) > margin && std::abs(c - 1.0) > margin) return c;
        }
    };
    std::mt19937_64 rng(404);
    const double step = 1e-4;
    for (int trial = 0; trial < 10; ++trial) {
        Vec x = lift3(generic_coord(rng), generic_coord(rng), uniform(rng, -0.8, 0.8));
        auto center = field.eval(x);
        for (int a = 0; a < 3; ++a) {
            Vec xp = x, xm = x;
            xp(a) += step;
            xm(a) -= step;
            auto ep = field.eval(xp);
            auto em = field.eval(xm);
            CHECK(std::abs((ep.value - em.value) / (2.0 * step) - center.gradient(a)) < 1e-6);
            Vec hess_fd = (ep.gradient - em.gradient) / (2.0 * step);
            CHECK((hess_fd - center.hessian.col(a)).cwiseAbs().maxCoeff() < 1e-6);
        }
    }
}

TEST_CASE("midpoint convexity holds along seeded secants up to quadrature error") {
    SmoothField field(unit_square(), 0.2);
    std::mt19937_64 rng(505);
    for (int trial = 0; trial < 500; ++trial) {
        Vec a = lift3(uniform(rng, -0.8, 1.8), uniform(rng, -0.8, 1.8), uniform(rng, -1.0, 1.0));
        Vec b = lift3(uniform(rng, -0.8, 1.8), uniform(rng, -0.8, 1.8), uniform(rng, -1.0, 1.0));
        Vec mid = 0.5 * (a + b);
        double lhs = field.value(mid);
        double rhs = 0.5 * (field.value(a) + field.value(b));
        double slack = field.quadrature_error(a) + field.quadrature_error(b) + field.quadrature_error(mid);
        CHECK(lhs <= rhs + slack + 1e-12);
    }
}

TEST_CASE("Hessian above a corner approaches 2I as the width shrinks") {
    auto sq = unit_square();
    // A point straight out of the corner's normal cone: locally the squared
    // distance is exactly |p - corner|^2, so smoothing should flatten onto 2I.
    Vec x = lift3(-0.3, -0.3, 0.3);
    double prev = std::numeric_limits<double>::infinity();
    for (double sigma : {0.2, 0.1, 0.05}) {
        SmoothField field(sq, sigma);
        Mat H = field.hessian(x);
        double dev = (H - 2.0 * Mat::Identity(3, 3)).norm();
        CHECK(dev < prev);
        prev = dev;
    }
    CHECK(prev < 1e-6);
}

TEST_CASE("lifted segments over a face flatten monotonically with the width") {
    auto sq = unit_square();
    // Arc length of a lifted polyline running toward an edge, against its flat
    // shadow. The distortion is carried entirely by the skeleton's influence,
    // which dies off as sigma shrinks.
    const int samples = 9;
    double prev = std::numeric_limits<double>::infinity();
    for (double sigma : {0.2, 0.1, 0.05}) {
        SmoothField field(sq, sigma);
        double level = sigma * sigma + 0.04;
        double arc = 0.0;
        Vec last(3);
        for (int i = 0; i < samples; ++i) {
            double y = 0.2 + 0.25 * i / (samples - 1);
            Vec q(2);
            q << 0.5, y;
            double z = level_height(field, q, level);
            Vec p = lift3(0.5, y, z);
            if (i > 0) arc += (p - last).norm();
            last = p;
        }
        double distortion = arc / 0.25 - 1.0;
        CHECK(distortion >= -1e-12);
        CHECK(distortion < prev);
        prev = distortion;
    }
    CHECK(prev < 1e-8);
}

TEST_CASE("level heights over the deep interior follow the separated closed form") {
    SmoothField field(unit_square(), 0.1);
    Vec q(2);
    q << 0.5, 0.5;
    double z = level_height(field, q, 0.05);
    CHECK(z == doctest::Approx(std::sqrt(0.05 - 0.01)).epsilon(1e-8));
    CHECK_THROWS_AS(level_height(field, q, 0.005), DomainError);
    CHECK_THROWS_AS(level_height(field, Vec::Zero(3), 0.05), DomainError);
}

TEST_CASE("projective inradius reproduces the reference cones") {
    // Half-space: one facet, inradius 1.
    {
        ConeData half;
        half.apex = Vec::Zero(3);
        half.generators = {Vec::Unit(3, 0), -Vec::Unit(3, 0), Vec::Unit(3, 1), -Vec::Unit(3, 1),
                           Vec::Unit(3, 2)};
        CHECK(projective_inradius(half) == doctest::Approx(1.0).epsilon(1e-9));
    }
    // Orthants: 1/sqrt(d).
    {
        ConeData orthant2;
        orthant2.apex = Vec::Zero(2);
        orthant2.generators = {Vec::Unit(2, 0), Vec::Unit(2, 1)};
        CHECK(projective_inradius(orthant2) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-9));

        ConeData orthant3;
        orthant3.apex = Vec::Zero(3);
        orthant3.generators = {Vec::Unit(3, 0), Vec::Unit(3, 1), Vec::Unit(3, 2)};
        CHECK(projective_inradius(orthant3) == doctest::Approx(1.0 / std::sqrt(3.0)).epsilon(1e-9));
    }
    // Quadrant x R, the square corner's cone in the lifted space.
    {
        ConeData quad;
        quad.apex = Vec::Zero(3);
        quad.generators = {-Vec::Unit(3, 0), -Vec::Unit(3, 1), Vec::Unit(3, 2), -Vec::Unit(3, 2)};
        CHECK(projective_inradius(quad) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-9));
    }
}

TEST_CASE("projective inradius has the wedge closed form and is rotation invariant") {
    std::mt19937_64 rng(606);
    for (double gamma : {0.3, 0.7, 1.2}) {
        // Planar wedge of half-opening gamma: the inscribed ball touches both
        // sides, so rho = sin(gamma); a free vertical axis changes nothing.
        ConeData wedge2;
        wedge2.apex = Vec::Zero(2);
        Vec lo(2), hi(2);
        lo << std::cos(-gamma), std::sin(-gamma);
        hi << std::cos(gamma), std::sin(gamma);
        wedge2.generators = {lo, hi};
        CHECK(projective_inradius(wedge2) == doctest::Approx(std::sin(gamma)).epsilon(1e-9));

        ConeData wedge3;
        wedge3.apex = Vec::Zero(3);
        Vec lo3 = Vec::Zero(3), hi3 = Vec::Zero(3);
        lo3.head(2) = lo;
        hi3.head(2) = hi;
        wedge3.generators = {lo3, hi3, Vec::Unit(3, 2), -Vec::Unit(3, 2)};
        CHECK(projective_inradius(wedge3) == doctest::Approx(std::sin(gamma)).epsilon(1e-9));

        // Rotating and rescaling the generators is invisible to the ratio.
        Mat Q = testsupport::random_orthogonal(rng, 3);
        ConeData turned;
        turned.apex = Vec::Zero(3);
        for (const Vec& g : wedge3.generators)
            turned.generators.push_back(Vec(uniform(rng, 0.5, 3.0) * (Q * g)));
        CHECK(projective_inradius(turned) == doctest::Approx(std::sin(gamma)).epsilon(1e-8));
    }
}

TEST_CASE("degenerate cones are rejected") {
    ConeData flat;
    flat.apex = Vec::Zero(3);
    flat.generators = {Vec::Unit(3, 0), Vec::Unit(3, 1)};
    CHECK_THROWS_AS(projective_inradius(flat), DomainError);  // does not span

    ConeData everything;
    everything.apex = Vec::Zero(2);
    everything.generators = {Vec::Unit(2, 0), -Vec::Unit(2, 0), Vec::Unit(2, 1), -Vec::Unit(2, 1)};
    CHECK_THROWS_AS(projective_inradius(everything), DomainError);  // no boundary

    ConeData empty;
    empty.apex = Vec::Zero(3);
    CHECK_THROWS_AS(projective_inradius(empty), DomainError);
}

TEST_CASE("vertex cones pick up the active normals and the vertical line") {
    auto sq = unit_square();
    Vec corner = Vec::Zero(2);
    ConeData cone = vertex_cone(sq, corner);
    CHECK(cone.apex.size() == 3);
    CHECK(cone.generators.size() == 4);  // two face normals + both vertical rays
    CHECK(projective_inradius(cone) == doctest::Approx(std::sqrt(0.5)).epsilon(1e-9));

    Vec edge_mid(2);
    edge_mid << 0.5, 0.0;
    CHECK_THROWS_AS(vertex_cone(sq, edge_mid), DomainError);
    Vec outside(2);
    outside << 3.0, 3.0;
    CHECK_THROWS_AS(vertex_cone(sq, outside), DomainError);
}

TEST_CASE("strong convexity certificate matches its closed form and stays a bound") {
    auto sq = unit_square();
    SmoothField field(sq, 0.2);
    ConeData cone = vertex_cone(sq, Vec::Zero(2));
    auto cert = strong_convexity_certificate(field, cone, 2.0);
    CHECK(cert.rho == doctest::Approx(std::sqrt(0.5)).epsilon(1e-9));
    CHECK(cert.ball_radius == 2.0);
    CHECK(cert.sigma == 0.2);

    const double s = 3.0 / cert.rho + cone.apex.norm();
    const double theta = std::pow(2.0 * M_PI * 0.04, -1.5) * std::exp(-s * s / 0.08);
    const double omega = 4.0 * M_PI / 3.0;
    CHECK(cert.kappa_hat == doctest::Approx(2.0 * omega * theta).epsilon(1e-12));
    CHECK(cert.kappa_hat > 0.0);

    // Larger balls certify less.
    auto wider = strong_convexity_certificate(field, cone, 3.0);
    CHECK(wider.kappa_hat < cert.kappa_hat);

    // At sigma = 0.05 the bound underflows to zero: still a valid, if
    // vacuous, lower bound; the field's actual Hessian floor is near 2.
    SmoothField sharp(sq, 0.05);
    auto tiny = strong_convexity_certificate(sharp, cone, 2.0);
    CHECK(tiny.kappa_hat >= 0.0);
    CHECK(std::isfinite(tiny.kappa_hat));

    CHECK_THROWS_AS(strong_convexity_certificate(field, cone, -1.0), DomainError);
}

TEST_CASE("level-set curvature of the analytic quadratic is one over radius squared") {
    QuadraticField ball(3);
    Vec x(3);
    x << 0.0, 0.0, 1.7;
    Vec u = Vec::Unit(3, 0);
    Vec v = Vec::Unit(3, 1);
    CHECK(level_surface_curvature(ball, x, u, v) == doctest::Approx(1.0 / (1.7 * 1.7)).epsilon(1e-12));

    CHECK_THROWS_AS(level_surface_curvature(ball, Vec::Zero(3), u, v), SingularPoint);
    CHECK_THROWS_AS(level_surface_curvature(ball, x, Vec(2.0 * u), v), DomainError);
    CHECK_THROWS_AS(level_surface_curvature(ball, x, Vec::Unit(3, 2), v), DomainError);
}

TEST_CASE("smoothed square double curves positively near a corner") {
    auto sq = unit_square();
    SmoothField field(sq, 0.1);
    // Above the corner the level surface wraps a genuinely curved cap.
    Vec q(2);
    q << -0.02, -0.02;
    double level = 0.01 + 0.05;
    double z = level_height(field, q, level);
    Vec x = lift3(q(0), q(1), z);
    Eigen::Vector3d g = field.gradient(x);
    // Orthonormal tangent frame from the gradient.
    Eigen::Vector3d u = g.normalized().unitOrthogonal();
    Eigen::Vector3d v = g.normalized().cross(u);
    double K = level_surface_curvature(field, x, Vec(u), Vec(v));
    CHECK(K > 0.0);
}

TEST_CASE("node-sum derivatives differentiate the value exactly, the kernel "
          "route only in the limit") {
    // Two estimator families share the quadrature nodes: differentiating
    // under the node sum (what eval reports) and transferring derivatives
    // onto the Gaussian kernel (kernel_estimate). They agree in the
    // exact-integration limit; at finite node counts only the former is
    // consistent with the value sum, which the level-set walkers rely on.
    auto sq = unit_square();
    SmoothField coarse(sq, 0.05, {5});

    auto fd_gradient = [](const SmoothField& f, const Vec& x) {
        const double h = 1e-6;
        Vec g(x.size());
        for (int a = 0; a < x.size(); ++a) {
            Vec xp = x, xm = x;
            xp(a) += h;
            xm(a) -= h;
            g(a) = (f.value(xp) - f.value(xm)) / (2.0 * h);
        }
        return g;
    };

    // Near the fold rim the integrand has a kink inside the kernel window,
    // so the kernel-transferred gradient carries visible truncation error
    // while the node-sum gradient still matches the value to rounding.
    Vec rim = lift3(0.45, 0.1, 0.012);
    Vec fd = fd_gradient(coarse, rim);
    Vec node_sum = coarse.gradient(rim);
    Vec kernel = coarse.kernel_estimate(rim).gradient;
    CHECK((node_sum - fd).norm() < 1e-8 * fd.norm());
    CHECK((kernel - node_sum).norm() > 1e-6 * fd.norm());
    CHECK((kernel - node_sum).norm() < 5e-2 * fd.norm());

    // Deep inside a face the integrand is a polynomial over the window and
    // both routes integrate it exactly.
    Vec face = lift3(0.5, 0.25, 0.045);
    Vec node_face = coarse.gradient(face);
    Vec kern_face = coarse.kernel_estimate(face).gradient;
    CHECK((node_face - kern_face).norm() < 1e-9);
    CHECK(std::abs(coarse.kernel_estimate(face).value -
                   coarse.value(face)) < 1e-15);
}

TEST_CASE("Monte Carlo fallback is deterministic and statistically sane") {
    // A 4-dimensional box pushes the lifted ambient past the tensor-rule
    // cutoff, exercising the seeded sampling path.
    std::vector<HalfSpace> hs;
    for (int i = 0; i < 4; ++i) {
        hs.push_back({Vec::Unit(4, i), 1.0});
        hs.push_back({Vec(-Vec::Unit(4, i)), 0.0});
    }
    Polytope box(4, hs);
    QuadratureSpec quad;
    quad.mc_samples = 2000;
    quad.seed = 77;
    SmoothField field(box, 0.1, quad);
    CHECK(field.ambient_dim() == 5);

    Vec x(5);
    x << 0.5, 0.5, 0.5, 0.5, 0.3;
    auto a = field.eval(x);
    auto b = field.eval(x);
    CHECK(a.monte_carlo);
    CHECK(a.std_error > 0.0);
    CHECK(bits_equal(a.value, b.value));
    CHECK((a.gradient - b.gradient).norm() == 0.0);
    CHECK(std::abs(a.value - (0.01 + 0.09)) < 5.0 * a.std_error + 1e-3);
    CHECK(field.quadrature_error(x) == doctest::Approx(3.0 * a.std_error));
}

TEST_CASE("construction guards reject bad smoothing parameters") {
    auto sq = unit_square();
    CHECK_THROWS_AS(SmoothField(sq, 0.0), DomainError);
    CHECK_THROWS_AS(SmoothField(sq, -0.1), DomainError);
    QuadratureSpec quad;
    quad.nodes_per_axis = 2;
    CHECK_THROWS_AS(SmoothField(sq, 0.1, quad), DomainError);

    std::vector<HalfSpace> open = {{Vec::Unit(2, 0), 1.0}, {Vec::Unit(2, 1), 1.0}};
    Polytope wedge(2, open);
    CHECK_THROWS_AS(PolytopeDistance{wedge}, NotCompact);
    SmoothField field(sq, 0.1);
    CHECK_THROWS_AS(field.eval(Vec::Zero(2)), DomainError);
}
