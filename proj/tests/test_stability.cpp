#include <cmath>

#include "bouquet/billiards.hpp"
#include "bouquet/errors.hpp"
#include "bouquet/stability.hpp"
#include "doctest.h"
#include "support/random.hpp"
#include "support/shapes.hpp"

using namespace bouquet;

namespace {

// Symmetric wedge {x : (cos a, +-sin a) . x <= 1} in the plane.
Polytope make_wedge2(double alpha) {
    Vec up(2), dn(2);
    up << std::cos(alpha), std::sin(alpha);
    dn << std::cos(alpha), -std::sin(alpha);
    return Polytope(2, {{up, 1.0}, {dn, 1.0}});
}

// The axis-symmetric two-collision loop from (px, 0): reflect the basepoint
// across the upper wall, drop vertically onto the wall to get the collision,
// mirror it for the second one.
BilliardTrajectory wedge_loop(const Polytope& W, double alpha, double px) {
    double c = std::cos(alpha), s = std::sin(alpha);
    Vec p(2);
    p << px, 0.0;
    double slack = 1.0 - c * px;
    double sx = px + 2.0 * slack * c;  // x of the reflected basepoint
    double sy = (1.0 - c * sx) / s;
    Vec S(2), Q(2);
    S << sx, sy;
    Q << sx, -sy;
    return loop_from_points(W, p, {S, Q}, {0, 1});
}

GeodesicLoop as_loop(const BilliardTrajectory& T) { return *lift(T, 0).loop; }

Vec vec2(double x, double y) {
    Vec v(2);
    v << x, y;
    return v;
}

Vec vec3(double x, double y, double z) {
    Vec v(3);
    v << x, y, z;
    return v;
}

}  // namespace

TEST_CASE("two-collision wedge loop: all kernel routes agree and D has rank one") {
    const double alpha = 50.0 * M_PI / 180.0;
    Polytope W = make_wedge2(alpha);
    BilliardTrajectory T = wedge_loop(W, alpha, 0.3);
    GeodesicLoop loop = as_loop(T);
    REQUIRE(loop.loop_in_double());

    DefectOperator op = defect_operator(W, loop);
    // the loop is symmetric across the x-axis, so e_x is length-neutral
    CHECK((op.D * vec2(1, 0)).norm() < 1e-12);

    Eigen::JacobiSVD<Mat> svd(op.D);
    int rank = 0;
    for (Eigen::Index i = 0; i < svd.singularValues().size(); ++i)
        if (svd.singularValues()(i) > 1e-10 * svd.singularValues()(0)) ++rank;
    CHECK(rank == 1);

    Subspace fast = kernel_two_collision(loop);
    Subspace svd_ker = nullspace(op.D).kernel;
    Subspace plane_ker = kernel_invariant_plane(W, loop, Subspace(Mat::Identity(2, 2)));
    CHECK(fast.dim() == 1);
    CHECK(subspace_equal(fast, Subspace(vec2(1, 0))));
    CHECK(subspace_equal(fast, svd_ker));
    CHECK(subspace_equal(fast, plane_ker));

    // transport carries the start tangent to the end tangent
    CHECK((op.transport * op.t0 - op.t1).norm() < 1e-12);
}

TEST_CASE("invariant-plane kernel route in three dimensions") {
    const double alpha = 50.0 * M_PI / 180.0;
    double c = std::cos(alpha), s = std::sin(alpha);
    Polytope W(3, {{vec3(c, s, 0), 1.0},
                   {vec3(c, -s, 0), 1.0},
                   {vec3(0, 0, 1), 1.0},
                   {vec3(0, 0, -1), 1.0}});

    BilliardTrajectory flat = wedge_loop(make_wedge2(alpha), alpha, 0.3);
    std::vector<Vec> cols;
    for (int i = 1; i <= 2; ++i)
        cols.push_back(vec3(flat.points[i](0), flat.points[i](1), 0.0));
    GeodesicLoop loop = as_loop(loop_from_points(W, vec3(0.3, 0, 0), cols, {0, 1}));

    Subspace xy = Subspace::span(Mat::Identity(3, 3).leftCols(2));
    Subspace fast = kernel_two_collision(loop);
    Subspace svd_ker = nullspace(defect_operator(W, loop).D).kernel;
    Subspace plane_ker = kernel_invariant_plane(W, loop, xy);

    CHECK(fast.dim() == 2);  // hyperplane orthogonal to t0 + t1
    CHECK(subspace_equal(fast, svd_ker));
    CHECK(subspace_equal(fast, plane_ker));
    CHECK(fast.contains(vec3(0, 0, 1)));
    CHECK(fast.contains(vec3(1, 0, 0)));

    // a plane the transport does not preserve is rejected
    Mat xz(3, 2);
    xz.col(0) = vec3(1, 0, 0);
    xz.col(1) = vec3(0, 0, 1);
    CHECK_THROWS_AS(kernel_invariant_plane(W, loop, Subspace(xz)), NotInvariant);

    // vertical bounce between the z-caps: xy-plane is transport-invariant but
    // the tangents point out of it, and the loop is collinear
    GeodesicLoop vertical = as_loop(
        loop_from_points(W, vec3(0, 0, 0), {vec3(0, 0, 1), vec3(0, 0, -1)}, {2, 3}));
    CHECK_THROWS_AS(kernel_invariant_plane(W, vertical, xy), DomainError);
    CHECK_THROWS_AS(kernel_two_collision(vertical), DegenerateGeometry);
}

TEST_CASE("collinear cross bouquet in the square is unstable in every direction") {
    Polytope sq = testsupport::unit_square();
    Vec center = vec2(0.5, 0.5);
    BilliardTrajectory h =
        loop_from_points(sq, center, {vec2(1.0, 0.5), vec2(0.0, 0.5)}, {0, 1});
    BilliardTrajectory v =
        loop_from_points(sq, center, {vec2(0.5, 1.0), vec2(0.5, 0.0)}, {2, 3});

    Bouquet B = assemble_bouquet(sq, center, {h, v});
    CHECK(stationarity_residual(B) < 1e-14);
    CHECK(is_stationary(B));

    // straight loops transport trivially: the defect vanishes identically
    CHECK(defect_operator(sq, B.loops[0]).D.norm() < 1e-14);

    StabilityCertificate cert = certify(sq, B);
    CHECK(cert.verdict == StabilityCertificate::Verdict::Unstable);
    CHECK(cert.unstable_dim == 2);
    CHECK(cert.stationary);
    CHECK(cert.max_tangent_cos == doctest::Approx(1.0));
}

TEST_CASE("three symmetric triangle loops certify stable") {
    Polytope tri = testsupport::equilateral_triangle();
    Vec p = vec2(0.0, 0.0);

    // loop toward the wall with normal at 30 degrees, mirrored across the
    // y-axis; its siblings are the 120- and 240-degree rotations
    double sx = std::sqrt(3.0) / 6.0;
    std::vector<Vec> base_cols = {vec2(sx, 0.5), vec2(-sx, 0.5)};

    std::vector<BilliardTrajectory> trajs;
    std::vector<Subspace> expected_kernels;
    for (int k = 0; k < 3; ++k) {
        double ang = 2.0 * M_PI * k / 3.0;
        Mat R(2, 2);
        R << std::cos(ang), -std::sin(ang), std::sin(ang), std::cos(ang);
        std::vector<Vec> cols;
        for (const Vec& q : base_cols) cols.push_back(R * q);
        trajs.push_back(loop_from_points(tri, p, cols, {(1 + k) % 3, (2 + k) % 3}));
        expected_kernels.push_back(Subspace(R * vec2(0, 1)));
    }

    Bouquet B = assemble_bouquet(tri, p, trajs);
    CHECK(stationarity_residual(B) < 1e-14);

    StabilityCertificate cert = certify(tri, B);
    REQUIRE(cert.verdict == StabilityCertificate::Verdict::Stable);
    CHECK(cert.triviality_margin > 1.0);
    REQUIRE(cert.loop_kernels.size() == 3);
    for (int k = 0; k < 3; ++k) CHECK(subspace_equal(cert.loop_kernels[k], expected_kernels[k]));

    // kernel lines are pairwise at 60 degrees
    for (int a = 0; a < 3; ++a)
        for (int b = a + 1; b < 3; ++b) {
            std::vector<double> ang = principal_angles(cert.loop_kernels[a], cert.loop_kernels[b]);
            CHECK(ang.back() == doctest::Approx(M_PI / 3.0));
        }

    // a demanding margin tolerance downgrades the verdict, never upgrades it
    StabilityCertificate strict = certify(tri, B, 2.0);
    CHECK(strict.verdict == StabilityCertificate::Verdict::Indeterminate);
    CHECK(!strict.indeterminate_reason.empty());
}

TEST_CASE("certify reports non-stationary bouquets as indeterminate") {
    const double alpha = 50.0 * M_PI / 180.0;
    Polytope W = make_wedge2(alpha);
    BilliardTrajectory T = wedge_loop(W, alpha, 0.3);
    Bouquet B = assemble_bouquet(W, T.points.front(), {T});

    StabilityCertificate cert = certify(W, B);
    CHECK(cert.verdict == StabilityCertificate::Verdict::Indeterminate);
    CHECK(!cert.stationary);
    CHECK(cert.indeterminate_reason == "bouquet is not stationary at the basepoint");
    // residual equals |t0 - t1| for a single loop
    CHECK(cert.stationarity_residual ==
          doctest::Approx((B.loops[0].t0() - B.loops[0].t1()).norm()));
    // kernels are still reported for inspection
    REQUIRE(cert.loop_kernels.size() == 1);
    CHECK(cert.loop_kernels[0].dim() == 1);
}

TEST_CASE("assemble_bouquet enforces loop structure") {
    const double alpha = 50.0 * M_PI / 180.0;
    Polytope W = make_wedge2(alpha);
    BilliardTrajectory T = wedge_loop(W, alpha, 0.3);

    // wrong basepoint
    CHECK_THROWS_AS(assemble_bouquet(W, vec2(0.1, 0.0), {T}), DomainError);
    // basepoint on the boundary
    double c = std::cos(alpha);
    CHECK_THROWS_AS(assemble_bouquet(W, vec2(1.0 / c, 0.0), {T}), DomainError);
    // odd collision count: perpendicular bounce off the upper wall
    Vec p = vec2(0.3, 0.0);
    Vec n = vec2(std::cos(alpha), std::sin(alpha));
    Vec S = p + (1.0 - n.dot(p)) * n;
    BilliardTrajectory odd = loop_from_points(W, p, {S}, {0});
    CHECK_THROWS_AS(assemble_bouquet(W, p, {odd}), DomainError);
    // empty bouquet
    CHECK_THROWS_AS(assemble_bouquet(W, p, {}), DomainError);
}

TEST_CASE("transported frame stays orthonormal and lands on the transport") {
    const double alpha = 50.0 * M_PI / 180.0;
    Polytope W = make_wedge2(alpha);
    GeodesicLoop loop = as_loop(wedge_loop(W, alpha, 0.3));

    std::vector<Mat> frames = transported_frame(W, loop);
    REQUIRE(frames.size() == 3);
    for (const Mat& F : frames)
        CHECK((F.transpose() * F - Mat::Identity(1, 1)).norm() < 1e-12);
    Mat P = parallel_transport(W, loop.trajectory);
    CHECK((frames.back() - P * frames.front()).norm() < 1e-12);
    // frame columns stay orthogonal to the running tangent
    for (std::size_t seg = 0; seg < frames.size(); ++seg)
        CHECK(std::abs((frames[seg].transpose() * loop.trajectory.directions[seg])(0)) < 1e-12);
}

TEST_CASE("index form: null extensions vanish, kinks price in exactly") {
    const double alpha = 50.0 * M_PI / 180.0;
    Polytope W = make_wedge2(alpha);
    GeodesicLoop loop = as_loop(wedge_loop(W, alpha, 0.3));

    Vec v = vec2(1, 0);  // kernel vector
    LoopField ext = null_extension(W, loop, v);
    CHECK((ext.vectors.front() - v).norm() < 1e-14);
    CHECK((ext.vectors.back() - v).norm() < 1e-14);
    CHECK(index_form(W, loop, ext) < 1e-10);

    // non-kernel vectors admit no length-neutral extension
    CHECK_THROWS_AS(null_extension(W, loop, vec2(0, 1)), DomainError);

    // a tent profile in the parallel frame costs exactly sum (dc)^2 / ds
    std::vector<Mat> frames = transported_frame(W, loop);
    double L = loop.length();
    double c1 = (loop.trajectory.points[1] - loop.trajectory.points[0]).norm() / L;
    double c2 = (loop.trajectory.points[2] - loop.trajectory.points[1]).norm() / L + c1;
    double mid = 0.5 * (c1 + c2);
    LoopField tent;
    tent.times = {0.0, mid, 1.0};
    tent.segments = {0, 1, 2};
    tent.vectors = {vec2(0, 0), frames[1].col(0), vec2(0, 0)};
    double q = index_form(W, loop, tent);
    CHECK(q == doctest::Approx(1.0 / mid + 1.0 / (1.0 - mid)));
}

TEST_CASE("index form dominates the squared defect of the base vector") {
    const double alpha = 50.0 * M_PI / 180.0;
    Polytope W = make_wedge2(alpha);
    GeodesicLoop loop = as_loop(wedge_loop(W, alpha, 0.3));
    DefectOperator op = defect_operator(W, loop);

    // collision times of the loop
    double L = loop.length();
    double c1 = (loop.trajectory.points[1] - loop.trajectory.points[0]).norm() / L;
    double c2 = (loop.trajectory.points[2] - loop.trajectory.points[1]).norm() / L + c1;

    std::mt19937_64 rng(20260815);
    for (int trial = 0; trial < 100; ++trial) {
        Vec v = testsupport::random_vec(rng, 2, -2.0, 2.0);
        LoopField f;
        auto push = [&](double t, int seg) {
            f.times.push_back(t);
            f.segments.push_back(seg);
            f.vectors.push_back(testsupport::random_vec(rng, 2, -2.0, 2.0));
        };
        push(0.0, 0);
        push(testsupport::uniform(rng, 0.1, 0.9) * c1, 0);
        push(c1, 1);  // collision sample, outgoing chart
        push(c1 + testsupport::uniform(rng, 0.1, 0.9) * (c2 - c1), 1);
        push(c2, 2);
        push(c2 + testsupport::uniform(rng, 0.1, 0.9) * (1.0 - c2), 2);
        push(1.0, 2);
        f.vectors.front() = v;
        f.vectors.back() = v;  // loop-closing field

        double q = index_form(W, loop, f);
        double bound = (op.D * v).squaredNorm();
        CHECK(q >= bound - 1e-12);
    }
}

TEST_CASE("index form rejects inconsistent sample tracks") {
    const double alpha = 50.0 * M_PI / 180.0;
    Polytope W = make_wedge2(alpha);
    GeodesicLoop loop = as_loop(wedge_loop(W, alpha, 0.3));

    LoopField bad;
    bad.times = {0.0, 0.5, 0.4, 1.0};
    bad.segments = {0, 1, 1, 2};
    bad.vectors = {vec2(0, 0), vec2(0, 0), vec2(0, 0), vec2(0, 0)};
    CHECK_THROWS_AS(index_form(W, loop, bad), DomainError);  // non-monotone times

    LoopField wrong_seg;
    wrong_seg.times = {0.0, 0.01, 1.0};
    wrong_seg.segments = {0, 2, 2};  // 0.01 is far before the second collision
    wrong_seg.vectors = {vec2(0, 0), vec2(0, 0), vec2(0, 0)};
    CHECK_THROWS_AS(index_form(W, loop, wrong_seg), DomainError);

    LoopField wrong_dim;
    wrong_dim.times = {0.0, 1.0};
    wrong_dim.segments = {0, 2};
    wrong_dim.vectors = {vec3(0, 0, 0), vec3(0, 0, 0)};
    CHECK_THROWS_AS(index_form(W, loop, wrong_dim), DomainError);
}

TEST_CASE("discrete bouquet fields must close on the shared base vector") {
    Polytope sq = testsupport::unit_square();
    Vec center = vec2(0.5, 0.5);
    BilliardTrajectory h =
        loop_from_points(sq, center, {vec2(1.0, 0.5), vec2(0.0, 0.5)}, {0, 1});
    Bouquet B = assemble_bouquet(sq, center, {h});

    DiscreteField F;
    F.base_vector = vec2(0.25, -1.0);
    F.loops.push_back(null_extension(sq, B.loops[0], F.base_vector));
    CHECK_NOTHROW(validate_field(B, F));

    F.loops[0].vectors.back() = vec2(0.0, 0.0);
    CHECK_THROWS_AS(validate_field(B, F), DomainError);
    F.loops.clear();
    CHECK_THROWS_AS(validate_field(B, F), DomainError);
}
