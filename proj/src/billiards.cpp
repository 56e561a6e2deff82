#include "bouquet/billiards.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace bouquet {

void BilliardTrajectory::recompute_derived() {
    directions.clear();
    length = 0.0;
    for (size_t i = 0; i + 1 < points.size(); ++i) {
        Vec seg = points[i + 1] - points[i];
        double len = seg.norm();
        if (len < 1e-14)
            throw DomainError("BilliardTrajectory: zero-length segment at index " + std::to_string(i));
        directions.push_back(seg / len);
        length += len;
    }
}

bool BilliardTrajectory::is_loop(double tol) const {
    return (points.front() - points.back()).norm() <= tol * std::max(1.0, points.front().norm());
}

bool BilliardTrajectory::is_periodic(double tol) const {
    return is_loop(tol) && (directions.front() - directions.back()).norm() <= tol;
}

namespace {

struct Hit {
    int face = -1;
    double t = std::numeric_limits<double>::infinity();
};

Hit first_hit(const Polytope& P, const Vec& x, const Vec& u) {
    Hit best;
    for (int j = 0; j < P.face_count(); ++j) {
        double speed = P.halfspaces()[static_cast<size_t>(j)].normal.dot(u);
        if (speed <= 1e-14) continue;  // moving parallel or away from this face
        double t = P.face_slack(j, x) / speed;
        if (t > 1e-12 * P.scale() && t < best.t) best = Hit{j, t};
    }
    return best;
}

}  // namespace

BilliardTrajectory shoot(const Polytope& P, const Vec& start, const Vec& dir,
                         int max_collisions, const ShootOptions& opts) {
    if (start.size() != P.dim() || dir.size() != P.dim())
        throw DomainError("shoot: dimension mismatch");
    if (max_collisions < 0)
        throw DomainError("shoot: max_collisions must be nonnegative");
    if (P.contains(start).kind != MembershipKind::Interior)
        throw DomainError("shoot: start point is not strictly interior");
    double dn = dir.norm();
    if (dn < 1e-12) throw DomainError("shoot: zero direction");

    BilliardTrajectory T;
    T.points.push_back(start);

    Vec x = start;
    Vec u = dir / dn;
    double traveled = 0.0;
    double prev_segment = 0.0;
    const double skel_tol = 1e-9 * P.scale();

    while (true) {
        Hit hit = first_hit(P, x, u);
        if (hit.face < 0)
            throw Escape("shoot: ray escapes the polytope (no face ahead)");

        if (opts.stop_time && traveled + hit.t >= *opts.stop_time - 1e-15) {
            T.points.push_back(x + (*opts.stop_time - traveled) * u);
            break;
        }

        if (T.collision_count() == max_collisions) {
            // post-roll: land strictly inside past the last collision
            double roll = opts.post_roll.value_or(prev_segment > 0.0 ? 0.5 * prev_segment
                                                                     : 0.5 * hit.t);
            roll = std::min(roll, 0.5 * hit.t);
            if (roll <= 0.0)
                throw DomainError("shoot: post-roll distance must be positive");
            T.points.push_back(x + roll * u);
            break;
        }

        Vec y = x + hit.t * u;
        if (P.active_faces(y, skel_tol).size() >= 2)
            throw SingularHit("shoot: collision " + std::to_string(T.collision_count() + 1) +
                              " lands on the (n-2)-skeleton");

        T.points.push_back(y);
        T.faces.push_back(hit.face);
        u = P.reflect_dir(hit.face, u);
        traveled += hit.t;
        prev_segment = hit.t;
        x = y;
    }

    T.recompute_derived();
    return T;
}

ValidationReport validate(const Polytope& P, const BilliardTrajectory& T, double tol) {
    ValidationReport rep;
    const double scale = P.scale();
    if (T.points.size() < 2 || T.faces.size() + 2 != T.points.size()) {
        rep.valid = false;
        rep.failures.push_back("malformed trajectory: need k+2 points for k collisions");
        return rep;
    }

    BilliardTrajectory W = T;  // local copy so validate can re-derive directions
    try {
        W.recompute_derived();
    } catch (const DomainError& e) {
        rep.valid = false;
        rep.failures.push_back(e.what());
        return rep;
    }

    rep.min_face_interior_slack = std::numeric_limits<double>::infinity();
    for (int i = 0; i < W.collision_count(); ++i) {
        const Vec& xi = W.points[static_cast<size_t>(i) + 1];
        int fi = W.faces[static_cast<size_t>(i)];
        if (fi < 0 || fi >= P.face_count()) {
            rep.valid = false;
            rep.failures.push_back("collision " + std::to_string(i + 1) + ": face index out of range");
            continue;
        }
        double on_face = std::abs(P.face_slack(fi, xi));
        rep.max_on_face_residual = std::max(rep.max_on_face_residual, on_face);
        if (on_face > tol * scale) {
            rep.valid = false;
            rep.failures.push_back("collision " + std::to_string(i + 1) +
                                   " is off its face hyperplane by " + std::to_string(on_face));
        }
        for (int j = 0; j < P.face_count(); ++j) {
            if (j == fi) continue;
            rep.min_face_interior_slack = std::min(rep.min_face_interior_slack, P.face_slack(j, xi));
        }
        if (P.contains(xi, tol * scale).kind != MembershipKind::BoundaryFace) rep.proper = false;

        double res = (W.directions[static_cast<size_t>(i) + 1] -
                      P.reflect_dir(fi, W.directions[static_cast<size_t>(i)])).norm();
        rep.max_reflection_residual = std::max(rep.max_reflection_residual, res);
        if (res > tol) {
            rep.valid = false;
            rep.failures.push_back("collision " + std::to_string(i + 1) +
                                   " violates the reflection law by " + std::to_string(res));
        }
    }
    if (W.collision_count() == 0) rep.min_face_interior_slack = 0.0;

    for (const Vec& p : {W.points.front(), W.points.back()}) {
        if (P.contains(p, tol * scale).kind == MembershipKind::Outside) {
            rep.valid = false;
            rep.failures.push_back("endpoint lies outside the polytope");
        }
    }

    rep.loop = W.is_loop();
    rep.periodic = W.is_periodic();
    return rep;
}

BilliardTrajectory loop_from_points(const Polytope& P, const Vec& base,
                                    const std::vector<Vec>& collisions,
                                    const std::vector<int>& faces) {
    if (collisions.size() != faces.size())
        throw DomainError("loop_from_points: collisions and faces must pair up");
    if (collisions.empty())
        throw DomainError("loop_from_points: need at least one collision");
    if (P.contains(base).kind != MembershipKind::Interior)
        throw DomainError("loop_from_points: base point is not strictly interior");

    BilliardTrajectory T;
    T.points.push_back(base);
    for (const auto& c : collisions) T.points.push_back(c);
    T.points.push_back(base);
    T.faces = faces;
    T.recompute_derived();

    auto rep = validate(P, T);
    if (rep.max_on_face_residual > 1e-9 * P.scale())
        throw DomainError("loop_from_points: a collision is off its face hyperplane by " +
                          std::to_string(rep.max_on_face_residual));
    if (rep.max_reflection_residual > 1e-9)
        throw NotABilliard("loop_from_points: reflection law violated by " +
                           std::to_string(rep.max_reflection_residual));
    T.proper = rep.proper;
    return T;
}

}  // namespace bouquet
