#include "bouquet/constructions.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bouquet/errors.hpp"

namespace bouquet {

namespace {

Mat rot2(double ang) {
    Mat R(2, 2);
    R << std::cos(ang), -std::sin(ang), std::sin(ang), std::cos(ang);
    return R;
}

Vec vec2(double x, double y) {
    Vec v(2);
    v << x, y;
    return v;
}

double max_pairwise_tangent_cos(const std::vector<BilliardTrajectory>& loops) {
    std::vector<Vec> outgoing;
    for (const BilliardTrajectory& T : loops) {
        outgoing.push_back(T.directions.front());
        outgoing.push_back(-T.directions.back());
    }
    double worst = 0.0;
    for (std::size_t a = 0; a < outgoing.size(); ++a)
        for (std::size_t b = a + 1; b < outgoing.size(); ++b)
            worst = std::max(worst, std::abs(outgoing[a].dot(outgoing[b])));
    return worst;
}

}  // namespace

HexagonFamily build_hexagon(const HexagonFamilyParams& params) {
    const double theta = params.theta, d = params.scale;
    if (!(theta > M_PI / 3.0 && theta < M_PI / 2.0))
        throw DomainError("hexagon angle must lie strictly inside (pi/3, pi/2)");
    if (!(d > 0.0)) throw DomainError("hexagon scale must be positive");

    const double h = 0.5 * theta;

    // two edges per theta-vertex, tilted h off the vertex axis
    std::vector<HalfSpace> hs;
    for (int k = 0; k < 3; ++k) {
        Mat R = rot2(2.0 * M_PI * k / 3.0);
        hs.push_back({R * vec2(std::sin(h), std::cos(h)), d * std::sin(h)});
        hs.push_back({R * vec2(std::sin(h), -std::cos(h)), d * std::sin(h)});
    }
    Polytope P(2, hs);

    // collision point on the upper edge of the vertex at angle 0, found by
    // reflecting the center across the edge line and dropping a vertical
    // middle segment; s is its distance from the vertex along the edge
    const double s = d * std::cos(theta) / std::cos(h);
    // the edge ends where it crosses the bisecting ray at polar angle pi/3
    const double edge_len = std::sqrt(3.0) * d / (2.0 * std::sin(h + M_PI / 3.0));
    const double tol = 1e-9 * d;
    if (s <= tol || s >= edge_len - tol) {
        std::ostringstream msg;
        msg << "hexagon collision point degenerates onto the edge boundary (slack "
            << std::min(s, edge_len - s) << ")";
        throw DegenerateGeometry(msg.str());
    }

    Vec S = d * vec2(1.0 - std::cos(theta), std::cos(theta) * std::tan(h));
    Vec base = Vec::Zero(2);

    std::vector<BilliardTrajectory> trajs;
    for (int k = 0; k < 3; ++k) {
        Mat R = rot2(2.0 * M_PI * k / 3.0);
        Vec Sk = R * S;
        Vec Qk = R * vec2(S(0), -S(1));
        trajs.push_back(loop_from_points(P, base, {Sk, Qk}, {2 * k, 2 * k + 1}));
    }

    std::vector<ValidationReport> reports;
    for (const BilliardTrajectory& T : trajs) {
        ValidationReport rep = validate(P, T);
        if (!rep.valid || !rep.proper)
            throw ConstructionFailed("hexagon loop failed validation: " +
                                     (rep.failures.empty() ? "improper collision"
                                                           : rep.failures.front()));
        reports.push_back(rep);
    }

    Bouquet B = assemble_bouquet(P, base, trajs);
    StabilityCertificate cert = certify(P, B);
    if (cert.verdict != StabilityCertificate::Verdict::Stable)
        throw ConstructionFailed("hexagon bouquet did not certify stable: " +
                                 cert.indeterminate_reason);

    return HexagonFamily{params, std::move(P), std::move(B), std::move(cert),
                         std::move(reports)};
}

std::vector<Vec> regular_simplex_vertices(int n) {
    if (n < 3) throw DomainError("regular simplex family needs n >= 3");
    // Helmert coordinates of the centered standard basis, rescaled to unit
    // circumradius: vertex i reads off the Helmert basis column by column
    std::vector<Vec> xs(static_cast<std::size_t>(n), Vec::Zero(n - 1));
    const double scale = std::sqrt(static_cast<double>(n) / (n - 1.0));
    for (int k = 1; k < n; ++k) {
        const double denom = 1.0 / std::sqrt(static_cast<double>(k) * (k + 1.0));
        for (int i = 0; i < k; ++i) xs[static_cast<std::size_t>(i)](k - 1) = scale * denom;
        xs[static_cast<std::size_t>(k)](k - 1) = -scale * k * denom;
    }
    return xs;
}

std::vector<Subspace> hyperplanes_from_simplex(const std::vector<Vec>& x, const Vec& v) {
    const int n = static_cast<int>(x.size());
    if (n < 3) throw DomainError("need at least three simplex directions");
    const Eigen::Index ambient = v.size();
    if (ambient != n)
        throw DomainError("need exactly n directions in R^n to cut hyperplanes");
    for (const Vec& xi : x) {
        if (xi.size() != ambient) throw DomainError("simplex direction dimension mismatch");
        if (xi.norm() < 1e-12) throw DomainError("simplex directions must be nonzero");
    }

    Mat X(ambient, n);
    for (int i = 0; i < n; ++i) X.col(i) = x[static_cast<std::size_t>(i)];
    auto rank_of = [](const Mat& A) {
        Eigen::JacobiSVD<Mat> svd(A);
        const auto& sv = svd.singularValues();
        Eigen::Index r = 0;
        for (Eigen::Index i = 0; i < sv.size(); ++i)
            if (sv(i) > 1e-10 * sv(0)) ++r;
        return static_cast<int>(r);
    };
    if (rank_of(X) != n - 1)
        throw DomainError("simplex directions must span exactly a hyperplane");
    for (int skip = 0; skip < n; ++skip) {
        Mat sub(ambient, n - 1);
        int c = 0;
        for (int i = 0; i < n; ++i)
            if (i != skip) sub.col(c++) = x[static_cast<std::size_t>(i)];
        if (rank_of(sub) != n - 1)
            throw DomainError("every n-1 of the simplex directions must be independent");
    }

    Subspace big = Subspace::span(X);
    if ((v - big.projector() * v).norm() <= 1e-10 * v.norm())
        throw DomainError("the lift direction must leave the simplex span");

    std::vector<Subspace> planes;
    for (int i = 0; i + 1 < n; ++i) {
        Mat gen(ambient, n - 1);
        for (int j = 0; j < n - 2; ++j)
            gen.col(j) = x[static_cast<std::size_t>((i + j) % n)];
        gen.col(n - 2) = v;
        Subspace plane = Subspace::span(gen);
        if (plane.dim() != n - 1)
            throw ConstructionFailed("adapted hyperplane collapsed below full rank");
        planes.push_back(plane);
    }
    planes.push_back(big);

    for (int i = 0; i < n; ++i)
        if (!planes[static_cast<std::size_t>(i)].contains(x[static_cast<std::size_t>(i)], 1e-12))
            throw ConstructionFailed("simplex direction escaped its own hyperplane");
    IntersectionResult meet = intersect(planes);
    if (meet.intersection.dim() != 0)
        throw ConstructionFailed("adapted hyperplanes share a common direction");
    return planes;
}

double regular_simplex_central_angles(int n) {
    std::vector<Vec> xs = regular_simplex_vertices(n);
    double worst = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i)
        for (std::size_t j = 0; j < xs.size(); ++j) {
            if (i == j) continue;
            // angle at vertex x_j between the other vertex and the center
            Vec to_i = (xs[i] - xs[j]).normalized();
            Vec to_o = (-xs[j]).normalized();
            worst = std::max(worst, std::acos(std::clamp(to_i.dot(to_o), -1.0, 1.0)));
        }
    if (worst >= M_PI / 4.0)
        throw ConstructionFailed("simplex base angle reached pi/4; rotation has no room");
    return worst;
}

namespace {

struct SimplexAttempt {
    std::optional<SimplexFamily> family;
    std::string failure;
};

SimplexAttempt attempt_simplex(const SimplexFamilyParams& params,
                               const std::vector<Vec>& x, const std::vector<Vec>& m,
                               const std::vector<Subspace>& planes, double eps) {
    const int n = params.n;
    const double phi = M_PI / 4.0 + 0.5 * eps;
    SimplexAttempt out;

    std::vector<HalfSpace> hs;
    for (int i = 0; i < n; ++i) {
        const Vec& xi = x[static_cast<std::size_t>(i)];
        const Vec& mi = m[static_cast<std::size_t>(i)];
        hs.push_back({std::cos(phi) * xi - std::sin(phi) * mi, std::cos(phi)});
        hs.push_back({std::cos(phi) * xi + std::sin(phi) * mi, std::cos(phi)});
        // the contact vertex stays on both rotated boundaries
        for (int sgn = 0; sgn < 2; ++sgn) {
            const HalfSpace& f = hs[hs.size() - 2 + static_cast<std::size_t>(sgn)];
            if (std::abs(f.normal.dot(xi) - f.offset) > 1e-12)
                throw ConstructionFailed("rotated facet lost contact with its vertex");
        }
    }
    Polytope X(n, hs);

    if (!X.is_compact()) {
        out.failure = "polytope is not compact";
        return out;
    }

    const double r = std::cos(phi) / std::cos(phi - eps);
    std::vector<Vec> cols_minus, cols_plus;
    for (int i = 0; i < n; ++i) {
        const Vec& xi = x[static_cast<std::size_t>(i)];
        const Vec& mi = m[static_cast<std::size_t>(i)];
        cols_minus.push_back(r * (std::cos(eps) * xi - std::sin(eps) * mi));
        cols_plus.push_back(r * (std::cos(eps) * xi + std::sin(eps) * mi));
        // the collision points subtend exactly eps at the origin
        double a = std::acos(std::clamp(cols_minus.back().normalized().dot(xi), -1.0, 1.0));
        if (std::abs(a - eps) > 1e-12)
            throw ConstructionFailed("collision point lost its angular offset");
    }

    // every collision must clear every face it does not lie on by a margin
    for (int i = 0; i < n; ++i)
        for (int sgn = 0; sgn < 2; ++sgn) {
            const Vec& c = (sgn == 0 ? cols_minus : cols_plus)[static_cast<std::size_t>(i)];
            int own = 2 * i + sgn;
            for (int f = 0; f < X.face_count(); ++f) {
                double slack = X.face_slack(f, c);
                if (f == own) continue;
                if (slack <= 1e-6) {
                    std::ostringstream msg;
                    msg << "collision " << i << (sgn == 0 ? "-" : "+")
                        << " too close to face " << f << " (slack " << slack << ")";
                    out.failure = msg.str();
                    return out;
                }
            }
        }

    Vec origin = Vec::Zero(n);
    std::vector<BilliardTrajectory> trajs;
    std::vector<ValidationReport> reports;
    for (int i = 0; i < n; ++i) {
        BilliardTrajectory T;
        try {
            T = loop_from_points(X, origin,
                                 {cols_minus[static_cast<std::size_t>(i)],
                                  cols_plus[static_cast<std::size_t>(i)]},
                                 {2 * i, 2 * i + 1});
        } catch (const Error& e) {
            out.failure = std::string("loop assembly failed: ") + e.what();
            return out;
        }
        ValidationReport rep = validate(X, T);
        if (!rep.valid || !rep.proper) {
            out.failure = "loop failed validation: " +
                          (rep.failures.empty() ? "improper collision" : rep.failures.front());
            return out;
        }
        trajs.push_back(std::move(T));
        reports.push_back(std::move(rep));
    }

    if (max_pairwise_tangent_cos(trajs) >= 1.0 - 1e-6) {
        out.failure = "two outgoing loop tangents are parallel";
        return out;
    }

    Bouquet B = assemble_bouquet(X, origin, trajs);
    StabilityCertificate cert = certify(X, B);
    if (cert.verdict != StabilityCertificate::Verdict::Stable) {
        out.failure = "certificate not stable: " + cert.indeterminate_reason;
        return out;
    }

    out.family = SimplexFamily{params,
                               eps,
                               phi,
                               std::move(X),
                               std::move(B),
                               planes,
                               x,
                               m,
                               std::move(cert),
                               std::move(reports)};
    return out;
}

}  // namespace

SimplexFamily build_simplex_family(const SimplexFamilyParams& params) {
    const int n = params.n;
    if (n < 3) throw DomainError("simplex family needs dimension n >= 3");

    std::vector<Vec> bar = regular_simplex_vertices(n);
    Vec centroid = Vec::Zero(n - 1);
    for (const Vec& b : bar) centroid += b;
    if (centroid.norm() > 1e-12)
        throw ConstructionFailed("simplex vertices failed to center on the origin");

    std::vector<Vec> x;
    for (const Vec& b : bar) {
        Vec lifted = Vec::Zero(n);
        lifted.head(n - 1) = b;
        x.push_back(lifted);
    }
    Vec v = Vec::Unit(n, n - 1);

    std::vector<Subspace> planes = hyperplanes_from_simplex(x, v);
    std::vector<Vec> m;
    for (const Subspace& plane : planes) m.push_back(plane.complement().basis().col(0));

    if (params.epsilon) {
        double eps = *params.epsilon;
        if (!(eps > 0.0 && eps < M_PI / 2.0))
            throw DomainError("epsilon must lie in (0, pi/2)");
        SimplexAttempt res = attempt_simplex(params, x, m, planes, eps);
        if (!res.family) throw ConstructionFailed(res.failure);
        return std::move(*res.family);
    }

    std::string last_failure = "no attempt made";
    for (double eps = 0.1; eps >= 1e-6; eps *= 0.5) {
        SimplexAttempt res = attempt_simplex(params, x, m, planes, eps);
        if (res.family) return std::move(*res.family);
        last_failure = res.failure;
    }
    throw ConstructionFailed("epsilon schedule exhausted below 1e-6; last failure: " +
                             last_failure);
}

}  // namespace bouquet
