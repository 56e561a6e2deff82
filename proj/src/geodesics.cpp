#include "bouquet/geodesics.hpp"

#include <cmath>
#include <string>

namespace bouquet {

LiftResult lift(const BilliardTrajectory& T, int start_sheet) {
    if (start_sheet != 0 && start_sheet != 1)
        throw DomainError("lift: start_sheet must be 0 or 1");
    LiftResult out;
    out.end_sheet = start_sheet ^ (T.collision_count() & 1);
    out.closed_in_double = T.is_loop() && out.end_sheet == start_sheet;
    if (out.closed_in_double) out.loop = GeodesicLoop{T, start_sheet};
    return out;
}

Mat parallel_transport(const Polytope& P, const BilliardTrajectory& T) {
    Mat M = Mat::Identity(P.dim(), P.dim());
    for (int f : T.faces) M = P.reflect_matrix(f) * M;
    return M;
}

Vec transport_oracle(const Polytope& P, const BilliardTrajectory& T, const Vec& v) {
    if (v.size() != P.dim())
        throw DomainError("transport_oracle: dimension mismatch");
    const int n = P.dim();

    // develop the path: y_i = L x_i + b with the isometry folding in one
    // reflection per collision
    Mat L = Mat::Identity(n, n);
    Vec b = Vec::Zero(n);
    std::vector<Vec> developed;
    developed.push_back(T.points[0]);
    for (size_t i = 1; i < T.points.size(); ++i) {
        developed.push_back(L * T.points[i] + b);
        if (i <= T.faces.size()) {
            // compose with the base reflection on the right: (L,b) <- (L,b) o R
            const auto& h = P.halfspaces()[static_cast<size_t>(T.faces[i - 1])];
            b += 2.0 * h.offset * (L * h.normal);
            L = L - 2.0 * (L * h.normal) * h.normal.transpose();
        }
    }

    // the development must be straight and length-preserving
    Vec chord = developed.back() - developed.front();
    double dist = chord.norm();
    if (std::abs(dist - T.length) > 1e-10 * std::max(1.0, T.length))
        throw NotABilliard("transport_oracle: developed endpoint distance " + std::to_string(dist) +
                           " does not match path length " + std::to_string(T.length));
    Vec u = chord / dist;
    for (const auto& p : developed) {
        Vec d = p - developed.front();
        if ((d - u.dot(d) * u).norm() > 1e-10 * std::max(1.0, T.length))
            throw NotABilliard("transport_oracle: development does not straighten the path");
    }

    // fold the carried vector back, one reflection at a time
    Vec w = v;
    for (int f : T.faces) {
        const auto& h = P.halfspaces()[static_cast<size_t>(f)];
        w -= 2.0 * h.normal.dot(w) * h.normal;
    }
    return w;
}

}  // namespace bouquet
