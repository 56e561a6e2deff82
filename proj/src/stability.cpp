#include "bouquet/stability.hpp"

#include <algorithm>
#include <cmath>

#include "bouquet/errors.hpp"

namespace bouquet {

namespace {

// Collision times of a trajectory as fractions of total length.
std::vector<double> collision_times(const BilliardTrajectory& T) {
    std::vector<double> times;
    times.reserve(T.points.size());
    double acc = 0.0;
    times.push_back(0.0);
    for (std::size_t i = 0; i + 1 < T.points.size(); ++i) {
        acc += (T.points[i + 1] - T.points[i]).norm();
        times.push_back(acc / T.length);
    }
    times.back() = 1.0;
    return times;
}

}  // namespace

Bouquet assemble_bouquet(const Polytope& P, const Vec& basepoint,
                         const std::vector<BilliardTrajectory>& loops, int start_sheet) {
    if (basepoint.size() != P.dim())
        throw DomainError("bouquet basepoint dimension mismatch");
    if (P.contains(basepoint).kind != MembershipKind::Interior)
        throw DomainError("bouquet basepoint must be strictly interior");
    if (loops.empty()) throw DomainError("bouquet needs at least one loop");

    const double tol = 1e-10 * P.scale();
    Bouquet B;
    B.basepoint = basepoint;
    B.loops.reserve(loops.size());
    for (const BilliardTrajectory& T : loops) {
        if ((T.points.front() - basepoint).norm() > tol ||
            (T.points.back() - basepoint).norm() > tol)
            throw DomainError("loop does not start and end at the bouquet basepoint");
        if (T.collision_count() % 2 != 0)
            throw DomainError("loop has odd collision count, so it cannot close in the double");
        LiftResult lifted = lift(T, start_sheet);
        if (!lifted.loop) throw DomainError("trajectory does not lift to a loop in the double");
        B.loops.push_back(*lifted.loop);
    }
    return B;
}

double stationarity_residual(const Bouquet& B) {
    Vec sum = Vec::Zero(B.basepoint.size());
    for (const GeodesicLoop& loop : B.loops) sum += loop.t0() - loop.t1();
    return sum.norm();
}

bool is_stationary(const Bouquet& B, double tol) { return stationarity_residual(B) <= tol; }

DefectOperator defect_operator(const Polytope& P, const GeodesicLoop& loop) {
    const Eigen::Index n = P.dim();
    DefectOperator op;
    op.t0 = loop.t0();
    op.t1 = loop.t1();
    op.transport = parallel_transport(P, loop.trajectory);
    Mat pi0 = Mat::Identity(n, n) - op.t0 * op.t0.transpose();
    Mat pi1 = Mat::Identity(n, n) - op.t1 * op.t1.transpose();
    op.D = op.transport * pi0 - pi1;
    return op;
}

Subspace kernel_two_collision(const GeodesicLoop& loop) {
    if (loop.trajectory.collision_count() != 2)
        throw DomainError("two-collision kernel formula needs exactly two collisions");
    // parallel tangents mean the three segments are collinear (a flattened
    // loop running through the basepoint); the hyperplane formula fails there
    if (std::abs(loop.t0().dot(loop.t1())) > 1.0 - 1e-12)
        throw DegenerateGeometry("collinear two-collision loop has no hyperplane kernel");
    return Subspace((loop.t0() + loop.t1()).normalized()).complement();
}

Subspace kernel_invariant_plane(const Polytope& P, const GeodesicLoop& loop, const Subspace& W) {
    const Eigen::Index n = P.dim();
    if (W.dim() != 2) throw DomainError("invariant-plane kernel formula needs a 2-dim plane");
    if (W.ambient_dim() != n) throw DomainError("invariant plane ambient dimension mismatch");

    Mat transport = parallel_transport(P, loop.trajectory);
    const Mat& Bw = W.basis();
    // invariance check: transport must not leak W into its complement
    Mat leak = transport * Bw - Bw * (Bw.transpose() * transport * Bw);
    if (leak.norm() > 1e-9)
        throw NotInvariant("transport does not preserve the given plane");

    Vec t0 = loop.t0();
    Vec t1 = loop.t1();
    if ((t0 - Bw * (Bw.transpose() * t0)).norm() > 1e-9 ||
        (t1 - Bw * (Bw.transpose() * t1)).norm() > 1e-9)
        throw DomainError("loop tangents do not lie in the given plane");

    Mat restricted = Bw.transpose() * transport * Bw;  // 2x2, orthogonal
    double delta = restricted.determinant();

    Vec spine = t0 - delta * t1;
    if (spine.norm() < 1e-12)
        throw DegenerateGeometry("t0 - det(P|W) t1 vanishes; loop tangents are transport-aligned");

    // eigenvalue-1 space of the transport restricted to the complement of W
    Subspace Wp = W.complement();
    std::vector<Vec> pieces;
    if (Wp.dim() > 0) {
        const Mat& Bp = Wp.basis();
        Mat restricted_perp = Bp.transpose() * transport * Bp;
        NullspaceResult fixed =
            nullspace(restricted_perp - Mat::Identity(Wp.dim(), Wp.dim()));
        for (Eigen::Index j = 0; j < fixed.kernel.dim(); ++j)
            pieces.push_back(Bp * fixed.kernel.basis().col(j));
    }
    pieces.push_back(spine.normalized());

    Mat stacked(n, static_cast<Eigen::Index>(pieces.size()));
    for (std::size_t j = 0; j < pieces.size(); ++j)
        stacked.col(static_cast<Eigen::Index>(j)) = pieces[j];
    return Subspace::span(stacked);
}

StabilityCertificate certify(const Polytope& P, const Bouquet& B, double tol) {
    StabilityCertificate cert;
    cert.tol = tol;
    cert.stationarity_residual = stationarity_residual(B);
    cert.stationary = cert.stationarity_residual <= 1e-9 * std::max(1.0, P.scale());

    // largest pairwise |cos| among the outgoing unit tangents {t0_i, -t1_i}
    std::vector<Vec> outgoing;
    for (const GeodesicLoop& loop : B.loops) {
        outgoing.push_back(loop.t0());
        outgoing.push_back(-loop.t1());
    }
    for (std::size_t a = 0; a < outgoing.size(); ++a)
        for (std::size_t b = a + 1; b < outgoing.size(); ++b)
            cert.max_tangent_cos =
                std::max(cert.max_tangent_cos, std::abs(outgoing[a].dot(outgoing[b])));

    try {
        for (const GeodesicLoop& loop : B.loops) {
            DefectOperator op = defect_operator(P, loop);
            Subspace ker = nullspace(op.D).kernel;
            if (loop.trajectory.collision_count() == 2 &&
                std::abs(loop.t0().dot(loop.t1())) <= 1.0 - 1e-12) {
                // closed form available: use it, but insist the SVD agrees
                Subspace fast = kernel_two_collision(loop);
                if (!subspace_equal(fast, ker))
                    throw RankAmbiguous(
                        "two-collision kernel formula disagrees with the SVD nullspace", 1.0);
                ker = fast;
            }
            cert.loop_kernels.push_back(ker);
        }
        IntersectionResult meet = intersect(cert.loop_kernels);
        cert.intersection = meet.intersection;
        cert.triviality_margin = meet.triviality_margin;
    } catch (const RankAmbiguous& e) {
        cert.verdict = StabilityCertificate::Verdict::Indeterminate;
        cert.indeterminate_reason = e.what();
        return cert;
    }

    if (!cert.stationary) {
        cert.verdict = StabilityCertificate::Verdict::Indeterminate;
        cert.indeterminate_reason = "bouquet is not stationary at the basepoint";
    } else if (cert.intersection.dim() > 0) {
        cert.verdict = StabilityCertificate::Verdict::Unstable;
        cert.unstable_dim = static_cast<int>(cert.intersection.dim());
    } else if (cert.triviality_margin > tol) {
        cert.verdict = StabilityCertificate::Verdict::Stable;
    } else {
        cert.verdict = StabilityCertificate::Verdict::Indeterminate;
        cert.indeterminate_reason = "kernel intersection margin below tolerance";
    }
    return cert;
}

void validate_field(const Bouquet& B, const DiscreteField& V) {
    if (V.base_vector.size() != B.basepoint.size())
        throw DomainError("field base vector dimension mismatch");
    if (V.loops.size() != B.loops.size())
        throw DomainError("field must carry exactly one sample track per loop");
    for (const LoopField& track : V.loops) {
        if (track.vectors.empty()) throw DomainError("empty field track");
        if ((track.vectors.front() - V.base_vector).norm() > 1e-12 ||
            (track.vectors.back() - V.base_vector).norm() > 1e-12)
            throw DomainError("field track does not close on the shared base vector");
    }
}

std::vector<Mat> transported_frame(const Polytope& P, const GeodesicLoop& loop) {
    const BilliardTrajectory& T = loop.trajectory;
    Mat frame = Subspace(T.directions.front()).complement().basis();  // n x (n-1)
    std::vector<Mat> frames;
    frames.reserve(T.faces.size() + 1);
    frames.push_back(frame);
    for (int f : T.faces) {
        frame = P.reflect_matrix(f) * frame;
        frames.push_back(frame);
    }
    return frames;
}

double index_form(const Polytope& P, const GeodesicLoop& loop, const LoopField& V) {
    const BilliardTrajectory& T = loop.trajectory;
    const std::size_t m = V.times.size();
    if (m < 2 || V.segments.size() != m || V.vectors.size() != m)
        throw DomainError("field needs matching times, segments and vectors with >= 2 samples");
    if (std::abs(V.times.front()) > 1e-15 || std::abs(V.times.back() - 1.0) > 1e-15)
        throw DomainError("field must be sampled on [0, 1] inclusive");

    const int seg_count = static_cast<int>(T.faces.size()) + 1;
    std::vector<double> col = collision_times(T);
    for (std::size_t j = 0; j < m; ++j) {
        int seg = V.segments[j];
        if (seg < 0 || seg >= seg_count) throw DomainError("field segment index out of range");
        if (j > 0 && seg < V.segments[j - 1])
            throw DomainError("field segment indices must be non-decreasing");
        if (j > 0 && V.times[j] <= V.times[j - 1])
            throw DomainError("field times must be strictly increasing");
        // the sample time must fall inside its segment's window
        if (V.times[j] < col[seg] - 1e-12 || V.times[j] > col[seg + 1] + 1e-12)
            throw DomainError("field sample time lies outside its claimed segment");
        if (V.vectors[j].size() != P.dim()) throw DomainError("field vector dimension mismatch");
    }

    std::vector<Mat> frames = transported_frame(P, loop);

    // read the normal coordinates in the parallel frame; these are continuous
    // across collisions because frame and field reflect together
    Mat coords(static_cast<Eigen::Index>(m), P.dim() - 1);
    for (std::size_t j = 0; j < m; ++j)
        coords.row(static_cast<Eigen::Index>(j)) =
            (frames[static_cast<std::size_t>(V.segments[j])].transpose() * V.vectors[j])
                .transpose();

    double Q = 0.0;
    for (std::size_t j = 0; j + 1 < m; ++j) {
        double ds = V.times[j + 1] - V.times[j];
        Q += (coords.row(static_cast<Eigen::Index>(j + 1)) -
              coords.row(static_cast<Eigen::Index>(j)))
                 .squaredNorm() /
             ds;
    }
    return Q;
}

LoopField null_extension(const Polytope& P, const GeodesicLoop& loop, const Vec& v) {
    if (v.size() != P.dim()) throw DomainError("kernel vector dimension mismatch");
    DefectOperator op = defect_operator(P, loop);
    if ((op.D * v).norm() > 1e-10 * std::max(1.0, v.norm()))
        throw DomainError("vector is not in the defect kernel, no length-neutral extension");

    const BilliardTrajectory& T = loop.trajectory;
    std::vector<double> col = collision_times(T);
    const std::size_t k = T.faces.size();

    // normal part: parallel transport of v minus its tangential component
    Vec normal = v - v.dot(op.t0) * op.t0;
    std::vector<Vec> normal_per_seg;
    normal_per_seg.push_back(normal);
    for (std::size_t i = 0; i < k; ++i) {
        normal = P.reflect_dir(T.faces[i], normal);
        normal_per_seg.push_back(normal);
    }

    const double a0 = v.dot(op.t0);
    const double a1 = v.dot(op.t1);
    auto at = [&](double t, int seg) -> Vec {
        double alpha = (1.0 - t) * a0 + t * a1;
        return normal_per_seg[static_cast<std::size_t>(seg)] +
               alpha * T.directions[static_cast<std::size_t>(seg)];
    };

    // samples: start, then per segment a midpoint and the collision at its end
    LoopField field;
    auto push = [&](double t, int seg) {
        field.times.push_back(t);
        field.segments.push_back(seg);
        field.vectors.push_back(at(t, seg));
    };
    push(0.0, 0);
    for (std::size_t seg = 0; seg <= k; ++seg) {
        double lo = col[seg], hi = col[seg + 1];
        push(0.5 * (lo + hi), static_cast<int>(seg));
        if (seg < k) push(hi, static_cast<int>(seg) + 1);  // collision: outgoing chart
    }
    push(1.0, static_cast<int>(k));
    return field;
}

}  // namespace bouquet
