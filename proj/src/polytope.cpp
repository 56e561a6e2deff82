#include "bouquet/polytope.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bouquet/linprog.hpp"

namespace bouquet {

namespace {

// next dim-subset of {0..count-1} in lexicographic order
bool next_combination(std::vector<int>& idx, int count) {
    int k = static_cast<int>(idx.size());
    for (int i = k - 1; i >= 0; --i) {
        if (idx[static_cast<size_t>(i)] < count - (k - i)) {
            ++idx[static_cast<size_t>(i)];
            for (int j = i + 1; j < k; ++j)
                idx[static_cast<size_t>(j)] = idx[static_cast<size_t>(j - 1)] + 1;
            return true;
        }
    }
    return false;
}

}  // namespace

Polytope::Polytope(int dim, std::vector<HalfSpace> halfspaces)
    : dim_(dim), hs_(std::move(halfspaces)) {
    if (dim_ < 2) throw DomainError("Polytope: dim must be >= 2");
    if (hs_.empty()) throw DomainError("Polytope: need at least one half-space");

    for (auto& h : hs_) {
        if (h.normal.size() != dim_)
            throw DomainError("Polytope: half-space normal has wrong dimension");
        double norm = h.normal.norm();
        if (norm < 1e-12)
            throw DomainError("Polytope: zero half-space normal");
        h.normal /= norm;
        h.offset /= norm;
    }

    for (size_t i = 0; i < hs_.size(); ++i) {
        for (size_t j = i + 1; j < hs_.size(); ++j) {
            bool same = (hs_[i].normal - hs_[j].normal).norm() < 1e-10 &&
                        std::abs(hs_[i].offset - hs_[j].offset) < 1e-10;
            bool flipped = (hs_[i].normal + hs_[j].normal).norm() < 1e-10 &&
                           std::abs(hs_[i].offset + hs_[j].offset) < 1e-10;
            if (same || flipped)
                throw DegenerateGeometry("Polytope: faces " + std::to_string(i) + " and " +
                                         std::to_string(j) + " share a boundary hyperplane");
        }
    }

    scale_ = 1.0;
    for (const auto& h : hs_) scale_ = std::max(scale_, std::abs(h.offset));

    // Chebyshev center: max r s.t. n_j.x + r <= c_j, r capped so unbounded
    // polytopes still yield a finite witness.
    const int m = face_count();
    Mat A(m + 1, dim_ + 1);
    Vec b(m + 1), c = Vec::Zero(dim_ + 1);
    for (int j = 0; j < m; ++j) {
        A.row(j).head(dim_) = hs_[static_cast<size_t>(j)].normal.transpose();
        A(j, dim_) = 1.0;
        b(j) = hs_[static_cast<size_t>(j)].offset;
    }
    A.row(m).setZero();
    A(m, dim_) = 1.0;
    b(m) = 1e6 * scale_;
    c(dim_) = 1.0;
    auto lp = solve_lp_max(A, b, c);
    if (lp.status != LpStatus::Optimal || lp.x(dim_) <= 1e-9 * scale_)
        throw DegenerateGeometry("Polytope: empty interior (Chebyshev margin " +
                                 std::to_string(lp.status == LpStatus::Optimal ? lp.x(dim_) : 0.0) + ")");
    chebyshev_center_ = lp.x.head(dim_);
    chebyshev_margin_ = lp.x(dim_);
}

double Polytope::face_slack(int face, const Vec& x) const {
    const auto& h = hs_[static_cast<size_t>(face)];
    return h.offset - h.normal.dot(x);
}

Membership Polytope::contains(const Vec& x, double tol) const {
    if (x.size() != dim_) throw DomainError("Polytope::contains: dimension mismatch");
    int active = -1;
    int active_count = 0;
    for (int j = 0; j < face_count(); ++j) {
        double s = face_slack(j, x);
        if (s < -tol) return Membership{MembershipKind::Outside, -1};
        if (std::abs(s) <= tol) {
            ++active_count;
            active = j;
        }
    }
    if (active_count == 0) return Membership{MembershipKind::Interior, -1};
    if (active_count == 1) return Membership{MembershipKind::BoundaryFace, active};
    return Membership{MembershipKind::BoundarySkeleton, -1};
}

std::vector<int> Polytope::active_faces(const Vec& x, double tol) const {
    std::vector<int> out;
    for (int j = 0; j < face_count(); ++j)
        if (std::abs(face_slack(j, x)) <= tol) out.push_back(j);
    return out;
}

Vec Polytope::reflect_point(int face, const Vec& x) const {
    const auto& h = hs_[static_cast<size_t>(face)];
    return x + 2.0 * (h.offset - h.normal.dot(x)) * h.normal;
}

Vec Polytope::reflect_dir(int face, const Vec& u) const {
    const auto& h = hs_[static_cast<size_t>(face)];
    return u - 2.0 * h.normal.dot(u) * h.normal;
}

Mat Polytope::reflect_matrix(int face) const {
    const auto& h = hs_[static_cast<size_t>(face)];
    return Mat::Identity(dim_, dim_) - 2.0 * h.normal * h.normal.transpose();
}

bool Polytope::is_compact() const {
    if (compact_) return *compact_;

    const int m = face_count();
    // quick sample check: a direction with all n_j.d <= 0 certifies unboundedness
    std::vector<Vec> samples;
    for (int i = 0; i < dim_; ++i) {
        samples.push_back(Vec::Unit(dim_, i));
        samples.push_back(-Vec::Unit(dim_, i));
    }
    for (const auto& h : hs_) samples.push_back(-h.normal);
    for (const auto& d : samples) {
        bool recession = true;
        for (const auto& h : hs_)
            if (h.normal.dot(d) > 1e-12) {
                recession = false;
                break;
            }
        if (recession) {
            compact_ = false;
            return false;
        }
    }

    // complete test: max +-d_i over the recession cone intersected with the
    // unit box; any positive optimum is a recession direction
    Mat A(m + 2 * dim_, dim_);
    Vec b(m + 2 * dim_);
    for (int j = 0; j < m; ++j) {
        A.row(j) = hs_[static_cast<size_t>(j)].normal.transpose();
        b(j) = 0.0;
    }
    A.block(m, 0, dim_, dim_) = Mat::Identity(dim_, dim_);
    A.block(m + dim_, 0, dim_, dim_) = -Mat::Identity(dim_, dim_);
    b.tail(2 * dim_).setOnes();
    for (int i = 0; i < 2 * dim_; ++i) {
        Vec c = Vec::Zero(dim_);
        c(i % dim_) = (i < dim_) ? 1.0 : -1.0;
        auto lp = solve_lp_max(A, b, c);
        if (lp.status != LpStatus::Optimal)
            throw NoConvergence("is_compact: recession LP did not solve", 0.0);
        if (lp.objective > 1e-9) {
            compact_ = false;
            return false;
        }
    }
    compact_ = true;
    return true;
}

const std::vector<Vec>& Polytope::vertices() const {
    if (vertices_) return *vertices_;
    if (!is_compact()) throw NotCompact("vertices: polytope is unbounded");

    const int m = face_count();
    // guard the combinatorial loop; this library works at desk scale
    double combos = 1.0;
    for (int i = 0; i < dim_; ++i) combos *= static_cast<double>(m - i) / (i + 1);
    if (combos > 2e6)
        throw DomainError("vertices: too many face subsets for combinatorial enumeration");

    std::vector<Vec> verts;
    std::vector<int> idx(static_cast<size_t>(dim_));
    for (int i = 0; i < dim_; ++i) idx[static_cast<size_t>(i)] = i;
    bool more = m >= dim_;
    while (more) {
        Mat N(dim_, dim_);
        Vec rhs(dim_);
        for (int i = 0; i < dim_; ++i) {
            N.row(i) = hs_[static_cast<size_t>(idx[static_cast<size_t>(i)])].normal.transpose();
            rhs(i) = hs_[static_cast<size_t>(idx[static_cast<size_t>(i)])].offset;
        }
        Eigen::FullPivLU<Mat> lu(N);
        lu.setThreshold(1e-9);
        if (lu.rank() == dim_) {
            Vec x = lu.solve(rhs);
            bool feasible = true;
            for (int j = 0; j < m && feasible; ++j)
                if (face_slack(j, x) < -1e-9 * scale_) feasible = false;
            if (feasible) {
                bool fresh = true;
                for (const auto& v : verts)
                    if ((v - x).norm() < 1e-9 * scale_) {
                        fresh = false;
                        break;
                    }
                if (fresh) verts.push_back(x);
            }
        }
        more = next_combination(idx, m);
    }
    vertices_ = std::move(verts);
    return *vertices_;
}

}  // namespace bouquet
