#include "bouquet/subspace.hpp"

#include <algorithm>
#include <cmath>

namespace bouquet {

Subspace::Subspace(Mat basis) : basis_(std::move(basis)) {
    if (basis_.rows() == 0)
        throw DomainError("Subspace: ambient dimension must be positive");
    if (basis_.cols() > basis_.rows())
        throw DomainError("Subspace: more basis vectors than ambient dimension");
    if (basis_.cols() > 0) {
        Mat gram = basis_.transpose() * basis_;
        double err = (gram - Mat::Identity(basis_.cols(), basis_.cols())).cwiseAbs().maxCoeff();
        if (err > 1e-12)
            throw DomainError("Subspace: basis not orthonormal (deviation " + std::to_string(err) + ")");
    }
}

Subspace Subspace::zero(int ambient_dim) {
    return Subspace(Mat(ambient_dim, 0));
}

Subspace Subspace::span(const Mat& vectors) {
    if (vectors.rows() == 0)
        throw DomainError("Subspace::span: ambient dimension must be positive");
    if (vectors.cols() == 0) return zero(static_cast<int>(vectors.rows()));
    // SVD-based orthonormalization: keep left singular vectors above a
    // relative cutoff so near-dependent inputs collapse cleanly.
    Eigen::JacobiSVD<Mat> svd(vectors, Eigen::ComputeThinU);
    double smax = svd.singularValues().size() ? svd.singularValues()(0) : 0.0;
    int keep = 0;
    for (int i = 0; i < svd.singularValues().size(); ++i)
        if (svd.singularValues()(i) > 1e-12 * std::max(smax, 1.0)) ++keep;
    return Subspace(svd.matrixU().leftCols(keep));
}

Mat Subspace::projector() const {
    if (dim() == 0) return Mat::Zero(ambient_dim(), ambient_dim());
    return basis_ * basis_.transpose();
}

Subspace Subspace::complement() const {
    const int n = ambient_dim();
    Mat perp = Mat::Identity(n, n) - projector();
    Eigen::JacobiSVD<Mat> svd(perp, Eigen::ComputeThinU);
    return Subspace(svd.matrixU().leftCols(n - dim()));
}

bool Subspace::contains(const Vec& v, double tol) const {
    if (v.size() != ambient_dim())
        throw DomainError("Subspace::contains: dimension mismatch");
    Vec residual = v;
    if (dim() > 0) residual -= basis_ * (basis_.transpose() * v);
    return residual.norm() <= tol * std::max(1.0, v.norm());
}

NullspaceResult nullspace(const Mat& A, double rel_tol) {
    if (A.rows() == 0 || A.cols() == 0)
        throw DomainError("nullspace: empty matrix");
    Eigen::JacobiSVD<Mat> svd(A, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    const int r = static_cast<int>(sv.size());  // == min(rows, cols)
    const int n = static_cast<int>(A.cols());
    double smax = r > 0 ? sv(0) : 0.0;
    double cut = std::max(1e-10, rel_tol * smax);

    int kept_rank = 0;  // singular values above the cut
    for (int i = 0; i < r; ++i)
        if (sv(i) > cut) ++kept_rank;

    double gap = 0.0;
    if (kept_rank > 0 && kept_rank < r)
        gap = sv(kept_rank) / sv(kept_rank - 1);

    NullspaceResult out{
        Subspace(Mat(svd.matrixV().rightCols(n - kept_rank))),
        gap,
        std::vector<double>(sv.data(), sv.data() + r)};
    if (gap > 0.5)
        throw RankAmbiguous("nullspace: rank cut not clean (gap ratio " + std::to_string(gap) + ")", gap);
    return out;
}

IntersectionResult intersect(const std::vector<Subspace>& parts, double rel_tol) {
    if (parts.empty())
        throw DomainError("intersect: need at least one subspace");
    const int n = parts.front().ambient_dim();
    for (const auto& s : parts)
        if (s.ambient_dim() != n)
            throw DomainError("intersect: mismatched ambient dimensions");

    Mat stack(n * static_cast<int>(parts.size()), n);
    Mat id = Mat::Identity(n, n);
    for (size_t i = 0; i < parts.size(); ++i)
        stack.middleRows(static_cast<int>(i) * n, n) = id - parts[i].projector();

    Eigen::JacobiSVD<Mat> svd(stack, Eigen::ComputeFullV);
    double sigma_min = svd.singularValues()(svd.singularValues().size() - 1);

    NullspaceResult ns = nullspace(stack, rel_tol);
    return IntersectionResult{ns.kernel, sigma_min};
}

std::vector<double> principal_angles(const Subspace& a, const Subspace& b) {
    if (a.ambient_dim() != b.ambient_dim())
        throw DomainError("principal_angles: mismatched ambient dimensions");
    int k = std::min(a.dim(), b.dim());
    if (k == 0) return {};
    // Bjorck-Golub: cosines from the basis product, sines from the residual;
    // acos alone loses half the digits for nearly equal subspaces.
    Eigen::JacobiSVD<Mat> cos_svd(Mat(a.basis().transpose() * b.basis()));
    Eigen::JacobiSVD<Mat> sin_svd(Mat(b.basis() - a.projector() * b.basis()));
    Vec cosines = cos_svd.singularValues();   // descending
    Vec sines = sin_svd.singularValues();     // descending; reversed pairs with cosines
    std::vector<double> angles(static_cast<size_t>(k));
    for (int i = 0; i < k; ++i) {
        double c = std::clamp(cosines(i), -1.0, 1.0);
        double s = std::clamp(sines(sines.size() - 1 - i), -1.0, 1.0);
        angles[static_cast<size_t>(i)] = (c * c >= 0.5) ? std::asin(s) : std::acos(c);
    }
    std::sort(angles.begin(), angles.end());
    return angles;
}

bool subspace_equal(const Subspace& a, const Subspace& b, double tol) {
    if (a.ambient_dim() != b.ambient_dim() || a.dim() != b.dim()) return false;
    if (a.dim() == 0) return true;
    auto angles = principal_angles(a, b);
    return angles.back() < tol;
}

Rotation2Plane::Rotation2Plane(const Subspace& plane, double angle)
    : plane_(plane), angle_(angle) {
    if (plane.dim() != 2)
        throw DomainError("Rotation2Plane: plane must be 2-dimensional");
}

Mat Rotation2Plane::matrix() const {
    const int n = plane_.ambient_dim();
    Vec b1 = plane_.basis().col(0), b2 = plane_.basis().col(1);
    double c = std::cos(angle_), s = std::sin(angle_);
    return Mat::Identity(n, n)
         + (c - 1.0) * (b1 * b1.transpose() + b2 * b2.transpose())
         + s * (b2 * b1.transpose() - b1 * b2.transpose());
}

Vec Rotation2Plane::apply(const Vec& v) const {
    if (v.size() != plane_.ambient_dim())
        throw DomainError("Rotation2Plane::apply: dimension mismatch");
    Vec b1 = plane_.basis().col(0), b2 = plane_.basis().col(1);
    double x = b1.dot(v), y = b2.dot(v);
    double c = std::cos(angle_), s = std::sin(angle_);
    return v + (c * x - s * y - x) * b1 + (s * x + c * y - y) * b2;
}

Vec rotate_halfspace_normal(const Vec& normal, const Subspace& plane, double angle) {
    Vec residual = normal - plane.projector() * normal;
    if (residual.norm() > 1e-10 * std::max(1.0, normal.norm()))
        throw DomainError("rotate_halfspace_normal: normal does not lie in the rotation plane");
    return Rotation2Plane(plane, angle).apply(normal);
}

}  // namespace bouquet
