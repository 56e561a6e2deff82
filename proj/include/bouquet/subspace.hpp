#pragma once

#include <Eigen/Dense>
#include <vector>

#include "bouquet/errors.hpp"

namespace bouquet {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Linear subspace of R^n stored as an orthonormal column basis.
// dim() == 0 is legal and means the trivial subspace {0}.
class Subspace {
  public:
    // Basis columns must be orthonormal to 1e-12; ambient_dim is basis.rows().
    explicit Subspace(Mat basis);

    // The trivial subspace of R^n.
    static Subspace zero(int ambient_dim);

    // Span of arbitrary (possibly dependent) columns, orthonormalized.
    // Columns with relative norm below 1e-12 after orthogonalization are dropped.
    static Subspace span(const Mat& vectors);

    int ambient_dim() const { return static_cast<int>(basis_.rows()); }
    int dim() const { return static_cast<int>(basis_.cols()); }
    const Mat& basis() const { return basis_; }

    // Orthogonal projector B B^T (n x n).
    Mat projector() const;

    // Orthogonal complement.
    Subspace complement() const;

    bool contains(const Vec& v, double tol = 1e-10) const;

  private:
    Mat basis_;
};

struct NullspaceResult {
    Subspace kernel;
    // Largest singular value classified into the kernel divided by the smallest
    // one kept out of it; 0 when either side is empty. Values near 1 mean the
    // rank cut is not clean.
    double gap_ratio = 0.0;
    std::vector<double> singular_values;  // descending
};

// Kernel of A: span of right singular vectors with sigma <= max(1e-10, rel_tol * sigma_max).
// Throws RankAmbiguous when gap_ratio > 0.5.
NullspaceResult nullspace(const Mat& A, double rel_tol = 1e-8);

struct IntersectionResult {
    Subspace intersection;
    // Smallest singular value of the stacked complement projectors; strictly
    // positive exactly when the intersection is trivial, and then it measures
    // how far the family is from sharing a common direction.
    double triviality_margin = 0.0;
};

// Intersection of subspaces of a common ambient space, computed as the
// nullspace of the stacked (I - B_i B_i^T). Throws DomainError on mismatched
// ambient dimensions or an empty list, RankAmbiguous propagated from nullspace.
IntersectionResult intersect(const std::vector<Subspace>& parts, double rel_tol = 1e-8);

// Principal angles (ascending, in [0, pi/2]) between two subspaces of equal
// ambient dimension. Length is min(dim A, dim B).
std::vector<double> principal_angles(const Subspace& a, const Subspace& b);

// Equal dimension and largest principal angle < tol.
bool subspace_equal(const Subspace& a, const Subspace& b, double tol = 1e-9);

// Rotation by angle within an ordered orthonormal 2-plane, identity on the
// complement. matrix() maps b1 -> cos(angle) b1 + sin(angle) b2.
class Rotation2Plane {
  public:
    // plane must be 2-dimensional; its basis supplies the orientation.
    Rotation2Plane(const Subspace& plane, double angle);

    Mat matrix() const;
    Vec apply(const Vec& v) const;

    const Subspace& plane() const { return plane_; }
    double angle() const { return angle_; }

  private:
    Subspace plane_;
    double angle_;
};

// Rotates a half-space normal within a 2-plane that must contain it
// (residual < 1e-10, else DomainError).
Vec rotate_halfspace_normal(const Vec& normal, const Subspace& plane, double angle);

}  // namespace bouquet
