#pragma once

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "bouquet/errors.hpp"

namespace bouquet {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Closed half-space {x : normal.x <= offset}. The polytope constructor
// normalizes the normal and rescales the offset to match.
struct HalfSpace {
    Vec normal;
    double offset;
};

enum class MembershipKind { Interior, BoundaryFace, BoundarySkeleton, Outside };

struct Membership {
    MembershipKind kind;
    int face = -1;  // active face index for BoundaryFace
};

// Convex polytope in H-representation. Invariants enforced at construction:
// dim >= 2, unit normals, no two identical boundary hyperplanes (up to 1e-10),
// and a strictly interior point exists (Chebyshev feasibility margin > 0).
// Boundedness is NOT required; is_compact() decides it.
class Polytope {
  public:
    Polytope(int dim, std::vector<HalfSpace> halfspaces);

    int dim() const { return dim_; }
    const std::vector<HalfSpace>& halfspaces() const { return hs_; }
    int face_count() const { return static_cast<int>(hs_.size()); }

    // offset - normal.x; positive inside, zero on the boundary hyperplane.
    double face_slack(int face, const Vec& x) const;

    // Classification with boundary tolerance tol: Outside if any constraint is
    // violated beyond tol, else by the number of active constraints.
    Membership contains(const Vec& x, double tol = 1e-9) const;

    // Affine reflection across the face's boundary hyperplane.
    Vec reflect_point(int face, const Vec& x) const;
    // Linear reflection of a direction (dR of reflect_point).
    Vec reflect_dir(int face, const Vec& u) const;
    Mat reflect_matrix(int face) const;

    // True iff the recession cone {d : N d <= 0} is trivial; LP-backed with
    // tolerance 1e-9, cached.
    bool is_compact() const;

    // All vertices by combinatorial enumeration over dim-subsets of faces,
    // deduplicated to 1e-9 and cached. Throws NotCompact on unbounded input.
    const std::vector<Vec>& vertices() const;

    // Faces whose boundary passes through x (slack within tol).
    std::vector<int> active_faces(const Vec& x, double tol = 1e-9) const;

    // Chebyshev center: a deepest interior point and its margin.
    const Vec& interior_point() const { return chebyshev_center_; }
    double interior_margin() const { return chebyshev_margin_; }

    // Characteristic length used to scale tolerances: max(1, max |offset|).
    double scale() const { return scale_; }

  private:
    int dim_;
    std::vector<HalfSpace> hs_;
    Vec chebyshev_center_;
    double chebyshev_margin_;
    double scale_;
    mutable std::optional<bool> compact_;
    mutable std::optional<std::vector<Vec>> vertices_;
};

}  // namespace bouquet
