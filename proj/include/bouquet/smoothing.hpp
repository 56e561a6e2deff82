#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "bouquet/polytope.hpp"

namespace bouquet {

// Anything that exposes value / gradient / Hessian of a scalar function on
// R^d. Level-set curvature and the refinement machinery work against this
// interface so analytic fields can stand in for the convolved one in tests.
class ScalarField {
  public:
    virtual ~ScalarField() = default;
    virtual int ambient_dim() const = 0;
    virtual double value(const Vec& x) const = 0;
    virtual Vec gradient(const Vec& x) const = 0;
    virtual Mat hessian(const Vec& x) const = 0;

    // One-call variant for hot loops. Fields whose derivatives fall out of
    // shared work (SmoothField: one node sweep yields all three) override
    // this; the default just chains the virtuals above.
    virtual void value_gradient_hessian(const Vec& x, double& value,
                                        Vec& gradient, Mat& hessian) const {
        value = this->value(x);
        gradient = this->gradient(x);
        hessian = this->hessian(x);
    }
};

// Exact nearest-point map onto a compact polytope via active-set enumeration:
// every subset of at most dim faces is a projection candidate, the feasible
// one closest to the query wins. Exact for convex polytopes and fast enough
// to sit inside a quadrature inner loop.
class PolytopeDistance {
  public:
    explicit PolytopeDistance(const Polytope& X);

    Vec project(const Vec& q) const;
    // Also reports the Jacobian of the nearest-point map: the identity for
    // interior queries, otherwise the tangential projector of the winning
    // active set (the map is affine on each active-set region).
    Vec project(const Vec& q, Mat& jacobian) const;
    double squared_distance(const Vec& q) const;

    const Polytope& polytope() const { return X_; }

  private:
    struct Candidate {
        std::vector<int> faces;
        Mat normals;     // n x k, the active normals
        Mat gram_inv;    // (N^T N)^{-1}
        Vec offsets;     // k
        Mat tangential;  // I - N (N^T N)^{-1} N^T, the projection Jacobian
    };
    Polytope X_;
    std::vector<Candidate> candidates_;
};

// Nearest point of X x {0} inside R^(n+1): drops the last coordinate, then
// runs cyclic Dykstra over the half-spaces until a full sweep moves the
// iterate by less than 1e-11 (NoConvergence past the sweep cap). The
// active-set projector above is the independent cross-check in the tests.
Vec project_to_polytope(const Polytope& X, const Vec& p);

struct QuadratureSpec {
    int nodes_per_axis = 9;          // tensor Gauss-Hermite, used when ambient <= 4
    int mc_samples = 20000;          // seeded Monte Carlo fallback beyond that
    std::uint64_t seed = 0x5eed5eedULL;
};

// Gaussian smoothing of f(x) = dist(x, X x {0})^2 in R^(n+1). Value, gradient
// and Hessian come from one sweep over the same nodes, differentiating under
// the node sum (the nearest-point map is affine on each active-set region),
// so the three stay mutually consistent to rounding at any node count — the
// level-set walkers depend on that. The last coordinate is canonicalized to
// |h| before evaluation, which makes the two sheets of the double exactly
// symmetric. kernel_estimate() keeps the classical kernel-transferred
// derivatives as an independent route for cross-checks.
class SmoothField : public ScalarField {
  public:
    struct Evaluation {
        double value = 0.0;
        Vec gradient;
        Mat hessian;
        double std_error = 0.0;  // Monte Carlo only; 0 for quadrature
        bool monte_carlo = false;
    };

    SmoothField(Polytope X, double sigma, QuadratureSpec quad = {});

    int ambient_dim() const override { return distance_.polytope().dim() + 1; }
    double value(const Vec& x) const override { return eval(x).value; }
    Vec gradient(const Vec& x) const override { return eval(x).gradient; }
    Mat hessian(const Vec& x) const override { return eval(x).hessian; }
    void value_gradient_hessian(const Vec& x, double& value, Vec& gradient,
                                Mat& hessian) const override {
        Evaluation e = eval(x);
        value = e.value;
        gradient = std::move(e.gradient);
        hessian = std::move(e.hessian);
    }

    Evaluation eval(const Vec& x) const;

    // Derivatives transferred onto the Gaussian kernel instead of the node
    // integrand: equal to eval() in the exact-integration limit, apart by
    // the truncation error at finite node counts. Quadrature ambients only.
    Evaluation kernel_estimate(const Vec& x) const;

    // Scale of the quadrature truncation: re-evaluates with two more nodes
    // per axis and reports the largest drift across value, gradient and
    // Hessian entries. Monte Carlo evaluations report 3x the standard error.
    double quadrature_error(const Vec& x) const;

    const Polytope& polytope() const { return distance_.polytope(); }
    double sigma() const { return sigma_; }
    const QuadratureSpec& quadrature() const { return quad_; }

  private:
    Evaluation eval_quadrature(const Vec& x, int nodes) const;
    Evaluation eval_monte_carlo(const Vec& x) const;

    PolytopeDistance distance_;
    double sigma_;
    QuadratureSpec quad_;
};

// Height z > 0 of the level surface {field = level} above the base point q
// (ambient (q, z)); Newton from a bracketing start. DomainError when the
// level does not separate, NoConvergence when Newton stalls.
double level_height(const SmoothField& field, const Vec& q, double level);

// Convex cone with apex v spanned by the outward normals active at a
// boundary point of X x {0}; the region whose nearest point is v.
struct ConeData {
    Vec apex;
    std::vector<Vec> generators;
};

// Cone of the lifted polytope at one of its vertices: active-face normals
// lifted flat plus both vertical directions.
ConeData vertex_cone(const Polytope& X, const Vec& vertex);

// sup of (inscribed ball radius) / (center distance to apex): computed as
// the distance from the origin to the convex hull of the unit inward facet
// normals (minimax duality), with the optimality of the returned value
// certified internally by the Chebyshev direction it induces.
// DomainError on degenerate cones, NoConvergence past the enumeration cap.
double projective_inradius(const ConeData& cone);

struct ConvexityCertificate {
    double kappa_hat = 0.0;  // certified strong-convexity modulus on the ball
    double rho = 0.0;        // projective inradius used
    Vec apex;                // cone apex in the lemma's (origin-ball) frame
    double ball_radius = 0.0;
    double sigma = 0.0;
};

// kappa_hat = 2 * omega_d * theta((1+r)/rho + |apex|) for the ball B_r(0):
// the smoothed field is kappa_hat-strongly convex there. The constant decays
// like the Gaussian tail, so for small sigma it is astronomically small yet
// still a true lower bound.
ConvexityCertificate strong_convexity_certificate(const SmoothField& field, const ConeData& cone,
                                                  double r);

// Sectional curvature of the level set through x in the tangent plane
// spanned by the orthonormal pair (u, v), via the second-fundamental-form
// minor: K = (A(u,u)A(v,v) - A(u,v)^2) / |grad|^2, A(u,v) = -<Hess u, v>.
// SingularPoint when the gradient is below 1e-8; DomainError when u, v are
// not orthonormal or not tangent within 1e-9.
double level_surface_curvature(const ScalarField& field, const Vec& x, const Vec& u,
                               const Vec& v);

}  // namespace bouquet
