#include "bouquet/smoothing.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <random>

namespace bouquet {

namespace {

// Enumerate index subsets of {0..m-1} of size exactly k, in lexicographic
// order so candidate lists are reproducible.
void for_each_subset(int m, int k, const std::function<void(const std::vector<int>&)>& fn) {
    std::vector<int> idx(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) idx[static_cast<std::size_t>(i)] = i;
    if (k == 0) {
        fn({});
        return;
    }
    if (k > m) return;
    while (true) {
        fn(idx);
        int pos = k - 1;
        while (pos >= 0 && idx[static_cast<std::size_t>(pos)] == m - k + pos) --pos;
        if (pos < 0) break;
        ++idx[static_cast<std::size_t>(pos)];
        for (int j = pos + 1; j < k; ++j)
            idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
    }
}

}  // namespace

PolytopeDistance::PolytopeDistance(const Polytope& X) : X_(X) {
    if (!X.is_compact()) throw NotCompact("distance map requires a compact polytope");
    const int n = X.dim();
    const int m = X.face_count();
    const auto& hs = X.halfspaces();
    for (int k = 1; k <= n; ++k) {
        for_each_subset(m, k, [&](const std::vector<int>& faces) {
            Mat N(n, k);
            Vec c(k);
            for (int j = 0; j < k; ++j) {
                N.col(j) = hs[static_cast<std::size_t>(faces[static_cast<std::size_t>(j)])].normal;
                c(j) = hs[static_cast<std::size_t>(faces[static_cast<std::size_t>(j)])].offset;
            }
            Mat gram = N.transpose() * N;
            Eigen::FullPivLU<Mat> lu(gram);
            // Dependent normals (e.g. opposite faces) cannot form an active
            // set of a nearest-point problem; skip them.
            if (lu.rank() < k) return;
            Mat gram_inv = lu.inverse();
            Mat tangential =
                Mat::Identity(n, n) - N * gram_inv * N.transpose();
            candidates_.push_back({faces, N, gram_inv, c, tangential});
        });
    }
}

Vec PolytopeDistance::project(const Vec& q) const {
    Mat jacobian;
    return project(q, jacobian);
}

Vec PolytopeDistance::project(const Vec& q, Mat& jacobian) const {
    if (q.size() != X_.dim()) throw DomainError("query dimension does not match the polytope");
    const int n = X_.dim();
    double best = std::numeric_limits<double>::infinity();
    Vec best_p = q;
    jacobian = Mat::Identity(n, n);
    // Interior (or boundary) queries project to themselves.
    double min_slack = std::numeric_limits<double>::infinity();
    for (int f = 0; f < X_.face_count(); ++f) min_slack = std::min(min_slack, X_.face_slack(f, q));
    if (min_slack >= 0.0) return q;

    const double feas_tol = 1e-9 * X_.scale();
    for (const auto& cand : candidates_) {
        // Project onto the affine intersection of the candidate's hyperplanes.
        Vec residual = cand.normals.transpose() * q - cand.offsets;
        Vec p = q - cand.normals * (cand.gram_inv * residual);
        double d2 = (p - q).squaredNorm();
        if (d2 >= best) continue;
        bool feasible = true;
        for (int f = 0; f < X_.face_count() && feasible; ++f)
            feasible = X_.face_slack(f, p) >= -feas_tol;
        if (feasible) {
            best = d2;
            best_p = p;
            jacobian = cand.tangential;
        }
    }
    return best_p;
}

double PolytopeDistance::squared_distance(const Vec& q) const {
    return (project(q) - q).squaredNorm();
}

Vec project_to_polytope(const Polytope& X, const Vec& p) {
    const int n = X.dim();
    if (p.size() != n + 1)
        throw DomainError("point must live in the lifted ambient space of the double");
    if (!X.is_compact()) throw NotCompact("projection requires a compact polytope");

    // The slab {x_{n+1} = 0} splits off exactly: project it away first.
    Vec x = p.head(n);
    const auto& hs = X.halfspaces();
    std::vector<Vec> increments(hs.size(), Vec::Zero(n));
    const double sweep_tol = 1e-11;
    const int max_sweeps = 10000;
    double moved = std::numeric_limits<double>::infinity();
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        Vec before = x;
        for (std::size_t i = 0; i < hs.size(); ++i) {
            Vec y = x + increments[i];
            double excess = hs[i].normal.dot(y) - hs[i].offset;
            Vec projected = excess > 0.0 ? Vec(y - excess * hs[i].normal) : y;
            increments[i] = y - projected;
            x = projected;
        }
        moved = (x - before).norm();
        if (moved < sweep_tol) {
            Vec out = Vec::Zero(n + 1);
            out.head(n) = x;
            return out;
        }
    }
    throw NoConvergence("cyclic projection did not settle within the sweep cap", moved);
}

namespace {

struct GaussHermiteRule {
    std::vector<double> nodes;    // symmetric about 0
    std::vector<double> weights;  // for weight function exp(-t^2)
};

// Golub-Welsch on the Hermite Jacobi matrix, then symmetrized so paired
// nodes/weights match bit-for-bit and the middle node of an odd rule is
// exactly zero.
const GaussHermiteRule& gauss_hermite(int m) {
    static std::map<int, GaussHermiteRule> cache;
    static std::mutex mtx;
    std::lock_guard<std::mutex> lock(mtx);
    auto it = cache.find(m);
    if (it != cache.end()) return it->second;
    if (m < 1 || m > 200) throw DomainError("quadrature order out of range");

    Mat J = Mat::Zero(m, m);
    for (int k = 0; k + 1 < m; ++k) {
        double b = std::sqrt((k + 1) / 2.0);
        J(k, k + 1) = b;
        J(k + 1, k) = b;
    }
    Eigen::SelfAdjointEigenSolver<Mat> eig(J);
    GaussHermiteRule rule;
    rule.nodes.resize(static_cast<std::size_t>(m));
    rule.weights.resize(static_cast<std::size_t>(m));
    const double sqrt_pi = std::sqrt(M_PI);
    for (int i = 0; i < m; ++i) {
        rule.nodes[static_cast<std::size_t>(i)] = eig.eigenvalues()(i);
        double v0 = eig.eigenvectors()(0, i);
        rule.weights[static_cast<std::size_t>(i)] = sqrt_pi * v0 * v0;
    }
    for (int i = 0, j = m - 1; i < j; ++i, --j) {
        double t = 0.5 * (rule.nodes[static_cast<std::size_t>(j)] -
                          rule.nodes[static_cast<std::size_t>(i)]);
        rule.nodes[static_cast<std::size_t>(i)] = -t;
        rule.nodes[static_cast<std::size_t>(j)] = t;
        double w = 0.5 * (rule.weights[static_cast<std::size_t>(i)] +
                          rule.weights[static_cast<std::size_t>(j)]);
        rule.weights[static_cast<std::size_t>(i)] = w;
        rule.weights[static_cast<std::size_t>(j)] = w;
    }
    if (m % 2 == 1) rule.nodes[static_cast<std::size_t>(m / 2)] = 0.0;
    return cache.emplace(m, std::move(rule)).first->second;
}

struct KahanSum {
    double sum = 0.0;
    double comp = 0.0;
    void add(double x) {
        double y = x - comp;
        double t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
};

// Deterministic uniform in [0,1) from the raw engine stream; avoids the
// implementation-defined std::*_distribution wrappers.
double unit_uniform(std::mt19937_64& rng) { return std::ldexp(static_cast<double>(rng() >> 11), -53); }

}  // namespace

SmoothField::SmoothField(Polytope X, double sigma, QuadratureSpec quad)
    : distance_(X), sigma_(sigma), quad_(quad) {
    if (!(sigma > 0.0) || !std::isfinite(sigma))
        throw DomainError("smoothing width must be positive");
    if (quad_.nodes_per_axis < 3) throw DomainError("quadrature needs at least 3 nodes per axis");
    if (quad_.mc_samples < 100) throw DomainError("Monte Carlo fallback needs at least 100 samples");
}

SmoothField::Evaluation SmoothField::eval_quadrature(const Vec& x, int nodes) const {
    const int d = ambient_dim();
    const int n = d - 1;
    const auto& rule = gauss_hermite(nodes);
    const double scale = std::sqrt(2.0) * sigma_;
    const double norm = std::pow(M_PI, -0.5 * d);

    Evaluation out;
    out.gradient = Vec::Zero(d);
    out.hessian = Mat::Zero(d, d);
    KahanSum value;

    std::vector<int> idx(static_cast<std::size_t>(d), 0);
    Vec t(d), p(d);
    Mat jac(n, n);
    while (true) {
        double w = norm;
        for (int a = 0; a < d; ++a) {
            t(a) = rule.nodes[static_cast<std::size_t>(idx[static_cast<std::size_t>(a)])];
            w *= rule.weights[static_cast<std::size_t>(idx[static_cast<std::size_t>(a)])];
        }
        p = x - scale * t;
        // Differentiate under the node sum: with the nodes pinned to x, the
        // sums below are exactly the derivatives of the value sum, so the
        // estimates stay consistent regardless of truncation.
        Vec proj = distance_.project(p.head(n), jac);
        Vec off = p.head(n) - proj;
        double f = off.squaredNorm() + p(d - 1) * p(d - 1);
        value.add(w * f);
        out.gradient.head(n).noalias() += (2.0 * w) * off;
        out.gradient(d - 1) += (2.0 * w) * p(d - 1);
        out.hessian.topLeftCorner(n, n).noalias() +=
            (2.0 * w) * (Mat::Identity(n, n) - jac);
        out.hessian(d - 1, d - 1) += 2.0 * w;

        int a = 0;
        while (a < d && ++idx[static_cast<std::size_t>(a)] == nodes) {
            idx[static_cast<std::size_t>(a)] = 0;
            ++a;
        }
        if (a == d) break;
    }
    out.value = value.sum;
    out.hessian = 0.5 * (out.hessian + out.hessian.transpose()).eval();
    return out;
}

SmoothField::Evaluation SmoothField::kernel_estimate(const Vec& x) const {
    const int d = ambient_dim();
    const int n = d - 1;
    if (x.size() != d) throw DomainError("evaluation point has the wrong dimension");
    if (d > 4) throw DomainError("kernel estimates are quadrature-only");
    Vec canon = x;
    const bool flipped = x(d - 1) < 0.0;
    if (flipped) canon(d - 1) = -x(d - 1);

    const auto& rule = gauss_hermite(quad_.nodes_per_axis);
    const double scale = std::sqrt(2.0) * sigma_;
    const double norm = std::pow(M_PI, -0.5 * d);

    Evaluation out;
    out.gradient = Vec::Zero(d);
    out.hessian = Mat::Zero(d, d);
    KahanSum value;

    std::vector<int> idx(static_cast<std::size_t>(d), 0);
    Vec t(d), p(d);
    while (true) {
        double w = norm;
        for (int a = 0; a < d; ++a) {
            t(a) = rule.nodes[static_cast<std::size_t>(idx[static_cast<std::size_t>(a)])];
            w *= rule.weights[static_cast<std::size_t>(idx[static_cast<std::size_t>(a)])];
        }
        p = canon - scale * t;
        double f = distance_.squared_distance(p.head(n)) + p(d - 1) * p(d - 1);
        double wf = w * f;
        value.add(wf);
        // Derivatives transferred onto the Gaussian kernel.
        out.gradient.noalias() += wf * (-std::sqrt(2.0) / sigma_) * t;
        out.hessian.noalias() += (wf / (sigma_ * sigma_)) * (2.0 * t * t.transpose() - Mat::Identity(d, d));

        int a = 0;
        while (a < d &&
               ++idx[static_cast<std::size_t>(a)] == quad_.nodes_per_axis) {
            idx[static_cast<std::size_t>(a)] = 0;
            ++a;
        }
        if (a == d) break;
    }
    out.value = value.sum;
    out.hessian = 0.5 * (out.hessian + out.hessian.transpose()).eval();
    if (flipped) {
        out.gradient(d - 1) = -out.gradient(d - 1);
        out.hessian.row(d - 1) *= -1.0;
        out.hessian.col(d - 1) *= -1.0;
    }
    return out;
}

SmoothField::Evaluation SmoothField::eval_monte_carlo(const Vec& x) const {
    const int d = ambient_dim();
    const int n = d - 1;
    std::mt19937_64 rng(quad_.seed);
    Evaluation out;
    out.monte_carlo = true;
    out.gradient = Vec::Zero(d);
    out.hessian = Mat::Zero(d, d);
    KahanSum value, value_sq;

    const int N = quad_.mc_samples;
    Vec xi(d), p(d);
    Mat jac(n, n);
    for (int s = 0; s < N; ++s) {
        // Box-Muller pairs from the raw engine stream: deterministic.
        for (int a = 0; a < d; a += 2) {
            double u1 = std::max(unit_uniform(rng), 1e-300);
            double u2 = unit_uniform(rng);
            double r = std::sqrt(-2.0 * std::log(u1));
            xi(a) = r * std::cos(2.0 * M_PI * u2);
            if (a + 1 < d) xi(a + 1) = r * std::sin(2.0 * M_PI * u2);
        }
        p = x - sigma_ * xi;
        // Same differentiate-under-the-sum estimators as the quadrature
        // path: the sample average of (f, grad f, hess f) at pinned offsets.
        Vec proj = distance_.project(p.head(n), jac);
        Vec off = p.head(n) - proj;
        double f = off.squaredNorm() + p(d - 1) * p(d - 1);
        value.add(f);
        value_sq.add(f * f);
        out.gradient.head(n).noalias() += 2.0 * off;
        out.gradient(d - 1) += 2.0 * p(d - 1);
        out.hessian.topLeftCorner(n, n).noalias() +=
            2.0 * (Mat::Identity(n, n) - jac);
        out.hessian(d - 1, d - 1) += 2.0;
    }
    out.value = value.sum / N;
    out.gradient /= N;
    out.hessian /= N;
    out.hessian = 0.5 * (out.hessian + out.hessian.transpose()).eval();
    double variance = std::max(0.0, value_sq.sum / N - out.value * out.value);
    out.std_error = std::sqrt(variance / N);
    return out;
}

SmoothField::Evaluation SmoothField::eval(const Vec& x) const {
    const int d = ambient_dim();
    if (x.size() != d) throw DomainError("evaluation point has the wrong dimension");
    // Canonicalize the sheet coordinate: evaluating at |h| and flipping the
    // odd derivative components back makes the two sheets agree exactly.
    Vec canon = x;
    const bool flipped = x(d - 1) < 0.0;
    if (flipped) canon(d - 1) = -x(d - 1);
    Evaluation out = d <= 4 ? eval_quadrature(canon, quad_.nodes_per_axis) : eval_monte_carlo(canon);
    if (flipped) {
        out.gradient(d - 1) = -out.gradient(d - 1);
        out.hessian.row(d - 1) *= -1.0;
        out.hessian.col(d - 1) *= -1.0;
    }
    return out;
}

double SmoothField::quadrature_error(const Vec& x) const {
    const int d = ambient_dim();
    if (x.size() != d) throw DomainError("evaluation point has the wrong dimension");
    if (d > 4) return 3.0 * eval(x).std_error;
    Vec canon = x;
    if (canon(d - 1) < 0.0) canon(d - 1) = -canon(d - 1);
    Evaluation coarse = eval_quadrature(canon, quad_.nodes_per_axis);
    Evaluation fine = eval_quadrature(canon, quad_.nodes_per_axis + 2);
    double err = std::abs(coarse.value - fine.value);
    err = std::max(err, (coarse.gradient - fine.gradient).cwiseAbs().maxCoeff());
    err = std::max(err, (coarse.hessian - fine.hessian).cwiseAbs().maxCoeff());
    return err;
}

double level_height(const SmoothField& field, const Vec& q, double level) {
    const int d = field.ambient_dim();
    if (q.size() != d - 1) throw DomainError("base point must live below the lifted ambient space");
    Vec x(d);
    x.head(d - 1) = q;
    x(d - 1) = 0.0;
    double base = field.value(x);
    if (level <= base + 1e-14)
        throw DomainError("level does not clear the field value above the base point");

    // The vertical part of the field is exactly quadratic, so Newton from the
    // separated estimate lands almost immediately; keep a bisection safeguard.
    double lo = 0.0;
    double hi = std::sqrt(level - base) + field.sigma();
    x(d - 1) = hi;
    while (field.value(x) < level) {
        hi *= 2.0;
        x(d - 1) = hi;
        if (hi > 1e8) throw NoConvergence("level surface bracket expansion failed", hi);
    }
    double z = std::sqrt(level - base);
    for (int iter = 0; iter < 100; ++iter) {
        x(d - 1) = z;
        SmoothField::Evaluation e = field.eval(x);
        double g = e.value - level;
        if (std::abs(g) < 1e-13 * std::max(1.0, std::abs(level))) return z;
        if (g > 0.0)
            hi = z;
        else
            lo = z;
        double dz = e.gradient(d - 1);
        double next = dz > 0.0 ? z - g / dz : 0.5 * (lo + hi);
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        z = next;
    }
    throw NoConvergence("level height iteration stalled", hi - lo);
}

ConeData vertex_cone(const Polytope& X, const Vec& vertex) {
    const int n = X.dim();
    if (vertex.size() != n) throw DomainError("vertex dimension does not match the polytope");
    if (X.contains(vertex).kind == MembershipKind::Outside)
        throw DomainError("point lies outside the polytope");
    std::vector<int> active = X.active_faces(vertex, 1e-9 * X.scale());
    Mat N(n, static_cast<int>(active.size()));
    for (std::size_t j = 0; j < active.size(); ++j)
        N.col(static_cast<int>(j)) = X.halfspaces()[static_cast<std::size_t>(active[j])].normal;
    if (static_cast<int>(active.size()) < n ||
        Eigen::FullPivLU<Mat>(N).rank() < n)
        throw DomainError("point is not a vertex: active normals do not span");

    ConeData cone;
    cone.apex = Vec::Zero(n + 1);
    cone.apex.head(n) = vertex;
    for (std::size_t j = 0; j < active.size(); ++j) {
        Vec g = Vec::Zero(n + 1);
        g.head(n) = N.col(static_cast<int>(j));
        cone.generators.push_back(g);
    }
    // The lifted polytope is flat, so the normal cone extends freely in the
    // sheet direction.
    Vec up = Vec::Unit(n + 1, n);
    cone.generators.push_back(up);
    cone.generators.push_back(-up);
    return cone;
}

double projective_inradius(const ConeData& cone) {
    const int d = static_cast<int>(cone.apex.size());
    if (d < 2) throw DomainError("cone ambient dimension must be at least 2");
    const int m = static_cast<int>(cone.generators.size());
    if (m == 0) throw DomainError("cone has no generators");

    Mat G(d, m);
    for (int j = 0; j < m; ++j) {
        const Vec& g = cone.generators[static_cast<std::size_t>(j)];
        if (g.size() != d) throw DomainError("generator dimension mismatch");
        double norm = g.norm();
        if (norm < 1e-12) throw DomainError("degenerate zero generator");
        G.col(j) = g / norm;
    }
    if (Eigen::FullPivLU<Mat>(G).rank() < d)
        throw DomainError("cone generators do not span the ambient space");

    // Facets of cone(G): hyperplanes spanned by d-1 generators with everything
    // else on one side. Their inward normals are all we need.
    double subset_count = 1.0;
    for (int i = 0; i < d - 1; ++i) subset_count *= static_cast<double>(m - i) / (i + 1);
    if (subset_count > 100000.0)
        throw NoConvergence("facet enumeration above the size cap", subset_count);

    std::vector<Vec> facets;
    for_each_subset(m, d - 1, [&](const std::vector<int>& idx) {
        Mat S(d, d - 1);
        for (int j = 0; j < d - 1; ++j) S.col(j) = G.col(idx[static_cast<std::size_t>(j)]);
        Eigen::JacobiSVD<Mat> svd(S, Eigen::ComputeFullU);
        if (d > 1 && svd.singularValues()(d - 2) < 1e-10) return;  // subset does not span a hyperplane
        Vec w = svd.matrixU().col(d - 1);
        double lo = std::numeric_limits<double>::infinity();
        double hi = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < m; ++j) {
            double s = G.col(j).dot(w);
            lo = std::min(lo, s);
            hi = std::max(hi, s);
        }
        Vec inward;
        if (lo >= -1e-10)
            inward = w;
        else if (hi <= 1e-10)
            inward = -w;
        else
            return;  // hyperplane cuts the cone: not a facet
        for (const Vec& known : facets)
            if (known.dot(inward) > 1.0 - 1e-9) return;
        facets.push_back(inward);
    });
    if (facets.empty()) throw DomainError("cone has no boundary facets");

    // rho = dist(0, conv of the unit inward facet normals): exact min-norm
    // point by enumerating affine supports (Caratheodory keeps them small).
    const int nf = static_cast<int>(facets.size());
    if (nf > 16) throw NoConvergence("facet count above the support enumeration cap", nf);
    double best = std::numeric_limits<double>::infinity();
    Vec best_point = facets.front();
    for (int k = 1; k <= std::min(nf, d + 1); ++k) {
        for_each_subset(nf, k, [&](const std::vector<int>& idx) {
            Mat D(d, k);
            for (int j = 0; j < k; ++j) D.col(j) = facets[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])];
            Mat kkt = Mat::Zero(k + 1, k + 1);
            kkt.topLeftCorner(k, k) = D.transpose() * D;
            kkt.topRightCorner(k, 1).setOnes();
            kkt.bottomLeftCorner(1, k).setOnes();
            Vec rhs = Vec::Zero(k + 1);
            rhs(k) = 1.0;
            Eigen::FullPivLU<Mat> lu(kkt);
            if (!lu.isInvertible()) return;
            Vec sol = lu.solve(rhs);
            for (int j = 0; j < k; ++j)
                if (sol(j) < -1e-12) return;  // support point leaves the simplex
            Vec point = D * sol.head(k);
            double norm = point.norm();
            if (norm < best) {
                best = norm;
                best_point = point;
            }
        });
    }
    if (best < 1e-9) throw DomainError("cone is degenerate: projective inradius vanishes");

    // Primal certificate: the induced Chebyshev direction must realize the
    // same margin against every facet.
    Vec direction = best_point / best;
    double margin = std::numeric_limits<double>::infinity();
    for (const Vec& f : facets) margin = std::min(margin, f.dot(direction));
    if (std::abs(margin - best) > 1e-7)
        throw NoConvergence("inradius optimality certificate failed", std::abs(margin - best));
    return best;
}

ConvexityCertificate strong_convexity_certificate(const SmoothField& field, const ConeData& cone,
                                                  double r) {
    if (!(r > 0.0) || !std::isfinite(r)) throw DomainError("ball radius must be positive");
    if (cone.apex.size() != field.ambient_dim())
        throw DomainError("cone lives in a different ambient space than the field");
    ConvexityCertificate cert;
    cert.rho = projective_inradius(cone);
    cert.apex = cone.apex;
    cert.ball_radius = r;
    cert.sigma = field.sigma();

    const int d = field.ambient_dim();
    const double sigma = field.sigma();
    const double omega = std::pow(M_PI, 0.5 * d) / std::tgamma(0.5 * d + 1.0);
    const double s = (1.0 + r) / cert.rho + cone.apex.norm();
    const double theta = std::pow(2.0 * M_PI * sigma * sigma, -0.5 * d) *
                         std::exp(-s * s / (2.0 * sigma * sigma));
    cert.kappa_hat = 2.0 * omega * theta;
    return cert;
}

double level_surface_curvature(const ScalarField& field, const Vec& x, const Vec& u,
                               const Vec& v) {
    const int d = field.ambient_dim();
    if (x.size() != d || u.size() != d || v.size() != d)
        throw DomainError("curvature arguments must match the ambient dimension");
    if (std::abs(u.norm() - 1.0) > 1e-9 || std::abs(v.norm() - 1.0) > 1e-9 ||
        std::abs(u.dot(v)) > 1e-9)
        throw DomainError("tangent pair must be orthonormal");

    Vec g = field.gradient(x);
    double gn = g.norm();
    if (gn <= 1e-8) throw SingularPoint("gradient vanishes: level set is not regular here");
    if (std::abs(u.dot(g)) > 1e-9 * gn || std::abs(v.dot(g)) > 1e-9 * gn)
        throw DomainError("tangent pair is not orthogonal to the gradient");

    Mat H = field.hessian(x);
    double auu = -u.dot(H * u);
    double avv = -v.dot(H * v);
    double auv = -u.dot(H * v);
    return (auu * avv - auv * auv) / g.squaredNorm();
}

}  // namespace bouquet
