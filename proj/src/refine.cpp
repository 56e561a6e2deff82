#include "bouquet/refine.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <mutex>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#ifdef LEVEL_TRACE
#include <cstdio>
#endif

#include "bouquet/errors.hpp"

namespace bouquet {

namespace {

// ---------------------------------------------------------------------------
// Balanced level: the half-space fold model.
//
// Over a single face the smoothed squared distance depends only on the signed
// outward distance u (in sigma units) and equals sigma^2 * psi(u) with
// psi(u) = (1 + u^2) Phi(u) + u phi(u): the mean squared positive excess of a
// unit Gaussian beyond -u.  The fold profile of the level sigma^2 (1 + c^2)
// is h(u) = sigma * sqrt(c^2 - psi(u)); crossing it replaces a straight run
// of the flat double by an arc that turns around at psi(u) = c^2.  The
// insertion width w(c) (arc length minus flat length, per crossing) is
// negative for small c (the turnaround sits deep inside the wall, a shortcut)
// and positive for large c (the arc climbs too high), so a unique c* balances
// it.  Everything is scale-free in sigma.
// ---------------------------------------------------------------------------

constexpr double kPi = 3.14159265358979323846;

double gauss_pdf(double u) { return std::exp(-0.5 * u * u) / std::sqrt(2.0 * kPi); }

// erfc keeps the lower tail accurate; erf would cancel catastrophically.
double gauss_cdf(double u) { return 0.5 * std::erfc(-u / std::sqrt(2.0)); }

double face_psi(double u) {
    return (1.0 + u * u) * gauss_cdf(u) + u * gauss_pdf(u);
}

double face_psi_deriv(double u) { return 2.0 * (u * gauss_cdf(u) + gauss_pdf(u)); }

// Gauss-Legendre nodes/weights on [-1, 1] by Golub-Welsch, cached per order.
const std::pair<std::vector<double>, std::vector<double>>& legendre_rule(int m) {
    static std::pair<std::vector<double>, std::vector<double>> cache;
    static std::mutex mutex;
    std::lock_guard<std::mutex> lock(mutex);
    if (static_cast<int>(cache.first.size()) == m) return cache;
    Mat jacobi = Mat::Zero(m, m);
    for (int k = 1; k < m; ++k) {
        double b = k / std::sqrt(4.0 * k * k - 1.0);
        jacobi(k - 1, k) = b;
        jacobi(k, k - 1) = b;
    }
    Eigen::SelfAdjointEigenSolver<Mat> eig(jacobi);
    cache.first.resize(m);
    cache.second.resize(m);
    for (int i = 0; i < m; ++i) {
        cache.first[i] = eig.eigenvalues()(i);
        cache.second[i] = 2.0 * eig.eigenvectors()(0, i) * eig.eigenvectors()(0, i);
    }
    return cache;
}

double solve_psi_equals(double target, double lo, double hi) {
    for (int i = 0; i < 200; ++i) {
        double mid = 0.5 * (lo + hi);
        (face_psi(mid) < target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

// Insertion width per crossing at level 1 + c2 (sigma = 1), relative to the
// flat crossing.  Split at psi = c2/2: the outer part is graph-like in u, the
// turnaround part is graph-like in h, so both integrands stay bounded.
double insertion_width(double c2) {
    const double depth = 6.0;  // psi(-6) ~ 5e-10: tail is negligible
    const double u_max = solve_psi_equals(c2, -10.0, 10.0);
    const double u_mid = solve_psi_equals(0.5 * c2, -10.0, u_max);
    const auto& [nodes, weights] = legendre_rule(64);

    // Outer: integral of sqrt(1 + h'^2) - 1 over u in [-depth, u_mid].
    double outer = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        double u = 0.5 * (u_mid - depth) + 0.5 * (u_mid + depth) * nodes[i];
        double h = std::sqrt(c2 - face_psi(u));
        double hp = face_psi_deriv(u) / (2.0 * h);
        outer += weights[i] * (std::sqrt(1.0 + hp * hp) - 1.0);
    }
    outer *= 0.5 * (u_mid + depth);

    // Turnaround: integral of sqrt(1 + (du/dh)^2) - |du/dh| over h in
    // [0, h_mid], inverting psi(u) = c2 - h^2 per node.
    const double h_mid = std::sqrt(c2 - face_psi(u_mid));
    double inner = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        double h = 0.5 * h_mid * (1.0 + nodes[i]);
        double u = solve_psi_equals(c2 - h * h, -depth, u_max);
        double du_dh = 2.0 * h / face_psi_deriv(u);
        inner += weights[i] * (std::sqrt(1.0 + du_dh * du_dh) - du_dh);
    }
    inner *= 0.5 * h_mid;

    return 2.0 * (outer + inner) + 2.0 * u_max;
}

double balanced_constant() {
    static const double c2_star = [] {
        double lo = 0.05, hi = 0.95;
        for (int i = 0; i < 80; ++i) {
            double mid = 0.5 * (lo + hi);
            (insertion_width(mid) < 0.0 ? lo : hi) = mid;
        }
        return 0.5 * (lo + hi);
    }();
    return c2_star;
}

// ---------------------------------------------------------------------------
// Shared chain pieces.
// ---------------------------------------------------------------------------

constexpr double kArmijo = 1e-4;

struct Disk {
    Vec center;
    Vec axis;  // unit chain direction at the center
};

// Orthonormal basis of the orthogonal complement of the (orthonormal)
// columns of dirs.
Mat orth_complement(const Mat& dirs) {
    Eigen::HouseholderQR<Mat> qr(dirs);
    Mat q = qr.householderQ();
    return q.rightCols(dirs.rows() - dirs.cols());
}

// Uniform samples along a loop's folded trajectory, with the sheet sign that
// the double assigns past each collision.
struct LoopSamples {
    std::vector<Vec> points;  // m - 1 interior samples
    std::vector<double> sign;
    double flat_length = 0.0;
};

LoopSamples sample_loop(const GeodesicLoop& loop, int m) {
    const BilliardTrajectory& t = loop.trajectory;
    std::vector<double> cumulative(t.points.size(), 0.0);
    for (std::size_t i = 1; i < t.points.size(); ++i) {
        cumulative[i] = cumulative[i - 1] + (t.points[i] - t.points[i - 1]).norm();
    }
    LoopSamples s;
    s.flat_length = cumulative.back();
    double base_sign = loop.start_sheet == 0 ? 1.0 : -1.0;
    for (int k = 1; k < m; ++k) {
        double at = cumulative.back() * k / m;
        std::size_t seg = 1;
        while (seg + 1 < cumulative.size() && cumulative[seg] <= at) ++seg;
        double lo = cumulative[seg - 1], hi = cumulative[seg];
        double frac = (hi > lo) ? (at - lo) / (hi - lo) : 0.0;
        s.points.push_back(t.points[seg - 1] +
                           frac * (t.points[seg] - t.points[seg - 1]));
        // seg - 1 collisions lie before this sample; each flips the sheet.
        s.sign.push_back(((seg - 1) % 2 == 0) ? base_sign : -base_sign);
    }
    return s;
}

void validate_options(const RefineOptions& opts) {
    if (opts.segments_per_loop < 8) {
        throw DomainError("refine: need at least 8 segments per loop");
    }
    if (opts.disk_radius < 0.0 || !std::isfinite(opts.disk_radius)) {
        throw DomainError("refine: disk radius must be nonnegative");
    }
    if (opts.max_iterations < 1) {
        throw DomainError("refine: iteration cap must be positive");
    }
    if (!(opts.gradient_tol > 0.0)) {
        throw DomainError("refine: gradient tolerance must be positive");
    }
    if (opts.arc_spacing < 0.0 || !std::isfinite(opts.arc_spacing)) {
        throw DomainError("refine: arc spacing must be nonnegative");
    }
}

double shortest_arc(const Bouquet& B, const RefineOptions& opts) {
    double shortest = std::numeric_limits<double>::infinity();
    for (const GeodesicLoop& loop : B.loops) {
        shortest = std::min(shortest, loop.length() / opts.segments_per_loop);
    }
    return shortest;
}

double auto_delta(const Bouquet& B, const RefineOptions& opts) {
    if (opts.disk_radius > 0.0) return opts.disk_radius;
    return 0.25 * shortest_arc(B, opts);
}

// ---------------------------------------------------------------------------
// Flat chart engine.  Geodesics of the developed chart are straight lines,
// so each arc is a single chord and the whole configuration is the basepoint
// plus the disk-constrained chain vertices.
// ---------------------------------------------------------------------------

struct ModelHooks {
    std::function<Vec(const Disk&, Vec)> retract_vertex;
    std::function<Vec(Vec)> retract_base;
    std::function<Mat(const Disk&, const Vec&)> vertex_tangent;
    std::function<Mat(const Vec&)> base_tangent;
};

struct ChainProblem {
    int dim = 0;
    std::vector<std::vector<Disk>> disks;
    // Endpoint of loop j is rep_A[j] * base + rep_a[j]: the developed copy of
    // the basepoint reached through the loop's reflection sequence.
    std::vector<Mat> rep_A;
    std::vector<Vec> rep_a;
    double delta = 0.0;
    double reference_length = 0.0;
    ModelHooks hooks;
};

struct Config {
    Vec base;
    std::vector<std::vector<Vec>> verts;
};

struct Bases {
    Mat base;
    std::vector<std::vector<Mat>> verts;
};

double chain_energy(const ChainProblem& pb, const Config& c) {
    double total = 0.0;
    for (std::size_t j = 0; j < c.verts.size(); ++j) {
        Vec prev = c.base;
        for (const Vec& x : c.verts[j]) {
            total += (x - prev).norm();
            prev = x;
        }
        total += (pb.rep_A[j] * c.base + pb.rep_a[j] - prev).norm();
    }
    return total;
}

// Ambient gradient of the total length, block by block.
void chain_gradient(const ChainProblem& pb, const Config& c, Vec& g_base,
                    std::vector<std::vector<Vec>>& g_verts) {
    g_base = Vec::Zero(pb.dim);
    g_verts.assign(c.verts.size(), {});
    for (std::size_t j = 0; j < c.verts.size(); ++j) {
        g_verts[j].assign(c.verts[j].size(), Vec::Zero(pb.dim));
        Vec end = pb.rep_A[j] * c.base + pb.rep_a[j];
        Vec prev = c.base;
        for (std::size_t i = 0; i <= c.verts[j].size(); ++i) {
            const Vec& next = (i < c.verts[j].size()) ? c.verts[j][i] : end;
            Vec arc = next - prev;
            double len = arc.norm();
            if (len < 1e-14) {
                prev = next;
                continue;
            }
            Vec u = arc / len;
            // d|arc|/d(next) = u, d|arc|/d(prev) = -u.
            if (i < c.verts[j].size()) {
                g_verts[j][i] += u;
            } else {
                g_base += pb.rep_A[j].transpose() * u;
            }
            if (i == 0) {
                g_base -= u;
            } else {
                g_verts[j][i - 1] -= u;
            }
            prev = next;
        }
    }
}

Bases compute_bases(const ChainProblem& pb, const Config& c) {
    Bases b;
    b.base = pb.hooks.base_tangent(c.base);
    b.verts.resize(c.verts.size());
    for (std::size_t j = 0; j < c.verts.size(); ++j) {
        b.verts[j].reserve(c.verts[j].size());
        for (std::size_t i = 0; i < c.verts[j].size(); ++i) {
            b.verts[j].push_back(
                pb.hooks.vertex_tangent(pb.disks[j][i], c.verts[j][i]));
        }
    }
    return b;
}

// Tangential projection T (T^T g) per block; returns the stacked norm.
double project_gradient(const Bases& bases, const Vec& g_base,
                        const std::vector<std::vector<Vec>>& g_verts,
                        Vec& pg_base, std::vector<std::vector<Vec>>& pg_verts) {
    double sq = 0.0;
    pg_base = bases.base * (bases.base.transpose() * g_base);
    sq += pg_base.squaredNorm();
    pg_verts.assign(g_verts.size(), {});
    for (std::size_t j = 0; j < g_verts.size(); ++j) {
        pg_verts[j].reserve(g_verts[j].size());
        for (std::size_t i = 0; i < g_verts[j].size(); ++i) {
            const Mat& t = bases.verts[j][i];
            pg_verts[j].push_back(t * (t.transpose() * g_verts[j][i]));
            sq += pg_verts[j].back().squaredNorm();
        }
    }
    return std::sqrt(sq);
}

Config retract_all(const ChainProblem& pb, Config c) {
    c.base = pb.hooks.retract_base(std::move(c.base));
    for (std::size_t j = 0; j < c.verts.size(); ++j) {
        for (std::size_t i = 0; i < c.verts[j].size(); ++i) {
            c.verts[j][i] =
                pb.hooks.retract_vertex(pb.disks[j][i], std::move(c.verts[j][i]));
        }
    }
    return c;
}

double max_disk_activation(const ChainProblem& pb, const Config& c) {
    double worst = 0.0;
    for (std::size_t j = 0; j < c.verts.size(); ++j) {
        for (std::size_t i = 0; i < c.verts[j].size(); ++i) {
            worst = std::max(
                worst, (c.verts[j][i] - pb.disks[j][i].center).norm() / pb.delta);
        }
    }
    return worst;
}

void check_disks(const ChainProblem& pb, const Config& c) {
    if (max_disk_activation(pb, c) >= 1.0) {
        throw EscapedDisks(
            "refine: a chain vertex reached its disk boundary; increase the "
            "disk radius or the subdivision");
    }
}

Vec pack(const ChainProblem& pb, const Vec& base,
         const std::vector<std::vector<Vec>>& verts) {
    int total = pb.dim;
    for (const auto& loop : verts) total += pb.dim * static_cast<int>(loop.size());
    Vec out(total);
    out.head(pb.dim) = base;
    int at = pb.dim;
    for (const auto& loop : verts) {
        for (const Vec& v : loop) {
            out.segment(at, pb.dim) = v;
            at += pb.dim;
        }
    }
    return out;
}

// Reduced Hessian by central differences of the energy along retracted
// curves.  The energy is a sum over arcs, so blocks interact only when they
// share an arc: the basepoint with the first and last vertex of every loop,
// and consecutive chain vertices; every other entry is exactly zero.

struct BlockRef {
    bool is_base;
    int loop;
    int index;
};

struct DofLayout {
    std::vector<BlockRef> blocks;
    std::vector<int> offset;  // per block
    std::vector<int> width;
    int total = 0;

    static DofLayout build(const Bases& bases) {
        DofLayout l;
        l.blocks.push_back({true, -1, -1});
        l.offset.push_back(0);
        l.width.push_back(static_cast<int>(bases.base.cols()));
        l.total = l.width[0];
        for (std::size_t j = 0; j < bases.verts.size(); ++j) {
            for (std::size_t i = 0; i < bases.verts[j].size(); ++i) {
                l.blocks.push_back({false, static_cast<int>(j), static_cast<int>(i)});
                l.offset.push_back(l.total);
                l.width.push_back(static_cast<int>(bases.verts[j][i].cols()));
                l.total += l.width.back();
            }
        }
        return l;
    }
};

bool blocks_coupled(const DofLayout& l, int a, int b, int verts_per_loop) {
    if (a == b) return true;
    const BlockRef& x = l.blocks[static_cast<std::size_t>(a)];
    const BlockRef& y = l.blocks[static_cast<std::size_t>(b)];
    if (x.is_base || y.is_base) {
        const BlockRef& v = x.is_base ? y : x;
        return v.index == 0 || v.index == verts_per_loop - 1;
    }
    return x.loop == y.loop && std::abs(x.index - y.index) == 1;
}

// The basis direction of one degree of freedom.
struct DofDir {
    int block;
    Vec ambient;  // basis column (unit)
};

Mat reduced_hessian(const ChainProblem& pb, const Config& sol,
                    const Bases& frozen, double step) {
    DofLayout layout = DofLayout::build(frozen);
    int verts_per_loop =
        sol.verts.empty() ? 0 : static_cast<int>(sol.verts[0].size());

    std::vector<DofDir> dirs;
    dirs.reserve(static_cast<std::size_t>(layout.total));
    for (std::size_t b = 0; b < layout.blocks.size(); ++b) {
        const Mat& basis = layout.blocks[b].is_base
                               ? frozen.base
                               : frozen.verts[static_cast<std::size_t>(
                                     layout.blocks[b].loop)]
                                             [static_cast<std::size_t>(
                                                 layout.blocks[b].index)];
        for (int c = 0; c < basis.cols(); ++c) {
            dirs.push_back({static_cast<int>(b), basis.col(c)});
        }
    }

    const double e0 = chain_energy(pb, sol);

    // Energy of the solution displaced by t along a (possibly two-block)
    // direction, retracting only the touched blocks.
    auto displaced_energy = [&](const std::vector<std::pair<int, Vec>>& dir,
                                double t) {
        Config c = sol;
        for (const auto& [block, ambient] : dir) {
            const BlockRef& ref = layout.blocks[static_cast<std::size_t>(block)];
            if (ref.is_base) {
                c.base = pb.hooks.retract_base(c.base + t * ambient);
            } else {
                auto j = static_cast<std::size_t>(ref.loop);
                auto i = static_cast<std::size_t>(ref.index);
                c.verts[j][i] = pb.hooks.retract_vertex(pb.disks[j][i],
                                                        c.verts[j][i] + t * ambient);
            }
        }
        return chain_energy(pb, c);
    };

    auto curvature = [&](const std::vector<std::pair<int, Vec>>& dir) {
        return (displaced_energy(dir, step) - 2.0 * e0 +
                displaced_energy(dir, -step)) /
               (step * step);
    };

    Mat hess = Mat::Zero(layout.total, layout.total);
    std::vector<double> diag(static_cast<std::size_t>(layout.total));
    for (int p = 0; p < layout.total; ++p) {
        diag[static_cast<std::size_t>(p)] =
            curvature({{dirs[static_cast<std::size_t>(p)].block,
                        dirs[static_cast<std::size_t>(p)].ambient}});
        hess(p, p) = diag[static_cast<std::size_t>(p)];
    }
    for (int p = 0; p < layout.total; ++p) {
        for (int q = p + 1; q < layout.total; ++q) {
            const DofDir& dp = dirs[static_cast<std::size_t>(p)];
            const DofDir& dq = dirs[static_cast<std::size_t>(q)];
            if (!blocks_coupled(layout, dp.block, dq.block, verts_per_loop)) {
                continue;  // exactly zero: no shared arc
            }
            double quad;
            if (dp.block == dq.block) {
                quad = curvature({{dp.block, Vec(dp.ambient + dq.ambient)}});
            } else {
                quad = curvature({{dp.block, dp.ambient}, {dq.block, dq.ambient}});
            }
            double off = 0.5 * (quad - diag[static_cast<std::size_t>(p)] -
                                diag[static_cast<std::size_t>(q)]);
            hess(p, q) = off;
            hess(q, p) = off;
        }
    }
    return hess;
}

// Expands reduced coordinates into an ambient displacement and retracts.
Config apply_step(const ChainProblem& pb, const Config& c, const Bases& bases,
                  const Vec& coords) {
    DofLayout layout = DofLayout::build(bases);
    Config out = c;
    for (std::size_t b = 0; b < layout.blocks.size(); ++b) {
        Vec local = coords.segment(layout.offset[b], layout.width[b]);
        const BlockRef& ref = layout.blocks[b];
        if (ref.is_base) {
            out.base = pb.hooks.retract_base(out.base + bases.base * local);
        } else {
            auto j = static_cast<std::size_t>(ref.loop);
            auto i = static_cast<std::size_t>(ref.index);
            out.verts[j][i] = pb.hooks.retract_vertex(
                pb.disks[j][i], out.verts[j][i] + bases.verts[j][i] * local);
        }
    }
    return out;
}

Vec reduce_gradient(const Bases& bases, const Vec& g_base,
                    const std::vector<std::vector<Vec>>& g_verts) {
    DofLayout layout = DofLayout::build(bases);
    Vec out(layout.total);
    out.head(bases.base.cols()) = bases.base.transpose() * g_base;
    int at = static_cast<int>(bases.base.cols());
    for (std::size_t j = 0; j < g_verts.size(); ++j) {
        for (std::size_t i = 0; i < g_verts[j].size(); ++i) {
            const Mat& t = bases.verts[j][i];
            out.segment(at, t.cols()) = t.transpose() * g_verts[j][i];
            at += static_cast<int>(t.cols());
        }
    }
    return out;
}

BrokenBouquet optimize_chains(const ChainProblem& pb, Config cfg,
                              const RefineOptions& opts) {
    BrokenBouquet out;
    cfg = retract_all(pb, cfg);
    check_disks(pb, cfg);

    double energy = chain_energy(pb, cfg);
    Vec g_base;
    std::vector<std::vector<Vec>> g_verts;
    Vec pg_base;
    std::vector<std::vector<Vec>> pg_verts;

    auto eval_pg = [&](const Config& c) {
        chain_gradient(pb, c, g_base, g_verts);
        Bases bases = compute_bases(pb, c);
        double norm = project_gradient(bases, g_base, g_verts, pg_base, pg_verts);
        return std::make_pair(norm, std::move(bases));
    };

    auto [pg_norm, bases] = eval_pg(cfg);
    int iterations = 0;

    // Phase 1: projected gradient descent with Barzilai-Borwein steps and
    // Armijo backtracking, down to within a factor of the target.
    Vec prev_x, prev_g;
    bool have_prev = false;
    while (iterations < opts.max_iterations &&
           pg_norm >= opts.gradient_tol * energy) {
        if (pg_norm < 1000.0 * opts.gradient_tol * energy) break;

        double max_block = pg_base.norm();
        for (const auto& loop : pg_verts) {
            for (const Vec& v : loop) max_block = std::max(max_block, v.norm());
        }
        double cap = 0.5 * pb.delta / std::max(max_block, 1e-300);
        double alpha = 0.1 * cap;
        Vec x_now = pack(pb, cfg.base, cfg.verts);
        Vec g_now = pack(pb, pg_base, pg_verts);
        if (have_prev) {
            Vec s = x_now - prev_x;
            Vec y = g_now - prev_g;
            double sy = s.dot(y);
            if (sy > 1e-300) alpha = std::min(s.squaredNorm() / sy, cap);
        }

        bool accepted = false;
        for (int halving = 0; halving < 50 && !accepted; ++halving) {
            Config trial = cfg;
            trial.base -= alpha * pg_base;
            for (std::size_t j = 0; j < trial.verts.size(); ++j) {
                for (std::size_t i = 0; i < trial.verts[j].size(); ++i) {
                    trial.verts[j][i] -= alpha * pg_verts[j][i];
                }
            }
            trial = retract_all(pb, trial);
            double trial_energy = chain_energy(pb, trial);
            if (trial_energy <= energy - kArmijo * alpha * pg_norm * pg_norm) {
                check_disks(pb, trial);
                cfg = std::move(trial);
                energy = trial_energy;
                prev_x = std::move(x_now);
                prev_g = std::move(g_now);
                have_prev = true;
                accepted = true;
            } else {
                alpha *= 0.5;
            }
        }
        ++iterations;
        if (!accepted) break;  // stalled in noise; the polish phase takes over
        std::tie(pg_norm, bases) = eval_pg(cfg);
    }

    // Phase 2: Newton polish on the reduced problem.  The analytic gradient
    // stays accurate far below the energy's rounding floor, so this reaches
    // the pinned tolerance that plain descent cannot.
    const double fd_step = 1e-4 * pb.delta;
    for (int polish = 0; polish < 25 && pg_norm >= opts.gradient_tol * energy &&
                         iterations < opts.max_iterations;
         ++polish, ++iterations) {
        Mat hess = reduced_hessian(pb, cfg, bases, fd_step);
        Eigen::SelfAdjointEigenSolver<Mat> eig(hess);
        double lam_max = eig.eigenvalues().cwiseAbs().maxCoeff();
        double lam_floor = std::max(1e-10, 1e-6 * lam_max);
        Vec g_red = reduce_gradient(bases, g_base, g_verts);
        Vec coords = eig.eigenvectors().transpose() * g_red;
        for (int k = 0; k < coords.size(); ++k) {
            coords(k) /= std::max(eig.eigenvalues()(k), lam_floor);
        }
        Vec newton = -(eig.eigenvectors() * coords);

        bool accepted = false;
        double scale = 1.0;
        for (int halving = 0; halving < 40 && !accepted; ++halving) {
            Config trial = apply_step(pb, cfg, bases, Vec(scale * newton));
            Vec t_gb;
            std::vector<std::vector<Vec>> t_gv, t_pgv;
            Vec t_pgb;
            chain_gradient(pb, trial, t_gb, t_gv);
            Bases t_bases = compute_bases(pb, trial);
            double t_norm = project_gradient(t_bases, t_gb, t_gv, t_pgb, t_pgv);
            if (t_norm < pg_norm) {
                check_disks(pb, trial);
                cfg = std::move(trial);
                energy = chain_energy(pb, cfg);
                pg_norm = t_norm;
                bases = std::move(t_bases);
                g_base = std::move(t_gb);
                g_verts = std::move(t_gv);
                pg_base = std::move(t_pgb);
                pg_verts = std::move(t_pgv);
                accepted = true;
            } else {
                scale *= 0.5;
            }
        }
        if (!accepted) break;
    }

    if (pg_norm >= opts.gradient_tol * energy) {
        throw NoConvergence(
            "refine: projected gradient did not reach tolerance (iteration "
            "cap or stall)",
            pg_norm);
    }

    // Second variation at the solution, with the finite-difference noise
    // floor estimated from a doubled step.
    Bases frozen = compute_bases(pb, cfg);
    Mat h1 = reduced_hessian(pb, cfg, frozen, fd_step);
    Mat h2 = reduced_hessian(pb, cfg, frozen, 2.0 * fd_step);
    Eigen::SelfAdjointEigenSolver<Mat> eig1(h1);
    Eigen::SelfAdjointEigenSolver<Mat> eig2(h2);

    out.basepoint = cfg.base;
    out.loops = cfg.verts;
    out.length = energy;
    out.reference_length = pb.reference_length;
    out.projected_gradient_norm = pg_norm;
    out.iterations = iterations;
    out.spectrum.assign(eig1.eigenvalues().data(),
                        eig1.eigenvalues().data() + eig1.eigenvalues().size());
    out.lambda_min = out.spectrum.front();
    out.noise_floor = std::max(
        std::abs(eig1.eigenvalues()(0) - eig2.eigenvalues()(0)), 1e-14);
    out.stable = out.lambda_min > 0.0 && out.lambda_min > 10.0 * out.noise_floor;
    out.max_disk_activation = max_disk_activation(pb, cfg);

    std::vector<const Vec*> all_points;
    all_points.push_back(&cfg.base);
    for (const auto& loop : cfg.verts) {
        for (const Vec& v : loop) all_points.push_back(&v);
    }
    double min_pair = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < all_points.size(); ++a) {
        for (std::size_t b = a + 1; b < all_points.size(); ++b) {
            min_pair = std::min(min_pair, (*all_points[a] - *all_points[b]).norm());
        }
    }
    out.min_pair_distance = min_pair;
    return out;
}

// ---------------------------------------------------------------------------
// Level-surface engine.  A geodesic arc on {field = level} has no closed
// form, so each arc is carried by a polyline of points free on the surface,
// fine enough to resolve the fold (a few points per smoothing width).  The
// solve is bilevel.  Inner problem, per arc: the polyline's interior points
// minimize the spring energy sum |x_{i+1} - x_i|^2 with endpoints held
// fixed; the minimizer is the discrete geodesic with uniform chord lengths.
// (Minimizing the raw chord sum instead would be degenerate: sliding a point
// along the chain changes length only at third order, and transfer bunches
// points near the folds until segments collapse and the unit chords turn to
// noise.  The spring energy has neither disease: uniformity is its unique
// minimum and its Hessian is the fixed spring chain.)  Outer problem: the
// basepoint and the disk-pinned chain vertices minimize the total length
// sum over arcs of sqrt(N * E*), which at inner optimality equals the
// polyline length exactly (Cauchy-Schwarz is tight at uniform spacing) and
// whose envelope gradient is exactly the unit-tangent balance of the broken
// bouquet.  The outer Hessian is analytic: spring chains Schur-complemented
// onto the endpoints, pushed through the square root, plus the constraint
// curvature corrections.
// ---------------------------------------------------------------------------

struct FinePoint {
    Vec x;
    int disk = -1;  // >= 0: chain vertex pinned to disks[disk]; -1: arc point
};

struct LevelProblem {
    const ScalarField* field = nullptr;
    double level = 0.0;
    double surf_tol = 0.0;
    double delta = 0.0;     // disk radius
    double step_cap = 0.0;  // per-iteration projection clamp
    double trust = 0.0;     // per-node Newton displacement clamp
    int dim = 0;
    int segments = 0;                        // m
    std::vector<int> arc_points;             // polyline points per arc, per loop
    std::vector<Disk> disks;                 // chain-vertex disks, loop-major
    std::vector<std::vector<int>> chain_at;  // interior index of chain vertices
    double reference_length = 0.0;
};

struct LevelState {
    Vec base;
    std::vector<std::vector<FinePoint>> loops;  // interior sequences
};

// Newton projection onto {field = level} along the full gradient, step
// clamped so a start near the fold nose cannot jump to the far sheet.
Vec level_project_surface(const LevelProblem& pb, Vec x) {
    double r = 0.0;
    for (int it = 0; it < 80; ++it) {
        r = pb.field->value(x) - pb.level;
        if (std::abs(r) <= pb.surf_tol) return x;
        Vec g = pb.field->gradient(x);
        double g2 = g.squaredNorm();
        if (g2 < 1e-24) {
            throw NoConvergence(
                "refine_bouquet: vanishing gradient during surface projection",
                std::abs(r));
        }
        Vec step = (r / g2) * g;
        double len = step.norm();
        if (len > pb.step_cap) step *= pb.step_cap / len;
        x -= step;
    }
    throw NoConvergence("refine_bouquet: surface projection stalled",
                        std::abs(r));
}

// Same, restricted to the disk plane: project onto the plane, then walk the
// in-plane gradient to the surface.
Vec level_project_disk(const LevelProblem& pb, const Disk& disk, Vec x) {
    x += (disk.center - x).dot(disk.axis) * disk.axis;
    double r = 0.0;
    for (int it = 0; it < 80; ++it) {
        r = pb.field->value(x) - pb.level;
        if (std::abs(r) <= pb.surf_tol) return x;
        Vec g = pb.field->gradient(x);
        Vec g_in = g - g.dot(disk.axis) * disk.axis;
        double g2 = g_in.squaredNorm();
        if (g2 < 1e-18 * g.squaredNorm() || g2 < 1e-24) {
            throw NoConvergence(
                "refine_bouquet: surface normal parallel to a disk axis",
                std::abs(r));
        }
        Vec step = (r / g2) * g_in;
        double len = step.norm();
        if (len > pb.step_cap) step *= pb.step_cap / len;
        x -= step;
    }
    throw NoConvergence("refine_bouquet: disk projection stalled", std::abs(r));
}

Vec level_retract(const LevelProblem& pb, int disk, Vec x) {
    if (disk < 0) return level_project_surface(pb, std::move(x));
    return level_project_disk(pb, pb.disks[static_cast<std::size_t>(disk)],
                              std::move(x));
}

// Total chord length of the fine chains, in fixed index order.
double level_energy(const LevelProblem& pb, const LevelState& st) {
    double total = 0.0;
    for (const auto& loop : st.loops) {
        Vec prev = st.base;
        for (const FinePoint& p : loop) {
            total += (p.x - prev).norm();
            prev = p.x;
        }
        total += (st.base - prev).norm();
    }
    return total;
}

double level_disk_activation(const LevelProblem& pb, const LevelState& st) {
    double worst = 0.0;
    for (const auto& loop : st.loops) {
        for (const FinePoint& p : loop) {
            if (p.disk < 0) continue;
            worst = std::max(
                worst,
                (p.x - pb.disks[static_cast<std::size_t>(p.disk)].center).norm() /
                    pb.delta);
        }
    }
    return worst;
}

void level_check_disks(const LevelProblem& pb, const LevelState& st) {
    if (level_disk_activation(pb, st) >= 1.0) {
        throw EscapedDisks(
            "refine_bouquet: a chain vertex reached its disk boundary; "
            "increase the disk radius or the subdivision");
    }
}

// The subset of nodes a Newton solve moves: the whole configuration for the
// main descent, a single arc's interior for the warm re-solves inside the
// Levenberg-Marquardt direction at damping `shift`; false on factorization
// failure or a non-descent result (caller escalates the shift).
bool lm_direction(const Mat& hess, const Vec& grad, double shift, Vec& dir) {
    Mat shifted = hess;
    shifted.diagonal().array() += shift;
    Eigen::LLT<Mat> llt(shifted);
    if (llt.info() != Eigen::Success) return false;
    dir = -llt.solve(grad);
    return grad.dot(dir) < 0.0;
}

// Arc k of loop j runs between two model points (the basepoint at the loop
// ends) and carries arc_points[j] - 1 interior polyline points at interior
// indices [k*p, k*p + p - 2].
struct ArcEnds {
    const Vec* left;
    const Vec* right;
};

ArcEnds arc_ends(const LevelProblem& pb, const LevelState& st, int j, int k) {
    const auto& pts = st.loops[static_cast<std::size_t>(j)];
    const int p = pb.arc_points[static_cast<std::size_t>(j)];
    ArcEnds e;
    e.left = (k == 0) ? &st.base : &pts[static_cast<std::size_t>(k * p - 1)].x;
    e.right = (k == pb.segments - 1)
                  ? &st.base
                  : &pts[static_cast<std::size_t>((k + 1) * p - 1)].x;
    return e;
}

double arc_spring_energy(const LevelProblem& pb, const LevelState& st, int j,
                         int k) {
    ArcEnds ends = arc_ends(pb, st, j, k);
    const auto& pts = st.loops[static_cast<std::size_t>(j)];
    const int p = pb.arc_points[static_cast<std::size_t>(j)];
    const Vec* prev = ends.left;
    double total = 0.0;
    for (int i = k * p; i <= k * p + p - 2; ++i) {
        total += (pts[static_cast<std::size_t>(i)].x - *prev).squaredNorm();
        prev = &pts[static_cast<std::size_t>(i)].x;
    }
    total += (*ends.right - *prev).squaredNorm();
    return total;
}

// Newton solve of one arc's inner spring problem, warm-started from the
// current interior points.  A couple of iterations reach machine precision:
// the reduced Hessian is the constant spring chain (4I diagonal, -2 T^T T
// off-diagonal) plus the constraint curvature correction.
void solve_arc(const LevelProblem& pb, LevelState& st, int j, int k) {
    const int p = pb.arc_points[static_cast<std::size_t>(j)];
    if (p == 1) return;
    auto& pts = st.loops[static_cast<std::size_t>(j)];
    const int first = k * p;
    const int last = k * p + p - 2;
    const int count = last - first + 1;
    const int w = pb.dim - 1;
    ArcEnds ends = arc_ends(pb, st, j, k);

    auto pos = [&](int i) -> const Vec& {
        if (i < first) return *ends.left;
        if (i > last) return *ends.right;
        return pts[static_cast<std::size_t>(i)].x;
    };

    struct SubData {
        Mat basis;
        Vec grad_f;
        Mat hess_f;
        Vec grad_e;
    };
    std::vector<SubData> data(static_cast<std::size_t>(count));

    // Below kEndgame the energy decrease per step drops under the jitter the
    // surface projection injects, so line search stops certifying progress;
    // plain damped Newton steps keep contracting the gradient until it hits
    // the floor, and the best iterate is kept.
    constexpr double kEndgame = 1e-6;
    std::vector<Vec> best;
    double best_pg = std::numeric_limits<double>::infinity();
    double prev_pg = std::numeric_limits<double>::infinity();
    int stalled = 0;
    auto snapshot = [&] {
        best.clear();
        for (int i = first; i <= last; ++i) {
            best.push_back(pts[static_cast<std::size_t>(i)].x);
        }
    };
    auto restore_best = [&] {
        for (int i = 0; i < count; ++i) {
            pts[static_cast<std::size_t>(first + i)].x =
                best[static_cast<std::size_t>(i)];
        }
    };

    for (int iter = 0; iter < 60; ++iter) {
        double energy = arc_spring_energy(pb, st, j, k);
        for (int i = first; i <= last; ++i) {
            SubData& d = data[static_cast<std::size_t>(i - first)];
            double value;
            pb.field->value_gradient_hessian(pos(i), value, d.grad_f, d.hess_f);
            double gn = d.grad_f.norm();
            if (gn < 1e-12) {
                throw NoConvergence(
                    "refine_bouquet: vanishing surface gradient", gn);
            }
            d.basis = orth_complement(Vec(d.grad_f / gn));
            d.grad_e = 2.0 * (2.0 * pos(i) - pos(i - 1) - pos(i + 1));
        }

        Vec grad(count * w);
        for (int i = 0; i < count; ++i) {
            const SubData& d = data[static_cast<std::size_t>(i)];
            grad.segment(i * w, w) = d.basis.transpose() * d.grad_e;
        }
        double pg = grad.norm();
        if (pg <= 1e-9 * std::max(1.0, energy)) return;
        if (pg < kEndgame) {
            if (pg < best_pg) {
                best_pg = pg;
                snapshot();
            }
            if (pg > 0.9 * prev_pg) {
                if (++stalled >= 2) {
                    restore_best();
                    return;
                }
            } else {
                stalled = 0;
            }
        }
        prev_pg = pg;

        Mat hess = Mat::Zero(count * w, count * w);
        for (int i = 0; i < count; ++i) {
            const SubData& d = data[static_cast<std::size_t>(i)];
            double mu = d.grad_e.dot(d.grad_f) / d.grad_f.squaredNorm();
            hess.block(i * w, i * w, w, w) =
                4.0 * Mat::Identity(w, w) -
                mu * (d.basis.transpose() * d.hess_f * d.basis);
            if (i + 1 < count) {
                Mat off = -2.0 * (d.basis.transpose() *
                                  data[static_cast<std::size_t>(i + 1)].basis);
                hess.block(i * w, (i + 1) * w, w, w) = off;
                hess.block((i + 1) * w, i * w, w, w) = off.transpose();
            }
        }

        Vec dir;
        double shift = 0.0;
        bool solved = false;
        for (int attempt = 0; attempt < 10 && !solved; ++attempt) {
            solved = lm_direction(hess, grad, shift, dir);
            if (!solved) shift = std::max(10.0 * shift, 1e-10);
        }
        if (!solved) dir = -grad;

        double max_move = 0.0;
        for (int i = 0; i < count; ++i) {
            max_move = std::max(max_move, dir.segment(i * w, w).norm());
        }
        if (max_move > pb.step_cap) dir *= pb.step_cap / max_move;
        double slope = grad.dot(dir);

        if (pg < kEndgame) {
            for (int i = 0; i < count; ++i) {
                pts[static_cast<std::size_t>(first + i)].x =
                    level_project_surface(
                        pb, pts[static_cast<std::size_t>(first + i)].x +
                                data[static_cast<std::size_t>(i)].basis *
                                    dir.segment(i * w, w));
            }
            continue;
        }

        std::vector<Vec> saved;
        saved.reserve(static_cast<std::size_t>(count));
        for (int i = first; i <= last; ++i) {
            saved.push_back(pts[static_cast<std::size_t>(i)].x);
        }
        bool accepted = false;
        double scale = 1.0;
        for (int halving = 0; halving < 30 && !accepted; ++halving) {
            for (int i = 0; i < count; ++i) {
                pts[static_cast<std::size_t>(first + i)].x =
                    level_project_surface(
                        pb, saved[static_cast<std::size_t>(i)] +
                                data[static_cast<std::size_t>(i)].basis *
                                    (scale * dir.segment(i * w, w)));
            }
            double trial = arc_spring_energy(pb, st, j, k);
            if (trial <= energy + kArmijo * scale * slope) {
                accepted = true;
            } else {
                for (int i = 0; i < count; ++i) {
                    pts[static_cast<std::size_t>(first + i)].x =
                        saved[static_cast<std::size_t>(i)];
                }
                scale *= 0.5;
            }
        }
        if (!accepted) {
            throw NoConvergence("refine_bouquet: arc line search stalled", pg);
        }
    }
    if (best_pg < kEndgame) {
        restore_best();
        return;
    }
    throw NoConvergence("refine_bouquet: arc solve did not converge",
                        arc_spring_energy(pb, st, j, k));
}

void solve_all_arcs(const LevelProblem& pb, LevelState& st) {
    for (std::size_t j = 0; j < st.loops.size(); ++j) {
        for (int k = 0; k < pb.segments; ++k) {
            solve_arc(pb, st, static_cast<int>(j), k);
        }
    }
}

// Model coordinates: slot 0 the basepoint (surface tangent, dim-1 dofs),
// then chain vertices loop-major (disk-and-surface tangent, dim-2 dofs).
struct ModelNode {
    int loop = -1;      // -1: basepoint
    int ordinal = -1;   // chain-vertex ordinal within its loop
    int interior = -1;  // interior index within the loop
    int offset = 0;
    int width = 0;
    Mat basis;
    Vec grad_f;
    Mat hess_f;
    Vec grad_e;  // ambient gradient of the total length at this node
};

struct OuterSystem {
    std::vector<ModelNode> nodes;
    int total = 0;
    double length = 0.0;  // sum over arcs of sqrt(N * E*)
    std::vector<std::vector<double>> arc_energy;
    Vec reduced_grad;
    double pg_norm = 0.0;
};

// Re-solves every arc, then measures the outer objective, the per-node
// envelope gradients, and the frozen tangent bases.
OuterSystem build_outer_system(const LevelProblem& pb, LevelState& st) {
    solve_all_arcs(pb, st);

    OuterSystem sys;
    sys.arc_energy.resize(st.loops.size());
    for (std::size_t j = 0; j < st.loops.size(); ++j) {
        sys.arc_energy[j].resize(static_cast<std::size_t>(pb.segments));
        const int p = pb.arc_points[j];
        for (int k = 0; k < pb.segments; ++k) {
            double e = arc_spring_energy(pb, st, static_cast<int>(j), k);
            sys.arc_energy[j][static_cast<std::size_t>(k)] = e;
            sys.length += std::sqrt(p * e);
        }
    }

    auto add_node = [&](int loop, int ordinal, int interior, const Vec& x,
                        int disk) {
        ModelNode node;
        node.loop = loop;
        node.ordinal = ordinal;
        node.interior = interior;
        double value;
        pb.field->value_gradient_hessian(x, value, node.grad_f, node.hess_f);
        double gn = node.grad_f.norm();
        if (gn < 1e-12) {
            throw NoConvergence("refine_bouquet: vanishing surface gradient",
                                gn);
        }
        if (disk < 0) {
            node.basis = orth_complement(Vec(node.grad_f / gn));
        } else {
            const Disk& d = pb.disks[static_cast<std::size_t>(disk)];
            Vec g_perp = node.grad_f - node.grad_f.dot(d.axis) * d.axis;
            if (g_perp.norm() < 1e-10 * gn) {
                throw NoConvergence(
                    "refine_bouquet: surface normal parallel to a disk axis",
                    g_perp.norm());
            }
            Mat dirs(pb.dim, 2);
            dirs.col(0) = d.axis;
            dirs.col(1) = g_perp / g_perp.norm();
            node.basis = orth_complement(dirs);
        }
        node.grad_e = Vec::Zero(pb.dim);
        node.offset = sys.total;
        node.width = static_cast<int>(node.basis.cols());
        sys.total += node.width;
        sys.nodes.push_back(std::move(node));
    };

    add_node(-1, -1, -1, st.base, -1);
    for (std::size_t j = 0; j < pb.chain_at.size(); ++j) {
        for (std::size_t kk = 0; kk < pb.chain_at[j].size(); ++kk) {
            int interior = pb.chain_at[j][kk];
            const FinePoint& fp =
                st.loops[j][static_cast<std::size_t>(interior)];
            add_node(static_cast<int>(j), static_cast<int>(kk), interior, fp.x,
                     fp.disk);
        }
    }

    // Envelope gradient: d sqrt(N E)/d endpoint = sqrt(N/E) (endpoint - s),
    // s the adjacent interior point (the far endpoint when the arc has no
    // interior).  At inner optimality this is the unit tangent of the arc.
    auto vert_slot = [&](int j, int ordinal) {
        int slot = 1;
        for (int jj = 0; jj < j; ++jj) {
            slot += static_cast<int>(
                pb.chain_at[static_cast<std::size_t>(jj)].size());
        }
        return slot + ordinal;
    };
    for (std::size_t j = 0; j < st.loops.size(); ++j) {
        const auto& pts = st.loops[j];
        const int p = pb.arc_points[j];
        for (int k = 0; k < pb.segments; ++k) {
            ArcEnds ends = arc_ends(pb, st, static_cast<int>(j), k);
            double e = sys.arc_energy[j][static_cast<std::size_t>(k)];
            double scale = std::sqrt(p / e);
            const Vec& s_first =
                (p == 1) ? *ends.right
                         : pts[static_cast<std::size_t>(k * p)].x;
            const Vec& s_last =
                (p == 1) ? *ends.left
                         : pts[static_cast<std::size_t>(k * p + p - 2)].x;
            int left = (k == 0) ? 0 : vert_slot(static_cast<int>(j), k - 1);
            int right = (k == pb.segments - 1)
                            ? 0
                            : vert_slot(static_cast<int>(j), k);
            sys.nodes[static_cast<std::size_t>(left)].grad_e +=
                scale * (*ends.left - s_first);
            sys.nodes[static_cast<std::size_t>(right)].grad_e +=
                scale * (*ends.right - s_last);
        }
    }

    sys.reduced_grad = Vec(sys.total);
    double sq = 0.0;
    for (const auto& node : sys.nodes) {
        Vec local = node.basis.transpose() * node.grad_e;
        sys.reduced_grad.segment(node.offset, node.width) = local;
        sq += local.squaredNorm();
    }
    sys.pg_norm = std::sqrt(sq);
    return sys;
}

// Analytic model Hessian: per arc, the reduced spring Hessian over
// [left, interior..., right] (fixed 2I/-2I chain plus interior curvature
// corrections) is Schur-complemented onto the endpoints and pushed through
// d^2 sqrt(N E); per model node, the constraint curvature correction with
// the least-squares multiplier of the total ambient gradient.
Mat outer_hessian(const LevelProblem& pb, const LevelState& st,
                  const OuterSystem& sys) {
    Mat hess = Mat::Zero(sys.total, sys.total);
    const int w = pb.dim - 1;

    auto vert_slot = [&](int j, int ordinal) {
        int slot = 1;
        for (int jj = 0; jj < j; ++jj) {
            slot += static_cast<int>(
                pb.chain_at[static_cast<std::size_t>(jj)].size());
        }
        return slot + ordinal;
    };

    for (std::size_t j = 0; j < st.loops.size(); ++j) {
        const auto& pts = st.loops[j];
        const int p = pb.arc_points[j];
        for (int k = 0; k < pb.segments; ++k) {
            ArcEnds ends = arc_ends(pb, st, static_cast<int>(j), k);
            double e = sys.arc_energy[j][static_cast<std::size_t>(k)];
            const int ml = (k == 0) ? 0 : vert_slot(static_cast<int>(j), k - 1);
            const int mr = (k == pb.segments - 1)
                               ? 0
                               : vert_slot(static_cast<int>(j), k);
            const ModelNode& nl = sys.nodes[static_cast<std::size_t>(ml)];
            const ModelNode& nr = sys.nodes[static_cast<std::size_t>(mr)];
            const int count = p - 1;
            const int first = k * p;

            // Interior bases and curvature multipliers at the inner optimum.
            std::vector<Mat> sb(static_cast<std::size_t>(count));
            std::vector<Mat> scorr(static_cast<std::size_t>(count));
            for (int i = 0; i < count; ++i) {
                const Vec& x = pts[static_cast<std::size_t>(first + i)].x;
                const Vec& before =
                    (i == 0) ? *ends.left
                             : pts[static_cast<std::size_t>(first + i - 1)].x;
                const Vec& after =
                    (i == count - 1)
                        ? *ends.right
                        : pts[static_cast<std::size_t>(first + i + 1)].x;
                double value;
                Vec gf;
                Mat hf;
                pb.field->value_gradient_hessian(x, value, gf, hf);
                sb[static_cast<std::size_t>(i)] =
                    orth_complement(Vec(gf / gf.norm()));
                Vec ge = 2.0 * (2.0 * x - before - after);
                double mu = ge.dot(gf) / gf.squaredNorm();
                scorr[static_cast<std::size_t>(i)] =
                    mu * (sb[static_cast<std::size_t>(i)].transpose() * hf *
                          sb[static_cast<std::size_t>(i)]);
            }

            // Reduced spring Hessian over [left | interior | right].
            const int nk = nl.width + count * w + nr.width;
            Mat K = Mat::Zero(nk, nk);
            auto basis_of = [&](int node) -> const Mat& {
                if (node == 0) return nl.basis;
                if (node == count + 1) return nr.basis;
                return sb[static_cast<std::size_t>(node - 1)];
            };
            auto offset_of = [&](int node) {
                if (node == 0) return 0;
                return nl.width + (node - 1) * w;
            };
            auto width_of = [&](int node) {
                if (node == 0) return nl.width;
                if (node == count + 1) return nr.width;
                return w;
            };
            for (int seg = 0; seg <= count; ++seg) {
                int a = seg, b = seg + 1;
                K.block(offset_of(a), offset_of(a), width_of(a), width_of(a)) +=
                    2.0 * Mat::Identity(width_of(a), width_of(a));
                K.block(offset_of(b), offset_of(b), width_of(b), width_of(b)) +=
                    2.0 * Mat::Identity(width_of(b), width_of(b));
                Mat off = -2.0 * (basis_of(a).transpose() * basis_of(b));
                K.block(offset_of(a), offset_of(b), width_of(a), width_of(b)) +=
                    off;
                K.block(offset_of(b), offset_of(a), width_of(b), width_of(a)) +=
                    off.transpose();
            }
            for (int i = 0; i < count; ++i) {
                K.block(offset_of(i + 1), offset_of(i + 1), w, w) -=
                    scorr[static_cast<std::size_t>(i)];
            }

            // Schur-complement the interior away.
            const int me = nl.width + nr.width;
            Mat h_e(me, me);
            Vec r_e(me);
            {
                const Vec& s_first = (p == 1) ? *ends.right
                                              : pts[static_cast<std::size_t>(
                                                    first)].x;
                const Vec& s_last =
                    (p == 1) ? *ends.left
                             : pts[static_cast<std::size_t>(first + count - 1)]
                                   .x;
                r_e.head(nl.width) =
                    nl.basis.transpose() * Vec(2.0 * (*ends.left - s_first));
                r_e.tail(nr.width) =
                    nr.basis.transpose() * Vec(2.0 * (*ends.right - s_last));
            }
            if (count == 0) {
                h_e = K;
            } else {
                Mat k_mm(me, me), k_ms(me, count * w);
                Mat k_ss = K.block(nl.width, nl.width, count * w, count * w);
                k_mm.topLeftCorner(nl.width, nl.width) =
                    K.topLeftCorner(nl.width, nl.width);
                k_mm.bottomRightCorner(nr.width, nr.width) =
                    K.bottomRightCorner(nr.width, nr.width);
                k_mm.topRightCorner(nl.width, nr.width) =
                    K.topRightCorner(nl.width, nr.width);
                k_mm.bottomLeftCorner(nr.width, nl.width) =
                    K.bottomLeftCorner(nr.width, nl.width);
                k_ms.topRows(nl.width) =
                    K.block(0, nl.width, nl.width, count * w);
                k_ms.bottomRows(nr.width) =
                    K.block(nl.width + count * w, nl.width, nr.width,
                            count * w);
                Eigen::LDLT<Mat> ldlt(k_ss);
                h_e = k_mm - k_ms * ldlt.solve(k_ms.transpose());
            }

            // Push through L = sqrt(N E).
            double root = std::sqrt(static_cast<double>(p));
            Mat h_l = root * (h_e / (2.0 * std::sqrt(e)) -
                              (r_e * r_e.transpose()) /
                                  (4.0 * std::pow(e, 1.5)));

            hess.block(nl.offset, nl.offset, nl.width, nl.width) +=
                h_l.topLeftCorner(nl.width, nl.width);
            hess.block(nr.offset, nr.offset, nr.width, nr.width) +=
                h_l.bottomRightCorner(nr.width, nr.width);
            hess.block(nl.offset, nr.offset, nl.width, nr.width) +=
                h_l.topRightCorner(nl.width, nr.width);
            hess.block(nr.offset, nl.offset, nr.width, nl.width) +=
                h_l.bottomLeftCorner(nr.width, nl.width);
        }
    }

    // Constraint curvature at the model nodes, once per node with the
    // multipliers of the accumulated ambient gradient.
    for (const ModelNode& node : sys.nodes) {
        double mu;
        if (node.loop < 0) {
            mu = node.grad_e.dot(node.grad_f) / node.grad_f.squaredNorm();
        } else {
            const FinePoint& fp =
                st.loops[static_cast<std::size_t>(node.loop)]
                        [static_cast<std::size_t>(node.interior)];
            const Disk& d = pb.disks[static_cast<std::size_t>(fp.disk)];
            double a11 = node.grad_f.squaredNorm();
            double a12 = node.grad_f.dot(d.axis);
            double b1 = node.grad_f.dot(node.grad_e);
            double b2 = d.axis.dot(node.grad_e);
            double det = a11 - a12 * a12;
            mu = (det > 1e-30) ? (b1 - b2 * a12) / det : b1 / a11;
        }
        hess.block(node.offset, node.offset, node.width, node.width) -=
            mu * (node.basis.transpose() * node.hess_f * node.basis);
    }
    return hess;
}

void outer_apply(const LevelProblem& pb, LevelState& st,
                 const OuterSystem& sys, const Vec& coords) {
    for (const ModelNode& node : sys.nodes) {
        Vec step = node.basis * coords.segment(node.offset, node.width);
        if (node.loop < 0) {
            st.base = level_project_surface(pb, st.base + step);
        } else {
            FinePoint& fp = st.loops[static_cast<std::size_t>(node.loop)]
                                    [static_cast<std::size_t>(node.interior)];
            fp.x = level_retract(pb, fp.disk, fp.x + step);
        }
    }
}

struct OuterOutcome {
    OuterSystem sys;
    int iterations = 0;
};

OuterOutcome outer_newton(const LevelProblem& pb, LevelState& st,
                          const RefineOptions& opts) {
    OuterOutcome out;
    out.sys = build_outer_system(pb, st);
    while (out.sys.pg_norm >= opts.gradient_tol * out.sys.length) {
#ifdef LEVEL_TRACE
        std::fprintf(stderr, "[outer] it=%d L=%.12f pg=%.3e\n", out.iterations,
                     out.sys.length, out.sys.pg_norm);
#endif
        if (out.iterations >= opts.max_iterations) {
            throw NoConvergence(
                "refine_bouquet: projected gradient did not reach tolerance",
                out.sys.pg_norm);
        }
        Mat hess = outer_hessian(pb, st, out.sys);

        bool accepted = false;
        double shift = 0.2 * out.sys.pg_norm;
        for (int attempt = 0; attempt < 14 && !accepted; ++attempt) {
            Vec dir;
            if (!lm_direction(hess, out.sys.reduced_grad, shift, dir)) {
                shift = std::max(10.0 * shift, 1e-12);
                continue;
            }
            double max_move = 0.0;
            for (const auto& node : out.sys.nodes) {
                max_move = std::max(
                    max_move, dir.segment(node.offset, node.width).norm());
            }
            if (max_move > pb.trust) dir *= pb.trust / max_move;
            double slope = out.sys.reduced_grad.dot(dir);

            LevelState trial = st;
            outer_apply(pb, trial, out.sys, dir);
            OuterSystem trial_sys = build_outer_system(pb, trial);
            // The epsilon term keeps the decrease test meaningful once the
            // predicted gain falls under the inner solves' noise in L.
            bool armijo = trial_sys.length <=
                          out.sys.length + kArmijo * slope +
                              1e-13 * std::max(1.0, out.sys.length);
            bool contracted = trial_sys.pg_norm <= 0.7 * out.sys.pg_norm;
            if (armijo || contracted) {
                level_check_disks(pb, trial);
                st = std::move(trial);
                out.sys = std::move(trial_sys);
                accepted = true;
            } else {
                shift = std::max(10.0 * shift, 1e-12);
            }
        }
        ++out.iterations;
        if (!accepted) {
            throw NoConvergence(
                "refine_bouquet: damped Newton stalled before tolerance",
                out.sys.pg_norm);
        }
    }
    return out;
}

// Minimized total length as a function of the model coordinates: displace
// the touched model points along frozen tangent directions, retract,
// re-solve the arcs whose endpoints moved, and measure.  Untouched arcs keep
// their interior points, which stay optimal for their unchanged endpoints.
double model_objective(const LevelProblem& pb, const LevelState& sol,
                       const std::vector<std::pair<const ModelNode*, Vec>>&
                           displacements) {
    LevelState work = sol;
    std::vector<std::pair<int, int>> arcs;
    for (const auto& [node, ambient] : displacements) {
        if (node->loop < 0) {
            work.base = level_project_surface(pb, work.base + ambient);
            for (std::size_t j = 0; j < work.loops.size(); ++j) {
                arcs.emplace_back(static_cast<int>(j), 0);
                arcs.emplace_back(static_cast<int>(j), pb.segments - 1);
            }
        } else {
            FinePoint& fp = work.loops[static_cast<std::size_t>(node->loop)]
                                      [static_cast<std::size_t>(node->interior)];
            fp.x = level_retract(pb, fp.disk, fp.x + ambient);
            arcs.emplace_back(node->loop, node->ordinal);
            arcs.emplace_back(node->loop, node->ordinal + 1);
        }
    }
    std::sort(arcs.begin(), arcs.end());
    arcs.erase(std::unique(arcs.begin(), arcs.end()), arcs.end());
    for (const auto& [j, k] : arcs) solve_arc(pb, work, j, k);

    double total = 0.0;
    for (std::size_t j = 0; j < work.loops.size(); ++j) {
        const int p = pb.arc_points[j];
        for (int k = 0; k < pb.segments; ++k) {
            total += std::sqrt(
                p * arc_spring_energy(pb, work, static_cast<int>(j), k));
        }
    }
    return total;
}

// Central-difference model Hessian with shared-arc sparsity: the basepoint
// couples to the first and last chain vertex of every loop, chain vertices
// couple to their in-loop neighbours, everything else is exactly zero.
Mat model_fd_hessian(const LevelProblem& pb, const LevelState& sol,
                     const OuterSystem& sys, double step) {
    struct Dir {
        const ModelNode* node;
        Vec ambient;
    };
    std::vector<Dir> dirs;
    for (const auto& node : sys.nodes) {
        for (int c = 0; c < node.width; ++c) {
            dirs.push_back({&node, Vec(node.basis.col(c))});
        }
    }

    const double e0 = model_objective(pb, sol, {});
    auto curvature =
        [&](const std::vector<std::pair<const ModelNode*, Vec>>& dir) {
            double plus = model_objective(pb, sol, dir);
            std::vector<std::pair<const ModelNode*, Vec>> neg;
            neg.reserve(dir.size());
            for (const auto& [n, v] : dir) neg.emplace_back(n, Vec(-v));
            double minus = model_objective(pb, sol, neg);
            return (plus - 2.0 * e0 + minus) / (step * step);
        };

    auto coupled = [&](const ModelNode* a, const ModelNode* b) {
        if (a == b) return true;
        if (a->loop < 0 || b->loop < 0) {
            const ModelNode* v = (a->loop < 0) ? b : a;
            int last = static_cast<int>(
                           pb.chain_at[static_cast<std::size_t>(v->loop)]
                               .size()) -
                       1;
            return v->ordinal == 0 || v->ordinal == last;
        }
        return a->loop == b->loop && std::abs(a->ordinal - b->ordinal) == 1;
    };

    const int n = static_cast<int>(dirs.size());
    Mat hess = Mat::Zero(sys.total, sys.total);
    std::vector<double> diag(static_cast<std::size_t>(n));
    for (int a = 0; a < n; ++a) {
        const Dir& d = dirs[static_cast<std::size_t>(a)];
        diag[static_cast<std::size_t>(a)] =
            curvature({{d.node, Vec(step * d.ambient)}});
        hess(a, a) = diag[static_cast<std::size_t>(a)];
    }
    for (int a = 0; a < n; ++a) {
        for (int b = a + 1; b < n; ++b) {
            const Dir& da = dirs[static_cast<std::size_t>(a)];
            const Dir& db = dirs[static_cast<std::size_t>(b)];
            if (!coupled(da.node, db.node)) continue;
            double quad;
            if (da.node == db.node) {
                quad = curvature(
                    {{da.node, Vec(step * (da.ambient + db.ambient))}});
            } else {
                quad = curvature({{da.node, Vec(step * da.ambient)},
                                  {db.node, Vec(step * db.ambient)}});
            }
            double off = 0.5 * (quad - diag[static_cast<std::size_t>(a)] -
                                diag[static_cast<std::size_t>(b)]);
            hess(a, b) = off;
            hess(b, a) = off;
        }
    }
    return hess;
}

}  // namespace

double balanced_level(double sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
        throw DomainError("balanced_level: sigma must be positive and finite");
    }
    return sigma * sigma * (1.0 + balanced_constant());
}

BrokenBouquet refine_flat(const Polytope& P, const Bouquet& B,
                          const RefineOptions& opts) {
    validate_options(opts);
    if (B.loops.empty()) throw DomainError("refine_flat: bouquet has no loops");
    const int n = P.dim();
    if (B.basepoint.size() != n) {
        throw DomainError("refine_flat: basepoint dimension mismatch");
    }
    const int m = opts.segments_per_loop;

    ChainProblem pb;
    pb.dim = n;
    pb.delta = auto_delta(B, opts);

    Config cfg;
    cfg.base = B.basepoint;

    for (const GeodesicLoop& loop : B.loops) {
        const BilliardTrajectory& t = loop.trajectory;
        LoopSamples samples = sample_loop(loop, m);
        pb.reference_length += samples.flat_length;

        // Develop the loop: unfold each reflection so the chain becomes a
        // straight segment from the basepoint to a reflected basepoint copy.
        Mat acc_A = Mat::Identity(n, n);
        Vec acc_a = Vec::Zero(n);
        std::vector<Mat> maps_A;  // per trajectory segment
        std::vector<Vec> maps_a;
        maps_A.push_back(acc_A);
        maps_a.push_back(acc_a);
        for (int f : t.faces) {
            Mat refl = P.reflect_matrix(f);
            Vec shift = P.reflect_point(f, Vec::Zero(n));
            acc_a = acc_A * shift + acc_a;
            acc_A = acc_A * refl;
            maps_A.push_back(acc_A);
            maps_a.push_back(acc_a);
        }
        pb.rep_A.push_back(acc_A);
        pb.rep_a.push_back(acc_a);

        Vec developed_end = acc_A * B.basepoint + acc_a;
        double chord = (developed_end - B.basepoint).norm();
        if (std::abs(chord - samples.flat_length) >
            1e-8 * std::max(1.0, samples.flat_length)) {
            throw DomainError(
                "refine_flat: loop does not develop straight (not a billiard "
                "loop?)");
        }
        Vec axis = (developed_end - B.basepoint) / chord;

        // Developed interior samples: apply the map of the segment each
        // sample lies on.
        std::vector<double> cumulative(t.points.size(), 0.0);
        for (std::size_t i = 1; i < t.points.size(); ++i) {
            cumulative[i] =
                cumulative[i - 1] + (t.points[i] - t.points[i - 1]).norm();
        }
        std::vector<Disk> disks;
        std::vector<Vec> verts;
        for (int k = 1; k < m; ++k) {
            double at = samples.flat_length * k / m;
            std::size_t seg = 1;
            while (seg + 1 < cumulative.size() && cumulative[seg] <= at) ++seg;
            Vec developed =
                maps_A[seg - 1] * samples.points[static_cast<std::size_t>(k - 1)] +
                maps_a[seg - 1];
            disks.push_back({developed, axis});
            verts.push_back(developed);
        }
        pb.disks.push_back(std::move(disks));
        cfg.verts.push_back(std::move(verts));
    }

    pb.hooks.retract_base = [](Vec x) { return x; };
    pb.hooks.retract_vertex = [](const Disk& d, Vec x) {
        x += (d.center - x).dot(d.axis) * d.axis;
        return x;
    };
    pb.hooks.base_tangent = [n](const Vec&) { return Mat::Identity(n, n); };
    pb.hooks.vertex_tangent = [](const Disk& d, const Vec&) {
        return orth_complement(d.axis);
    };

    return optimize_chains(pb, std::move(cfg), opts);
}

BrokenBouquet refine_bouquet(const ScalarField& field, double level,
                             const Bouquet& B, const RefineOptions& opts) {
    validate_options(opts);
    if (B.loops.empty()) {
        throw DomainError("refine_bouquet: bouquet has no loops");
    }
    const int n = static_cast<int>(B.basepoint.size());
    const int d = field.ambient_dim();
    if (d != n + 1) {
        throw DomainError(
            "refine_bouquet: field must live one dimension above the bouquet");
    }
    if (!(level > 0.0) || !std::isfinite(level)) {
        throw DomainError("refine_bouquet: level must be positive");
    }
    for (const GeodesicLoop& loop : B.loops) {
        if (!loop.loop_in_double()) {
            throw DomainError("refine_bouquet: loop does not close in the double");
        }
        if (loop.start_sheet != B.loops.front().start_sheet) {
            throw DomainError("refine_bouquet: loops start on different sheets");
        }
    }
    const int m = opts.segments_per_loop;

    LevelProblem pb;
    pb.field = &field;
    pb.level = level;
    pb.surf_tol = 1e-13 * std::max(1.0, std::abs(level));
    pb.delta = auto_delta(B, opts);
    // Projection clamp guards against hopping to the far sheet, whose
    // distance scales with the loop geometry, not with the disk radius.
    pb.step_cap = 0.25 * shortest_arc(B, opts);
    pb.trust = 0.5 * pb.delta;
    pb.dim = d;
    pb.segments = m;

    const double spacing = (opts.arc_spacing > 0.0)
                               ? opts.arc_spacing
                               : shortest_arc(B, opts) / 24.0;

    auto lift = [d, n](const Vec& q, double h) {
        Vec x(d);
        x.head(n) = q;
        x(n) = h;
        return x;
    };

    // Sheet-signed closest-point transfer: lift a base-chart sample to the
    // height the separable profile predicts for its sheet, then project onto
    // the surface along the gradient.  Samples over points where the level
    // no longer reaches (near the fold) start at h = 0 and land on the rim.
    auto transfer = [&](const Vec& q, double sign) {
        double base_val = field.value(lift(q, 0.0));
        double z0 = std::sqrt(std::max(level - base_val, 0.0));
        return level_project_surface(pb, lift(q, sign * z0));
    };

    LevelState st;
    double base_sign = B.loops.front().start_sheet == 0 ? 1.0 : -1.0;
    st.base = transfer(B.basepoint, base_sign);

    for (const GeodesicLoop& loop : B.loops) {
        double arc_len = loop.length() / m;
        int p = std::clamp(static_cast<int>(std::ceil(arc_len / spacing)), 1, 64);
        pb.arc_points.push_back(p);

        LoopSamples samples = sample_loop(loop, m * p);
        pb.reference_length += samples.flat_length;

        std::vector<FinePoint> pts;
        std::vector<int> chain_at;
        for (std::size_t i = 0; i < samples.points.size(); ++i) {
            FinePoint fp;
            fp.x = transfer(samples.points[i], samples.sign[i]);
            if ((static_cast<int>(i) + 1) % p == 0) {
                chain_at.push_back(static_cast<int>(i));
            }
            pts.push_back(std::move(fp));
        }

        // Disks orthogonal to the transferred chain direction, between
        // consecutive chain vertices (basepoint at the ends).
        for (std::size_t k = 0; k < chain_at.size(); ++k) {
            const Vec& here = pts[static_cast<std::size_t>(chain_at[k])].x;
            const Vec& before =
                (k == 0) ? st.base
                         : pts[static_cast<std::size_t>(chain_at[k - 1])].x;
            const Vec& after =
                (k + 1 == chain_at.size())
                    ? st.base
                    : pts[static_cast<std::size_t>(chain_at[k + 1])].x;
            Vec axis = after - before;
            double len = axis.norm();
            if (len < 1e-12) {
                throw DegenerateGeometry(
                    "refine_bouquet: transferred chain collapsed");
            }
            pts[static_cast<std::size_t>(chain_at[k])].disk =
                static_cast<int>(pb.disks.size());
            pb.disks.push_back({here, Vec(axis / len)});
        }
        pb.chain_at.push_back(std::move(chain_at));
        st.loops.push_back(std::move(pts));
    }
    level_check_disks(pb, st);

    // Outer minimization over basepoint and chain vertices, arcs re-solved
    // inside every evaluation.
    OuterOutcome run = outer_newton(pb, st, opts);

    // Second variation in the model coordinates: central differences with
    // warm re-solves of the touched arcs for the verdict, the analytic
    // Schur-complemented spring Hessian as the independent route, and the
    // noise floor from a doubled step.
    const double fd_step = 1e-4 * pb.delta;
    Mat h1 = model_fd_hessian(pb, st, run.sys, fd_step);
#ifdef LEVEL_TRACE
    std::fprintf(stderr, "[trace] h1 done\n");
#endif
    Mat h2 = model_fd_hessian(pb, st, run.sys, 2.0 * fd_step);
    Mat h_analytic = outer_hessian(pb, st, run.sys);
#ifdef LEVEL_TRACE
    std::fprintf(stderr, "[trace] h2 + analytic done\n");
#endif

    Eigen::SelfAdjointEigenSolver<Mat> eig1(h1);
    Eigen::SelfAdjointEigenSolver<Mat> eig2(h2);
    Eigen::SelfAdjointEigenSolver<Mat> eig_a(h_analytic);

    BrokenBouquet out;
    out.basepoint = st.base;
    out.loops.resize(st.loops.size());
    out.fine_loops.resize(st.loops.size());
    for (std::size_t j = 0; j < st.loops.size(); ++j) {
        for (const FinePoint& p : st.loops[j]) {
            out.fine_loops[j].push_back(p.x);
            if (p.disk >= 0) out.loops[j].push_back(p.x);
        }
    }
    out.length = level_energy(pb, st);
    out.reference_length = pb.reference_length;
    out.projected_gradient_norm = run.sys.pg_norm;
    out.iterations = run.iterations;
    out.spectrum.assign(eig1.eigenvalues().data(),
                        eig1.eigenvalues().data() + eig1.eigenvalues().size());
    out.lambda_min = out.spectrum.front();
    out.noise_floor = std::max(
        std::abs(eig1.eigenvalues()(0) - eig2.eigenvalues()(0)), 1e-14);
    out.stable = out.lambda_min > 0.0 && out.lambda_min > 10.0 * out.noise_floor;
    out.spectrum_analytic.assign(
        eig_a.eigenvalues().data(),
        eig_a.eigenvalues().data() + eig_a.eigenvalues().size());
    out.max_disk_activation = level_disk_activation(pb, st);

    std::vector<const Vec*> chain_points;
    chain_points.push_back(&st.base);
    for (const auto& loop : st.loops) {
        for (const FinePoint& p : loop) {
            if (p.disk >= 0) chain_points.push_back(&p.x);
        }
    }
    double min_pair = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < chain_points.size(); ++a) {
        for (std::size_t b = a + 1; b < chain_points.size(); ++b) {
            min_pair =
                std::min(min_pair, (*chain_points[a] - *chain_points[b]).norm());
        }
    }
    out.min_pair_distance = min_pair;
    return out;
}

}  // namespace bouquet
