#include "bouquet/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <unordered_map>
#include <utility>

#include "bouquet/errors.hpp"

namespace bouquet {

namespace {

// Gradient magnitude below which a crossing cell is declared non-regular.
constexpr double kRegularGradTol = 1e-8;

// Guard against degenerate Newton steps on already-converged vertices.
constexpr double kProjectionGradFloor = 1e-12;

// The six tetrahedra of the Kuhn split of a cube, as local corner indices
// (bit 0 = x, bit 1 = y, bit 2 = z).  Every tetrahedron contains the main
// diagonal 0-7, and every cube is split identically, so the diagonals drawn
// on shared cube faces agree between neighbours and the extracted mesh
// closes up across cell boundaries.
constexpr int kTets[6][4] = {
    {0, 1, 3, 7}, {0, 1, 5, 7}, {0, 2, 3, 7},
    {0, 2, 6, 7}, {0, 4, 5, 7}, {0, 4, 6, 7},
};

struct LatticePoint {
    std::uint64_t id;  // linear index into the value grid
    Vec pos;
    double value;
};

}  // namespace

bool SurfaceMesh::watertight() const {
    if (triangles.empty()) return false;
    std::map<std::pair<int, int>, int> edge_count;
    for (const auto& t : triangles) {
        for (int e = 0; e < 3; ++e) {
            int a = t[e], b = t[(e + 1) % 3];
            edge_count[{std::min(a, b), std::max(a, b)}] += 1;
        }
    }
    for (const auto& [edge, count] : edge_count) {
        if (count != 2) return false;
    }
    return true;
}

int SurfaceMesh::euler_characteristic() const {
    std::map<std::pair<int, int>, int> edges;
    for (const auto& t : triangles) {
        for (int e = 0; e < 3; ++e) {
            int a = t[e], b = t[(e + 1) % 3];
            edges[{std::min(a, b), std::max(a, b)}] = 1;
        }
    }
    return static_cast<int>(vertices.size()) - static_cast<int>(edges.size()) +
           static_cast<int>(triangles.size());
}

int SurfaceMesh::genus() const { return (2 - euler_characteristic()) / 2; }

SurfaceMesh extract_surface(const ScalarField& field, double level,
                            const GridSpec& grid) {
    if (field.ambient_dim() != 3) {
        throw DomainError("extract_surface: field must be three-dimensional");
    }
    if (grid.lo.size() != 3 || grid.hi.size() != 3) {
        throw DomainError("extract_surface: grid bounds must be in R^3");
    }
    for (int a = 0; a < 3; ++a) {
        if (!(grid.hi(a) > grid.lo(a))) {
            throw DomainError("extract_surface: grid box is empty");
        }
    }
    if (grid.cells < 2 || grid.cells > 256) {
        throw DomainError("extract_surface: cells must be in [2, 256]");
    }

    const std::uint64_t n = static_cast<std::uint64_t>(grid.cells) + 1;
    const Vec step = (grid.hi - grid.lo) / static_cast<double>(grid.cells);
    const double cell_diam = step.norm();

    auto point_at = [&](std::uint64_t i, std::uint64_t j, std::uint64_t k) {
        Vec p(3);
        p << grid.lo(0) + static_cast<double>(i) * step(0),
            grid.lo(1) + static_cast<double>(j) * step(1),
            grid.lo(2) + static_cast<double>(k) * step(2);
        return p;
    };
    auto point_id = [&](std::uint64_t i, std::uint64_t j, std::uint64_t k) {
        return (k * n + j) * n + i;
    };

    // Sample the field once per lattice point.
    std::vector<double> values(n * n * n);
    for (std::uint64_t k = 0; k < n; ++k) {
        for (std::uint64_t j = 0; j < n; ++j) {
            for (std::uint64_t i = 0; i < n; ++i) {
                values[point_id(i, j, k)] = field.value(point_at(i, j, k));
            }
        }
    }

    SurfaceMesh mesh;
    // Vertices are welded by the lattice segment they sit on, so triangles
    // from different tetrahedra (and different cubes) share indices.
    std::unordered_map<std::uint64_t, int> edge_vertex;
    // Regularity is checked at most once per lattice point.
    std::unordered_map<std::uint64_t, double> grad_norm;

    auto corner_grad_norm = [&](std::uint64_t id, const Vec& pos) {
        auto it = grad_norm.find(id);
        if (it != grad_norm.end()) return it->second;
        double g = field.gradient(pos).norm();
        grad_norm.emplace(id, g);
        return g;
    };

    auto vertex_on_edge = [&](const LatticePoint& a, const LatticePoint& b) {
        std::uint64_t lo_id = std::min(a.id, b.id);
        std::uint64_t hi_id = std::max(a.id, b.id);
        std::uint64_t key = (lo_id << 32) | hi_id;
        auto it = edge_vertex.find(key);
        if (it != edge_vertex.end()) return it->second;
        double t = (level - a.value) / (b.value - a.value);
        t = std::clamp(t, 0.0, 1.0);
        Vec p = a.pos + t * (b.pos - a.pos);
        int index = static_cast<int>(mesh.vertices.size());
        mesh.vertices.push_back(p);
        edge_vertex.emplace(key, index);
        return index;
    };

    auto emit = [&](int v0, int v1, int v2, const Vec& inward,
                    const Vec& outward) {
        // Orient the triangle so its normal points toward the side where the
        // field exceeds the level.
        const Vec& p0 = mesh.vertices[static_cast<std::size_t>(v0)];
        const Vec& p1 = mesh.vertices[static_cast<std::size_t>(v1)];
        const Vec& p2 = mesh.vertices[static_cast<std::size_t>(v2)];
        Eigen::Vector3d e1 = p1.head<3>() - p0.head<3>();
        Eigen::Vector3d e2 = p2.head<3>() - p0.head<3>();
        Eigen::Vector3d axis = outward.head<3>() - inward.head<3>();
        if (e1.cross(e2).dot(axis) < 0.0) std::swap(v1, v2);
        mesh.triangles.push_back({v0, v1, v2});
    };

    for (std::uint64_t k = 0; k < n - 1; ++k) {
        for (std::uint64_t j = 0; j < n - 1; ++j) {
            for (std::uint64_t i = 0; i < n - 1; ++i) {
                LatticePoint corner[8];
                bool any_in = false, any_out = false;
                for (int c = 0; c < 8; ++c) {
                    std::uint64_t ci = i + static_cast<std::uint64_t>(c & 1);
                    std::uint64_t cj = j + static_cast<std::uint64_t>((c >> 1) & 1);
                    std::uint64_t ck = k + static_cast<std::uint64_t>((c >> 2) & 1);
                    corner[c].id = point_id(ci, cj, ck);
                    corner[c].pos = point_at(ci, cj, ck);
                    corner[c].value = values[corner[c].id];
                    (corner[c].value <= level ? any_in : any_out) = true;
                }
                if (!any_in || !any_out) continue;

                // A crossing cell with a vanishing gradient at a corner means
                // the level passes through (or next to) a critical point.
                for (int c = 0; c < 8; ++c) {
                    if (corner_grad_norm(corner[c].id, corner[c].pos) <=
                        kRegularGradTol) {
                        throw NotRegular(
                            "extract_surface: level is not regular on the "
                            "grid (near-zero gradient in a crossing cell)");
                    }
                }

                for (const auto& tet : kTets) {
                    const LatticePoint* v[4] = {
                        &corner[tet[0]], &corner[tet[1]], &corner[tet[2]],
                        &corner[tet[3]]};
                    int in[4], out[4], ni = 0, no = 0;
                    for (int c = 0; c < 4; ++c) {
                        if (v[c]->value <= level) {
                            in[ni++] = c;
                        } else {
                            out[no++] = c;
                        }
                    }
                    if (ni == 0 || no == 0) continue;

                    if (ni == 1 || ni == 3) {
                        // One corner is separated from the other three: the
                        // level set cuts a triangle off that corner.
                        int apex = (ni == 1) ? in[0] : out[0];
                        const int* rest = (ni == 1) ? out : in;
                        int a = vertex_on_edge(*v[apex], *v[rest[0]]);
                        int b = vertex_on_edge(*v[apex], *v[rest[1]]);
                        int c = vertex_on_edge(*v[apex], *v[rest[2]]);
                        Vec other = (v[rest[0]]->pos + v[rest[1]]->pos +
                                     v[rest[2]]->pos) /
                                    3.0;
                        if (ni == 1) {
                            emit(a, b, c, v[apex]->pos, other);
                        } else {
                            emit(a, b, c, other, v[apex]->pos);
                        }
                    } else {
                        // Two in, two out: the level set is a quad across the
                        // four mixed edges; split it along one diagonal.
                        int a = vertex_on_edge(*v[in[0]], *v[out[0]]);
                        int b = vertex_on_edge(*v[in[0]], *v[out[1]]);
                        int c = vertex_on_edge(*v[in[1]], *v[out[1]]);
                        int d = vertex_on_edge(*v[in[1]], *v[out[0]]);
                        Vec inward = 0.5 * (v[in[0]]->pos + v[in[1]]->pos);
                        Vec outward = 0.5 * (v[out[0]]->pos + v[out[1]]->pos);
                        emit(a, b, c, inward, outward);
                        emit(a, c, d, inward, outward);
                    }
                }
            }
        }
    }

    // One Newton step per welded vertex, then record the worst residual.
    for (auto& vtx : mesh.vertices) {
        Vec g = field.gradient(vtx);
        double g2 = g.squaredNorm();
        if (g2 > kProjectionGradFloor * kProjectionGradFloor) {
            vtx -= (field.value(vtx) - level) / g2 * g;
        }
        double residual = std::abs(field.value(vtx) - level);
        mesh.max_level_residual = std::max(mesh.max_level_residual, residual);
        // First-order distance to the level set must stay below the cell
        // diameter, otherwise the sampling was too coarse to trust.
        double slope = std::sqrt(g2);
        if (residual > cell_diam * std::max(slope, kProjectionGradFloor)) {
            throw NotRegular(
                "extract_surface: a projected vertex misses the level set by "
                "more than a cell diameter; refine the grid");
        }
    }

    return mesh;
}

}  // namespace bouquet
