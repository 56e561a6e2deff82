#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "bouquet/mesh.hpp"
#include "bouquet/stability.hpp"

namespace bouquet {

// ---------------------------------------------------------------------------
// JSON text for the library's artifact types.  Every double is rendered with
// 17 significant digits (enough to round-trip IEEE doubles exactly) and keys
// are emitted in a fixed order, so equal values produce equal bytes.  The
// parsers accept any standard JSON and throw DomainError on missing or
// ill-typed fields.
// ---------------------------------------------------------------------------

std::string to_json(const Polytope& P);
std::string to_json(const BilliardTrajectory& t);
std::string to_json(const GeodesicLoop& loop);
std::string to_json(const Bouquet& B);

// Certificate with all residuals and margins, plus per-loop validation
// reports when available, so a failed verify still documents what broke.
std::string certificate_json(const StabilityCertificate& cert,
                             const std::vector<ValidationReport>& loop_reports);

Polytope polytope_from_json(const std::string& text);
BilliardTrajectory trajectory_from_json(const std::string& text);
GeodesicLoop loop_from_json(const std::string& text);

// Parses and re-assembles against P, enforcing the bouquet invariants
// (closure at the basepoint, even collision counts, equal start sheets).
Bouquet bouquet_from_json(const std::string& text, const Polytope& P);

// Curvature/convexity report for a smoothed double, as written by the CLI.
struct SmoothReport {
    double sigma = 0.0;
    double level = 0.0;
    double kappa_hat = 0.0;           // strong-convexity certificate value
    double rho = 0.0;                 // projective inradius entering kappa_hat
    double quadrature_error = 0.0;
    double sampled_min_K = 0.0;       // minimum sampled sectional curvature
    double hessian_lambda_min = 0.0;  // minimum sampled field-Hessian eigenvalue
    std::vector<double> spectrum;     // refined-model spectrum; empty without a refine

    // Populated when a bouquet was refined on the level surface.
    bool refined = false;
    double refined_length = 0.0;
    double reference_length = 0.0;
    double projected_gradient_norm = 0.0;
    double lambda_min = 0.0;
    double noise_floor = 0.0;
    bool stable = false;
};

std::string to_json(const SmoothReport& r);

// Everything that influenced a run's outputs, plus the wall time, which
// byte-comparisons must ignore (it is the one legitimately varying field).
struct RunManifest {
    std::string command_line;
    std::string tool_version;
    std::vector<std::pair<std::string, std::uint64_t>> input_hashes;
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, double>> tolerances;
    double wall_time_seconds = 0.0;
};

std::string to_json(const RunManifest& m);

// FNV-1a, 64-bit: a tiny stable fingerprint for manifest input hashes.
std::uint64_t fnv1a64(std::string_view bytes);

// Throws DomainError when the file cannot be read.
std::string read_text_file(const std::string& path);

// Writes to `path + ".tmp"` then renames, so readers never observe a
// half-written file.  Throws DomainError on IO failure.
void write_text_file_atomic(const std::string& path, const std::string& text);

// Wavefront OBJ export, ambient R^3 only.  The mesh writer validates
// watertightness first and throws DomainError otherwise; the polyline writer
// emits one closed `l` element per loop.
std::string obj_from_mesh(const SurfaceMesh& mesh);
std::string obj_from_polylines(const std::vector<std::vector<Vec>>& lines);

}  // namespace bouquet
