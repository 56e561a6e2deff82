#pragma once

#include <stdexcept>
#include <string>

namespace bouquet {

// Base class for all library errors so callers can catch the whole family.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// A parameter is outside its documented range, or a precondition on the
// mathematical input fails (e.g. a vector not lying in a required plane).
struct DomainError : Error {
    using Error::Error;
};

// Singular value spectrum has no clean gap at the rank cut, so the kernel
// dimension cannot be trusted.
struct RankAmbiguous : Error {
    RankAmbiguous(const std::string& msg, double gap) : Error(msg), gap_ratio(gap) {}
    double gap_ratio;
};

// Operation requires a bounded polytope.
struct NotCompact : Error {
    using Error::Error;
};

// A ray hit the (n-2)-skeleton, or two faces tie for the first hit.
struct SingularHit : Error {
    using Error::Error;
};

// A ray leaves an unbounded polytope without another collision.
struct Escape : Error {
    using Error::Error;
};

// Point/direction data fails the billiard reflection law.
struct NotABilliard : Error {
    using Error::Error;
};

// A subspace expected to be invariant under an operator is not.
struct NotInvariant : Error {
    using Error::Error;
};

// A family construction failed validation (reports the first failing check).
struct ConstructionFailed : Error {
    using Error::Error;
};

// Geometry degenerated: collision on an edge endpoint, flat cone, etc.
struct DegenerateGeometry : Error {
    using Error::Error;
};

// Iterative routine exhausted its budget; carries the last residual.
struct NoConvergence : Error {
    NoConvergence(const std::string& msg, double res) : Error(msg), residual(res) {}
    double residual;
};

// Chain vertices left their constraint disks during refinement.
struct EscapedDisks : Error {
    using Error::Error;
};

// Level is not a regular value of the field on the sampled region.
struct NotRegular : Error {
    using Error::Error;
};

// Gradient vanishes where a level-set quantity was requested.
struct SingularPoint : Error {
    using Error::Error;
};

}  // namespace bouquet
