#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ecw {

// Error hierarchy. Each named failure mode from the module contracts gets its
// own type so callers (and the CLI exit-code mapping) can distinguish them.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeMismatch : Error { using Error::Error; };
struct EvenKernel : Error { using Error::Error; };
struct IndivisibleShape : Error { using Error::Error; };
struct AsymmetricSpec : Error { using Error::Error; };
struct ShapeFlowError : Error { using Error::Error; };
struct ParamBudgetViolation : Error { using Error::Error; };
struct CorruptCheckpoint : Error { using Error::Error; };
struct VersionMismatch : Error { using Error::Error; };
struct EmptyDataset : Error { using Error::Error; };
struct EmptySequence : Error { using Error::Error; };
struct DegenerateGeometry : Error { using Error::Error; };
struct IoFailure : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
// Projection outcomes: a pixel at/above the horizon has no ground point, a
// ground point behind the image plane has no pixel.
struct HorizonRay : Error { using Error::Error; };
struct Behind : Error { using Error::Error; };
struct NoPair : Error { using Error::Error; };

inline void require(bool cond, const char* what) {
  if (!cond) throw Error(what);
}

}  // namespace ecw
