#pragma once

#include <stdexcept>
#include <string>

namespace binlat {

// Typed failures surfaced by the estimation routines. Callers that run many
// replications catch these and count them instead of aborting the run.

struct SeparationDetected : std::runtime_error {
  explicit SeparationDetected(const std::string& what) : std::runtime_error(what) {}
};

struct SingularHessian : std::runtime_error {
  explicit SingularHessian(const std::string& what) : std::runtime_error(what) {}
};

struct NoConvergence : std::runtime_error {
  explicit NoConvergence(const std::string& what) : std::runtime_error(what) {}
};

// Subsampling covariance is undefined when the fitted latent variance is on
// the boundary; the caller must handle this case, there is no fallback.
struct DegenerateFit : std::runtime_error {
  explicit DegenerateFit(const std::string& what) : std::runtime_error(what) {}
};

struct SingularGramMatrix : std::runtime_error {
  explicit SingularGramMatrix(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace binlat
