#pragma once

#include <stdexcept>
#include <string>

namespace coda {

/// Non-finite value or invalid numeric request; message carries the locus.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Solver failure; carries the index of the offending step.
struct IntegrationError : std::runtime_error {
  int step_index;
  IntegrationError(const std::string& what, int step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_index(step) {}
};

/// Training diverged; carries the epoch at which the objective became non-finite.
struct TrainingError : std::runtime_error {
  int epoch;
  TrainingError(const std::string& what, int at_epoch)
      : std::runtime_error(what + " (epoch " + std::to_string(at_epoch) + ")"), epoch(at_epoch) {}
};

struct AdaptationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bad configuration or missing inputs (maps to CLI exit code 2).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Container/version mismatch (maps to CLI exit code 3).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Rank-deficient least-squares design.
struct DegenerateFitError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Reduced Hessian system not invertible at the requested ridge weight.
struct SingularHessianError : std::runtime_error {
  double condition_number;
  SingularHessianError(const std::string& what, double cond)
      : std::runtime_error(what), condition_number(cond) {}
};

}  // namespace coda
