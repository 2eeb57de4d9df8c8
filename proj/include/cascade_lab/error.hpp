#pragma once

#include <stdexcept>
#include <string>

namespace cascade_lab {

/// Precondition failure on user-supplied data (grid sizes, regions, options).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A numerically certified hypothesis does not hold for the given operators.
class HypothesisViolated : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The requested test does not apply to this configuration (documented limitation).
class NotApplicable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Eigensolver or linear-solver breakdown. The message carries diagnostics.
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Explicit time step exceeds the stability bound.
class CflViolation : public InvalidArgument {
 public:
  CflViolation(const std::string& what, double admissible_dt)
      : InvalidArgument(what), admissible_dt_(admissible_dt) {}
  double admissible_dt() const noexcept { return admissible_dt_; }

 private:
  double admissible_dt_;
};

/// Ray step too large relative to the thinnest region part.
class StepTooCoarse : public InvalidArgument {
 public:
  using InvalidArgument::InvalidArgument;
};

}  // namespace cascade_lab
