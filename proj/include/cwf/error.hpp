#pragma once

#include <stdexcept>
#include <string>

namespace cwf {

/// Input violates a documented precondition (grid mismatch, bad config value, ...).
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A numerical invariant did not hold (norm drift, incomplete basis, node hit).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Velocity requested where |Psi|^2 is below the node floor.
class NodeError : public NumericalError {
 public:
  NodeError(double density, double floor)
      : NumericalError("configuration on a node: |Psi|^2 = " + std::to_string(density) +
                       " below floor " + std::to_string(floor)),
        density_(density),
        floor_(floor) {}

  double density() const noexcept { return density_; }
  double floor() const noexcept { return floor_; }

 private:
  double density_;
  double floor_;
};

/// Post-selection overlap too small for a finite weak value.
class OverlapError : public NumericalError {
 public:
  explicit OverlapError(double overlap)
      : NumericalError("post-selection overlap below floor: |<b|psi>| = " + std::to_string(overlap)),
        overlap_(overlap) {}

  double overlap() const noexcept { return overlap_; }

 private:
  double overlap_;
};

}  // namespace cwf
