#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace deltamem {

// Shape or argument contract violated by the caller.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A recurrence produced a non-finite value. `step` is the zero-based
// position at which the first non-finite entry appeared.
class ExplosionError : public std::runtime_error {
 public:
  ExplosionError(const std::string& what, std::size_t step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

// Input falls outside the region where the state-exchange construction is
// guaranteed to be exact.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// A randomized construction ran out of budget.
class InfeasibleError : public std::runtime_error {
 public:
  InfeasibleError(const std::string& what, double best)
      : std::runtime_error(what), best_(best) {}
  double best() const noexcept { return best_; }

 private:
  double best_;
};

class SingularMatrixError : public std::runtime_error {
 public:
  SingularMatrixError(const std::string& what, double condition)
      : std::runtime_error(what), condition_(condition) {}
  double condition_estimate() const noexcept { return condition_; }

 private:
  double condition_;
};

}  // namespace deltamem
