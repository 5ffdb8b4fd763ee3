#pragma once

#include <stdexcept>
#include <string>

namespace gridshift {

// Base class for every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent case/scenario/plan input.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class PowerFlowError : public Error {
 public:
  enum class Kind { diverged, singular_jacobian };
  PowerFlowError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class SolverError : public Error {
 public:
  enum class Kind { infeasible, unbounded, not_converged, invalid_problem };
  SolverError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class PlannerError : public Error {
 public:
  using Error::Error;
};

}  // namespace gridshift
