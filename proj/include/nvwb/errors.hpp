#pragma once

#include <stdexcept>
#include <string>

namespace nvwb {

/// Base for all workbench failures. `exit_code()` is the CLI status the
/// error maps to (2 validation, 3 non-convergence, 4 I/O).
class Error : public std::runtime_error {
  public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
    virtual int exit_code() const noexcept { return 2; }
};

/// Input violates a documented precondition or type invariant.
class ValidationError : public Error {
  public:
    using Error::Error;
};

/// Negative or otherwise unusable transition rate.
class InvalidRateError : public ValidationError {
  public:
    using ValidationError::ValidationError;
};

/// Non-finite values or a numerically meaningless result.
class NumericError : public Error {
  public:
    using Error::Error;
};

/// The generator has more than one stationary distribution.
class NonUniqueSteadyStateError : public NumericError {
  public:
    using NumericError::NumericError;
};

/// Operation refused because its regime of validity is violated.
class PreconditionError : public ValidationError {
  public:
    using ValidationError::ValidationError;
};

/// Rate table whose structure makes a derived quantity undefined.
class DegenerateTableError : public ValidationError {
  public:
    using ValidationError::ValidationError;
};

class OutOfRangeError : public ValidationError {
  public:
    using ValidationError::ValidationError;
};

class FitError : public Error {
  public:
    using Error::Error;
    int exit_code() const noexcept override { return 3; }
};

class RankDeficiencyError : public FitError {
  public:
    using FitError::FitError;
};

class IoError : public Error {
  public:
    using Error::Error;
    int exit_code() const noexcept override { return 4; }
};

}  // namespace nvwb
