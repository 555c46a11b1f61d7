#pragma once

#include <stdexcept>
#include <string>

namespace slca {

// Caller broke a documented precondition (shape mismatch, bad argument,
// operation applied in the wrong state).
class ContractViolation : public std::invalid_argument {
 public:
  explicit ContractViolation(const std::string& what)
      : std::invalid_argument(what) {}
};

// Reverse pass reached a node with no registered gradient rule.
class UnsupportedOperation : public std::runtime_error {
 public:
  explicit UnsupportedOperation(const std::string& what)
      : std::runtime_error(what) {}
};

// Cholesky pivot failed: the matrix is not positive definite as given.
class NotPositiveDefinite : public std::runtime_error {
 public:
  explicit NotPositiveDefinite(const std::string& what)
      : std::runtime_error(what) {}
};

// An iterative routine ran out of budget or a decomposition failed even
// after the documented recovery schedule.
class NumericalFailure : public std::runtime_error {
 public:
  explicit NumericalFailure(const std::string& what)
      : std::runtime_error(what) {}
};

// Input data is structurally valid but carries no usable signal
// (zero logit row, constant feature matrix, ...).
class DegenerateInput : public std::runtime_error {
 public:
  explicit DegenerateInput(const std::string& what)
      : std::runtime_error(what) {}
};

// Malformed external input (CSV, config, manifest); message carries the
// location when one is known.
class ParseError : public std::runtime_error {
 public:
  explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace slca
