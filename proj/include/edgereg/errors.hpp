#ifndef EDGEREG_ERRORS_HPP
#define EDGEREG_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace edgereg {

// Base for all library errors.
struct Error : std::runtime_error {
  explicit Error(const std::string &msg) : std::runtime_error(msg) {}
};

// Shape or input mismatch detected while wiring/evaluating a graph.
struct ValidationError : Error {
  using Error::Error;
};

// Non-finite value produced during numeric evaluation.
struct NumericError : Error {
  using Error::Error;
};

// Operation called in the wrong lifecycle state.
struct StateError : Error {
  using Error::Error;
};

// Caller violated a documented precondition.
struct ContractError : Error {
  using Error::Error;
};

// Malformed file contents.
struct FormatError : Error {
  using Error::Error;
};

// Filesystem-level failure.
struct IoError : Error {
  using Error::Error;
};

// Input configuration that admits no solution (collinear PnP points,
// empty scene specs and the like).
struct DegeneracyError : Error {
  using Error::Error;
};

}  // namespace edgereg

#endif  // EDGEREG_ERRORS_HPP
