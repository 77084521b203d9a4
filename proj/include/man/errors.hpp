#pragma once

#include <stdexcept>
#include <string>

namespace man {

// Root of every error the library raises. Callers that only care about
// "something went wrong" catch this; the CLI maps it to a nonzero exit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or width disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameter or architecture setting.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Operation invoked in the wrong lifecycle state (e.g. backward on a frozen tape).
class StateError : public Error {
 public:
  using Error::Error;
};

// Malformed or missing input data; messages carry file/line or domain id.
class DataError : public Error {
 public:
  using Error::Error;
};

// Iterative solver failed to reach its stopping criterion.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace man
