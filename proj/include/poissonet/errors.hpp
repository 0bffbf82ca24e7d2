#pragma once

#include <stdexcept>
#include <string>

namespace poissonet {

/// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent user input (files, dimensions, attribute types).
class InputError : public Error {
 public:
  using Error::Error;
};

/// A log-rate left the representable range, or an iterate escaped the
/// divergence bound.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// A linear system that must be solved exactly turned out to be singular.
class SingularMatrixError : public Error {
 public:
  using Error::Error;
};

}  // namespace poissonet
