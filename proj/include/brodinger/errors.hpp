#pragma once

#include <stdexcept>
#include <string>

namespace brodinger {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A documented precondition of an operation was violated.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// A numerical quantity failed validation (nonpositive density, non-invertible map, ...).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file or configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require(bool condition, const std::string& message) {
  if (!condition) throw PreconditionError(message);
}

}  // namespace detail
}  // namespace brodinger
