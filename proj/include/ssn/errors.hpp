#pragma once

#include <stdexcept>
#include <string>

namespace ssn {

// Base of every error thrown by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A linear system is (numerically) singular.
class SingularSystemError : public Error {
 public:
  SingularSystemError(const std::string& what, long rank = -1)
      : Error(what), rank_(rank) {}
  long rank() const noexcept { return rank_; }

 private:
  long rank_;
};

/// Invalid term, network or experiment specification.
class SpecError : public Error {
 public:
  using Error::Error;
};

/// Referenced column/term missing, or design does not match a stored layout.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// Malformed or non-finite input data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// A statistic is undefined for the given input (e.g. zero variance).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition of an operation is violated.
class PreconditionError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration file or command line.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace ssn
