#pragma once

#include <stdexcept>
#include <string>

namespace ssdu {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes of operands disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A mask or dataset violates a subset / acquisition invariant.
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

/// The requested linear system cannot be solved (singular configuration).
class SolverError : public Error {
 public:
  using Error::Error;
};

/// A partition policy cannot be realized on the given mask.
class PolicyError : public Error {
 public:
  using Error::Error;
};

/// API misuse: non-scalar loss, missing reference, bad option value.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// A normalizing reference is identically zero.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unsupported file content.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace ssdu
