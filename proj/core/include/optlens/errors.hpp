#pragma once

#include <stdexcept>
#include <string>

namespace optlens {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Input is valid in type but degenerate for the operation (zero matrix,
/// zero direction, too few points or samples).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// A parameter was assigned to an optimizer class it cannot be handled by.
class RoutingError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or tampered persisted file.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace optlens
