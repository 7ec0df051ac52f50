#pragma once

#include <stdexcept>
#include <string>

namespace qvae {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Operand shapes are incompatible. The message names both shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A file could not be opened, read, or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A file exists but its contents violate the expected format.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A numeric precondition or runtime invariant was violated.
class ValueError : public Error {
 public:
  using Error::Error;
};

}  // namespace qvae
