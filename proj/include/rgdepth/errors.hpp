#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace rgdepth {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Buffers whose shapes cannot be combined.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A reduction was asked to average over zero elements.
class EmptyReductionError : public Error {
 public:
  using Error::Error;
};

/// An argument outside the mathematical domain of the operation
/// (non-positive depth, non-finite value, invalid warp, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A 3-D point at or behind the camera plane was projected.
class BehindCameraError : public DomainError {
 public:
  using DomainError::DomainError;
};

/// No pixel carries depth information (J = 0 everywhere).
class NoObservabilityError : public Error {
 public:
  using Error::Error;
};

/// Malformed file content. `offset()` is the byte position where parsing failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Invalid run configuration (unknown key, out-of-range option, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace rgdepth
