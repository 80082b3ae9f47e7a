#pragma once

#include <stdexcept>
#include <string>

namespace swgrid {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  /// Short machine-readable category, printed by the CLI.
  virtual const char* kind() const noexcept { return "error"; }
};

/// Inconsistent shapes or settings detected while building or running a model.
class ConfigError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "config"; }
};

/// Malformed data handed to an operation.
class InvalidInputError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "invalid-input"; }
};

/// API misuse, e.g. backward on a tensor that was never recorded.
class UsageError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "usage"; }
};

/// Work would exceed a fixed resource guard.
class ResourceError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "resource"; }
};

/// Missing, unreadable or truncated files.
class IoError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "io"; }
};

/// File contents that parse but violate the format.
class CorruptDataError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "corrupt-data"; }
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "divergence"; }
};

}  // namespace swgrid
