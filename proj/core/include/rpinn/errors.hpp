#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace rpinn {

// Base of every error thrown by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad arguments or inconsistent inputs (dimension mismatch, sigma <= 0, ...).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Invalid or incomplete experiment configuration.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error("config field '" + field + "': " + what), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// Non-finite values, solver breakdown, failed factorizations.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Filesystem and serialization failures.
class IoError : public Error {
 public:
  using Error::Error;
};

// Persisted data does not match its recorded checksum.
class CorruptionError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace rpinn
