#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nocnet {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes, lengths or dimensions disagree.
class SizeMismatch : public Error {
 public:
  using Error::Error;
};

/// A value violates an operation's domain (non-finite, out of range, ...).
class InvalidValue : public Error {
 public:
  using Error::Error;
};

/// backward() was asked for a root that is not on the trace.
class NoTrace : public Error {
 public:
  using Error::Error;
};

/// Two models that should share structure do not.
class ArchMismatch : public Error {
 public:
  using Error::Error;
};

/// A partition plan leaves a partition empty or misassigns samples.
class InvalidPlan : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Configuration parse or validation failure. line() is 0 for flag overrides.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& what, std::size_t line = 0)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace nocnet
