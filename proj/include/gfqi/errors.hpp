#pragma once

#include <stdexcept>
#include <string>

namespace gfqi {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid experiment or environment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed call arguments (dimension mismatch, out-of-range action, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

/// A linear system that is singular or too badly conditioned to solve.
class SingularSystemError : public Error {
 public:
  SingularSystemError(const std::string& what, double condition)
      : Error(what), condition_(condition) {}
  double condition() const noexcept { return condition_; }

 private:
  double condition_;
};

/// The value-iteration oracle failed to converge.
class OracleError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Parse failure in a CSV or JSON input; `line` is 1-based, 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace gfqi
