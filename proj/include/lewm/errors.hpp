#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lewm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke a documented precondition (shapes, ranges, simplex inputs).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or inconsistent configuration sections.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. Carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  explicit ParseError(const std::string& what) : Error(what) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_ = 0;
};

/// Well-formed data that does not match the expected schema or dimensions.
class SchemaError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : Error("diverged at step " + std::to_string(step) + ": " + what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Operations invoked in the wrong order (e.g. stage 2 before stage 1).
class OrderingError : public Error {
 public:
  using Error::Error;
};

/// Artifact digests no longer match a manifest.
class VerificationError : public Error {
 public:
  using Error::Error;
};

}  // namespace lewm
