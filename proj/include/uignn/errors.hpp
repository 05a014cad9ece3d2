#pragma once

#include <stdexcept>
#include <string>

namespace uignn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Input outside the domain of a function (log of a non-positive value, alpha <= 1, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A caller broke a documented precondition (non-scalar loss, bad index, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// NaN or Inf appeared in a computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. Carries the 1-based line number when known.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::size_t line = 0)
      : Error(line == 0 ? what : what + " (line " + std::to_string(line) + ")"), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Dataset cannot satisfy a request (series too short, no valid window, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace uignn
