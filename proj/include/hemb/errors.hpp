#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hemb {

/// Incompatible tensor extents (matmul inner dims, broadcasting, reshapes).
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values or division by zero while checked mode is on.
class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A request for more items than the input holds (L > N in FPS, K > N in KNN).
class CapacityError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Violated call contract (kernel of a selective system, second backward, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Invalid configuration key or value.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Text input that does not follow its format. Carries the 1-based line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Binary checkpoint that fails validation.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hemb
