#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ps2 {

// Base of every error raised by the library. Callers that only care about
// "something went wrong" catch this; tests match on the concrete kinds.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Index outside the addressed range.
class IndexError : public Error {
 public:
  using Error::Error;
};

// Violated precondition on a call (bad argument, wrong state).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid content in user-provided data (non-finite coordinates, bad labels).
class DataError : public Error {
 public:
  using Error::Error;
};

// Malformed text input. Carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace ps2
