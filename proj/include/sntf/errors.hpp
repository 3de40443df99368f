#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sntf {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad input data: malformed files, out-of-range indices, too few entries.
class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public DataError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class BoundsError : public DataError {
 public:
  using DataError::DataError;
};

class InsufficientDataError : public DataError {
 public:
  using DataError::DataError;
};

class CapacityError : public DataError {
 public:
  using DataError::DataError;
};

/// A density or map evaluated outside its support.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values during optimization.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace sntf
