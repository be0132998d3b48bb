// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace semhtr {

/// Base class for every error raised by the library. `exit_code()` follows the
/// CLI contract: 1 usage/config, 2 data, 3 numeric failure.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 2; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 1; }
};

class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : DataError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Word or character not representable by a vocabulary, charset, or embedding table.
class CoverageError : public DataError {
 public:
  using DataError::DataError;
};

class ShapeError : public DataError {
 public:
  using DataError::DataError;
};

class InvalidInputError : public DataError {
 public:
  using DataError::DataError;
};

/// Singular spline systems, zero-norm vectors and similar degenerate numerics.
class DegenerateError : public DataError {
 public:
  using DataError::DataError;
};

class VocabularyError : public DataError {
 public:
  using DataError::DataError;
};

/// Rate with an empty denominator (no reference characters or no pairs).
class UndefinedMetricError : public DataError {
 public:
  using DataError::DataError;
};

class NumericError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

}  // namespace semhtr
