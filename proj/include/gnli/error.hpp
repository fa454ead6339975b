#pragma once

#include <stdexcept>
#include <string>

namespace gnli {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform, an axis is out of range, or an index is out of bounds.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, divergence, misuse of the autodiff graph.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Unreadable or malformed corpus, word-vector or checkpoint input.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration values or combinations.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace gnli
