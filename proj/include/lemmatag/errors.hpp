#pragma once

#include <stdexcept>
#include <string>

namespace lemmatag {

// Root of every error thrown by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad or inconsistent configuration; usage errors.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Input data problems: unreadable files, malformed treebanks, bad binary
// files, misaligned corpora.
class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public DataError {
 public:
  using DataError::DataError;
};

class AlignmentError : public DataError {
 public:
  using DataError::DataError;
};

// Operand shapes do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf in a forward value, a loss or a gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace lemmatag
