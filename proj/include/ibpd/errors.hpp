#pragma once

#include <stdexcept>
#include <string>

namespace ibpd {

// Base for every error raised by the library. Callers that only care about
// "something in ibpd failed" can catch this one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or width disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Input outside the mathematical domain of an operation (log of a non-positive
// value, probability outside (0,1), ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

// A forward op produced NaN/Inf from finite inputs.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed or version-mismatched file (IDX, checkpoint, dataset container).
class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace ibpd
