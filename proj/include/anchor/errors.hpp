#pragma once

#include <stdexcept>
#include <string>

namespace anchor {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or dimension mismatch between tensors.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid argument values (out-of-range sizes, malformed distributions, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// API contract violations (double masking, missing gradients, non-scalar loss).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Malformed or incompatible serialized data.
class FormatError : public Error {
 public:
  using Error::Error;
};

// Inconsistent or incomplete configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite values produced by a numeric operation.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace anchor
