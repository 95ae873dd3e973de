#pragma once

#include <stdexcept>
#include <string>

namespace forec {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor/label dimensions do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value violates an operation's contract (bad label id, non-binary mask,
/// non-normalized probabilities, invalid hyperparameter).
class ValueError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// File IO or file-format problem (malformed PPM/PGM, bad checkpoint).
class IoError : public Error {
 public:
  using Error::Error;
};

/// Bad training configuration (unknown key, missing field, invalid value).
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace forec
