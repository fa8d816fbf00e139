#pragma once

#include <stdexcept>
#include <string>

namespace idc {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Layer shapes do not compose, or an input does not match the model.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed or inconsistent on-disk data (manifest, weights, dataset, report).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid user configuration, detected before any heavy computation.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A computation produced a non-finite value.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Input data cannot support the requested clustering.
class DegenerateDataError : public Error {
 public:
  using Error::Error;
};

/// A stage exceeded its time budget.
class TimeoutError : public Error {
 public:
  using Error::Error;
};

}  // namespace idc
