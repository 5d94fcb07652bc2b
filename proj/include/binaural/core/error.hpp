#pragma once

#include <stdexcept>
#include <string>

namespace binaural {

/// Base of every error raised by the library. The CLI maps the subclasses
/// onto exit codes (validation-type errors -> 1, everything else -> 2).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class LengthError : public Error {
 public:
  using Error::Error;
};

/// Non-finite samples, mismatched rates, missing dataset files.
class DataError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Malformed WAV/PNG/checkpoint content.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Raised by the trainer when the loss becomes non-finite.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace binaural
