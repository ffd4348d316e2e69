#pragma once

#include <stdexcept>
#include <string>

namespace binaural {

/// Base of every error the library throws. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Malformed or out-of-contract input data (short signals, bad files, mono where stereo is needed).
class InputError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Physically impossible scene geometry.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced by a tensor op or a loss.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class LoadError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace binaural
