// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace fedconv {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inconsistent shapes, plans, or configuration values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// API misuse: wrong call order, missing gradients, empty datasets.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Bad caller-supplied data (labels out of range, batch shape mismatch).
class InputError : public Error {
 public:
  using Error::Error;
};

/// Malformed files (IDX, parameter containers).
class FormatError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace fedconv
