// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace atom {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument or configuration value.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Input data is malformed (non-finite values, degenerate statistics).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A file could not be read or is not a valid container.
class LoadError : public Error {
 public:
  using Error::Error;
};

/// Two inputs that must agree structurally do not.
class ContractError : public Error {
 public:
  using Error::Error;
};

class UnsupportedDatasetError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

/// A checkpoint was produced under a different configuration.
class ConfigMismatchError : public Error {
 public:
  using Error::Error;
};

/// The optimization produced a non-finite or exploding loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long iteration)
      : Error(what), iteration_(iteration) {}
  long iteration() const noexcept { return iteration_; }

 private:
  long iteration_;
};

}  // namespace atom
