// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace manager {

/// Base of every error raised by the library. The C API maps each subclass
/// onto a distinct status code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible or malformed tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation (e.g. tau <= 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Class index, token id or position out of range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Violated precondition of an API contract.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid experiment/model configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Corrupt, truncated or mismatching serialized data.
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required (e.g. NaN loss).
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace manager
