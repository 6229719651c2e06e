#pragma once

#include <stdexcept>
#include <string>

namespace ergl {

// Shape or extent mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid hyper-parameter or model configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Bad user-supplied data: wrong sample rate, unknown clip id, label out of range.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API misuse, e.g. stepping an optimizer before gradients exist.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Non-finite values reached a loss.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// File could not be opened, read or parsed.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ChecksumError : public IoError {
 public:
  using IoError::IoError;
};

class VersionError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace ergl
