#pragma once

#include <stdexcept>
#include <string>

namespace fanet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered, or a non-finite loss during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Misuse of the autodiff tape (non-scalar loss, detached tensor).
class AutodiffError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

/// Bad magic, version, CRC, or truncation in a FANT container.
class CorruptContainerError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint is well formed but does not match the model.
class IncompatibleCheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace fanet
