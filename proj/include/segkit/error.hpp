#pragma once

#include <stdexcept>
#include <string>

namespace segkit {

// Base of every error thrown by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid user configuration: missing directories, bad hyperparameters,
// class-count mismatches.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Invalid ModelSpec or an unsupported encoder/decoder pairing.
class SpecError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Bad sample data, e.g. a label value outside [0, n_classes).
class DataError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Tensor dimension mismatch.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

// Malformed, corrupted, or incompatible checkpoint.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

class ChecksumError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

// Non-finite loss or similar numerical failure during training.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace segkit
