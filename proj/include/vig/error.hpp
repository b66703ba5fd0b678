#pragma once

#include <stdexcept>
#include <string>

namespace vig {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor dimension / shape contract violations.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Bad or inconsistent run/model configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Dataset files missing, malformed, or inconsistent.
class DataError : public Error {
 public:
  using Error::Error;
};

// Raised in checked mode on the first non-finite value.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

// Misuse of the computation tape (backward on non-scalar, double backward).
class TapeError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class CheckpointCorruptError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class CheckpointShapeError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

// Training aborted on a non-finite loss; carries the diagnostic context.
class TrainAbortError : public Error {
 public:
  TrainAbortError(const std::string& msg, int epoch, int step, double lr, int layer)
      : Error(msg), epoch(epoch), step(step), lr(lr), layer(layer) {}
  int epoch;
  int step;
  double lr;
  int layer;  // first layer with a non-finite activation, -1 if not located
};

}  // namespace vig
