#pragma once

#include <stdexcept>
#include <string>

namespace flint {

// Base of every error thrown by the library. The CLI maps the concrete
// subclasses onto its exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke a documented precondition (shape, range, channel count).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration: bad hyperparameters, incompatible mode and data.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Field content is unusable (non-finite values, invalid ranges).
class DataError : public Error {
 public:
  using Error::Error;
};

// Filesystem failures.
class IoError : public Error {
 public:
  using Error::Error;
};

// Archive / checkpoint loading failures. `kind` distinguishes the cause.
class LoadError : public Error {
 public:
  enum class Kind { kMissingFile, kShapeMismatch, kVersionMismatch, kInvalidManifest };

  LoadError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

// A second writer, or a second write of an existing key.
class ConflictError : public Error {
 public:
  using Error::Error;
};

// Prediction and ground-truth archives do not line up.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

// LBM populations became non-finite.
class DivergedError : public Error {
 public:
  DivergedError(long step, const std::string& what) : Error(what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

}  // namespace flint
