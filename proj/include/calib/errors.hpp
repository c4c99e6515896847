#pragma once

#include <stdexcept>
#include <string>

namespace calib {

/// Precondition violated by the caller: wrong dimensionality, bad bounds, etc.
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A run definition (config file, model settings, strategy) is invalid.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Not enough evaluated points to perform the requested fit or selection.
class InsufficientDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Persisted file is malformed. The message carries the line and byte offset.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t line, std::size_t offset)
      : std::runtime_error(what + " (line " + std::to_string(line) + ", byte offset " +
                           std::to_string(offset) + ")"),
        line_(line),
        offset_(offset) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t line_;
  std::size_t offset_;
};

class VersionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A single simulation failed. The calibrator records the point with a penalty loss.
class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A simulation diverged (|x| above the guard) at a known step.
class ExplosionError : public ModelError {
 public:
  ExplosionError(const std::string& what, long step) : ModelError(what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

class SingularKernelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace calib
