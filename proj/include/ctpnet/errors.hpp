#pragma once

#include <stdexcept>
#include <string>

namespace ctp {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed input text (bad line, wrong field count, non-numeric field).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// Structurally valid input that violates a data invariant (duplicate keys,
/// non-monotone frames).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid run or network configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Tensor dimension mismatch.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value where a finite one is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Too few windows to form the requested partition.
class SplitError : public Error {
 public:
  using Error::Error;
};

/// Optimization diverged or was handed an unusable dataset.
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// A pipeline stage was invoked before the stage it depends on.
class PrereqError : public Error {
 public:
  PrereqError(const std::string& missing_stage, const std::string& what)
      : Error(what), missing_stage_(missing_stage) {}

  const std::string& missing_stage() const { return missing_stage_; }

 private:
  std::string missing_stage_;
};

/// Filesystem failure (unreadable file, unwritable directory, held lock).
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace ctp
