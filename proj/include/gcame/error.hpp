#pragma once

#include <stdexcept>
#include <string>

namespace gcame {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class LookupError : public Error {
 public:
  using Error::Error;
};

class UnsupportedArchitectureError : public Error {
 public:
  using Error::Error;
};

// Raised when a gradient map carries no signal; the caller should skip the layer.
class NoSignalError : public Error {
 public:
  using Error::Error;
};

class EmptyExplanationError : public Error {
 public:
  using Error::Error;
};

class NotDifferentiableError : public Error {
 public:
  using Error::Error;
};

// Wraps a lower-level failure with the pipeline stage it happened in.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what)
      : Error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace gcame
