#pragma once

#include <stdexcept>
#include <string>

namespace mg {

/// Error categories. The CLI maps each one to its own exit code.
enum class ErrorKind {
  shape,         ///< operand shapes do not conform
  domain,        ///< value outside an operation's domain
  precondition,  ///< a documented precondition does not hold
  config,        ///< invalid or unknown configuration
  io,            ///< missing file, malformed file
  divergence,    ///< non-finite loss during optimization
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorKind::shape, what) {}
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error(ErrorKind::domain, what) {}
};

class PreconditionError : public Error {
 public:
  explicit PreconditionError(const std::string& what) : Error(ErrorKind::precondition, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, long iteration)
      : Error(ErrorKind::divergence, what), iteration_(iteration) {}
  long iteration() const noexcept { return iteration_; }

 private:
  long iteration_;
};

}  // namespace mg
