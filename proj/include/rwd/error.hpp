#pragma once

#include <stdexcept>
#include <string>

namespace rwd {

/// Base class for all toolkit errors. The exit code is what the CLI returns
/// when the error escapes a command.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, int exit_code = 1)
      : std::runtime_error(what), exit_code_(exit_code) {}
  int exit_code() const noexcept { return exit_code_; }

 private:
  int exit_code_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(what, 2) {}
};

/// Shape or width mismatch between operands.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(what, 3) {}
};

class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(what, 3) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(what, 3) {}
};

/// Data is well-formed but cannot drive the requested operation
/// (degenerate task, no qualifying pairs, empty evaluation set).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what, 3) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(what, 4) {}
};

/// A caller broke an API precondition (mismatched caches, unfitted map).
class ContractViolation : public Error {
 public:
  explicit ContractViolation(const std::string& what) : Error(what, 1) {}
};

}  // namespace rwd
