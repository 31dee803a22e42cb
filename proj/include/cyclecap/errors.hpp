#pragma once

#include <stdexcept>
#include <string>

namespace cyclecap {

// Coarse error categories surfaced by the CLI as exit codes.
enum class ErrorCategory { config, data, numeric, io, state };

inline const char* category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::config: return "config";
    case ErrorCategory::data: return "data";
    case ErrorCategory::numeric: return "numeric";
    case ErrorCategory::io: return "io";
    case ErrorCategory::state: return "state";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

// Operand shapes do not conform.
struct DimensionError : Error {
  explicit DimensionError(const std::string& w) : Error(ErrorCategory::data, "dimension error: " + w) {}
};

// NaN/Inf where finite values are required.
struct NumericError : Error {
  explicit NumericError(const std::string& w) : Error(ErrorCategory::numeric, "numeric error: " + w) {}
};

// Semantically invalid input (empty corpus, K = 0, bad geometry, ...).
struct InputError : Error {
  explicit InputError(const std::string& w) : Error(ErrorCategory::data, "input error: " + w) {}
};

// Malformed file contents.
struct FormatError : Error {
  explicit FormatError(const std::string& w) : Error(ErrorCategory::data, "format error: " + w) {}
};

struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorCategory::io, "io error: " + w) {}
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorCategory::config, "config error: " + w) {}
};

// API misuse such as running backward twice on one tape.
struct StateError : Error {
  explicit StateError(const std::string& w) : Error(ErrorCategory::state, "state error: " + w) {}
};

}  // namespace cyclecap
