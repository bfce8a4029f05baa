#pragma once

#include <stdexcept>
#include <string>

namespace cedl {

/// Raised when a caller violates an operation's preconditions.
class InvalidInput : public std::invalid_argument {
 public:
  explicit InvalidInput(const std::string& what) : std::invalid_argument(what) {}
};

/// Raised when a model is in a state an operation cannot handle
/// (e.g. a classifier row with zero norm).
class DegenerateModel : public std::runtime_error {
 public:
  explicit DegenerateModel(const std::string& what) : std::runtime_error(what) {}
};

/// Configuration files that fail validation. Carries the offending field.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::runtime_error(field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidInput(message);
}

}  // namespace cedl
