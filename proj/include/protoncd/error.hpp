// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The protoncd Authors

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace protoncd {

enum class ErrorKind {
  InvalidArgument,
  DegenerateInput,
  NumericalFailure,
  FormatError,
  ValidationError,
  InvalidState,
  InitFailure,
  ConfigError,
};

std::string_view to_string(ErrorKind kind);

/// Single exception type for the library; `kind()` carries the category.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace protoncd
