// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The protoncd Authors

#include "protoncd/error.hpp"

namespace protoncd {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::DegenerateInput: return "DegenerateInput";
    case ErrorKind::NumericalFailure: return "NumericalFailure";
    case ErrorKind::FormatError: return "FormatError";
    case ErrorKind::ValidationError: return "ValidationError";
    case ErrorKind::InvalidState: return "InvalidState";
    case ErrorKind::InitFailure: return "InitFailure";
    case ErrorKind::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

}  // namespace protoncd
