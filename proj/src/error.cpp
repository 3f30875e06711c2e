// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

#include "david/error.hpp"

namespace david {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::UnknownLayerKind: return "UnknownLayerKind";
    case ErrorKind::NumericalError: return "NumericalError";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::BudgetExceeded: return "BudgetExceeded";
    case ErrorKind::DegenerateModel: return "DegenerateModel";
    case ErrorKind::UnknownOutput: return "UnknownOutput";
    case ErrorKind::InvalidCharacter: return "InvalidCharacter";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::EmptyOutput: return "EmptyOutput";
    case ErrorKind::CrcMismatch: return "CrcMismatch";
    case ErrorKind::BadSync: return "BadSync";
    case ErrorKind::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorKind::Truncated: return "Truncated";
    case ErrorKind::UnknownMessageType: return "UnknownMessageType";
    case ErrorKind::NotPaired: return "NotPaired";
    case ErrorKind::AlreadyPaired: return "AlreadyPaired";
    case ErrorKind::AuthenticationFailure: return "AuthenticationFailure";
    case ErrorKind::Busy: return "Busy";
    case ErrorKind::ScriptError: return "ScriptError";
    case ErrorKind::ZeroPower: return "ZeroPower";
    case ErrorKind::ZeroCapacity: return "ZeroCapacity";
    case ErrorKind::UnsupportedAction: return "UnsupportedAction";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::ParseError: return "ParseError";
  }
  return "Unknown";
}

Error::Error(ErrorKind kind, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

void raise(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace david
