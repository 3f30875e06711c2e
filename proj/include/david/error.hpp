// Copyright The david-edge Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace david {

enum class ErrorKind {
  ShapeMismatch,
  UnknownLayerKind,
  NumericalError,
  ConfigError,
  BudgetExceeded,
  DegenerateModel,
  UnknownOutput,
  InvalidCharacter,
  EmptyInput,
  EmptyOutput,
  CrcMismatch,
  BadSync,
  UnsupportedVersion,
  Truncated,
  UnknownMessageType,
  NotPaired,
  AlreadyPaired,
  AuthenticationFailure,
  Busy,
  ScriptError,
  ZeroPower,
  ZeroCapacity,
  UnsupportedAction,
  IoError,
  ParseError,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Every failure raised by the library carries one of the kinds above so
/// callers (and the CLI exit-code mapping) can branch without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void raise(ErrorKind kind, const std::string& message);

}  // namespace david
