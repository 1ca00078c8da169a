// Copyright 2026 The OFA3D Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace ofa {

enum class ErrorKind {
  // volgrid
  ZeroDim,
  NonDivisible,
  DimMismatch,
  EmptyMask,
  BadHeader,
  PayloadMismatch,
  Io,
  // diffcore
  ShapeMismatch,
  NonFinite,
  NonDeterministic,
  // vit3d / losses
  BadConfig,
  BadLayer,
  SizeMismatch,
  EmptySelection,
  // training
  NonFiniteGrad,
  ClassTooSmall,
  MissingMask,
  ManifestError,
  // metrics / rollout / synth
  OneClassOnly,
  EmptyStack,
  GridMismatch,
  ConfigInfeasible,
};

const char* to_string(ErrorKind kind);

/// Every failure raised by the library carries one of the kinds above so
/// callers (and tests) can branch on the category rather than the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace ofa
