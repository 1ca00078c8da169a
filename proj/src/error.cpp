// Copyright 2026 The OFA3D Authors
// SPDX-License-Identifier: Apache-2.0

#include "ofa/error.hpp"

namespace ofa {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ZeroDim: return "ZeroDim";
    case ErrorKind::NonDivisible: return "NonDivisible";
    case ErrorKind::DimMismatch: return "DimMismatch";
    case ErrorKind::EmptyMask: return "EmptyMask";
    case ErrorKind::BadHeader: return "BadHeader";
    case ErrorKind::PayloadMismatch: return "PayloadMismatch";
    case ErrorKind::Io: return "Io";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::NonDeterministic: return "NonDeterministic";
    case ErrorKind::BadConfig: return "BadConfig";
    case ErrorKind::BadLayer: return "BadLayer";
    case ErrorKind::SizeMismatch: return "SizeMismatch";
    case ErrorKind::EmptySelection: return "EmptySelection";
    case ErrorKind::NonFiniteGrad: return "NonFiniteGrad";
    case ErrorKind::ClassTooSmall: return "ClassTooSmall";
    case ErrorKind::MissingMask: return "MissingMask";
    case ErrorKind::ManifestError: return "ManifestError";
    case ErrorKind::OneClassOnly: return "OneClassOnly";
    case ErrorKind::EmptyStack: return "EmptyStack";
    case ErrorKind::GridMismatch: return "GridMismatch";
    case ErrorKind::ConfigInfeasible: return "ConfigInfeasible";
  }
  return "Unknown";
}

}  // namespace ofa
