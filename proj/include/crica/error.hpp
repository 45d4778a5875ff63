// Copyright 2026 The crica Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace crica {

enum class ErrorCode {
  ShapeMismatch,
  InvalidAxis,
  EvenKernel,
  NonPositiveBase,
  EmptyTape,
  NonScalarOutput,
  BadImageSize,
  HeadMismatch,
  GridMismatch,
  GridTooSmall,
  EmptyRegion,
  RaggedSequences,
  ZeroVector,
  NonUnitRows,
  SingletonClass,
  InsufficientPlaces,
  TooFewSamples,
  DimMismatch,
  MissingMetadata,
  DuplicateId,
  EmptyIndex,
  UnknownRule,
  MissingQuery,
  CanvasTooSmall,
  IoError,
  ConfigError,
  BadCheckpoint,
  InvalidArgument,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InvalidAxis: return "InvalidAxis";
    case ErrorCode::EvenKernel: return "EvenKernel";
    case ErrorCode::NonPositiveBase: return "NonPositiveBase";
    case ErrorCode::EmptyTape: return "EmptyTape";
    case ErrorCode::NonScalarOutput: return "NonScalarOutput";
    case ErrorCode::BadImageSize: return "BadImageSize";
    case ErrorCode::HeadMismatch: return "HeadMismatch";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::GridTooSmall: return "GridTooSmall";
    case ErrorCode::EmptyRegion: return "EmptyRegion";
    case ErrorCode::RaggedSequences: return "RaggedSequences";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::NonUnitRows: return "NonUnitRows";
    case ErrorCode::SingletonClass: return "SingletonClass";
    case ErrorCode::InsufficientPlaces: return "InsufficientPlaces";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::MissingMetadata: return "MissingMetadata";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::EmptyIndex: return "EmptyIndex";
    case ErrorCode::UnknownRule: return "UnknownRule";
    case ErrorCode::MissingQuery: return "MissingQuery";
    case ErrorCode::CanvasTooSmall: return "CanvasTooSmall";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::BadCheckpoint: return "BadCheckpoint";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI exit-code mapping) can branch on the kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

namespace detail {

template <typename... Args>
[[noreturn]] void fail(ErrorCode code, Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  throw Error(code, oss.str());
}

}  // namespace detail

#define CRICA_CHECK(cond, code, ...)                         \
  do {                                                       \
    if (!(cond)) ::crica::detail::fail((code), __VA_ARGS__); \
  } while (0)

}  // namespace crica
