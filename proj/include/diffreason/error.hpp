#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace diffreason {

enum class Errc {
  UnknownExtractor,
  DuplicateExtractor,
  UnparseablePayload,
  NonFiniteFeature,
  DuplicateDimension,
  IncompatibleVectors,
  MixedLocation,
  InvalidState,
  NotOrdered,
  InsufficientHistory,
  NegativeWeight,
  TooFewSubObjects,
  StorageFailure,
  DuplicateStateId,
  EmptyHistory,
  UnknownState,
  NegativeThreshold,
  InsufficientNormalHistory,
  TimestampMismatch,
  NameCollision,
  UnknownTemplate,
  InvalidTemplate,
  MissingContext,
  BackendUnreachable,
  ScriptMiss,
  AuthMissing,
  UnparseableSummary,
  EmbeddingMiss,
  DimensionMismatch,
  ZeroVector,
  SampleTooSmall,
  DegenerateVariance,
  MissingMethod,
  ConfigError,
  InvalidArgument,
};

constexpr std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::UnknownExtractor: return "UnknownExtractor";
    case Errc::DuplicateExtractor: return "DuplicateExtractor";
    case Errc::UnparseablePayload: return "UnparseablePayload";
    case Errc::NonFiniteFeature: return "NonFiniteFeature";
    case Errc::DuplicateDimension: return "DuplicateDimension";
    case Errc::IncompatibleVectors: return "IncompatibleVectors";
    case Errc::MixedLocation: return "MixedLocation";
    case Errc::InvalidState: return "InvalidState";
    case Errc::NotOrdered: return "NotOrdered";
    case Errc::InsufficientHistory: return "InsufficientHistory";
    case Errc::NegativeWeight: return "NegativeWeight";
    case Errc::TooFewSubObjects: return "TooFewSubObjects";
    case Errc::StorageFailure: return "StorageFailure";
    case Errc::DuplicateStateId: return "DuplicateStateId";
    case Errc::EmptyHistory: return "EmptyHistory";
    case Errc::UnknownState: return "UnknownState";
    case Errc::NegativeThreshold: return "NegativeThreshold";
    case Errc::InsufficientNormalHistory: return "InsufficientNormalHistory";
    case Errc::TimestampMismatch: return "TimestampMismatch";
    case Errc::NameCollision: return "NameCollision";
    case Errc::UnknownTemplate: return "UnknownTemplate";
    case Errc::InvalidTemplate: return "InvalidTemplate";
    case Errc::MissingContext: return "MissingContext";
    case Errc::BackendUnreachable: return "BackendUnreachable";
    case Errc::ScriptMiss: return "ScriptMiss";
    case Errc::AuthMissing: return "AuthMissing";
    case Errc::UnparseableSummary: return "UnparseableSummary";
    case Errc::EmbeddingMiss: return "EmbeddingMiss";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::ZeroVector: return "ZeroVector";
    case Errc::SampleTooSmall: return "SampleTooSmall";
    case Errc::DegenerateVariance: return "DegenerateVariance";
    case Errc::MissingMethod: return "MissingMethod";
    case Errc::ConfigError: return "ConfigError";
    case Errc::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the Errc codes above.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(std::string(errc_name(code)) + ": " + message),
        code_(code),
        detail_(message) {}

  Errc code() const noexcept { return code_; }
  std::string_view name() const noexcept { return errc_name(code_); }
  const std::string& detail() const noexcept { return detail_; }

 private:
  Errc code_;
  std::string detail_;
};

}  // namespace diffreason
