#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pplad {

// Every failure raised by the library maps to one of these codes. The CLI
// turns them into exit code 1 (data errors) or 2 (usage/config errors).
enum class ErrorCode {
  Io,
  Usage,
  Config,
  // transcript
  EmptyAfterNormalization,
  UnknownIpaSymbol,
  MalformedManifest,
  DuplicateSession,
  MetadataMissing,
  // corpus
  Infeasible,
  // lm
  EmptyTrainingSet,
  SchemaViolation,
  PositiveLogProb,
  MalformedModel,
  // ppl
  InvalidScores,
  InsufficientGroup,
  // eval
  SingleClass,
  ZeroVariance,
  TooFew,
  SeedCoverageMismatch,
  // features
  EmptySample,
  FeatureSetMismatch,
  // instruct
  EmptyLabelSubset,
  // pipeline
  SeedFailure,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::Io: return "Io";
    case ErrorCode::Usage: return "Usage";
    case ErrorCode::Config: return "Config";
    case ErrorCode::EmptyAfterNormalization: return "EmptyAfterNormalization";
    case ErrorCode::UnknownIpaSymbol: return "UnknownIpaSymbol";
    case ErrorCode::MalformedManifest: return "MalformedManifest";
    case ErrorCode::DuplicateSession: return "DuplicateSession";
    case ErrorCode::MetadataMissing: return "MetadataMissing";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::EmptyTrainingSet: return "EmptyTrainingSet";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::PositiveLogProb: return "PositiveLogProb";
    case ErrorCode::MalformedModel: return "MalformedModel";
    case ErrorCode::InvalidScores: return "InvalidScores";
    case ErrorCode::InsufficientGroup: return "InsufficientGroup";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::TooFew: return "TooFew";
    case ErrorCode::SeedCoverageMismatch: return "SeedCoverageMismatch";
    case ErrorCode::EmptySample: return "EmptySample";
    case ErrorCode::FeatureSetMismatch: return "FeatureSetMismatch";
    case ErrorCode::EmptyLabelSubset: return "EmptyLabelSubset";
    case ErrorCode::SeedFailure: return "SeedFailure";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  bool is_usage() const noexcept {
    return code_ == ErrorCode::Usage || code_ == ErrorCode::Config;
  }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace pplad
