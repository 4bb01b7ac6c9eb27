#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pmuse {

enum class ErrorCode {
  MalformedMarkers,
  MissingLogprobs,
  InvalidArgument,
  InsufficientSteps,
  EmptyTrajectory,
  EmptyPlan,
  InvalidBranchIndex,
  ZeroSuffix,
  BackendError,
  ScriptMiss,
  ContextOverflow,
  EmptyGraph,
  LengthMismatch,
  NoAnswers,
  IdMismatch,
  IncompleteRun,
  ConfigError,
  StorageError,
  SchemaError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedMarkers: return "MalformedMarkers";
    case ErrorCode::MissingLogprobs: return "MissingLogprobs";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InsufficientSteps: return "InsufficientSteps";
    case ErrorCode::EmptyTrajectory: return "EmptyTrajectory";
    case ErrorCode::EmptyPlan: return "EmptyPlan";
    case ErrorCode::InvalidBranchIndex: return "InvalidBranchIndex";
    case ErrorCode::ZeroSuffix: return "ZeroSuffix";
    case ErrorCode::BackendError: return "BackendError";
    case ErrorCode::ScriptMiss: return "ScriptMiss";
    case ErrorCode::ContextOverflow: return "ContextOverflow";
    case ErrorCode::EmptyGraph: return "EmptyGraph";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::NoAnswers: return "NoAnswers";
    case ErrorCode::IdMismatch: return "IdMismatch";
    case ErrorCode::IncompleteRun: return "IncompleteRun";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::StorageError: return "StorageError";
    case ErrorCode::SchemaError: return "SchemaError";
  }
  return "Unknown";
}

/// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace pmuse
