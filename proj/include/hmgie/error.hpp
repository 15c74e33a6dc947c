#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hmgie {

enum class ErrorCode {
  MalformedOutput,
  SchemaViolation,
  DuplicateNodeId,
  DanglingEdge,
  UnknownElement,
  LevelGap,
  UnknownParent,
  DuplicateQuestion,
  EmptyHieg,
  PendingNode,
  Exhausted,
  Unsupported,
  AuthError,
  MissingPlaceholder,
  UnknownPlaceholder,
  EmptyBatch,
  NoLevels,
  EmptyInput,
  LengthMismatch,
  DegenerateInput,
  GraphGenFailed,
  BackendExhausted,
  AllCaptionersFailed,
  InvalidConfig,
  InvalidArgument,
  InvalidImage,
  IoError,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MalformedOutput: return "MalformedOutput";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::DuplicateNodeId: return "DuplicateNodeId";
    case ErrorCode::DanglingEdge: return "DanglingEdge";
    case ErrorCode::UnknownElement: return "UnknownElement";
    case ErrorCode::LevelGap: return "LevelGap";
    case ErrorCode::UnknownParent: return "UnknownParent";
    case ErrorCode::DuplicateQuestion: return "DuplicateQuestion";
    case ErrorCode::EmptyHieg: return "EmptyHieg";
    case ErrorCode::PendingNode: return "PendingNode";
    case ErrorCode::Exhausted: return "Exhausted";
    case ErrorCode::Unsupported: return "Unsupported";
    case ErrorCode::AuthError: return "AuthError";
    case ErrorCode::MissingPlaceholder: return "MissingPlaceholder";
    case ErrorCode::UnknownPlaceholder: return "UnknownPlaceholder";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::NoLevels: return "NoLevels";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::GraphGenFailed: return "GraphGenFailed";
    case ErrorCode::BackendExhausted: return "BackendExhausted";
    case ErrorCode::AllCaptionersFailed: return "AllCaptionersFailed";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidImage: return "InvalidImage";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers can branch on the kind without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Non-fatal notes collected while parsing or running the pipeline.
using Warnings = std::vector<std::string>;

inline void warn(Warnings* sink, std::string message) {
  if (sink != nullptr) sink->push_back(std::move(message));
}

}  // namespace hmgie
