#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace msmap {

enum class ErrorCode {
  AngleNearPi,
  TooFewPoints,
  EmptyCloud,
  NoCorrespondences,
  TrackingLost,
  NotConnected,
  SingularSystem,
  NoInterEdges,
  EmptyScan,
  EmptyDatabase,
  MissingOrigins,
  CorruptManifest,
  ChecksumMismatch,
  MissingSession,
  ParseError,
  InvalidConfig,
  IoError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::AngleNearPi: return "AngleNearPi";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::EmptyCloud: return "EmptyCloud";
    case ErrorCode::NoCorrespondences: return "NoCorrespondences";
    case ErrorCode::TrackingLost: return "TrackingLost";
    case ErrorCode::NotConnected: return "NotConnected";
    case ErrorCode::SingularSystem: return "SingularSystem";
    case ErrorCode::NoInterEdges: return "NoInterEdges";
    case ErrorCode::EmptyScan: return "EmptyScan";
    case ErrorCode::EmptyDatabase: return "EmptyDatabase";
    case ErrorCode::MissingOrigins: return "MissingOrigins";
    case ErrorCode::CorruptManifest: return "CorruptManifest";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::MissingSession: return "MissingSession";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Domain error raised by every module; `code()` identifies the failure kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace msmap
