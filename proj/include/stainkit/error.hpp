#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace stainkit {

enum class ErrorCode {
  InvalidArgument,
  ShapeMismatch,
  InsufficientTissue,
  DegenerateStains,
  SingularMatrix,
  EmptyMask,
  EmptyDataset,
  DegenerateSample,
  ConventionMismatch,
  DimensionMismatch,
  Io,
  Decode,
  UnsupportedBitDepth,
  Schema,
  Validation,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InsufficientTissue: return "InsufficientTissue";
    case ErrorCode::DegenerateStains: return "DegenerateStains";
    case ErrorCode::SingularMatrix: return "SingularMatrix";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::DegenerateSample: return "DegenerateSample";
    case ErrorCode::ConventionMismatch: return "ConventionMismatch";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Decode: return "Decode";
    case ErrorCode::UnsupportedBitDepth: return "UnsupportedBitDepth";
    case ErrorCode::Schema: return "Schema";
    case ErrorCode::Validation: return "Validation";
  }
  return "Unknown";
}

/// Single exception type for the library; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  /// True for failures caused by the file system or file contents rather than the data itself.
  bool is_io() const noexcept {
    return code_ == ErrorCode::Io || code_ == ErrorCode::Decode ||
           code_ == ErrorCode::UnsupportedBitDepth;
  }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace stainkit
