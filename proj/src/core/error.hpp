#pragma once

#include <stdexcept>
#include <string>

namespace fanhmm {

enum class ErrorCode {
  InvalidDimension,
  Shape,
  Numeric,
  InvalidGamma,
  DegenerateProbability,
  Validation,
  Unsupported,
  Io,
  Compute,
};

/// Every failure raised by the core carries one of the codes above; the C API
/// maps them onto status values.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const char* message) {
  if (!condition) fail(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

inline const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidDimension: return "invalid-dimension";
    case ErrorCode::Shape: return "shape";
    case ErrorCode::Numeric: return "numeric";
    case ErrorCode::InvalidGamma: return "invalid-gamma";
    case ErrorCode::DegenerateProbability: return "degenerate-probability";
    case ErrorCode::Validation: return "validation";
    case ErrorCode::Unsupported: return "unsupported";
    case ErrorCode::Io: return "io";
    case ErrorCode::Compute: return "compute";
  }
  return "unknown";
}

}  // namespace fanhmm
