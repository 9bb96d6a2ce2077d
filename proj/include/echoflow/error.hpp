#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace echoflow {

enum class ErrorCode {
  invalid_argument,
  shape_mismatch,
  bad_magic,
  unsupported_dtype,
  dim_overflow,
  truncated,
  io,
  degenerate_input,
  insufficient_frames,
  singular_matrix,
  non_finite,
  architecture_mismatch,
  skip_connection,
  config,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::bad_magic: return "bad_magic";
    case ErrorCode::unsupported_dtype: return "unsupported_dtype";
    case ErrorCode::dim_overflow: return "dim_overflow";
    case ErrorCode::truncated: return "truncated";
    case ErrorCode::io: return "io";
    case ErrorCode::degenerate_input: return "degenerate_input";
    case ErrorCode::insufficient_frames: return "insufficient_frames";
    case ErrorCode::singular_matrix: return "singular_matrix";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::architecture_mismatch: return "architecture_mismatch";
    case ErrorCode::skip_connection: return "skip_connection";
    case ErrorCode::config: return "config";
  }
  return "unknown";
}

// All library failures are reported through this type; `code()` is stable and
// machine-readable, `what()` is for humans.
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

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace echoflow
