#pragma once

#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>

namespace augsal {

enum class ErrorCode {
  kMalformedHeader,
  kDtypeMismatch,
  kShapeMismatch,
  kTruncatedPayload,
  kIo,
  kNonFinite,
  kRange,
  kDimsMismatch,
  kLengthMismatch,
  kInvalidArgument,
  kEmptyRegion,
  kRankDeficient,
  kConfig,
  kData,
  kNumerical,
  kUnavailable,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMalformedHeader: return "malformed-header";
    case ErrorCode::kDtypeMismatch: return "dtype-mismatch";
    case ErrorCode::kShapeMismatch: return "shape-mismatch";
    case ErrorCode::kTruncatedPayload: return "truncated-payload";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kNonFinite: return "non-finite";
    case ErrorCode::kRange: return "range-violation";
    case ErrorCode::kDimsMismatch: return "dims-mismatch";
    case ErrorCode::kLengthMismatch: return "length-mismatch";
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kEmptyRegion: return "empty-region";
    case ErrorCode::kRankDeficient: return "rank-deficient";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kData: return "data";
    case ErrorCode::kNumerical: return "numerical";
    case ErrorCode::kUnavailable: return "unavailable";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) fail(code, what);
}

/// Destination for non-fatal diagnostics; stderr unless replaced.
inline std::function<void(const std::string&)>& warning_sink() {
  static std::function<void(const std::string&)> sink = [](const std::string& m) {
    std::cerr << "warning: " << m << '\n';
  };
  return sink;
}

inline void warn(const std::string& message) {
  if (warning_sink()) warning_sink()(message);
}

}  // namespace augsal
