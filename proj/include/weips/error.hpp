#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace weips {

enum class ErrorCode : std::uint16_t {
  kOk = 0,
  kInvalidArgument = 1,
  kInvalidSlot = 2,
  kNumericOverflow = 3,
  kRouting = 4,
  kOutOfRange = 5,
  kAppendFailed = 6,
  kCheckpointFailed = 7,
  kCorruptCheckpoint = 8,
  kIncompleteCheckpointSet = 9,
  kUnavailable = 10,
  kShardDown = 11,
  kConflict = 12,
  kNotFound = 13,
  kIo = 14,
  kTimeout = 15,
  kRejected = 16,
  kInternal = 17,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kOk: return "ok";
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kInvalidSlot: return "invalid-slot";
    case ErrorCode::kNumericOverflow: return "numeric-overflow";
    case ErrorCode::kRouting: return "routing-error";
    case ErrorCode::kOutOfRange: return "out-of-range";
    case ErrorCode::kAppendFailed: return "append-failed";
    case ErrorCode::kCheckpointFailed: return "checkpoint-failed";
    case ErrorCode::kCorruptCheckpoint: return "corrupt-checkpoint";
    case ErrorCode::kIncompleteCheckpointSet: return "incomplete-checkpoint-set";
    case ErrorCode::kUnavailable: return "unavailable";
    case ErrorCode::kShardDown: return "shard-down";
    case ErrorCode::kConflict: return "conflict";
    case ErrorCode::kNotFound: return "not-found";
    case ErrorCode::kIo: return "io-error";
    case ErrorCode::kTimeout: return "timeout";
    case ErrorCode::kRejected: return "rejected";
    case ErrorCode::kInternal: return "internal";
  }
  return "unknown";
}

}  // namespace weips
