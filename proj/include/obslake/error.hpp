#pragma once

#include <stdexcept>
#include <string>

namespace obslake {

enum class ErrorCode {
  ParseError,
  EmptyPayload,
  SchemaMismatch,
  IoFailure,
  SegmentExists,
  ChecksumMismatch,
  CorruptEncoding,
  NotALakehouse,
  VersionTooNew,
  CommitContention,
  EmptyTransaction,
  UnknownSnapshot,
  DuplicateColumn,
  InvalidPartitionKey,
  MalformedStream,
  ReferentialGap,
  UnknownImplementation,
  UnknownCommit,
  EmptyCommonTestSet,
  InvalidDensity,
  InvalidArgument,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace obslake
