#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pag {

enum class ErrorCode {
  ParameterOutOfRange,
  NonConvergence,
  NoValidIndex,
  ShiftTooLarge,
  DimensionMismatch,
  DimensionTooLarge,
  MalformedFile,
  ZeroWeightVector,
  DatasetIo,
  OracleFailure,
  ProtocolViolation,
  ToolCrash,
  Timeout,
  EmptyTestSet,
  InconsistentParams,
  HashMismatch,
};

std::string_view to_string(ErrorCode code);

/// Base of every error raised by the toolkit. The code identifies the failure
/// class so callers (the CLI in particular) can map it to an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// An error attributed to one item of a batch (a sample draw, a test row).
class IndexedError : public Error {
 public:
  IndexedError(ErrorCode code, std::size_t index, const std::string& message)
      : Error(code, "item " + std::to_string(index) + ": " + message), index_(index) {}

  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

/// Failure talking to an out-of-process quality provider.
///
/// `request_id` names the offending request (or -1 when the failure is not tied
/// to one); `completed` counts the responses matched before the failure.
class ExternalOracleError : public Error {
 public:
  ExternalOracleError(ErrorCode code, std::int64_t request_id, std::size_t completed,
                      const std::string& message)
      : Error(code, message + " (request id " + std::to_string(request_id) + ", " +
                        std::to_string(completed) + " completed)"),
        request_id_(request_id),
        completed_(completed) {}

  std::int64_t request_id() const noexcept { return request_id_; }
  std::size_t completed() const noexcept { return completed_; }

 private:
  std::int64_t request_id_;
  std::size_t completed_;
};

}  // namespace pag
