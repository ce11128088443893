#include "pag/errors.hpp"

namespace pag {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ParameterOutOfRange: return "parameter-out-of-range";
    case ErrorCode::NonConvergence: return "non-convergence";
    case ErrorCode::NoValidIndex: return "no-valid-index";
    case ErrorCode::ShiftTooLarge: return "shift-too-large";
    case ErrorCode::DimensionMismatch: return "dimension-mismatch";
    case ErrorCode::DimensionTooLarge: return "dimension-too-large";
    case ErrorCode::MalformedFile: return "malformed-file";
    case ErrorCode::ZeroWeightVector: return "zero-weight-vector";
    case ErrorCode::DatasetIo: return "dataset-io";
    case ErrorCode::OracleFailure: return "oracle-failure";
    case ErrorCode::ProtocolViolation: return "protocol-violation";
    case ErrorCode::ToolCrash: return "tool-crash";
    case ErrorCode::Timeout: return "timeout";
    case ErrorCode::EmptyTestSet: return "empty-test-set";
    case ErrorCode::InconsistentParams: return "inconsistent-params";
    case ErrorCode::HashMismatch: return "hash-mismatch";
  }
  return "unknown";
}

}  // namespace pag
