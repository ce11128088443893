#pragma once

// Client for out-of-process quality providers speaking line-delimited JSON
// over the child's standard streams:
//
//   request   {"id": <int>, "x": [<f64>...]}
//   response  {"id": <int>, "rho": <f64>, "kappa": <f64>,
//              "kind": "exact" | "certified_lower" | "adversarial_upper"}
//
// Responses may arrive in any order and are matched to requests by id. The
// stream is closed by end-of-input on the child's stdin.

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "pag/errors.hpp"
#include "pag/quality.hpp"

namespace pag {

struct ExternalOracleOptions {
  /// Shell command line, run via /bin/sh -c.
  std::string command;
  int timeout_ms = 30000;
  /// Requests written ahead of their responses.
  std::size_t max_in_flight = 64;
  /// Kind every response must carry when used as a QualityProvider; a sample
  /// never mixes oracle kinds.
  OracleKind declared_kind = OracleKind::CertifiedLower;
};

/// One child process. Not thread-safe; use one client per worker.
///
/// Failures throw ExternalOracleError with code ProtocolViolation (bad or
/// unexpected response line), ToolCrash (child closed its output or stopped
/// reading while requests were pending) or Timeout (a request exceeded
/// timeout_ms). After a failure the child is killed and the client stays
/// unusable.
class ExternalOracleClient {
 public:
  explicit ExternalOracleClient(ExternalOracleOptions options);
  ~ExternalOracleClient();
  ExternalOracleClient(const ExternalOracleClient&) = delete;
  ExternalOracleClient& operator=(const ExternalOracleClient&) = delete;

  QualityEvaluation query(std::span<const double> x);
  std::vector<QualityEvaluation> query_batch(const std::vector<std::vector<double>>& inputs);

  /// Responses matched over the client's lifetime.
  std::size_t completed() const { return completed_; }

 private:
  [[noreturn]] void fail(ErrorCode code, std::int64_t request_id, const std::string& message);
  void shutdown(bool force);

  ExternalOracleOptions options_;
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::int64_t next_id_ = 0;
  std::size_t completed_ = 0;
  bool broken_ = false;
  std::string read_buffer_;
};

/// One-shot convenience: spawns the tool, asks about x, shuts it down.
QualityEvaluation external_oracle(const std::string& command, std::span<const double> x,
                                  int timeout_ms = 30000);

/// Quality provider backed by a pool of `workers` external clients.
class ExternalQualityProvider final : public QualityProvider {
 public:
  ExternalQualityProvider(ExternalOracleOptions options, std::size_t workers);
  ~ExternalQualityProvider() override;

  OracleKind kind() const override;
  std::string model_hash() const override;
  std::string config_json() const override;
  std::vector<QualityEvaluation> evaluate(const std::vector<std::vector<double>>& inputs) override;

 private:
  ExternalOracleOptions options_;
  std::vector<std::unique_ptr<ExternalOracleClient>> clients_;
};

}  // namespace pag
