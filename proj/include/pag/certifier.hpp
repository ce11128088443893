#pragma once

// Confidence-to-robustness map M(kappa), kappa_max, (rho, kappa) certification
// and PAG certificate assembly/serialization.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pag/bounds.hpp"
#include "pag/oracles.hpp"
#include "pag/quality.hpp"

namespace pag {

struct MapStep {
  double kappa = 0.0;
  double rho = 0.0;

  friend bool operator==(const MapStep&, const MapStep&) = default;
};

enum class LookupRule {
  /// min rho over sample points with confidence >= kappa: the first step
  /// whose kappa is >= the query.
  MinOverHigherConfidence,
  /// rho of the step with the largest kappa' <= the query. More conservative;
  /// kept for compatibility with tools that implement this rule.
  LargestLowerStep,
};

/// Monotone step function from confidence to a robustness lower bound.
/// Steps are strictly increasing in both kappa and rho and never exceed
/// kappa_max; codomain_size() = number of steps.
class RobustnessMap {
 public:
  RobustnessMap() = default;
  /// Validates the step invariants (throws ParameterOutOfRange).
  RobustnessMap(std::vector<MapStep> steps, double kappa_max);

  const std::vector<MapStep>& steps() const { return steps_; }
  double kappa_max() const { return kappa_max_; }
  std::size_t codomain_size() const { return steps_.size(); }
  bool empty() const { return steps_.empty(); }

  /// nullopt ("undefined") above kappa_max, and wherever the rule finds no step.
  std::optional<double> lookup(double kappa, LookupRule rule = LookupRule::MinOverHigherConfidence) const;

 private:
  std::vector<MapStep> steps_;
  double kappa_max_ = 0.0;
};

/// The i-th smallest confidence (1-based) among the points.
double kappa_order_statistic(std::span<const QualityPoint> points, std::uint64_t i);

/// Order-statistic index i(|N|, 1 - p_min, delta/2) used for kappa_max.
std::uint64_t kappa_max_index(std::uint64_t sample_size, const CertificateParams& params);

/// kappa_(i) with i = kappa_max_index(|N|, params). Propagates NoValidIndex.
double compute_kappa_max(const QualitySample& sample, const CertificateParams& params);

/// Single sweep over the points in lexicographic (rho, kappa) order, adding a
/// step kappa -> rho whenever kappa exceeds the running maximum. A point with
/// kappa above kappa_max counts at kappa_max, so the map equals the minimum
/// rho over all sample points with confidence >= kappa. With `rho_quantum`,
/// every rho is first rounded down to a multiple of it. A step whose rho
/// equals the previous step's rho replaces that step, which leaves every
/// lookup unchanged.
RobustnessMap build_map(std::span<const QualityPoint> points, double kappa_max,
                        std::optional<double> rho_quantum = {});

struct CertifyOutcome {
  enum class Status { Certified, NotCertified, OutOfRange };
  Status status = Status::OutOfRange;
  /// epsilon / p_min when certified.
  double bound = 0.0;
  /// 1 - delta.
  double confidence_level = 0.0;
  double kappa_max = 0.0;
  /// Sample point with the smallest rho inside R(rho, kappa) when not certified.
  std::optional<QualityPoint> witness;
};

std::string_view to_string(CertifyOutcome::Status status);

/// Checks one (rho, kappa) pair against the sample. Requires
/// |N| >= s(epsilon, delta/2, 2); throws InconsistentParams otherwise.
CertifyOutcome certify(const QualitySample& sample, const CertificateParams& params, double rho, double kappa);

struct ShiftAdjustment {
  double lambda = 0.0;
  double bound = 0.0;
};

struct PagCertificate {
  static constexpr int kFormatVersion = 1;

  CertificateParams params;
  std::uint64_t sample_size = 0;
  std::uint64_t required_sample_size = 0;
  std::uint64_t kappa_index = 0;
  double kappa_max = 0.0;
  RobustnessMap map;
  std::optional<double> rho_quantum;
  double bound = 0.0;
  double union_bound = 0.0;
  double confidence_level = 0.0;
  OracleKind oracle_kind = OracleKind::Exact;
  /// True for attack-based oracles: the guarantee holds relative to that
  /// oracle's radii, which over-estimate true robustness.
  bool oracle_relative = false;
  std::optional<ShiftAdjustment> shift;
  SampleProvenance provenance;
  std::string created_utc;
};

struct EmitOptions {
  std::optional<double> shift_lambda;
  std::optional<double> rho_quantum;
  std::string created_utc;
};

/// Assembles and validates a certificate. Throws InconsistentParams when the
/// sample is smaller than s(epsilon, delta/2, 2), the map's kappa_max is not
/// the sample's, the map is empty, or the oracle kind differs from the sample's.
PagCertificate emit_certificate(const QualitySample& sample, const CertificateParams& params,
                                const RobustnessMap& map, OracleKind oracle_kind, const EmitOptions& options = {});

std::string certificate_to_json(const PagCertificate& cert);
PagCertificate certificate_from_json(std::string_view text);
void save_certificate(const PagCertificate& cert, const std::filesystem::path& path);
PagCertificate load_certificate(const std::filesystem::path& path);

/// Current UTC time as an ISO-8601 string.
std::string utc_timestamp();

}  // namespace pag
