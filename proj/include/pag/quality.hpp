#pragma once

// The quality space: each input x maps to (rho, kappa) = (ROB(x), conf(x)).
// Counterexample ranges, quality providers, datasets, and iid sample
// construction with resumable on-disk persistence.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pag/bounds.hpp"
#include "pag/model.hpp"
#include "pag/oracles.hpp"

namespace pag {

struct QualityPoint {
  double rho = 0.0;
  double kappa = 0.0;

  friend bool operator==(const QualityPoint&, const QualityPoint&) = default;
};

/// R(rho, kappa) = {(rho', kappa') : rho' < rho and kappa' >= kappa}.
struct CounterexampleRange {
  double rho = 0.0;
  double kappa = 0.0;
};

/// Strict on rho, inclusive on kappa.
inline bool contains(const CounterexampleRange& range, const QualityPoint& q) {
  return q.rho < range.rho && q.kappa >= range.kappa;
}

bool has_counterexample(std::span<const QualityPoint> points, const CounterexampleRange& range);

/// Index of the contained point with the smallest rho (first such on ties).
std::optional<std::size_t> find_counterexample(std::span<const QualityPoint> points,
                                               const CounterexampleRange& range);

struct SampleProvenance {
  std::uint64_t seed = 0;
  OracleKind oracle_kind = OracleKind::Exact;
  double noise_sigma = 0.0;
  std::string dataset_id;
  std::string model_hash;
  /// Oracle configuration as a JSON document.
  std::string oracle_config = "{}";

  friend bool operator==(const SampleProvenance&, const SampleProvenance&) = default;
};

struct QualitySample {
  std::vector<QualityPoint> points;
  SampleProvenance provenance;

  std::size_t size() const { return points.size(); }
};

/// Rows of input vectors, optionally labelled. `id` is a content hash.
struct Dataset {
  std::size_t dim = 0;
  std::vector<std::vector<double>> rows;
  std::vector<long> labels;
  std::string id;
};

/// CSV with header feature_0..feature_{d-1} and an optional trailing `label`.
Dataset load_dataset_csv(const std::filesystem::path& path);
void save_dataset_csv(const Dataset& dataset, const std::filesystem::path& path);
/// Recomputes `id` from the rows and labels.
void assign_dataset_id(Dataset& dataset);

struct QualityEvaluation {
  OracleResult oracle;
  double kappa = 0.0;
};

/// Anything that can map a batch of inputs to quality evaluations.
class QualityProvider {
 public:
  virtual ~QualityProvider() = default;
  virtual OracleKind kind() const = 0;
  virtual std::string model_hash() const = 0;
  virtual std::string config_json() const = 0;
  /// Results are in input order. Failures throw IndexedError naming the
  /// position within `inputs`.
  virtual std::vector<QualityEvaluation> evaluate(const std::vector<std::vector<double>>& inputs) = 0;
};

enum class OracleChoice { ExactGrid, Analytic, Pgd, IbpBinsearch };

std::string_view to_string(OracleChoice choice);
OracleChoice parse_oracle_choice(std::string_view text);
OracleKind kind_of(OracleChoice choice);

/// conf(x) from the model plus ROB(x) from the chosen built-in oracle.
QualityEvaluation evaluate_quality(const MlpModel& model, OracleChoice choice, const OracleConfig& cfg,
                                   std::span<const double> x);

class ModelQualityProvider final : public QualityProvider {
 public:
  ModelQualityProvider(MlpModel model, OracleChoice choice, OracleConfig cfg, std::size_t workers);

  OracleKind kind() const override { return kind_of(choice_); }
  std::string model_hash() const override { return model_hash_; }
  std::string config_json() const override;
  std::vector<QualityEvaluation> evaluate(const std::vector<std::vector<double>>& inputs) override;

  const MlpModel& model() const { return model_; }

 private:
  MlpModel model_;
  OracleChoice choice_;
  OracleConfig cfg_;
  std::size_t workers_;
  std::string model_hash_;
};

struct SamplingOptions {
  std::uint64_t sample_size = 0;
  double noise_sigma = 8.0 / 256.0;
  std::uint64_t seed = 0;
  /// Draws evaluated (and persisted) per batch.
  std::size_t batch = 4096;
};

/// Draw number `index`: a uniformly chosen row plus N(0, sigma^2) noise per
/// dimension, clamped to `box`. Depends only on (seed, index).
std::vector<double> draw_instance(const Dataset& dataset, const InputBox& box, double noise_sigma,
                                  std::uint64_t seed, std::uint64_t index);

/// Sidecar document stored next to a quality-sample CSV.
struct SampleMetadata {
  SampleProvenance provenance;
  std::uint64_t sample_size = 0;
  std::optional<CertificateParams> params;
  bool complete = false;
};

std::string metadata_to_json(const SampleMetadata& meta);
SampleMetadata metadata_from_json(std::string_view text);
std::filesystem::path sidecar_path(const std::filesystem::path& csv_path);

/// Writes `index,rho,kappa` CSV plus the sidecar (marked complete).
void write_quality_sample(const QualitySample& sample, const std::filesystem::path& csv_path,
                          const std::optional<CertificateParams>& params = {});
/// Reads a CSV written by this module; provenance comes from the sidecar when
/// present. Throws MalformedFile on bad rows.
QualitySample read_quality_sample(const std::filesystem::path& csv_path);

/// Builds the iid quality sample. With `store`, rows are appended to the CSV
/// batch by batch and a matching incomplete store is resumed rather than
/// recomputed; a matching complete store is loaded as is.
QualitySample build_quality_sample(const Dataset& dataset, QualityProvider& provider, const InputBox& box,
                                   const SamplingOptions& options,
                                   const std::optional<std::filesystem::path>& store = {},
                                   const std::optional<CertificateParams>& params = {});

}  // namespace pag
