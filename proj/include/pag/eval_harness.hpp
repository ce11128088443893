#pragma once

// Test-set estimators p_kappa, p_hat and n_c with the good-run criteria, a
// synthetic linear world with exact quality probabilities, and Monte-Carlo
// checks of the epsilon-net and quantile laws.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pag/bounds.hpp"
#include "pag/certifier.hpp"
#include "pag/model.hpp"
#include "pag/oracles.hpp"
#include "pag/quality.hpp"
#include "pag/rng.hpp"

namespace pag {

struct KappaRow {
  double kappa = 0.0;
  /// num / den; NaN for denominator-zero rows.
  double p_kappa = 0.0;
  /// #{test points with conf >= kappa and rho < M(kappa)}.
  std::uint64_t num = 0;
  /// #{test points with conf >= kappa}.
  std::uint64_t den = 0;
};

struct EvalReport {
  /// Worst p_kappa over rows with den > 0 (0 when there are none).
  double p_hat = 0.0;
  std::optional<double> p_hat_kappa;
  /// Ascending in kappa; every kappa <= kappa_max.
  std::vector<KappaRow> per_kappa;
  std::uint64_t denominator_zero_rows = 0;
  std::uint64_t n_c = 0;
  std::size_t map_size = 0;
  std::size_t test_size = 0;
  /// Test points with conf > kappa_max, outside the map's domain.
  std::uint64_t above_kappa_max = 0;
  double kappa_max = 0.0;
  /// epsilon / p_min.
  double p_hat_threshold = 0.0;
  /// |test| * |M| * epsilon.
  double n_c_threshold = 0.0;
  bool good_run = false;
};

/// Evaluates a map on test quality points. p_kappa is computed at every test
/// confidence <= kappa_max and at every step of the map. Throws EmptyTestSet.
EvalReport evaluate_on_test(const RobustnessMap& map, std::span<const QualityPoint> test_points,
                            const CertificateParams& params);

std::string eval_report_to_json(const EvalReport& report);
/// `kappa,p_kappa,num,den`; p_kappa is empty on denominator-zero rows.
void write_per_kappa_csv(const EvalReport& report, const std::filesystem::path& path);
/// `rho,kappa`, one line per point.
void write_scatter_csv(std::span<const QualityPoint> points, const std::filesystem::path& path);

/// Two-class linear classifier over a 2-D Gaussian mixture. Logits are
/// (-g, g) with g = w.x + b, so conf = 1 / (1 + exp(-2|g|)) and the exact
/// L-infinity robustness is |g| / ||w||_1. Inputs are drawn as in
/// draw_instance: a dataset row plus N(0, noise_sigma^2) noise per coordinate.
struct SyntheticWorld {
  Dataset dataset;
  MlpModel model;
  std::vector<double> w;
  double b = 0.0;
  double noise_sigma = 8.0 / 256.0;
  /// Analytic oracle settings; radius_cap bounds reported radii.
  OracleConfig oracle_config;

  double margin(std::span<const double> x) const;
  /// Closed-form quality point (rho capped at radius_cap).
  QualityPoint quality(std::span<const double> x) const;
  /// Pr(|g(X)| <= t) under the draw distribution.
  double abs_margin_cdf(double t) const;
  /// Pr(ROB(X) < rho and conf(X) >= kappa).
  double range_probability(const CounterexampleRange& range) const;
  /// Pr(conf(X) >= kappa).
  double confidence_tail(double kappa) const;
  std::vector<double> draw(std::uint64_t seed, std::uint64_t index) const;
};

/// Deterministic in `seed` (the dataset rows are sampled from it).
SyntheticWorld synthetic_linear_world(std::uint64_t seed);

struct WitnessRange {
  CounterexampleRange range;
  double probability = 0.0;
};

/// `count` ranges R(rho, kappa) spread along the contour where their exact
/// probability first reaches epsilon.
std::vector<WitnessRange> epsilon_contour_witnesses(const SyntheticWorld& world, double epsilon,
                                                    std::size_t count = 64);

struct MonteCarloResult {
  std::uint64_t trials = 0;
  std::uint64_t failures = 0;
  double failure_rate = 0.0;
  /// One-sided 99% Clopper-Pearson upper bound on the failure probability.
  double upper_bound_99 = 0.0;
  std::uint64_t sample_size = 0;
};

/// Upper Clopper-Pearson bound at `confidence` for k successes in n trials.
double binomial_upper_bound(std::uint64_t k, std::uint64_t n, double confidence = 0.99);

/// Draws `trials` samples of size solve_sample_size(epsilon, delta, 2) and
/// reports the fraction missing at least one witness range of probability
/// >= epsilon. Throws ParameterOutOfRange when trials == 0.
MonteCarloResult monte_carlo_epsnet_check(const SyntheticWorld& world, std::span<const WitnessRange> witnesses,
                                          const CertificateParams& params, std::uint64_t trials,
                                          std::uint64_t seed, std::size_t workers = 0);

struct Distribution1D {
  std::function<double(SplitMix64&)> draw;
  /// Pr(K <= x).
  std::function<double(double)> cdf;
  /// Pr(K < x); defaults to cdf when unset (continuous laws).
  std::function<double(double)> cdf_below;
};

Distribution1D uniform_distribution();
/// Finitely many atoms with the given masses (normalized internally).
Distribution1D discrete_distribution(std::vector<double> atoms, std::vector<double> masses);

/// Per trial draws s values, takes the i-th smallest with i = quantile_index(s,
/// p, delta) and fails when Pr(K < N_(i)) exceeds p. Propagates NoValidIndex.
MonteCarloResult monte_carlo_quantile_check(const Distribution1D& dist, std::uint64_t s, double p, double delta,
                                            std::uint64_t trials, std::uint64_t seed, std::size_t workers = 0);

}  // namespace pag
