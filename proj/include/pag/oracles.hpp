#pragma once

// Local robustness oracles ROB(x): distance (L-infinity) from x to the nearest
// input that changes the predicted class, reported with what the number means.

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "pag/model.hpp"

namespace pag {

enum class OracleKind { Exact, CertifiedLower, AdversarialUpper };

std::string_view to_string(OracleKind kind);
/// Parses "exact" | "certified_lower" | "adversarial_upper".
OracleKind parse_oracle_kind(std::string_view text);

struct OracleResult {
  double radius = 0.0;
  OracleKind kind = OracleKind::Exact;
  /// Present only when an attack located a class-changing input.
  std::optional<std::vector<double>> adversarial;
};

struct OracleConfig {
  double radius_cap = 0.5;
  double pgd_step = 0.5 / 256.0;
  std::size_t pgd_max_steps = 200;
  int binsearch_bits = 4;
  double grid_resolution = 1e-3;

  /// 28x28 greyscale setting: step 0.5/256, 200 steps.
  static OracleConfig mnist_like();
  /// 32x32 colour setting: step 0.1/256, 500 steps.
  static OracleConfig cifar_like();

  void validate() const;
};

/// Exhaustive search of the L-infinity ball (restricted to the model's input
/// box) down to cells of side `grid_resolution`. Cells are visited nearest
/// first and discarded when interval bounds prove them free of class changes;
/// the radius is the distance to the first cell that cannot be proven, so it
/// never exceeds the true radius and is within one resolution step of it when
/// the bounds are tight on small cells. `radius_cap` when the whole ball is
/// proven. Only for input_dim <= 3.
OracleResult exact_grid_oracle(const MlpModel& model, std::span<const double> x,
                               const OracleConfig& cfg);

/// |w.x + b| / ||w||_1: the L-infinity distance from x to the hyperplane
/// w.x + b = 0. Throws ZeroWeightVector for w = 0.
OracleResult analytic_linear_oracle(std::span<const double> weight_diff, double bias_diff,
                                    std::span<const double> x);

/// analytic_linear_oracle applied to a single affine two-class model
/// (weight_diff = W_1 - W_0). Throws ParameterOutOfRange for other models.
OracleResult analytic_model_oracle(const MlpModel& model, std::span<const double> x);

/// Signed-gradient ascent on the margin (runner-up logit minus the original
/// class's logit), projected onto the input box and the radius_cap ball.
/// Reports the distance to the first iterate whose class differs.
OracleResult pgd_oracle(const MlpModel& model, std::span<const double> x, const OracleConfig& cfg);

enum class LocalCheck { Robust, Unknown };

/// Sound but incomplete check that the class is constant on
/// [x - rho, x + rho] intersected with the input box.
LocalCheck ibp_local_check(const MlpModel& model, std::span<const double> x, double rho);

/// Binary search for the largest radius ibp_local_check verifies, over
/// [0, radius_cap] with `binsearch_bits` halvings, rounding down.
OracleResult certified_binsearch_oracle(const MlpModel& model, std::span<const double> x,
                                        const OracleConfig& cfg);

}  // namespace pag
