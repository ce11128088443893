#include "pag/oracles.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <queue>
#include <sstream>
#include <string>

#include "pag/errors.hpp"

namespace pag {
namespace {

void require_in_box(const MlpModel& model, std::span<const double> x) {
  if (x.size() != model.input_dim()) {
    throw Error(ErrorCode::DimensionMismatch, "query has " + std::to_string(x.size()) +
                                                  " entries, model expects " +
                                                  std::to_string(model.input_dim()));
  }
  if (!model.input_box().contains(x)) {
    throw Error(ErrorCode::ParameterOutOfRange, "query lies outside the model's input box");
  }
}

double linf_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace

std::string_view to_string(OracleKind kind) {
  switch (kind) {
    case OracleKind::Exact: return "exact";
    case OracleKind::CertifiedLower: return "certified_lower";
    case OracleKind::AdversarialUpper: return "adversarial_upper";
  }
  return "exact";
}

OracleKind parse_oracle_kind(std::string_view text) {
  if (text == "exact") return OracleKind::Exact;
  if (text == "certified_lower") return OracleKind::CertifiedLower;
  if (text == "adversarial_upper") return OracleKind::AdversarialUpper;
  throw Error(ErrorCode::ParameterOutOfRange, "unknown oracle kind '" + std::string(text) + "'");
}

OracleConfig OracleConfig::mnist_like() {
  OracleConfig cfg;
  cfg.pgd_step = 0.5 / 256.0;
  cfg.pgd_max_steps = 200;
  return cfg;
}

OracleConfig OracleConfig::cifar_like() {
  OracleConfig cfg;
  cfg.pgd_step = 0.1 / 256.0;
  cfg.pgd_max_steps = 500;
  cfg.radius_cap = 0.5;
  return cfg;
}

void OracleConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::ParameterOutOfRange, what); };
  if (!(std::isfinite(radius_cap) && radius_cap > 0.0)) fail("radius_cap must be positive");
  if (!(pgd_step > 0.0 && pgd_step < radius_cap)) fail("pgd_step must lie in (0, radius_cap)");
  if (pgd_max_steps == 0) fail("pgd_max_steps must be positive");
  if (binsearch_bits < 1) fail("binsearch_bits must be >= 1");
  if (!(std::isfinite(grid_resolution) && grid_resolution > 0.0)) fail("grid_resolution must be positive");
}

OracleResult exact_grid_oracle(const MlpModel& model, std::span<const double> x, const OracleConfig& cfg) {
  cfg.validate();
  const std::size_t dim = model.input_dim();
  if (dim > 3) {
    throw Error(ErrorCode::DimensionTooLarge,
                "grid search supports input_dim <= 3, model has " + std::to_string(dim));
  }
  require_in_box(model, x);

  const double h = cfg.grid_resolution;
  const InputBox& box = model.input_box();
  ForwardWorkspace ws;
  const std::size_t reference = model.predict_class(x, ws);

  struct Cell {
    double dist;
    std::uint64_t order;
    std::array<double, 3> lo;
    std::array<double, 3> hi;
  };
  auto later = [](const Cell& a, const Cell& b) { return a.dist != b.dist ? a.dist > b.dist : a.order > b.order; };
  std::priority_queue<Cell, std::vector<Cell>, decltype(later)> open(later);
  std::uint64_t pushed = 0;
  auto push = [&](const std::array<double, 3>& lo, const std::array<double, 3>& hi) {
    double d = 0.0;
    for (std::size_t i = 0; i < dim; ++i) d = std::max({d, lo[i] - x[i], x[i] - hi[i]});
    open.push({d, pushed++, lo, hi});
  };
  std::array<double, 3> lo{};
  std::array<double, 3> hi{};
  for (std::size_t i = 0; i < dim; ++i) {
    lo[i] = std::max(box.lo[i], x[i] - cfg.radius_cap);
    hi[i] = std::min(box.hi[i], x[i] + cfg.radius_cap);
  }
  push(lo, hi);

  // Best-first over cells ordered by L-infinity distance from x. A cell is
  // dropped once interval bounds prove every point in it keeps the reference
  // class; the first cell of side <= h that cannot be proven fixes the radius.
  while (!open.empty()) {
    const Cell cell = open.top();
    open.pop();
    const auto ub = model.margin_upper_bounds(std::span<const double>(cell.lo.data(), dim),
                                              std::span<const double>(cell.hi.data(), dim), reference);
    bool proven = true;
    for (std::size_t j = 0; j < ub.size(); ++j) proven = proven && (j == reference || ub[j] < 0.0);
    if (proven) continue;

    std::array<std::size_t, 3> split{};
    std::size_t splits = 0;
    for (std::size_t i = 0; i < dim; ++i) {
      if (cell.hi[i] - cell.lo[i] > h) split[splits++] = i;
    }
    if (splits == 0) return {std::min(cell.dist, cfg.radius_cap), OracleKind::Exact, std::nullopt};
    for (std::size_t mask = 0; mask < (std::size_t{1} << splits); ++mask) {
      std::array<double, 3> clo = cell.lo;
      std::array<double, 3> chi = cell.hi;
      for (std::size_t k = 0; k < splits; ++k) {
        const std::size_t i = split[k];
        const double mid = 0.5 * (cell.lo[i] + cell.hi[i]);
        if (mask >> k & 1U) {
          clo[i] = mid;
        } else {
          chi[i] = mid;
        }
      }
      push(clo, chi);
    }
  }
  return {cfg.radius_cap, OracleKind::Exact, std::nullopt};
}

OracleResult analytic_linear_oracle(std::span<const double> weight_diff, double bias_diff,
                                    std::span<const double> x) {
  if (weight_diff.size() != x.size()) {
    throw Error(ErrorCode::DimensionMismatch, "weight and query dimensions differ");
  }
  double dot = bias_diff;
  double l1 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += weight_diff[i] * x[i];
    l1 += std::abs(weight_diff[i]);
  }
  if (l1 == 0.0) throw Error(ErrorCode::ZeroWeightVector, "weight difference is zero");
  return {std::abs(dot) / l1, OracleKind::Exact, std::nullopt};
}

OracleResult analytic_model_oracle(const MlpModel& model, std::span<const double> x) {
  if (model.layers().size() != 1 || model.num_classes() != 2 ||
      model.layers().front().activation != Activation::Identity) {
    throw Error(ErrorCode::ParameterOutOfRange,
                "analytic oracle needs a single identity-activated two-class layer");
  }
  const AffineLayer& layer = model.layers().front();
  std::vector<double> w(layer.cols);
  for (std::size_t c = 0; c < layer.cols; ++c) w[c] = layer.at(1, c) - layer.at(0, c);
  return analytic_linear_oracle(w, layer.bias[1] - layer.bias[0], x);
}

OracleResult pgd_oracle(const MlpModel& model, std::span<const double> x, const OracleConfig& cfg) {
  cfg.validate();
  require_in_box(model, x);
  const InputBox& box = model.input_box();
  ForwardWorkspace ws;
  const std::size_t reference = model.predict_class(x, ws);

  std::vector<double> iterate(x.begin(), x.end());
  std::vector<double> previous;
  for (std::size_t step = 0; step < cfg.pgd_max_steps; ++step) {
    const std::vector<double> grad = model.input_gradient(iterate, GradientLoss::MarginToRunnerUp, reference);
    previous = iterate;
    for (std::size_t i = 0; i < iterate.size(); ++i) {
      const double dir = grad[i] > 0.0 ? 1.0 : (grad[i] < 0.0 ? -1.0 : 0.0);
      const double lo = std::max(box.lo[i], x[i] - cfg.radius_cap);
      const double hi = std::min(box.hi[i], x[i] + cfg.radius_cap);
      iterate[i] = std::clamp(iterate[i] + cfg.pgd_step * dir, lo, hi);
    }
    if (iterate == previous) break;  // stalled: later steps would repeat this one
    if (model.predict_class(iterate, ws) != reference) {
      return {linf_distance(iterate, x), OracleKind::AdversarialUpper, iterate};
    }
  }
  return {cfg.radius_cap, OracleKind::AdversarialUpper, std::nullopt};
}

LocalCheck ibp_local_check(const MlpModel& model, std::span<const double> x, double rho) {
  require_in_box(model, x);
  if (!(rho >= 0.0) || !std::isfinite(rho)) {
    throw Error(ErrorCode::ParameterOutOfRange, "rho must be a finite non-negative radius");
  }
  const InputBox& box = model.input_box();
  std::vector<double> lo(x.size());
  std::vector<double> hi(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    lo[i] = std::max(box.lo[i], x[i] - rho);
    hi[i] = std::min(box.hi[i], x[i] + rho);
  }
  const std::size_t reference = model.predict_class(x);
  const std::vector<double> upper = model.margin_upper_bounds(lo, hi, reference);
  for (std::size_t j = 0; j < upper.size(); ++j) {
    if (j != reference && !(upper[j] < 0.0)) return LocalCheck::Unknown;
  }
  return LocalCheck::Robust;
}

OracleResult certified_binsearch_oracle(const MlpModel& model, std::span<const double> x,
                                        const OracleConfig& cfg) {
  cfg.validate();
  if (ibp_local_check(model, x, cfg.radius_cap) == LocalCheck::Robust) {
    return {cfg.radius_cap, OracleKind::CertifiedLower, std::nullopt};
  }
  double verified = 0.0;
  double refuted = cfg.radius_cap;
  for (int bit = 0; bit < cfg.binsearch_bits; ++bit) {
    const double mid = 0.5 * (verified + refuted);
    if (ibp_local_check(model, x, mid) == LocalCheck::Robust) {
      verified = mid;
    } else {
      refuted = mid;
    }
  }
  return {verified, OracleKind::CertifiedLower, std::nullopt};
}

}  // namespace pag
