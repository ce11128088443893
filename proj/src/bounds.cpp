#include "pag/bounds.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "pag/errors.hpp"

namespace pag {
namespace {

bool in_open_half(double v) { return v > 0.0 && v < 0.5; }

void require_open_half(double v, const char* name) {
  if (!in_open_half(v)) {
    std::ostringstream msg;
    msg << name << " must lie in (0, 1/2), got " << v;
    throw Error(ErrorCode::ParameterOutOfRange, msg.str());
  }
}

void require_vc_dim(int vc_dim) {
  if (vc_dim < 1) {
    throw Error(ErrorCode::ParameterOutOfRange,
                "vc_dim must be >= 1, got " + std::to_string(vc_dim));
  }
}

}  // namespace

void CertificateParams::validate() const {
  require_open_half(epsilon, "epsilon");
  require_open_half(delta, "delta");
  require_open_half(p_min, "p_min");
  require_vc_dim(vc_dim);
}

double log1mexp(double x) {
  // Switch point ln 2 (Maechler 2012).
  if (x <= std::numbers::ln2) return std::log(-std::expm1(-x));
  return std::log1p(-std::exp(-x));
}

double sample_size_rhs(std::uint64_t s, double epsilon, double delta, int vc_dim) {
  const double sd = static_cast<double>(s);
  const double bracket = std::log(1.0 / delta) + vc_dim * std::log(2.0 * sd) -
                         log1mexp(sd * epsilon / 8.0);
  return 2.0 / (std::numbers::ln2 * epsilon) * bracket;
}

bool sample_size_satisfied(std::uint64_t s, double epsilon, double delta, int vc_dim) {
  if (s == 0) return false;
  return static_cast<double>(s) >= sample_size_rhs(s, epsilon, delta, vc_dim);
}

std::uint64_t solve_sample_size(double epsilon, double delta, int vc_dim) {
  require_open_half(epsilon, "epsilon");
  require_open_half(delta, "delta");
  require_vc_dim(vc_dim);

  auto ok = [&](std::uint64_t s) { return sample_size_satisfied(s, epsilon, delta, vc_dim); };

  // Bracket: lo fails, hi holds.
  std::uint64_t lo = 0;
  std::uint64_t hi = 1;
  while (!ok(hi)) {
    lo = hi;
    if (hi > (std::uint64_t{1} << 62)) {
      throw Error(ErrorCode::NonConvergence, "sample-size bracket exceeded 2^62");
    }
    hi *= 2;
  }
  while (hi - lo > 1) {
    const std::uint64_t mid = lo + (hi - lo) / 2;
    if (ok(mid)) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  // Guard the crossing against floating-point wobble.
  for (int k = 0; k < 8 && hi > 1 && ok(hi - 1); ++k) --hi;
  if (hi > 1 && ok(hi - 1)) {
    throw Error(ErrorCode::NonConvergence, "sample-size crossing is not isolated");
  }
  return hi;
}

double quantile_index_bound(std::uint64_t s, double p, double delta) {
  const double sp = static_cast<double>(s) * p;
  return sp - std::sqrt(2.0 * sp * std::log(1.0 / delta));
}

std::uint64_t quantile_index(std::uint64_t s, double p, double delta) {
  if (!(p >= 0.5 && p < 1.0)) {
    std::ostringstream msg;
    msg << "p must lie in [1/2, 1), got " << p;
    throw Error(ErrorCode::ParameterOutOfRange, msg.str());
  }
  require_open_half(delta, "delta");
  if (s == 0) throw Error(ErrorCode::ParameterOutOfRange, "sample size must be >= 1");

  const double bound = quantile_index_bound(s, p, delta);
  if (!(bound > 1.0)) {
    std::ostringstream msg;
    msg << "no order statistic certifies the " << p << "-quantile at delta " << delta
        << " with s = " << s << " (bound " << bound << ")";
    throw Error(ErrorCode::NoValidIndex, msg.str());
  }
  // Largest integer strictly below the bound.
  return static_cast<std::uint64_t>(std::ceil(bound)) - 1;
}

double guarantee_bound(const CertificateParams& params) {
  params.validate();
  return params.epsilon / params.p_min;
}

double shift_adjusted_bound(const CertificateParams& params, double lambda) {
  params.validate();
  if (!(lambda >= 0.0 && lambda < 1.0)) {
    std::ostringstream msg;
    msg << "total-variation distance must lie in [0, 1), got " << lambda;
    throw Error(ErrorCode::ParameterOutOfRange, msg.str());
  }
  if (lambda >= params.p_min) {
    std::ostringstream msg;
    msg << "lambda " << lambda << " >= p_min " << params.p_min << " makes the bound vacuous";
    throw Error(ErrorCode::ShiftTooLarge, msg.str());
  }
  return (params.epsilon + lambda) / (params.p_min - lambda);
}

double union_bound_violation(std::uint64_t map_size, double epsilon) {
  require_open_half(epsilon, "epsilon");
  if (map_size == 0) throw Error(ErrorCode::ParameterOutOfRange, "map size must be >= 1");
  const double product = static_cast<double>(map_size) * epsilon;
  return product < 1.0 ? product : 1.0;
}

}  // namespace pag
