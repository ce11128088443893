#pragma once

// Sample-size and quantile-index solvers plus the closed-form guarantee bounds.
// Everything here is a pure function of its arguments.

#include <cstdint>

namespace pag {

/// Parameters of a PAG certificate. All three probabilities live in the open
/// interval (0, 1/2); `vc_dim` is the VC dimension of the range family (2 for
/// the quality-space ranges).
struct CertificateParams {
  double epsilon = 0.0;
  double delta = 0.0;
  double p_min = 0.0;
  int vc_dim = 2;

  /// Throws Error{ParameterOutOfRange} unless every field is in range.
  void validate() const;
};

/// ln(1 - exp(-x)) for x > 0, accurate for both tiny and large x.
double log1mexp(double x);

/// Right-hand side of the epsilon-net sample-size inequality evaluated at `s`:
///   (2 / (ln 2 * eps)) * (ln(1/delta) + d ln(2s) - ln(1 - exp(-s eps / 8))).
double sample_size_rhs(std::uint64_t s, double epsilon, double delta, int vc_dim);

/// True iff `s` satisfies s >= sample_size_rhs(s, ...).
bool sample_size_satisfied(std::uint64_t s, double epsilon, double delta, int vc_dim);

/// Smallest integer s for which an iid sample of size s is an epsilon-net with
/// probability at least 1 - delta over a range space of VC dimension `vc_dim`.
///
/// The returned s satisfies the inequality and s - 1 does not. Throws
/// ParameterOutOfRange for epsilon/delta outside (0, 1/2) or vc_dim < 1.
std::uint64_t solve_sample_size(double epsilon, double delta, int vc_dim);

/// The Chernoff bound s*p - sqrt(2 s p ln(1/delta)) that an order-statistic
/// index must stay strictly below.
double quantile_index_bound(std::uint64_t s, double p, double delta);

/// Largest integer i with i < s*p - sqrt(2 s p ln(1/delta)).
///
/// The i-th smallest element of an iid sample of size s then bounds the
/// p-quantile from below with probability at least 1 - delta. Requires
/// 1/2 <= p < 1 and 0 < delta < 1/2; throws NoValidIndex when the bound is
/// <= 1, i.e. the sample is too small to certify any quantile.
std::uint64_t quantile_index(std::uint64_t s, double p, double delta);

/// epsilon / p_min: bound on Pr(ROB(X) < rho | conf(X) >= kappa).
double guarantee_bound(const CertificateParams& params);

/// (epsilon + lambda) / (p_min - lambda) for a deployment distribution at
/// total-variation distance lambda from the sampling distribution.
/// Throws ShiftTooLarge when lambda >= p_min.
double shift_adjusted_bound(const CertificateParams& params, double lambda);

/// min(1, |M| * epsilon): bound on Pr(ROB(X) < M(conf(X))).
double union_bound_violation(std::uint64_t map_size, double epsilon);

}  // namespace pag
