#include <doctest.h>

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <set>

#include "pag/errors.hpp"
#include "pag/eval_harness.hpp"
#include "support.hpp"

using namespace pag;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::ParameterOutOfRange;
}

std::vector<QualityPoint> random_points(std::uint64_t seed, std::size_t n) {
  SplitMix64 rng(seed);
  std::vector<QualityPoint> pts(n);
  for (auto& q : pts) {
    q.rho = static_cast<double>(rng() % 30) / 60.0;
    q.kappa = 0.5 + static_cast<double>(rng() % 25) / 50.0;
  }
  return pts;
}

}  // namespace

TEST_SUITE("eval_harness") {
  TEST_CASE("single-step example") {
    const RobustnessMap m({{0.9, 0.1}}, 0.9);
    const std::vector<QualityPoint> test = {{0.05, 0.95}, {0.2, 0.95}};
    const EvalReport r = evaluate_on_test(m, test, {0.01, 0.01, 0.25});
    CHECK(r.p_hat == 0.5);
    REQUIRE(r.p_hat_kappa.has_value());
    CHECK(*r.p_hat_kappa == 0.9);
    CHECK(r.n_c == 0);
    CHECK(r.above_kappa_max == 2);
    CHECK(r.map_size == 1);
    CHECK(r.p_hat_threshold == doctest::Approx(0.04));
    CHECK(r.n_c_threshold == doctest::Approx(0.02));
    CHECK_FALSE(r.good_run);
  }

  TEST_CASE("estimators match a direct double loop") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      const auto sample = random_points(seed, 300);
      const double kappa_max = kappa_order_statistic(sample, 240);
      const RobustnessMap m = build_map(sample, kappa_max);
      const auto test = random_points(seed + 1000, 50 + seed * 20);
      const CertificateParams params{0.05, 0.1, 0.25};
      const EvalReport r = evaluate_on_test(m, test, params);

      std::set<double> candidates;
      for (const auto& q : test) {
        if (q.kappa <= kappa_max) candidates.insert(q.kappa);
      }
      for (const auto& s : m.steps()) candidates.insert(s.kappa);
      REQUIRE(r.per_kappa.size() == candidates.size());

      double worst = 0.0;
      std::uint64_t zero_rows = 0;
      std::size_t row = 0;
      for (double k : candidates) {
        const double bound = *m.lookup(k);
        std::uint64_t num = 0;
        std::uint64_t den = 0;
        for (const auto& q : test) {
          if (q.kappa >= k) {
            ++den;
            if (q.rho < bound) ++num;
          }
        }
        const KappaRow& got = r.per_kappa[row++];
        CHECK(got.kappa == k);
        CHECK(got.num == num);
        CHECK(got.den == den);
        if (den == 0) {
          ++zero_rows;
          CHECK(std::isnan(got.p_kappa));
        } else {
          CHECK(got.p_kappa == static_cast<double>(num) / static_cast<double>(den));
          worst = std::max(worst, static_cast<double>(num) / static_cast<double>(den));
        }
      }
      CHECK(r.p_hat == worst);
      CHECK(r.denominator_zero_rows == zero_rows);

      std::uint64_t n_c = 0;
      for (const auto& q : test) {
        if (q.kappa <= kappa_max && q.rho < *m.lookup(q.kappa)) ++n_c;
      }
      CHECK(r.n_c == n_c);
      CHECK(r.good_run == (r.p_hat <= params.epsilon / params.p_min &&
                           static_cast<double>(n_c) <= r.n_c_threshold));
    }
  }

  TEST_CASE("report serialization") {
    const RobustnessMap m({{0.6, 0.1}, {0.8, 0.3}}, 0.8);
    const std::vector<QualityPoint> test = {{0.05, 0.7}, {0.4, 0.65}};
    const EvalReport r = evaluate_on_test(m, test, {0.1, 0.1, 0.25});
    const auto doc = nlohmann::json::parse(eval_report_to_json(r));
    CHECK(doc.at("p_hat").get<double>() == r.p_hat);
    CHECK(doc.at("good_run").get<bool>() == r.good_run);

    pag::test::TempDir dir("eval");
    write_per_kappa_csv(r, dir / "k.csv");
    const std::string k = pag::test::slurp(dir / "k.csv");
    CHECK(k.rfind("kappa,p_kappa,num,den\n", 0) == 0);
    CHECK(k.find("0.8,,0,0") != std::string::npos);
    write_scatter_csv(test, dir / "s.csv");
    CHECK(pag::test::slurp(dir / "s.csv").rfind("rho,kappa\n", 0) == 0);
  }

  TEST_CASE("empty test set") {
    const RobustnessMap m({{0.9, 0.1}}, 0.9);
    CHECK(code_of([&] { evaluate_on_test(m, std::vector<QualityPoint>{}, {0.01, 0.01, 0.25}); }) ==
          ErrorCode::EmptyTestSet);
  }

  TEST_CASE("synthetic world closed forms agree with simulation") {
    const SyntheticWorld world = synthetic_linear_world(7);
    const std::vector<double> x = {0.1, -0.2};
    const QualityPoint q = world.quality(x);
    const double g = world.margin(x);
    CHECK(g == doctest::Approx(3 * 0.1 + 2 * 0.2 + 0.25));
    CHECK(q.rho == doctest::Approx(std::min(std::abs(g) / 5.0, world.oracle_config.radius_cap)));
    CHECK(q.kappa == doctest::Approx(world.model.forward(x).confidence));

    const CounterexampleRange ranges[] = {{0.02, 0.6}, {0.05, 0.55}, {0.1, 0.9}, {0.6, 0.7}};
    const std::size_t n = 200000;
    std::vector<std::uint64_t> hits(std::size(ranges), 0);
    std::uint64_t tail = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const QualityPoint p = world.quality(world.draw(99, i));
      for (std::size_t r = 0; r < std::size(ranges); ++r) hits[r] += contains(ranges[r], p) ? 1 : 0;
      tail += p.kappa >= 0.8 ? 1 : 0;
    }
    for (std::size_t r = 0; r < std::size(ranges); ++r) {
      const double exact = world.range_probability(ranges[r]);
      const double se = std::sqrt(exact * (1 - exact) / n) + 1e-9;
      CAPTURE(r);
      CHECK(std::abs(static_cast<double>(hits[r]) / n - exact) <= 5 * se);
    }
    const double exact_tail = world.confidence_tail(0.8);
    CHECK(std::abs(static_cast<double>(tail) / n - exact_tail) <= 5 * std::sqrt(exact_tail * (1 - exact_tail) / n));
    CHECK(world.abs_margin_cdf(0.0) == 0.0);
    CHECK(world.abs_margin_cdf(1e6) == doctest::Approx(1.0));
  }

  TEST_CASE("world is deterministic in its seed") {
    const SyntheticWorld a = synthetic_linear_world(3);
    const SyntheticWorld b = synthetic_linear_world(3);
    CHECK(a.dataset.rows == b.dataset.rows);
    CHECK(a.model.hash() == b.model.hash());
    CHECK(a.draw(1, 2) == b.draw(1, 2));
    CHECK(synthetic_linear_world(4).dataset.rows != a.dataset.rows);
  }

  TEST_CASE("contour witnesses sit at probability epsilon") {
    const SyntheticWorld world = synthetic_linear_world(11);
    const auto ws = epsilon_contour_witnesses(world, 0.02, 16);
    REQUIRE(ws.size() == 16);
    for (const WitnessRange& w : ws) {
      CHECK(w.probability >= 0.02);
      CHECK(w.probability == doctest::Approx(0.02).epsilon(1e-6));
      CHECK(world.range_probability(w.range) == w.probability);
      CHECK(world.range_probability({w.range.rho * (1 - 1e-3), w.range.kappa}) < 0.02);
    }
  }

  TEST_CASE("epsilon-net check edge cases") {
    const SyntheticWorld world = synthetic_linear_world(11);
    const CertificateParams params{0.2, 0.2, 0.25};
    CHECK(code_of([&] { monte_carlo_epsnet_check(world, {}, params, 0, 1); }) == ErrorCode::ParameterOutOfRange);
    const MonteCarloResult none = monte_carlo_epsnet_check(world, {}, params, 5, 1);
    CHECK(none.failures == 0);
    CHECK(none.sample_size == solve_sample_size(0.2, 0.2, 2));

    const auto ws = epsilon_contour_witnesses(world, 0.2, 8);
    const MonteCarloResult a = monte_carlo_epsnet_check(world, ws, params, 40, 5, 1);
    const MonteCarloResult b = monte_carlo_epsnet_check(world, ws, params, 40, 5, 3);
    CHECK(a.failures == b.failures);
    CHECK(a.failure_rate <= a.upper_bound_99);
  }

  TEST_CASE("binomial upper bound") {
    CHECK(binomial_upper_bound(0, 100) == doctest::Approx(1 - std::pow(0.01, 1.0 / 100)));
    CHECK(binomial_upper_bound(100, 100) == 1.0);
    CHECK(binomial_upper_bound(5, 100) > 0.05);
  }

  TEST_CASE("quantile check") {
    const MonteCarloResult u = monte_carlo_quantile_check(uniform_distribution(), 1000, 0.9, 0.05, 200, 3);
    CHECK(u.trials == 200);
    CHECK(u.failure_rate <= 0.05 + 3 * std::sqrt(0.05 * 0.95 / 200));
    const Distribution1D atom = discrete_distribution({0.5}, {1.0});
    CHECK(atom.cdf(0.5) == 1.0);
    CHECK(atom.cdf_below(0.5) == 0.0);
    CHECK(monte_carlo_quantile_check(atom, 1000, 0.9, 0.05, 20, 3).failures == 0);
    const Distribution1D two = discrete_distribution({0.0, 1.0}, {0.5, 0.5});
    CHECK(monte_carlo_quantile_check(two, 1000, 0.9, 0.05, 50, 3).failures == 0);
    const Distribution1D skew = discrete_distribution({0.0, 1.0}, {0.95, 0.05});
    CHECK(monte_carlo_quantile_check(skew, 1000, 0.96, 0.05, 50, 3).failures == 0);
    CHECK(code_of([&] { monte_carlo_quantile_check(uniform_distribution(), 5, 0.9, 0.05, 5, 1); }) ==
          ErrorCode::NoValidIndex);
    CHECK(code_of([&] { discrete_distribution({0.0}, {0.0}); }) == ErrorCode::ParameterOutOfRange);
  }
}
