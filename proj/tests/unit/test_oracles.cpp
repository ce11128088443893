#include <doctest.h>

#include <cmath>

#include "pag/errors.hpp"
#include "pag/oracles.hpp"
#include "support.hpp"

using namespace pag;
using pag::test::linear_model;
using pag::test::random_mlp;

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

double linf(const std::vector<double>& a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace

TEST_SUITE("oracles") {
  TEST_CASE("kind names round trip") {
    for (OracleKind k : {OracleKind::Exact, OracleKind::CertifiedLower, OracleKind::AdversarialUpper}) {
      CHECK(parse_oracle_kind(to_string(k)) == k);
    }
    CHECK(to_string(OracleKind::CertifiedLower) == "certified_lower");
    CHECK(code_of([] { parse_oracle_kind("guess"); }) == ErrorCode::ParameterOutOfRange);
  }

  TEST_CASE("presets and validation") {
    CHECK(OracleConfig::mnist_like().pgd_step == doctest::Approx(0.5 / 256));
    CHECK(OracleConfig::mnist_like().pgd_max_steps == 200);
    CHECK(OracleConfig::cifar_like().pgd_step == doctest::Approx(0.1 / 256));
    CHECK(OracleConfig::cifar_like().pgd_max_steps == 500);
    OracleConfig bad;
    bad.radius_cap = 0.0;
    CHECK(code_of([&] { bad.validate(); }) == ErrorCode::ParameterOutOfRange);
  }

  TEST_CASE("analytic linear oracle") {
    const std::vector<double> w = {2.0, -1.0};
    const std::vector<double> x = {0.5, 0.5};
    CHECK(analytic_linear_oracle(w, 0.1, x).radius == doctest::Approx(0.6 / 3.0));
    const std::vector<double> on = {0.25, 0.5};
    CHECK(analytic_linear_oracle(w, 0.0, on).radius == 0.0);
    const std::vector<double> zero = {0.0, 0.0};
    CHECK(code_of([&] { analytic_linear_oracle(zero, 1.0, x); }) == ErrorCode::ZeroWeightVector);
    const MlpModel m = linear_model(w, 0.1, InputBox::uniform(2, -1.0, 2.0));
    CHECK(analytic_model_oracle(m, x).radius == doctest::Approx(0.2));
    CHECK(code_of([&] { analytic_model_oracle(random_mlp(1, 2, 3, 2, InputBox::uniform(2, 0, 1)), x); }) ==
          ErrorCode::ParameterOutOfRange);
  }

  TEST_CASE("grid oracle agrees with the analytic radius on linear models") {
    SplitMix64 rng(17);
    OracleConfig cfg;
    cfg.grid_resolution = 2e-3;
    for (int t = 0; t < 40; ++t) {
      const std::vector<double> w = {rng.uniform() * 2 - 1, rng.uniform() * 2 - 1};
      const MlpModel m = linear_model(w, rng.uniform() - 0.5, InputBox::uniform(2, -1.0, 2.0));
      const std::vector<double> x = {rng.uniform(), rng.uniform()};
      const double exact = std::min(analytic_model_oracle(m, x).radius, cfg.radius_cap);
      const OracleResult g = exact_grid_oracle(m, x, cfg);
      CHECK(g.kind == OracleKind::Exact);
      CHECK(std::abs(g.radius - exact) <= cfg.grid_resolution + 1e-12);
      CHECK(g.radius <= exact + 1e-12);
    }
  }

  TEST_CASE("grid oracle on a 1-D threshold") {
    const MlpModel m = linear_model({1.0}, -0.5, InputBox::uniform(1, 0.0, 1.0));
    const std::vector<double> x = {0.2};
    const double r = exact_grid_oracle(m, x, OracleConfig{}).radius;
    CHECK(r <= 0.3);
    CHECK(r >= 0.3 - 1e-3);
  }

  TEST_CASE("grid oracle stops at the box") {
    // Constant-class model: no change anywhere, so the cap comes back.
    const MlpModel m = linear_model({1.0, 1.0}, 10.0, InputBox::uniform(2, 0.0, 0.01));
    OracleConfig cfg;
    const std::vector<double> x = {0.005, 0.005};
    CHECK(exact_grid_oracle(m, x, cfg).radius == cfg.radius_cap);
  }

  TEST_CASE("grid oracle preconditions") {
    const MlpModel m4 = random_mlp(2, 4, 3, 2, InputBox::uniform(4, 0, 1));
    const std::vector<double> x4 = {0.5, 0.5, 0.5, 0.5};
    CHECK(code_of([&] { exact_grid_oracle(m4, x4, OracleConfig{}); }) == ErrorCode::DimensionTooLarge);
    const MlpModel m2 = random_mlp(2, 2, 3, 2, InputBox::uniform(2, 0, 1));
    const std::vector<double> outside = {1.5, 0.5};
    CHECK(code_of([&] { exact_grid_oracle(m2, outside, OracleConfig{}); }) == ErrorCode::ParameterOutOfRange);
  }

  TEST_CASE("pgd reports a genuine adversarial input") {
    SplitMix64 rng(3);
    int found = 0;
    for (int t = 0; t < 60; ++t) {
      const MlpModel m = random_mlp(100 + t, 2, 8, 2, InputBox::uniform(2, 0.0, 1.0), 3.0);
      const std::vector<double> x = {rng.uniform(), rng.uniform()};
      const OracleResult r = pgd_oracle(m, x, OracleConfig{});
      CHECK(r.kind == OracleKind::AdversarialUpper);
      CHECK(r.radius <= OracleConfig{}.radius_cap);
      if (r.adversarial) {
        ++found;
        CHECK(m.predict_class(*r.adversarial) != m.predict_class(x));
        CHECK(linf(*r.adversarial, x) == doctest::Approx(r.radius));
        CHECK(m.input_box().contains(*r.adversarial));
      }
    }
    CHECK(found > 10);
  }

  TEST_CASE("pgd is an upper bound on linear models") {
    SplitMix64 rng(8);
    for (int t = 0; t < 40; ++t) {
      const std::vector<double> w = {rng.uniform() * 2 - 1, rng.uniform() * 2 - 1};
      const MlpModel m = linear_model(w, rng.uniform() - 0.5, InputBox::uniform(2, -1.0, 2.0));
      const std::vector<double> x = {rng.uniform(), rng.uniform()};
      const double exact = std::min(analytic_model_oracle(m, x).radius, OracleConfig{}.radius_cap);
      const OracleResult r = pgd_oracle(m, x, OracleConfig{});
      CHECK(r.radius >= exact - 1e-12);
      // 200 steps of 0.5/256 reach at most 0.39 from x.
      if (exact < 0.35) {
        CHECK(r.adversarial.has_value());
        CHECK(r.radius <= exact + OracleConfig{}.pgd_step + 1e-12);
      }
    }
  }

  TEST_CASE("ibp binary search is a lower bound and exact up to resolution on linear models") {
    SplitMix64 rng(12);
    OracleConfig cfg;
    cfg.binsearch_bits = 10;
    const double resolution = cfg.radius_cap / 1024.0;
    for (int t = 0; t < 40; ++t) {
      const std::vector<double> w = {rng.uniform() * 2 - 1, rng.uniform() * 2 - 1};
      const MlpModel m = linear_model(w, rng.uniform() - 0.5, InputBox::uniform(2, -1.0, 2.0));
      const std::vector<double> x = {rng.uniform(), rng.uniform()};
      const double exact = std::min(analytic_model_oracle(m, x).radius, cfg.radius_cap);
      const OracleResult r = certified_binsearch_oracle(m, x, cfg);
      CHECK(r.kind == OracleKind::CertifiedLower);
      CHECK(r.radius <= exact + 1e-12);
      CHECK(r.radius >= exact - resolution - 1e-12);
    }
  }

  TEST_CASE("ibp local check") {
    const MlpModel m = linear_model({1.0, 0.0}, -0.5, InputBox::uniform(2, 0.0, 1.0));
    const std::vector<double> x = {0.2, 0.5};
    CHECK(ibp_local_check(m, x, 0.29) == LocalCheck::Robust);
    CHECK(ibp_local_check(m, x, 0.31) == LocalCheck::Unknown);
    CHECK(code_of([&] { ibp_local_check(m, x, -1.0); }) == ErrorCode::ParameterOutOfRange);
  }

  TEST_CASE("certified radius never exceeds the grid radius plus one step") {
    OracleConfig cfg;
    cfg.grid_resolution = 4e-3;
    SplitMix64 rng(77);
    for (int t = 0; t < 10; ++t) {
      const MlpModel m = random_mlp(500 + t, 2, 8, 2, InputBox::uniform(2, 0.0, 1.0), 3.0);
      for (int k = 0; k < 5; ++k) {
        const std::vector<double> x = {rng.uniform(), rng.uniform()};
        const double c = certified_binsearch_oracle(m, x, cfg).radius;
        const double g = exact_grid_oracle(m, x, cfg).radius;
        CHECK(c <= g + cfg.grid_resolution);
      }
    }
  }

  TEST_CASE("grid radius never exceeds a genuine adversarial distance") {
    // Thin adversarial wedge that a point grid at this spacing steps over.
    const MlpModel m = random_mlp(9070, 2, 8, 2, InputBox::uniform(2, 0.0, 1.0), 3.0);
    SplitMix64 rng = SplitMix64::stream(808, 70);
    std::vector<double> x;
    for (int k = 0; k <= 9; ++k) x = {rng.uniform(), rng.uniform()};
    OracleConfig cfg;
    cfg.grid_resolution = 2e-3;
    const OracleResult p = pgd_oracle(m, x, cfg);
    REQUIRE(p.adversarial.has_value());
    const double g = exact_grid_oracle(m, x, cfg).radius;
    CHECK(g <= p.radius);
    CHECK(g >= p.radius - 0.02);

    SplitMix64 pts(31);
    for (int t = 0; t < 30; ++t) {
      const MlpModel r = random_mlp(700 + t, 2, 8, 2, InputBox::uniform(2, 0.0, 1.0), 3.0);
      for (int k = 0; k < 10; ++k) {
        const std::vector<double> y = {pts.uniform(), pts.uniform()};
        CHECK(exact_grid_oracle(r, y, OracleConfig{}).radius <= pgd_oracle(r, y, OracleConfig{}).radius);
      }
    }
  }
}
