// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 when any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <unistd.h>

#include "cli.hpp"
#include "pag/bounds.hpp"
#include "pag/certifier.hpp"
#include "pag/errors.hpp"
#include "pag/eval_harness.hpp"
#include "pag/external_oracle.hpp"
#include "pag/model.hpp"
#include "pag/oracles.hpp"
#include "pag/quality.hpp"
#include "pag/rng.hpp"
#include "support.hpp"

namespace {

using namespace pag;
using pag::test::linear_model;
using pag::test::random_mlp;
using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream o;
  o.precision(6);
  o << v;
  return o.str();
}

double binomial_se(double p, double n) { return std::sqrt(p * (1.0 - p) / n); }

Verdict sample_size_constants() {
  const std::uint64_t a = solve_sample_size(1e-4, 0.005, 2);
  const std::uint64_t b = solve_sample_size(2.5e-3, 0.005, 2);
  const bool near = std::llabs(static_cast<long long>(a) - 989534) <= 1 &&
                    std::llabs(static_cast<long long>(b) - 31635) <= 1;
  const bool exact = sample_size_satisfied(a, 1e-4, 0.005, 2) && !sample_size_satisfied(a - 1, 1e-4, 0.005, 2) &&
                     sample_size_satisfied(b, 2.5e-3, 0.005, 2) && !sample_size_satisfied(b - 1, 2.5e-3, 0.005, 2);
  return {near && exact, "s = " + std::to_string(a) + ", " + std::to_string(b)};
}

Verdict recurrence_minimality() {
  const double eps[] = {1e-4, 3e-4, 1e-3, 3e-3, 1e-2};
  const double deltas[] = {1e-3, 1e-2, 0.05, 0.1, 0.4};
  const int dims[] = {1, 2, 5};
  std::uint64_t s[5][5][3];
  int bad = 0;
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) {
      for (int k = 0; k < 3; ++k) {
        const std::uint64_t v = solve_sample_size(eps[i], deltas[j], dims[k]);
        s[i][j][k] = v;
        if (!sample_size_satisfied(v, eps[i], deltas[j], dims[k])) ++bad;
        if (v > 1 && sample_size_satisfied(v - 1, eps[i], deltas[j], dims[k])) ++bad;
      }
    }
  }
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) {
      for (int k = 0; k < 3; ++k) {
        if (i > 0 && s[i][j][k] > s[i - 1][j][k]) ++bad;
        if (j > 0 && s[i][j][k] > s[i][j - 1][k]) ++bad;
        if (k > 0 && s[i][j][k] < s[i][j][k - 1]) ++bad;
      }
    }
  }
  return {bad == 0, std::to_string(bad) + " violations over 75 cells"};
}

Verdict quantile_index_property() {
  SplitMix64 rng(2024);
  int checked = 0;
  int bad = 0;
  while (checked < 1000) {
    const auto s = static_cast<std::uint64_t>(std::exp(std::log(20.0) + rng.uniform() * std::log(1e6 / 20.0)));
    const double p = 0.5 + 0.499 * rng.uniform();
    const double delta = std::exp(std::log(1e-4) + rng.uniform() * std::log(0.4 / 1e-4));
    const double bound = quantile_index_bound(s, p, delta);
    if (!(bound > 1.0)) continue;
    const std::uint64_t i = quantile_index(s, p, delta);
    ++checked;
    if (!(static_cast<double>(i) < bound) || static_cast<double>(i + 1) < bound || i > s) ++bad;
  }
  return {bad == 0, std::to_string(bad) + " violations over " + std::to_string(checked) + " triples"};
}

Verdict quantile_law() {
  const std::uint64_t trials = 1000;
  const double delta = 0.01;
  const MonteCarloResult r = monte_carlo_quantile_check(uniform_distribution(), 10000, 0.9, delta, trials, 4, 1);
  const double threshold = delta + 3 * binomial_se(delta, trials);
  return {r.failure_rate <= threshold, "failure rate " + fmt(r.failure_rate) + " <= " + fmt(threshold)};
}

Verdict epsnet_law() {
  const SyntheticWorld world = synthetic_linear_world(5);
  const CertificateParams params{0.02, 0.05, 0.25};
  const auto witnesses = epsilon_contour_witnesses(world, 0.02, 64);
  const std::uint64_t trials = 500;
  const MonteCarloResult r = monte_carlo_epsnet_check(world, witnesses, params, trials, 55, 1);
  const double threshold = 0.05 + 3 * binomial_se(0.05, trials);
  return {r.failure_rate <= threshold, "s = " + std::to_string(r.sample_size) + ", failure rate " +
                                           fmt(r.failure_rate) + " <= " + fmt(threshold)};
}

Verdict map_brute_force() {
  int bad = 0;
  std::uint64_t lookups = 0;
  for (std::uint64_t t = 0; t < 200; ++t) {
    SplitMix64 rng = SplitMix64::stream(606, t);
    const auto n = static_cast<std::size_t>(std::exp(std::log(10.0) + rng.uniform() * std::log(1000.0)));
    const bool coarse = t % 3 == 0;
    std::vector<QualityPoint> pts(n);
    for (auto& q : pts) {
      q.rho = coarse ? static_cast<double>(rng() % 16) / 32.0 : 0.5 * rng.uniform();
      q.kappa = coarse ? 0.5 + static_cast<double>(rng() % 12) / 24.0 : 0.5 + 0.5 * rng.uniform();
    }
    const std::uint64_t idx = 1 + rng() % n;
    const double kappa_max = kappa_order_statistic(pts, idx);
    const RobustnessMap m = build_map(pts, kappa_max);

    std::vector<QualityPoint> by_kappa = pts;
    std::sort(by_kappa.begin(), by_kappa.end(), [](auto& a, auto& b) { return a.kappa < b.kappa; });
    double prev = -1.0;
    for (const QualityPoint& q : by_kappa) {
      if (q.kappa > kappa_max) break;
      double brute = INFINITY;
      for (const QualityPoint& o : pts) {
        if (o.kappa >= q.kappa) brute = std::min(brute, o.rho);
      }
      const auto got = m.lookup(q.kappa);
      ++lookups;
      if (!got || *got != brute) ++bad;
      if (got && *got < prev) ++bad;
      if (got) prev = *got;
      if (got && q.rho < *got) ++bad;
    }
  }
  return {bad == 0, std::to_string(bad) + " mismatches over " + std::to_string(lookups) + " lookups"};
}

Verdict hand_traces() {
  const RobustnessMap a = build_map(std::vector<QualityPoint>{{0.1, 0.3}, {0.2, 0.7}, {0.3, 0.9}}, 0.9);
  const RobustnessMap b = build_map(std::vector<QualityPoint>{{0.1, 0.9}, {0.2, 0.5}, {0.3, 0.95}}, 0.9);
  const bool ok_a = a.steps() == std::vector<MapStep>{{0.3, 0.1}, {0.7, 0.2}, {0.9, 0.3}} && a.codomain_size() == 3;
  const bool ok_b = b.steps() == std::vector<MapStep>{{0.9, 0.1}} && b.codomain_size() == 1;
  return {ok_a && ok_b, "|M| = " + std::to_string(a.codomain_size()) + ", " + std::to_string(b.codomain_size())};
}

Verdict oracle_ordering() {
  const OracleConfig cfg;
  int low_violations = 0;
  int high_violations = 0;
  const InputBox box = InputBox::uniform(2, 0.0, 1.0);
  for (std::uint64_t t = 0; t < 100; ++t) {
    const MlpModel m = random_mlp(9000 + t, 2, 8, 2, box, 3.0);
    SplitMix64 rng = SplitMix64::stream(808, t);
    for (int k = 0; k < 20; ++k) {
      const std::vector<double> x = {rng.uniform(), rng.uniform()};
      const double c = certified_binsearch_oracle(m, x, cfg).radius;
      const double g = exact_grid_oracle(m, x, cfg).radius;
      const double p = pgd_oracle(m, x, cfg).radius;
      if (c > g + cfg.grid_resolution) ++low_violations;
      if (g > p) ++high_violations;
    }
  }
  return {low_violations + high_violations == 0,
          std::to_string(low_violations) + " certified>grid+h, " + std::to_string(high_violations) +
              " grid>pgd over 2000 points (h = " + fmt(cfg.grid_resolution) + ")"};
}

Verdict analytic_vs_grid() {
  OracleConfig cfg;
  cfg.grid_resolution = 1e-3;
  SplitMix64 rng(909);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const std::vector<double> w = {2 * rng.uniform() - 1, 2 * rng.uniform() - 1};
    const MlpModel m = linear_model(w, rng.uniform() - 0.5, InputBox::uniform(2, -1.0, 2.0));
    const std::vector<double> x = {rng.uniform(), rng.uniform()};
    const double exact = std::min(analytic_model_oracle(m, x).radius, cfg.radius_cap);
    worst = std::max(worst, std::abs(exact_grid_oracle(m, x, cfg).radius - exact));
  }
  return {worst <= 2e-3, "max |grid - analytic| = " + fmt(worst)};
}

Verdict end_to_end() {
  const SyntheticWorld world = synthetic_linear_world(10);
  const CertificateParams params{1e-3, 0.05, 0.1};
  const std::uint64_t s = solve_sample_size(1e-3, 0.025, 2);
  const double target = params.epsilon / params.p_min;
  const int reps = 100;
  const std::uint64_t test_size = 100000;
  int violated = 0;
  double worst = 0.0;
  for (int r = 0; r < reps; ++r) {
    QualitySample sample;
    sample.points.resize(s);
    for (std::uint64_t i = 0; i < s; ++i) sample.points[i] = world.quality(world.draw(1000 + r, i));
    const double kappa_max = compute_kappa_max(sample, params);
    const RobustnessMap m = build_map(sample.points, kappa_max);
    std::vector<QualityPoint> test(test_size);
    for (std::uint64_t i = 0; i < test_size; ++i) test[i] = world.quality(world.draw(50000 + r, i));
    const EvalReport report = evaluate_on_test(m, test, params);
    double excess = -1.0;
    for (const KappaRow& row : report.per_kappa) {
      if (row.den == 0) continue;
      const double lower = row.p_kappa - 3 * binomial_se(row.p_kappa, static_cast<double>(row.den));
      excess = std::max(excess, lower - target);
    }
    worst = std::max(worst, excess + target);
    if (excess > 0.0) ++violated;
  }
  const double rate = static_cast<double>(violated) / reps;
  const double threshold = 0.05 + 3 * binomial_se(0.05, reps);
  return {rate <= threshold, "s = " + std::to_string(s) + ", " + std::to_string(violated) + "/100 runs violated (" +
                                 fmt(rate) + " <= " + fmt(threshold) + "), worst lower estimate " + fmt(worst)};
}

Verdict good_run_bookkeeping() {
  const RobustnessMap m({{0.6, 0.05}, {0.7, 0.1}, {0.8, 0.2}, {0.9, 0.3}}, 0.9);
  SplitMix64 rng(1111);
  std::vector<QualityPoint> test(100);
  for (auto& q : test) {
    q.rho = static_cast<double>(rng() % 40) / 100.0;
    q.kappa = 0.5 + static_cast<double>(rng() % 50) / 100.0;
  }
  const CertificateParams params{0.02, 0.05, 0.2};
  const EvalReport r = evaluate_on_test(m, test, params);

  std::vector<double> kappas;
  for (const auto& q : test) {
    if (q.kappa <= 0.9) kappas.push_back(q.kappa);
  }
  for (const auto& st : m.steps()) kappas.push_back(st.kappa);
  std::sort(kappas.begin(), kappas.end());
  kappas.erase(std::unique(kappas.begin(), kappas.end()), kappas.end());

  int bad = kappas.size() == r.per_kappa.size() ? 0 : 1;
  double p_hat = 0.0;
  for (std::size_t k = 0; k < kappas.size() && bad == 0; ++k) {
    const double bound = *m.lookup(kappas[k]);
    std::uint64_t num = 0;
    std::uint64_t den = 0;
    for (const auto& q : test) {
      if (q.kappa >= kappas[k]) {
        ++den;
        if (q.rho < bound) ++num;
      }
    }
    const KappaRow& row = r.per_kappa[k];
    if (row.kappa != kappas[k] || row.num != num || row.den != den) ++bad;
    if (den > 0) {
      const double p = static_cast<double>(num) / static_cast<double>(den);
      if (row.p_kappa != p) ++bad;
      p_hat = std::max(p_hat, p);
    } else if (!std::isnan(row.p_kappa)) {
      ++bad;
    }
  }
  std::uint64_t n_c = 0;
  for (const auto& q : test) {
    if (q.kappa <= 0.9 && q.rho < *m.lookup(q.kappa)) ++n_c;
  }
  if (r.p_hat != p_hat || r.n_c != n_c) ++bad;
  const bool good = p_hat <= params.epsilon / params.p_min && static_cast<double>(n_c) <= 100.0 * 4 * params.epsilon;
  if (r.good_run != good) ++bad;
  return {bad == 0, "p_hat " + fmt(r.p_hat) + ", n_c " + std::to_string(r.n_c) + ", good_run " +
                        (r.good_run ? "true" : "false") + ", " + std::to_string(bad) + " mismatches"};
}

Verdict shift_arithmetic() {
  int bad = 0;
  int cases = 0;
  const double eps[] = {1e-4, 1e-3, 2.5e-3, 0.01};
  const double pmins[] = {0.01, 0.05, 0.2, 0.4, 0.45};
  for (double e : eps) {
    for (double pm : pmins) {
      const double lambda = pm * 0.37;
      const CertificateParams params{e, 0.01, pm};
      const double expected = (e + lambda) / (pm - lambda);
      if (std::abs(shift_adjusted_bound(params, lambda) - expected) > 1e-15 * expected) ++bad;
      if (shift_adjusted_bound(params, 0.0) != guarantee_bound(params)) ++bad;
      if (guarantee_bound(params) != e / pm) ++bad;
      try {
        shift_adjusted_bound(params, pm);
        ++bad;
      } catch (const Error& err) {
        if (err.code() != ErrorCode::ShiftTooLarge) ++bad;
      }
      ++cases;
    }
  }
  return {bad == 0, std::to_string(cases) + " cases, " + std::to_string(bad) + " mismatches"};
}

Verdict external_protocol() {
  ExternalOracleOptions opt;
  opt.command = std::string(PAG_ECHO_ORACLE) + " --shuffle 32 --seed 9";
  opt.timeout_ms = 10000;
  ExternalOracleClient client(opt);
  SplitMix64 rng(1313);
  std::vector<std::vector<double>> xs(10000);
  for (auto& x : xs) x = {2 * rng.uniform() - 1, 4 * rng.uniform() - 2};
  const auto out = client.query_batch(xs);
  int mismatches = 0;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    if (out[k].oracle.radius != std::abs(xs[k][0])) ++mismatches;
    if (std::abs(out[k].kappa - 1.0 / (1.0 + std::exp(-std::abs(xs[k][1])))) > 1e-15) ++mismatches;
  }
  auto failure_code = [&](const std::string& flags) {
    ExternalOracleOptions o;
    o.command = std::string(PAG_ECHO_ORACLE) + " " + flags;
    o.timeout_ms = 10000;
    try {
      ExternalOracleClient c(o);
      c.query_batch(std::vector<std::vector<double>>(100, std::vector<double>{0.1, 0.2}));
    } catch (const ExternalOracleError& e) {
      return std::string(to_string(e.code()));
    }
    return std::string("none");
  };
  const std::string malformed = failure_code("--malformed-at 40");
  const std::string crash = failure_code("--crash-at 40");
  const bool ok = mismatches == 0 && malformed == "protocol-violation" && crash == "tool-crash";
  return {ok, std::to_string(mismatches) + " mismatches over 10000 shuffled requests; malformed -> " + malformed +
                  ", crash -> " + crash};
}

Verdict determinism() {
  const auto dir = std::filesystem::temp_directory_path() / ("pag_acceptance_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  std::ostringstream sink;
  auto run = [&](std::vector<std::string> args) { return cli::run(args, sink, sink); };
  int status = run({"synth-world", "--seed", "14", "--out-dir", dir.string(), "--test-size", "10"});
  auto certify = [&](const std::string& name, int workers) {
    return run({"certify", "--epsilon", "1e-3", "--delta", "0.05", "--p-min", "0.1", "--dataset",
                (dir / "dataset.csv").string(), "--model", (dir / "model.json").string(), "--oracle",
                "ibp-binsearch", "--seed", "21", "--out", (dir / name).string(), "--workers",
                std::to_string(workers)});
  };
  status |= certify("w1.json", 1);
  status |= certify("w8.json", 8);
  bool same = false;
  std::string detail = "certify exited nonzero";
  if (status == 0) {
    auto slurp = [](const std::filesystem::path& p) {
      std::ifstream in(p, std::ios::binary);
      std::ostringstream b;
      b << in.rdbuf();
      return b.str();
    };
    auto strip = [&](const std::filesystem::path& p) {
      auto doc = nlohmann::json::parse(slurp(p));
      doc["provenance"].erase("created_utc");
      return doc.dump();
    };
    const bool samples = slurp(dir / "w1.json.sample.csv") == slurp(dir / "w8.json.sample.csv");
    const bool certs = strip(dir / "w1.json") == strip(dir / "w8.json");
    same = samples && certs;
    detail = std::string("samples ") + (samples ? "identical" : "differ") + ", certificates " +
             (certs ? "identical" : "differ");
  }
  std::error_code ec;
  std::filesystem::remove_all(dir, ec);
  return {same, detail};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    std::function<Verdict()> run;
  };
  const Criterion criteria[] = {
      {1, "sample-size constants", sample_size_constants},
      {2, "recurrence minimality and monotonicity", recurrence_minimality},
      {3, "quantile index strict inequality", quantile_index_property},
      {4, "quantile law Monte Carlo", quantile_law},
      {5, "epsilon-net law Monte Carlo", epsnet_law},
      {6, "map equals brute-force minimum", map_brute_force},
      {7, "map construction hand traces", hand_traces},
      {8, "oracle soundness ordering", oracle_ordering},
      {9, "analytic vs grid oracle", analytic_vs_grid},
      {10, "end-to-end guarantee on the synthetic world", end_to_end},
      {11, "good-run bookkeeping", good_run_bookkeeping},
      {12, "shift arithmetic", shift_arithmetic},
      {13, "external oracle protocol", external_protocol},
      {14, "determinism across worker counts", determinism},
  };
  int failed = 0;
  for (const Criterion& c : criteria) {
    const auto start = Clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - start).count();
    if (!v.pass) ++failed;
    std::printf("%s criterion %d: %s (%s) [%.2fs]\n", v.pass ? "PASS" : "FAIL", c.id, c.name, v.detail.c_str(),
                secs);
    std::fflush(stdout);
  }
  std::printf("%d of 14 criteria passed\n", 14 - failed);
  return failed == 0 ? 0 : 1;
}
