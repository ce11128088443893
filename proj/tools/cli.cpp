#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "pag/bounds.hpp"
#include "pag/certifier.hpp"
#include "pag/errors.hpp"
#include "pag/eval_harness.hpp"
#include "pag/external_oracle.hpp"
#include "pag/model.hpp"
#include "pag/quality.hpp"
#include "pag/rng.hpp"

namespace pag::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr std::uint64_t kTestStream = 0x7465737400000001ULL;
constexpr std::uint64_t kTrialStream = 0x747269616c000001ULL;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::OracleFailure:
    case ErrorCode::ProtocolViolation:
    case ErrorCode::ToolCrash:
    case ErrorCode::Timeout:
    case ErrorCode::NonConvergence:
      return kOracleFailure;
    default:
      return kUsageError;
  }
}

struct ParamFlags {
  double epsilon = 0.0;
  double delta = 0.0;
  double p_min = 0.0;

  CertificateParams params() const {
    CertificateParams p{epsilon, delta, p_min, 2};
    p.validate();
    return p;
  }
};

void add_param_flags(CLI::App* cmd, ParamFlags& f) {
  cmd->add_option("--epsilon", f.epsilon, "Range probability threshold epsilon")->required();
  cmd->add_option("--delta", f.delta, "Failure probability delta")->required();
  cmd->add_option("--p-min", f.p_min, "Minimum confidence-tail mass p_min")->required();
}

struct OracleFlags {
  std::string model_path;
  std::string oracle_cmd;
  std::string oracle = "ibp-binsearch";
  std::string oracle_kind;
  std::string preset;
  std::optional<double> radius_cap;
  std::optional<double> pgd_step;
  std::optional<std::size_t> pgd_steps;
  std::optional<int> binsearch_bits;
  std::optional<double> grid_resolution;
  int timeout_ms = 30000;
  double box_lo = 0.0;
  double box_hi = 1.0;
};

void add_oracle_flags(CLI::App* cmd, OracleFlags& f) {
  cmd->add_option("--model", f.model_path, "Model JSON file");
  cmd->add_option("--oracle-cmd", f.oracle_cmd, "External oracle command line (default: $PAG_ORACLE_CMD)");
  cmd->add_option("--oracle", f.oracle, "Built-in oracle: exact-grid, analytic, pgd, ibp-binsearch")
      ->check(CLI::IsMember({"exact-grid", "analytic", "pgd", "ibp-binsearch"}));
  cmd->add_option("--oracle-kind", f.oracle_kind,
                  "Kind reported by the external oracle: exact, certified_lower, adversarial_upper")
      ->check(CLI::IsMember({"exact", "certified_lower", "adversarial_upper"}));
  cmd->add_option("--preset", f.preset, "Oracle preset: mnist, cifar")->check(CLI::IsMember({"mnist", "cifar"}));
  cmd->add_option("--radius-cap", f.radius_cap, "Largest radius an oracle reports");
  cmd->add_option("--pgd-step", f.pgd_step, "PGD step size");
  cmd->add_option("--pgd-steps", f.pgd_steps, "PGD iteration budget");
  cmd->add_option("--binsearch-bits", f.binsearch_bits, "Halvings of the certified radius search");
  cmd->add_option("--grid-resolution", f.grid_resolution, "Grid oracle spacing");
  cmd->add_option("--timeout-ms", f.timeout_ms, "Per-request external oracle timeout");
  cmd->add_option("--box-lo", f.box_lo, "Lower input bound for external oracles");
  cmd->add_option("--box-hi", f.box_hi, "Upper input bound for external oracles");
}

OracleConfig oracle_config(const OracleFlags& f) {
  OracleConfig cfg = f.preset == "mnist" ? OracleConfig::mnist_like()
                     : f.preset == "cifar" ? OracleConfig::cifar_like()
                                           : OracleConfig{};
  if (f.radius_cap) cfg.radius_cap = *f.radius_cap;
  if (f.pgd_step) cfg.pgd_step = *f.pgd_step;
  if (f.pgd_steps) cfg.pgd_max_steps = *f.pgd_steps;
  if (f.binsearch_bits) cfg.binsearch_bits = *f.binsearch_bits;
  if (f.grid_resolution) cfg.grid_resolution = *f.grid_resolution;
  cfg.validate();
  return cfg;
}

struct ProviderSetup {
  std::unique_ptr<QualityProvider> provider;
  InputBox box;
};

ProviderSetup make_provider(OracleFlags f, std::size_t dim, std::size_t workers) {
  if (f.oracle_cmd.empty() && f.model_path.empty()) {
    if (const char* env = std::getenv("PAG_ORACLE_CMD"); env != nullptr) f.oracle_cmd = env;
  }
  if (!f.model_path.empty() && !f.oracle_cmd.empty()) {
    throw Error(ErrorCode::ParameterOutOfRange, "give either --model or an external oracle command, not both");
  }
  if (!f.model_path.empty()) {
    MlpModel model = load_model(f.model_path);
    InputBox box = model.input_box();
    auto provider =
        std::make_unique<ModelQualityProvider>(std::move(model), parse_oracle_choice(f.oracle), oracle_config(f), workers);
    return {std::move(provider), std::move(box)};
  }
  if (f.oracle_cmd.empty()) {
    throw Error(ErrorCode::ParameterOutOfRange, "no model: pass --model, --oracle-cmd or set PAG_ORACLE_CMD");
  }
  if (f.oracle_kind.empty()) {
    throw Error(ErrorCode::ParameterOutOfRange, "external oracles need --oracle-kind");
  }
  if (!(f.box_lo < f.box_hi)) throw Error(ErrorCode::ParameterOutOfRange, "--box-lo must be below --box-hi");
  ExternalOracleOptions options;
  options.command = f.oracle_cmd;
  options.timeout_ms = f.timeout_ms;
  options.declared_kind = parse_oracle_kind(f.oracle_kind);
  return {std::make_unique<ExternalQualityProvider>(options, workers), InputBox::uniform(dim, f.box_lo, f.box_hi)};
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

// ---------------------------------------------------------------------------

struct SampleSizeCmd {
  double epsilon = 0.0;
  double delta = 0.0;
  int d = 2;

  int run(std::ostream& out) const {
    const std::uint64_t s = solve_sample_size(epsilon, delta, d);
    out << s << '\n';
    out << "residual_at_s " << fmt(static_cast<double>(s) - sample_size_rhs(s, epsilon, delta, d)) << '\n';
    if (s > 1) {
      out << "residual_at_s_minus_1 " << fmt(static_cast<double>(s - 1) - sample_size_rhs(s - 1, epsilon, delta, d))
          << '\n';
    }
    return kOk;
  }
};

struct QuantileIndexCmd {
  std::uint64_t s = 0;
  double p = 0.0;
  double delta = 0.0;

  int run(std::ostream& out) const {
    const std::uint64_t i = quantile_index(s, p, delta);
    out << i << '\n';
    out << "bound " << fmt(quantile_index_bound(s, p, delta)) << '\n';
    return kOk;
  }
};

struct CertifyCmd {
  ParamFlags param_flags;
  OracleFlags oracle_flags;
  std::string dataset_path;
  std::string out_path;
  std::string sample_path;
  std::optional<std::uint64_t> seed;
  std::size_t workers = 0;
  std::optional<std::uint64_t> sample_size;
  double noise_sigma = 8.0 / 256.0;
  std::size_t batch = 4096;
  std::optional<double> rho_quantum;
  std::optional<double> shift_lambda;

  int run(std::ostream& out, std::ostream& err) const {
    const CertificateParams params = param_flags.params();
    const std::uint64_t required = solve_sample_size(params.epsilon, params.delta / 2.0, 2);
    const std::uint64_t s = sample_size.value_or(required);
    const std::uint64_t index = kappa_max_index(s, params);
    if (s < required) {
      throw Error(ErrorCode::InconsistentParams, "sample size " + std::to_string(s) + " is below the required " +
                                                     std::to_string(required));
    }
    if (shift_lambda) shift_adjusted_bound(params, *shift_lambda);

    Dataset dataset = load_dataset_csv(dataset_path);
    ProviderSetup setup = make_provider(oracle_flags, dataset.dim, workers);
    const fs::path sample_csv = sample_path.empty() ? fs::path(out_path + ".sample.csv") : fs::path(sample_path);

    err << "sampling " << s << " draws (kappa index " << index << ")\n";
    SamplingOptions options;
    options.sample_size = s;
    options.noise_sigma = noise_sigma;
    options.seed = *seed;
    options.batch = batch;
    const QualitySample sample = build_quality_sample(dataset, *setup.provider, setup.box, options, sample_csv, params);

    const double kappa_max = compute_kappa_max(sample, params);
    const RobustnessMap map = build_map(sample.points, kappa_max, rho_quantum);
    const PagCertificate cert =
        emit_certificate(sample, params, map, setup.provider->kind(), {shift_lambda, rho_quantum, utc_timestamp()});
    save_certificate(cert, out_path);

    out << "map_size " << cert.map.codomain_size() << '\n';
    out << "kappa_max " << fmt(cert.kappa_max) << '\n';
    out << "bound " << fmt(cert.bound) << '\n';
    out << "union_bound " << fmt(cert.union_bound) << '\n';
    out << "sample_size " << cert.sample_size << '\n';
    if (cert.shift) out << "shift_adjusted_bound " << fmt(cert.shift->bound) << '\n';
    if (cert.oracle_relative) err << "note: attack-based oracle; the guarantee is relative to that oracle\n";
    return kOk;
  }
};

struct EvaluateCmd {
  OracleFlags oracle_flags;
  std::string certificate_path;
  std::string test_path;
  std::string test_quality_path;
  std::string out_path;
  std::string per_kappa_path;
  std::string scatter_path;
  std::size_t workers = 0;
  bool allow_hash_mismatch = false;

  int run(std::ostream& out, std::ostream& err) const {
    const PagCertificate cert = load_certificate(certificate_path);
    std::vector<QualityPoint> points;
    if (!test_quality_path.empty()) {
      points = read_quality_sample(test_quality_path).points;
    } else {
      if (test_path.empty()) throw Error(ErrorCode::ParameterOutOfRange, "pass --test or --test-quality");
      const Dataset test = load_dataset_csv(test_path);
      if (test.rows.empty()) throw Error(ErrorCode::EmptyTestSet, test_path + " has no rows");
      ProviderSetup setup = make_provider(oracle_flags, test.dim, workers);
      const bool hash_ok = setup.provider->model_hash() == cert.provenance.model_hash;
      const bool kind_ok = setup.provider->kind() == cert.oracle_kind;
      if (!hash_ok || !kind_ok) {
        const std::string what = !hash_ok ? "model hash " + setup.provider->model_hash() +
                                                " does not match the certificate's " + cert.provenance.model_hash
                                          : "oracle kind does not match the certificate's";
        if (!allow_hash_mismatch) throw Error(ErrorCode::HashMismatch, what);
        err << "WARNING: " << what << "; continuing because --allow-hash-mismatch was given\n";
      }
      std::vector<std::vector<double>> inputs = test.rows;
      for (auto& row : inputs) setup.box.clamp(row);
      const auto evals = setup.provider->evaluate(inputs);
      points.reserve(evals.size());
      for (const auto& e : evals) points.push_back({e.oracle.radius, e.kappa});
    }

    const EvalReport report = evaluate_on_test(cert.map, points, cert.params);
    const std::string& stem = out_path;
    if (!out_path.empty()) {
      std::ofstream f(out_path, std::ios::binary | std::ios::trunc);
      if (!f) throw Error(ErrorCode::DatasetIo, "cannot write " + out_path);
      f << eval_report_to_json(report);
    }
    const std::string per_kappa = !per_kappa_path.empty() ? per_kappa_path : stem.empty() ? "" : stem + ".per_kappa.csv";
    const std::string scatter = !scatter_path.empty() ? scatter_path : stem.empty() ? "" : stem + ".scatter.csv";
    if (!per_kappa.empty()) write_per_kappa_csv(report, per_kappa);
    if (!scatter.empty()) write_scatter_csv(points, scatter);

    out << "p_hat " << fmt(report.p_hat) << '\n';
    out << "n_c " << report.n_c << '\n';
    out << "map_size " << report.map_size << '\n';
    out << "test_size " << report.test_size << '\n';
    out << "threshold_p_hat " << fmt(report.p_hat_threshold) << '\n';
    out << "threshold_n_c " << fmt(report.n_c_threshold) << '\n';
    out << "good_run " << (report.good_run ? "true" : "false") << '\n';
    return report.good_run ? kOk : kNegativeResult;
  }
};

struct CheckCmd {
  ParamFlags param_flags;
  std::string sample_path;
  double rho = 0.0;
  double kappa = 0.0;

  int run(std::ostream& out) const {
    const QualitySample sample = read_quality_sample(sample_path);
    const CertifyOutcome r = certify(sample, param_flags.params(), rho, kappa);
    out << to_string(r.status) << '\n';
    out << "kappa_max " << fmt(r.kappa_max) << '\n';
    if (r.status == CertifyOutcome::Status::Certified) {
      out << "bound " << fmt(r.bound) << '\n';
      out << "confidence " << fmt(r.confidence_level) << '\n';
    } else if (r.witness) {
      out << "witness " << fmt(r.witness->rho) << ' ' << fmt(r.witness->kappa) << '\n';
    }
    return r.status == CertifyOutcome::Status::Certified ? kOk : kNegativeResult;
  }
};

struct MonteCarloCmd {
  std::string law;
  std::uint64_t trials = 0;
  std::optional<std::uint64_t> seed;
  std::size_t workers = 0;
  std::uint64_t s = 0;
  double p = 0.0;
  double delta = 0.0;
  double epsilon = 0.0;
  std::size_t witnesses = 64;

  int run(std::ostream& out, std::ostream& err) const {
    if (trials == 0) throw Error(ErrorCode::ParameterOutOfRange, "--trials must be positive");
    MonteCarloResult r;
    double nominal = delta;
    if (law == "quantile") {
      r = monte_carlo_quantile_check(uniform_distribution(), s, p, delta, trials, *seed, workers);
    } else {
      const CertificateParams params{epsilon, delta, 0.25, 2};
      params.validate();
      const SyntheticWorld world = synthetic_linear_world(*seed);
      const auto family = epsilon_contour_witnesses(world, epsilon, witnesses);
      err << "witness ranges: " << family.size() << '\n';
      r = monte_carlo_epsnet_check(world, family, params, trials, SplitMix64::stream(*seed, kTrialStream)(), workers);
    }
    const double slack = 3.0 * std::sqrt(nominal * (1.0 - nominal) / static_cast<double>(trials));
    out << "law " << law << '\n';
    out << "sample_size " << r.sample_size << '\n';
    out << "trials " << r.trials << '\n';
    out << "failures " << r.failures << '\n';
    out << "failure_rate " << fmt(r.failure_rate) << '\n';
    out << "upper_bound_99 " << fmt(r.upper_bound_99) << '\n';
    out << "threshold " << fmt(nominal + slack) << '\n';
    return r.failure_rate <= nominal + slack ? kOk : kNegativeResult;
  }
};

struct SynthWorldCmd {
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::uint64_t test_size = 10000;

  int run(std::ostream& out) const {
    const SyntheticWorld world = synthetic_linear_world(*seed);
    const fs::path dir(out_dir);
    fs::create_directories(dir);
    save_dataset_csv(world.dataset, dir / "dataset.csv");
    save_model(world.model, dir / "model.json");

    Dataset test;
    test.dim = world.dataset.dim;
    const std::uint64_t test_seed = SplitMix64::stream(*seed, kTestStream)();
    for (std::uint64_t i = 0; i < test_size; ++i) test.rows.push_back(world.draw(test_seed, i));
    assign_dataset_id(test);
    save_dataset_csv(test, dir / "test.csv");

    const json doc = {{"seed", *seed},
                      {"w", world.w},
                      {"b", world.b},
                      {"noise_sigma", world.noise_sigma},
                      {"dataset_id", world.dataset.id},
                      {"model_hash", world.model.hash()},
                      {"test_size", test_size}};
    std::ofstream f(dir / "world.json", std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorCode::DatasetIo, "cannot write " + (dir / "world.json").string());
    f << doc.dump(2) << '\n';
    out << "dataset " << (dir / "dataset.csv").string() << '\n';
    out << "model " << (dir / "model.json").string() << '\n';
    out << "test " << (dir / "test.csv").string() << '\n';
    out << "noise_sigma " << fmt(world.noise_sigma) << '\n';
    return kOk;
  }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"PAG robustness certification toolkit", "pag"};
  app.require_subcommand(1);

  SampleSizeCmd sample_size_cmd;
  auto* ss = app.add_subcommand("sample-size", "Smallest epsilon-net sample size");
  ss->add_option("--epsilon", sample_size_cmd.epsilon)->required();
  ss->add_option("--delta", sample_size_cmd.delta)->required();
  ss->add_option("--d", sample_size_cmd.d, "VC dimension");

  QuantileIndexCmd quantile_cmd;
  auto* qi = app.add_subcommand("quantile-index", "Order-statistic index of the quantile bound");
  qi->add_option("--s", quantile_cmd.s)->required();
  qi->add_option("--p", quantile_cmd.p)->required();
  qi->add_option("--delta", quantile_cmd.delta)->required();

  CertifyCmd certify_cmd;
  auto* ce = app.add_subcommand("certify", "Sample, build the map and emit a certificate");
  add_param_flags(ce, certify_cmd.param_flags);
  add_oracle_flags(ce, certify_cmd.oracle_flags);
  ce->add_option("--dataset", certify_cmd.dataset_path, "Dataset CSV the draws are based on")->required();
  ce->add_option("--out", certify_cmd.out_path, "Certificate JSON path")->required();
  ce->add_option("--sample", certify_cmd.sample_path, "Quality sample CSV (default: <out>.sample.csv)");
  ce->add_option("--seed", certify_cmd.seed, "Random seed")->required();
  ce->add_option("--workers", certify_cmd.workers, "Worker threads (0 = all cores)");
  ce->add_option("--sample-size", certify_cmd.sample_size, "Override the sample size");
  ce->add_option("--noise-sigma", certify_cmd.noise_sigma, "Gaussian noise added to each draw");
  ce->add_option("--batch", certify_cmd.batch, "Draws evaluated per batch")->check(CLI::PositiveNumber);
  ce->add_option("--rho-quantum", certify_cmd.rho_quantum, "Round radii down to multiples of this");
  ce->add_option("--shift-lambda", certify_cmd.shift_lambda, "Total-variation distance to the deployment distribution");

  EvaluateCmd evaluate_cmd;
  auto* ev = app.add_subcommand("evaluate", "Evaluate a certificate on a test set");
  add_oracle_flags(ev, evaluate_cmd.oracle_flags);
  ev->add_option("--certificate", evaluate_cmd.certificate_path)->required();
  ev->add_option("--test", evaluate_cmd.test_path, "Test dataset CSV");
  ev->add_option("--test-quality", evaluate_cmd.test_quality_path, "Precomputed test quality CSV (index,rho,kappa)");
  ev->add_option("--out", evaluate_cmd.out_path, "Report JSON path; CSVs default next to it");
  ev->add_option("--per-kappa", evaluate_cmd.per_kappa_path, "Per-kappa CSV path");
  ev->add_option("--scatter", evaluate_cmd.scatter_path, "Scatter CSV path");
  ev->add_option("--workers", evaluate_cmd.workers, "Worker threads (0 = all cores)");
  ev->add_flag("--allow-hash-mismatch", evaluate_cmd.allow_hash_mismatch, "Evaluate despite a model mismatch");

  CheckCmd check_cmd;
  auto* ck = app.add_subcommand("check", "Check one (rho, kappa) pair against a quality sample");
  add_param_flags(ck, check_cmd.param_flags);
  ck->add_option("--sample", check_cmd.sample_path)->required();
  ck->add_option("--rho", check_cmd.rho)->required();
  ck->add_option("--kappa", check_cmd.kappa)->required();

  MonteCarloCmd mc_cmd;
  auto* mc = app.add_subcommand("montecarlo", "Monte-Carlo check of the epsilon-net or quantile law");
  mc->add_option("--law", mc_cmd.law)->required()->check(CLI::IsMember({"epsnet", "quantile"}));
  mc->add_option("--trials", mc_cmd.trials)->required();
  mc->add_option("--seed", mc_cmd.seed)->required();
  mc->add_option("--workers", mc_cmd.workers);
  mc->add_option("--s", mc_cmd.s, "Sample size (quantile law)");
  mc->add_option("--p", mc_cmd.p, "Quantile level (quantile law)");
  mc->add_option("--delta", mc_cmd.delta)->required();
  mc->add_option("--epsilon", mc_cmd.epsilon, "Range probability (epsnet law)");
  mc->add_option("--witnesses", mc_cmd.witnesses, "Witness ranges (epsnet law)");

  SynthWorldCmd synth_cmd;
  auto* sw = app.add_subcommand("synth-world", "Write the synthetic linear world");
  sw->add_option("--seed", synth_cmd.seed)->required();
  sw->add_option("--out-dir", synth_cmd.out_dir)->required();
  sw->add_option("--test-size", synth_cmd.test_size, "Fresh draws written to test.csv");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    if (ss->parsed()) return sample_size_cmd.run(out);
    if (qi->parsed()) return quantile_cmd.run(out);
    if (ce->parsed()) return certify_cmd.run(out, err);
    if (ev->parsed()) return evaluate_cmd.run(out, err);
    if (ck->parsed()) return check_cmd.run(out);
    if (mc->parsed()) return mc_cmd.run(out, err);
    if (sw->parsed()) return synth_cmd.run(out);
  } catch (const IndexedError& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kOracleFailure;
  }
  return kUsageError;
}

}  // namespace pag::cli
