#include "pag/eval_harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include <boost/math/special_functions/beta.hpp>
#include <json.hpp>

#include "detail/text.hpp"
#include "pag/errors.hpp"
#include "pag/parallel.hpp"

namespace pag {
namespace {

using nlohmann::json;

// Counts of inserted values strictly below a rank.
class Fenwick {
 public:
  explicit Fenwick(std::size_t n) : tree_(n + 1, 0) {}
  void add(std::size_t rank) {
    for (std::size_t i = rank + 1; i < tree_.size(); i += i & (~i + 1)) ++tree_[i];
  }
  std::uint64_t count_below(std::size_t rank) const {
    std::uint64_t total = 0;
    for (std::size_t i = rank; i > 0; i -= i & (~i + 1)) total += tree_[i];
    return total;
  }

 private:
  std::vector<std::uint64_t> tree_;
};

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::DatasetIo, "cannot write " + path.string());
  return out;
}

// The |g| at which 1 / (1 + exp(-2|g|)) equals kappa.
double margin_at_confidence(double kappa) {
  if (kappa <= 0.5) return 0.0;
  if (kappa >= 1.0) return std::numeric_limits<double>::infinity();
  return 0.5 * std::log(kappa / (1.0 - kappa));
}

}  // namespace

EvalReport evaluate_on_test(const RobustnessMap& map, std::span<const QualityPoint> test_points,
                            const CertificateParams& params) {
  params.validate();
  if (test_points.empty()) throw Error(ErrorCode::EmptyTestSet, "test set is empty");

  EvalReport report;
  report.map_size = map.codomain_size();
  report.test_size = test_points.size();
  report.kappa_max = map.kappa_max();
  report.p_hat_threshold = guarantee_bound(params);
  report.n_c_threshold =
      static_cast<double>(report.test_size) * static_cast<double>(report.map_size) * params.epsilon;

  std::vector<double> candidates;
  for (const QualityPoint& q : test_points) {
    if (q.kappa <= map.kappa_max()) {
      candidates.push_back(q.kappa);
      const auto m = map.lookup(q.kappa);
      if (m && q.rho < *m) ++report.n_c;
    } else {
      ++report.above_kappa_max;
    }
  }
  for (const MapStep& s : map.steps()) candidates.push_back(s.kappa);
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  std::vector<double> rhos(test_points.size());
  std::transform(test_points.begin(), test_points.end(), rhos.begin(), [](const QualityPoint& q) { return q.rho; });
  std::sort(rhos.begin(), rhos.end());
  rhos.erase(std::unique(rhos.begin(), rhos.end()), rhos.end());
  auto rank_of = [&](double rho) {
    return static_cast<std::size_t>(std::lower_bound(rhos.begin(), rhos.end(), rho) - rhos.begin());
  };

  std::vector<QualityPoint> by_kappa(test_points.begin(), test_points.end());
  std::sort(by_kappa.begin(), by_kappa.end(),
            [](const QualityPoint& a, const QualityPoint& b) { return a.kappa > b.kappa; });

  Fenwick inserted(rhos.size());
  std::size_t next = 0;
  std::vector<KappaRow> rows;
  for (auto it = candidates.rbegin(); it != candidates.rend(); ++it) {
    const double kappa = *it;
    const auto m = map.lookup(kappa);
    if (!m) continue;
    while (next < by_kappa.size() && by_kappa[next].kappa >= kappa) inserted.add(rank_of(by_kappa[next++].rho));
    KappaRow row;
    row.kappa = kappa;
    row.den = next;
    row.num = inserted.count_below(rank_of(*m));
    if (row.den == 0) {
      row.p_kappa = std::numeric_limits<double>::quiet_NaN();
      ++report.denominator_zero_rows;
    } else {
      row.p_kappa = static_cast<double>(row.num) / static_cast<double>(row.den);
      if (!report.p_hat_kappa || row.p_kappa > report.p_hat) {
        report.p_hat = row.p_kappa;
        report.p_hat_kappa = kappa;
      }
    }
    rows.push_back(row);
  }
  std::reverse(rows.begin(), rows.end());
  report.per_kappa = std::move(rows);
  report.good_run = report.p_hat <= report.p_hat_threshold &&
                    static_cast<double>(report.n_c) <= report.n_c_threshold;
  return report;
}

std::string eval_report_to_json(const EvalReport& report) {
  json rows = json::array();
  for (const KappaRow& r : report.per_kappa) {
    rows.push_back({{"kappa", r.kappa},
                    {"p_kappa", r.den == 0 ? json(nullptr) : json(r.p_kappa)},
                    {"num", r.num},
                    {"den", r.den}});
  }
  json doc = {
      {"p_hat", report.p_hat},
      {"p_hat_kappa", report.p_hat_kappa ? json(*report.p_hat_kappa) : json(nullptr)},
      {"n_c", report.n_c},
      {"map_size", report.map_size},
      {"test_size", report.test_size},
      {"above_kappa_max", report.above_kappa_max},
      {"kappa_max", report.kappa_max},
      {"denominator_zero_rows", report.denominator_zero_rows},
      {"thresholds", {{"p_hat_max", report.p_hat_threshold}, {"n_c_max", report.n_c_threshold}}},
      {"good_run", report.good_run},
      {"per_kappa", rows},
  };
  return doc.dump(2) + "\n";
}

void write_per_kappa_csv(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out = open_for_write(path);
  out << "kappa,p_kappa,num,den\n";
  for (const KappaRow& r : report.per_kappa) {
    out << detail::format_double(r.kappa) << ',' << (r.den == 0 ? "" : detail::format_double(r.p_kappa)) << ','
        << r.num << ',' << r.den << '\n';
  }
}

void write_scatter_csv(std::span<const QualityPoint> points, const std::filesystem::path& path) {
  std::ofstream out = open_for_write(path);
  out << "rho,kappa\n";
  for (const QualityPoint& q : points) out << detail::format_double(q.rho) << ',' << detail::format_double(q.kappa) << '\n';
}

// ---------------------------------------------------------------------------

double SyntheticWorld::margin(std::span<const double> x) const {
  double g = b;
  for (std::size_t i = 0; i < w.size(); ++i) g += w[i] * x[i];
  return g;
}

QualityPoint SyntheticWorld::quality(std::span<const double> x) const {
  const double g = std::abs(margin(x));
  const double l1 = std::abs(w[0]) + std::abs(w[1]);
  return {std::min(g / l1, oracle_config.radius_cap), 1.0 / (1.0 + std::exp(-2.0 * g))};
}

double SyntheticWorld::abs_margin_cdf(double t) const {
  if (t < 0.0) return 0.0;
  if (std::isinf(t)) return 1.0;
  const double spread = noise_sigma * std::hypot(w[0], w[1]);
  double total = 0.0;
  for (const auto& row : dataset.rows) {
    const double m = margin(row);
    total += normal_cdf((t - m) / spread) - normal_cdf((-t - m) / spread);
  }
  return total / static_cast<double>(dataset.rows.size());
}

double SyntheticWorld::range_probability(const CounterexampleRange& range) const {
  const double l1 = std::abs(w[0]) + std::abs(w[1]);
  const double upper = range.rho > oracle_config.radius_cap ? std::numeric_limits<double>::infinity() : range.rho * l1;
  const double lower = margin_at_confidence(range.kappa);
  if (upper <= lower) return 0.0;
  return std::max(0.0, abs_margin_cdf(upper) - abs_margin_cdf(lower));
}

double SyntheticWorld::confidence_tail(double kappa) const {
  return 1.0 - abs_margin_cdf(margin_at_confidence(kappa));
}

std::vector<double> SyntheticWorld::draw(std::uint64_t seed, std::uint64_t index) const {
  return draw_instance(dataset, model.input_box(), noise_sigma, seed, index);
}

SyntheticWorld synthetic_linear_world(std::uint64_t seed) {
  const std::vector<double> w = {3.0, -2.0};
  const double b = 0.25;

  constexpr std::size_t kPerClass = 256;
  constexpr double kSpread = 0.12;
  const double means[2][2] = {{-0.3, 0.05}, {0.25, -0.05}};
  Dataset dataset;
  dataset.dim = 2;
  for (std::size_t label = 0; label < 2; ++label) {
    for (std::size_t k = 0; k < kPerClass; ++k) {
      SplitMix64 rng = SplitMix64::stream(seed, label * kPerClass + k);
      std::normal_distribution<double> noise(0.0, kSpread);
      const double x0 = means[label][0] + noise(rng);
      const double x1 = means[label][1] + noise(rng);
      dataset.rows.push_back({x0, x1});
      dataset.labels.push_back(static_cast<long>(label));
    }
  }
  assign_dataset_id(dataset);

  AffineLayer layer;
  layer.rows = 2;
  layer.cols = 2;
  layer.weight = {-w[0], -w[1], w[0], w[1]};
  layer.bias = {-b, b};
  layer.activation = Activation::Identity;
  MlpModel model({layer}, InputBox::uniform(2, -10.0, 10.0));
  return SyntheticWorld{std::move(dataset), std::move(model), w, b, 8.0 / 256.0, OracleConfig{}};
}

std::vector<WitnessRange> epsilon_contour_witnesses(const SyntheticWorld& world, double epsilon, std::size_t count) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw Error(ErrorCode::ParameterOutOfRange, "epsilon must lie in (0, 1)");
  const double l1 = std::abs(world.w[0]) + std::abs(world.w[1]);
  const double top = world.oracle_config.radius_cap * l1;
  const double mass_below_top = world.abs_margin_cdf(top);
  std::vector<WitnessRange> out;
  if (count == 0 || mass_below_top < epsilon) return out;

  auto inverse_cdf = [&](double u) {
    double lo = 0.0;
    double hi = top;
    for (int it = 0; it < 80; ++it) {
      const double mid = 0.5 * (lo + hi);
      (world.abs_margin_cdf(mid) < u ? lo : hi) = mid;
    }
    return hi;
  };

  const double span_u = (mass_below_top - epsilon) * (1.0 - 1e-9);
  for (std::size_t j = 0; j < count; ++j) {
    const double u = count == 1 ? 0.0 : span_u * static_cast<double>(j) / static_cast<double>(count - 1);
    const double lower = j == 0 ? 0.0 : inverse_cdf(u);
    const double kappa = std::min(1.0 / (1.0 + std::exp(-2.0 * lower)), std::nextafter(1.0, 0.0));
    // Smallest rho whose range reaches probability epsilon.
    double lo = 0.0;
    double hi = world.oracle_config.radius_cap;
    for (int it = 0; it < 80; ++it) {
      const double mid = 0.5 * (lo + hi);
      (world.range_probability({mid, kappa}) < epsilon ? lo : hi) = mid;
    }
    const WitnessRange wr{{hi, kappa}, world.range_probability({hi, kappa})};
    if (wr.probability >= epsilon) out.push_back(wr);
  }
  return out;
}

// ---------------------------------------------------------------------------

double binomial_upper_bound(std::uint64_t k, std::uint64_t n, double confidence) {
  if (n == 0) throw Error(ErrorCode::ParameterOutOfRange, "binomial bound needs at least one trial");
  if (k > n) throw Error(ErrorCode::ParameterOutOfRange, "more successes than trials");
  if (!(confidence > 0.0 && confidence < 1.0)) throw Error(ErrorCode::ParameterOutOfRange, "confidence in (0, 1)");
  if (k == n) return 1.0;
  return boost::math::ibeta_inv(static_cast<double>(k + 1), static_cast<double>(n - k), confidence);
}

namespace {

MonteCarloResult summarize(std::uint64_t trials, const std::vector<char>& failed, std::uint64_t sample_size) {
  MonteCarloResult r;
  r.trials = trials;
  r.failures = static_cast<std::uint64_t>(std::count(failed.begin(), failed.end(), 1));
  r.failure_rate = static_cast<double>(r.failures) / static_cast<double>(trials);
  r.upper_bound_99 = binomial_upper_bound(r.failures, trials);
  r.sample_size = sample_size;
  return r;
}

}  // namespace

MonteCarloResult monte_carlo_epsnet_check(const SyntheticWorld& world, std::span<const WitnessRange> witnesses,
                                          const CertificateParams& params, std::uint64_t trials,
                                          std::uint64_t seed, std::size_t workers) {
  if (trials == 0) throw Error(ErrorCode::ParameterOutOfRange, "trials must be positive");
  const std::uint64_t s = solve_sample_size(params.epsilon, params.delta, params.vc_dim);
  std::vector<char> failed(trials, 0);
  if (witnesses.empty()) return summarize(trials, failed, s);
  for (const WitnessRange& wr : witnesses) {
    if (wr.probability < params.epsilon) {
      throw Error(ErrorCode::ParameterOutOfRange, "witness range has probability below epsilon");
    }
  }
  parallel_for(trials, workers, [&](std::size_t t) {
    const std::uint64_t trial_seed = SplitMix64::stream(seed, t)();
    std::vector<char> hit(witnesses.size(), 0);
    std::size_t remaining = witnesses.size();
    for (std::uint64_t i = 0; i < s && remaining > 0; ++i) {
      const QualityPoint q = world.quality(world.draw(trial_seed, i));
      for (std::size_t j = 0; j < witnesses.size(); ++j) {
        if (!hit[j] && contains(witnesses[j].range, q)) {
          hit[j] = 1;
          --remaining;
        }
      }
    }
    failed[t] = remaining > 0 ? 1 : 0;
  });
  return summarize(trials, failed, s);
}

Distribution1D uniform_distribution() {
  return {[](SplitMix64& rng) { return rng.uniform(); }, [](double v) { return std::clamp(v, 0.0, 1.0); }, {}};
}

Distribution1D discrete_distribution(std::vector<double> atoms, std::vector<double> masses) {
  if (atoms.empty() || atoms.size() != masses.size()) {
    throw Error(ErrorCode::ParameterOutOfRange, "atoms and masses must be non-empty and of equal length");
  }
  const double total = std::accumulate(masses.begin(), masses.end(), 0.0);
  if (!(total > 0.0) || std::any_of(masses.begin(), masses.end(), [](double m) { return !(m >= 0.0); })) {
    throw Error(ErrorCode::ParameterOutOfRange, "masses must be non-negative with a positive sum");
  }
  for (double& m : masses) m /= total;
  std::discrete_distribution<std::size_t> pick_proto(masses.begin(), masses.end());
  auto draw = [atoms, pick_proto](SplitMix64& rng) mutable { return atoms[pick_proto(rng)]; };
  auto cdf = [atoms, masses](double v) {
    double c = 0.0;
    for (std::size_t k = 0; k < atoms.size(); ++k) {
      if (atoms[k] <= v) c += masses[k];
    }
    return c;
  };
  auto cdf_below = [atoms, masses](double v) {
    double c = 0.0;
    for (std::size_t k = 0; k < atoms.size(); ++k) {
      if (atoms[k] < v) c += masses[k];
    }
    return c;
  };
  return {draw, cdf, cdf_below};
}

MonteCarloResult monte_carlo_quantile_check(const Distribution1D& dist, std::uint64_t s, double p, double delta,
                                            std::uint64_t trials, std::uint64_t seed, std::size_t workers) {
  if (trials == 0) throw Error(ErrorCode::ParameterOutOfRange, "trials must be positive");
  const std::uint64_t i = quantile_index(s, p, delta);
  const auto& below = dist.cdf_below ? dist.cdf_below : dist.cdf;
  std::vector<char> failed(trials, 0);
  parallel_for(trials, workers, [&](std::size_t t) {
    SplitMix64 rng = SplitMix64::stream(seed, t);
    auto draw = dist.draw;
    std::vector<double> values(s);
    for (double& v : values) v = draw(rng);
    const auto nth = values.begin() + static_cast<std::ptrdiff_t>(i - 1);
    std::nth_element(values.begin(), nth, values.end());
    failed[t] = below(*nth) > p ? 1 : 0;
  });
  return summarize(trials, failed, s);
}

}  // namespace pag
