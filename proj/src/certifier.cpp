#include "pag/certifier.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "pag/errors.hpp"

namespace pag {
namespace {

using nlohmann::json;

constexpr int kQualityVcDim = 2;

}  // namespace

RobustnessMap::RobustnessMap(std::vector<MapStep> steps, double kappa_max)
    : steps_(std::move(steps)), kappa_max_(kappa_max) {
  for (std::size_t k = 0; k < steps_.size(); ++k) {
    const MapStep& s = steps_[k];
    if (!std::isfinite(s.kappa) || !std::isfinite(s.rho)) {
      throw Error(ErrorCode::ParameterOutOfRange, "map step " + std::to_string(k) + " is not finite");
    }
    if (s.kappa > kappa_max_) {
      throw Error(ErrorCode::ParameterOutOfRange, "map step " + std::to_string(k) + " exceeds kappa_max");
    }
    if (k > 0 && !(s.kappa > steps_[k - 1].kappa && s.rho > steps_[k - 1].rho)) {
      throw Error(ErrorCode::ParameterOutOfRange,
                  "map steps must increase strictly in kappa and rho (step " + std::to_string(k) + ")");
    }
  }
}

std::optional<double> RobustnessMap::lookup(double kappa, LookupRule rule) const {
  if (!(kappa <= kappa_max_)) return std::nullopt;
  if (rule == LookupRule::MinOverHigherConfidence) {
    const auto it = std::lower_bound(steps_.begin(), steps_.end(), kappa,
                                     [](const MapStep& s, double k) { return s.kappa < k; });
    if (it == steps_.end()) return std::nullopt;
    return it->rho;
  }
  const auto it = std::upper_bound(steps_.begin(), steps_.end(), kappa,
                                   [](double k, const MapStep& s) { return k < s.kappa; });
  if (it == steps_.begin()) return std::nullopt;
  return std::prev(it)->rho;
}

double kappa_order_statistic(std::span<const QualityPoint> points, std::uint64_t i) {
  if (i == 0 || i > points.size()) {
    throw Error(ErrorCode::NoValidIndex, "order statistic " + std::to_string(i) + " of " +
                                             std::to_string(points.size()) + " points");
  }
  std::vector<double> kappas(points.size());
  std::transform(points.begin(), points.end(), kappas.begin(), [](const QualityPoint& q) { return q.kappa; });
  const auto nth = kappas.begin() + static_cast<std::ptrdiff_t>(i - 1);
  std::nth_element(kappas.begin(), nth, kappas.end());
  return *nth;
}

std::uint64_t kappa_max_index(std::uint64_t sample_size, const CertificateParams& params) {
  params.validate();
  return quantile_index(sample_size, 1.0 - params.p_min, params.delta / 2.0);
}

double compute_kappa_max(const QualitySample& sample, const CertificateParams& params) {
  return kappa_order_statistic(sample.points, kappa_max_index(sample.size(), params));
}

RobustnessMap build_map(std::span<const QualityPoint> points, double kappa_max, std::optional<double> rho_quantum) {
  if (points.empty()) throw Error(ErrorCode::ParameterOutOfRange, "cannot build a map from an empty sample");
  if (rho_quantum && !(*rho_quantum > 0.0 && std::isfinite(*rho_quantum))) {
    throw Error(ErrorCode::ParameterOutOfRange, "rho quantum must be positive");
  }
  std::vector<QualityPoint> sorted(points.begin(), points.end());
  if (rho_quantum) {
    for (QualityPoint& q : sorted) q.rho = std::floor(q.rho / *rho_quantum) * *rho_quantum;
  }
  std::sort(sorted.begin(), sorted.end(), [](const QualityPoint& a, const QualityPoint& b) {
    return a.rho < b.rho || (a.rho == b.rho && a.kappa < b.kappa);
  });

  std::vector<MapStep> steps;
  double running = -std::numeric_limits<double>::infinity();
  for (const QualityPoint& q : sorted) {
    const double kappa = std::min(q.kappa, kappa_max);
    if (running < kappa) {
      if (!steps.empty() && steps.back().rho == q.rho) {
        steps.back().kappa = kappa;
      } else {
        steps.push_back({kappa, q.rho});
      }
      running = kappa;
    }
  }
  return RobustnessMap(std::move(steps), kappa_max);
}

std::string_view to_string(CertifyOutcome::Status status) {
  switch (status) {
    case CertifyOutcome::Status::Certified: return "certified";
    case CertifyOutcome::Status::NotCertified: return "not-certified";
    case CertifyOutcome::Status::OutOfRange: return "out-of-range";
  }
  return "out-of-range";
}

CertifyOutcome certify(const QualitySample& sample, const CertificateParams& params, double rho, double kappa) {
  params.validate();
  const std::uint64_t required = solve_sample_size(params.epsilon, params.delta / 2.0, kQualityVcDim);
  if (sample.size() < required) {
    throw Error(ErrorCode::InconsistentParams, "sample of " + std::to_string(sample.size()) +
                                                   " points is below the required " + std::to_string(required));
  }
  CertifyOutcome out;
  out.kappa_max = compute_kappa_max(sample, params);
  out.confidence_level = 1.0 - params.delta;
  if (kappa > out.kappa_max) {
    out.status = CertifyOutcome::Status::OutOfRange;
    return out;
  }
  if (const auto hit = find_counterexample(sample.points, {rho, kappa})) {
    out.status = CertifyOutcome::Status::NotCertified;
    out.witness = sample.points[*hit];
    return out;
  }
  out.status = CertifyOutcome::Status::Certified;
  out.bound = guarantee_bound(params);
  return out;
}

PagCertificate emit_certificate(const QualitySample& sample, const CertificateParams& params,
                                const RobustnessMap& map, OracleKind oracle_kind, const EmitOptions& options) {
  params.validate();
  auto inconsistent = [](const std::string& what) { throw Error(ErrorCode::InconsistentParams, what); };
  if (params.vc_dim != kQualityVcDim) inconsistent("quality-space certificates use VC dimension 2");

  PagCertificate cert;
  cert.params = params;
  cert.sample_size = sample.size();
  cert.required_sample_size = solve_sample_size(params.epsilon, params.delta / 2.0, kQualityVcDim);
  if (cert.sample_size < cert.required_sample_size) {
    inconsistent("sample of " + std::to_string(cert.sample_size) + " points is below the required " +
                 std::to_string(cert.required_sample_size));
  }
  cert.kappa_index = kappa_max_index(cert.sample_size, params);
  cert.kappa_max = kappa_order_statistic(sample.points, cert.kappa_index);
  if (map.kappa_max() != cert.kappa_max) inconsistent("map kappa_max differs from the sample's kappa_max");
  if (map.empty()) inconsistent("map has no steps");
  if (oracle_kind != sample.provenance.oracle_kind) inconsistent("oracle kind differs from the sample's");

  cert.map = map;
  cert.rho_quantum = options.rho_quantum;
  cert.bound = guarantee_bound(params);
  cert.union_bound = union_bound_violation(map.codomain_size(), params.epsilon);
  cert.confidence_level = 1.0 - params.delta;
  cert.oracle_kind = oracle_kind;
  cert.oracle_relative = oracle_kind == OracleKind::AdversarialUpper;
  if (options.shift_lambda) {
    cert.shift = ShiftAdjustment{*options.shift_lambda, shift_adjusted_bound(params, *options.shift_lambda)};
  }
  cert.provenance = sample.provenance;
  cert.created_utc = options.created_utc;
  return cert;
}

std::string certificate_to_json(const PagCertificate& cert) {
  json steps = json::array();
  for (const MapStep& s : cert.map.steps()) steps.push_back(json::array({s.kappa, s.rho}));
  json oracle_config = json::parse(cert.provenance.oracle_config, nullptr, false);
  if (oracle_config.is_discarded()) oracle_config = cert.provenance.oracle_config;
  json doc = {
      {"format_version", PagCertificate::kFormatVersion},
      {"params",
       {{"epsilon", cert.params.epsilon},
        {"delta", cert.params.delta},
        {"p_min", cert.params.p_min},
        {"vc_dim", cert.params.vc_dim}}},
      {"sample_size", cert.sample_size},
      {"required_sample_size", cert.required_sample_size},
      {"kappa_index", cert.kappa_index},
      {"kappa_max", cert.kappa_max},
      {"map", steps},
      {"codomain_size", cert.map.codomain_size()},
      {"rho_quantum", cert.rho_quantum ? json(*cert.rho_quantum) : json(nullptr)},
      {"bound", cert.bound},
      {"union_bound", cert.union_bound},
      {"confidence_level", cert.confidence_level},
      {"oracle_kind", std::string(to_string(cert.oracle_kind))},
      {"oracle_relative", cert.oracle_relative},
      {"shift", cert.shift ? json{{"lambda", cert.shift->lambda}, {"adjusted_bound", cert.shift->bound}}
                           : json(nullptr)},
      {"provenance",
       {{"seed", cert.provenance.seed},
        {"noise_sigma", cert.provenance.noise_sigma},
        {"dataset_id", cert.provenance.dataset_id},
        {"model_hash", cert.provenance.model_hash},
        {"oracle_config", oracle_config},
        {"created_utc", cert.created_utc}}},
  };
  return doc.dump(2) + "\n";
}

PagCertificate certificate_from_json(std::string_view text) {
  try {
    const json doc = json::parse(text);
    const int version = doc.at("format_version").get<int>();
    if (version != PagCertificate::kFormatVersion) {
      throw Error(ErrorCode::MalformedFile, "unsupported certificate format_version " + std::to_string(version));
    }
    PagCertificate cert;
    const json& p = doc.at("params");
    cert.params = {p.at("epsilon").get<double>(), p.at("delta").get<double>(), p.at("p_min").get<double>(),
                   p.at("vc_dim").get<int>()};
    cert.sample_size = doc.at("sample_size").get<std::uint64_t>();
    cert.required_sample_size = doc.at("required_sample_size").get<std::uint64_t>();
    cert.kappa_index = doc.at("kappa_index").get<std::uint64_t>();
    cert.kappa_max = doc.at("kappa_max").get<double>();
    std::vector<MapStep> steps;
    for (const json& s : doc.at("map")) steps.push_back({s.at(0).get<double>(), s.at(1).get<double>()});
    cert.map = RobustnessMap(std::move(steps), cert.kappa_max);
    if (doc.at("codomain_size").get<std::size_t>() != cert.map.codomain_size()) {
      throw Error(ErrorCode::MalformedFile, "codomain_size disagrees with the map");
    }
    if (!doc.at("rho_quantum").is_null()) cert.rho_quantum = doc["rho_quantum"].get<double>();
    cert.bound = doc.at("bound").get<double>();
    cert.union_bound = doc.at("union_bound").get<double>();
    cert.confidence_level = doc.at("confidence_level").get<double>();
    cert.oracle_kind = parse_oracle_kind(doc.at("oracle_kind").get<std::string>());
    cert.oracle_relative = doc.at("oracle_relative").get<bool>();
    if (!doc.at("shift").is_null()) {
      cert.shift = ShiftAdjustment{doc["shift"].at("lambda").get<double>(),
                                   doc["shift"].at("adjusted_bound").get<double>()};
    }
    const json& prov = doc.at("provenance");
    cert.provenance.seed = prov.at("seed").get<std::uint64_t>();
    cert.provenance.noise_sigma = prov.at("noise_sigma").get<double>();
    cert.provenance.dataset_id = prov.at("dataset_id").get<std::string>();
    cert.provenance.model_hash = prov.at("model_hash").get<std::string>();
    const json& cfg = prov.at("oracle_config");
    cert.provenance.oracle_config = cfg.is_string() ? cfg.get<std::string>() : cfg.dump();
    cert.provenance.oracle_kind = cert.oracle_kind;
    cert.created_utc = prov.at("created_utc").get<std::string>();
    return cert;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedFile, std::string("bad certificate: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::MalformedFile) throw;
    throw Error(ErrorCode::MalformedFile, std::string("bad certificate: ") + e.what());
  }
}

void save_certificate(const PagCertificate& cert, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::DatasetIo, "cannot write certificate " + path.string());
  out << certificate_to_json(cert);
}

PagCertificate load_certificate(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MalformedFile, "cannot open certificate " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return certificate_from_json(buf.str());
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace pag
