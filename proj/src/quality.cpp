#include "pag/quality.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "detail/text.hpp"
#include "pag/errors.hpp"
#include "pag/parallel.hpp"
#include "pag/rng.hpp"

namespace pag {
namespace {

using nlohmann::json;

constexpr std::string_view kSampleHeader = "index,rho,kappa";

std::string read_file(const std::filesystem::path& path, ErrorCode code) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(code, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string sample_row(std::size_t index, const QualityPoint& q) {
  return std::to_string(index) + "," + detail::format_double(q.rho) + "," + detail::format_double(q.kappa) + "\n";
}

// Longest valid prefix of a sample CSV; stops at the first bad or partial row.
std::vector<QualityPoint> read_sample_rows(const std::string& text, bool strict) {
  std::vector<QualityPoint> points;
  std::size_t pos = 0;
  bool header = true;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) {
      if (strict) throw Error(ErrorCode::MalformedFile, "sample CSV ends in a partial row");
      break;
    }
    const std::string_view line = detail::trim(std::string_view(text).substr(pos, nl - pos));
    pos = nl + 1;
    if (header) {
      if (line != kSampleHeader) throw Error(ErrorCode::MalformedFile, "sample CSV header must be index,rho,kappa");
      header = false;
      continue;
    }
    if (line.empty()) continue;
    const auto cells = detail::split(line, ',');
    std::optional<double> index;
    std::optional<double> rho;
    std::optional<double> kappa;
    if (cells.size() == 3) {
      index = detail::parse_double(cells[0]);
      rho = detail::parse_double(cells[1]);
      kappa = detail::parse_double(cells[2]);
    }
    const bool ok = index && rho && kappa && *index == static_cast<double>(points.size()) &&
                    std::isfinite(*rho) && std::isfinite(*kappa);
    if (!ok) {
      if (strict) {
        throw Error(ErrorCode::MalformedFile, "bad sample row " + std::to_string(points.size()));
      }
      break;
    }
    points.push_back({*rho, *kappa});
  }
  if (header && strict) throw Error(ErrorCode::MalformedFile, "sample CSV is empty");
  return points;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::DatasetIo, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorCode::DatasetIo, "write failed for " + path.string());
}

json params_to_json(const CertificateParams& p) {
  return {{"epsilon", p.epsilon}, {"delta", p.delta}, {"p_min", p.p_min}, {"vc_dim", p.vc_dim}};
}

}  // namespace

bool has_counterexample(std::span<const QualityPoint> points, const CounterexampleRange& range) {
  return std::any_of(points.begin(), points.end(), [&](const QualityPoint& q) { return contains(range, q); });
}

std::optional<std::size_t> find_counterexample(std::span<const QualityPoint> points,
                                               const CounterexampleRange& range) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (contains(range, points[i]) && (!best || points[i].rho < points[*best].rho)) best = i;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Datasets

void assign_dataset_id(Dataset& dataset) {
  std::string canon;
  for (std::size_t r = 0; r < dataset.rows.size(); ++r) {
    for (double v : dataset.rows[r]) {
      canon += detail::format_double(v);
      canon += ',';
    }
    if (!dataset.labels.empty()) canon += std::to_string(dataset.labels[r]);
    canon += '\n';
  }
  dataset.id = detail::fnv1a64_hex(canon);
}

Dataset load_dataset_csv(const std::filesystem::path& path) {
  const std::string text = read_file(path, ErrorCode::DatasetIo);
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::DatasetIo, path.string() + " is empty");
  const auto header = detail::split(detail::trim(line), ',');
  Dataset ds;
  bool has_label = false;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string_view name = detail::trim(header[c]);
    if (name == "label" && c + 1 == header.size()) {
      has_label = true;
    } else if (name != "feature_" + std::to_string(c)) {
      throw Error(ErrorCode::DatasetIo, "column " + std::to_string(c) + " of " + path.string() +
                                            " must be named feature_" + std::to_string(c));
    }
  }
  ds.dim = header.size() - (has_label ? 1 : 0);
  if (ds.dim == 0) throw Error(ErrorCode::DatasetIo, path.string() + " has no feature columns");

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view trimmed = detail::trim(line);
    if (trimmed.empty()) continue;
    const auto cells = detail::split(trimmed, ',');
    if (cells.size() != header.size()) {
      throw Error(ErrorCode::DatasetIo, path.string() + ":" + std::to_string(line_no) + " has " +
                                            std::to_string(cells.size()) + " cells, expected " +
                                            std::to_string(header.size()));
    }
    std::vector<double> row(ds.dim);
    for (std::size_t c = 0; c < ds.dim; ++c) {
      const auto v = detail::parse_double(cells[c]);
      if (!v || !std::isfinite(*v)) {
        throw Error(ErrorCode::DatasetIo, path.string() + ":" + std::to_string(line_no) + " has a bad value");
      }
      row[c] = *v;
    }
    if (has_label) {
      const auto v = detail::parse_double(cells.back());
      if (!v || *v != std::floor(*v)) {
        throw Error(ErrorCode::DatasetIo, path.string() + ":" + std::to_string(line_no) + " has a bad label");
      }
      ds.labels.push_back(static_cast<long>(*v));
    }
    ds.rows.push_back(std::move(row));
  }
  assign_dataset_id(ds);
  return ds;
}

void save_dataset_csv(const Dataset& dataset, const std::filesystem::path& path) {
  std::string text;
  for (std::size_t c = 0; c < dataset.dim; ++c) {
    if (c) text += ',';
    text += "feature_" + std::to_string(c);
  }
  if (!dataset.labels.empty()) text += ",label";
  text += '\n';
  for (std::size_t r = 0; r < dataset.rows.size(); ++r) {
    for (std::size_t c = 0; c < dataset.dim; ++c) {
      if (c) text += ',';
      text += detail::format_double(dataset.rows[r][c]);
    }
    if (!dataset.labels.empty()) text += "," + std::to_string(dataset.labels[r]);
    text += '\n';
  }
  write_text(path, text);
}

// ---------------------------------------------------------------------------
// Providers

std::string_view to_string(OracleChoice choice) {
  switch (choice) {
    case OracleChoice::ExactGrid: return "exact-grid";
    case OracleChoice::Analytic: return "analytic";
    case OracleChoice::Pgd: return "pgd";
    case OracleChoice::IbpBinsearch: return "ibp-binsearch";
  }
  return "pgd";
}

OracleChoice parse_oracle_choice(std::string_view text) {
  for (OracleChoice c : {OracleChoice::ExactGrid, OracleChoice::Analytic, OracleChoice::Pgd,
                         OracleChoice::IbpBinsearch}) {
    if (text == to_string(c)) return c;
  }
  throw Error(ErrorCode::ParameterOutOfRange, "unknown oracle '" + std::string(text) + "'");
}

OracleKind kind_of(OracleChoice choice) {
  switch (choice) {
    case OracleChoice::ExactGrid:
    case OracleChoice::Analytic: return OracleKind::Exact;
    case OracleChoice::Pgd: return OracleKind::AdversarialUpper;
    case OracleChoice::IbpBinsearch: return OracleKind::CertifiedLower;
  }
  return OracleKind::Exact;
}

QualityEvaluation evaluate_quality(const MlpModel& model, OracleChoice choice, const OracleConfig& cfg,
                                   std::span<const double> x) {
  QualityEvaluation ev;
  ev.kappa = model.forward(x).confidence;
  switch (choice) {
    case OracleChoice::ExactGrid: ev.oracle = exact_grid_oracle(model, x, cfg); break;
    case OracleChoice::Analytic: {
      ev.oracle = analytic_model_oracle(model, x);
      ev.oracle.radius = std::min(ev.oracle.radius, cfg.radius_cap);
      break;
    }
    case OracleChoice::Pgd: ev.oracle = pgd_oracle(model, x, cfg); break;
    case OracleChoice::IbpBinsearch: ev.oracle = certified_binsearch_oracle(model, x, cfg); break;
  }
  return ev;
}

ModelQualityProvider::ModelQualityProvider(MlpModel model, OracleChoice choice, OracleConfig cfg,
                                           std::size_t workers)
    : model_(std::move(model)), choice_(choice), cfg_(cfg), workers_(resolve_workers(workers)) {
  cfg_.validate();
  model_hash_ = model_.hash();
}

std::string ModelQualityProvider::config_json() const {
  json doc = {{"oracle", std::string(to_string(choice_))},
              {"radius_cap", cfg_.radius_cap},
              {"pgd_step", cfg_.pgd_step},
              {"pgd_max_steps", cfg_.pgd_max_steps},
              {"binsearch_bits", cfg_.binsearch_bits},
              {"grid_resolution", cfg_.grid_resolution}};
  return doc.dump();
}

std::vector<QualityEvaluation> ModelQualityProvider::evaluate(const std::vector<std::vector<double>>& inputs) {
  std::vector<QualityEvaluation> out(inputs.size());
  parallel_for(inputs.size(), workers_, [&](std::size_t i) {
    try {
      out[i] = evaluate_quality(model_, choice_, cfg_, inputs[i]);
    } catch (const Error& e) {
      throw IndexedError(e.code(), i, e.what());
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Sampling

std::vector<double> draw_instance(const Dataset& dataset, const InputBox& box, double noise_sigma,
                                  std::uint64_t seed, std::uint64_t index) {
  SplitMix64 rng = SplitMix64::stream(seed, index);
  std::uniform_int_distribution<std::size_t> pick(0, dataset.rows.size() - 1);
  std::vector<double> x = dataset.rows[pick(rng)];
  if (noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, noise_sigma);
    for (double& v : x) v += noise(rng);
  }
  box.clamp(x);
  return x;
}

std::filesystem::path sidecar_path(const std::filesystem::path& csv_path) {
  return std::filesystem::path(csv_path.string() + ".meta.json");
}

std::string metadata_to_json(const SampleMetadata& meta) {
  json oracle_config = json::parse(meta.provenance.oracle_config, nullptr, false);
  if (oracle_config.is_discarded()) oracle_config = meta.provenance.oracle_config;
  json doc = {{"format_version", 1},
              {"seed", meta.provenance.seed},
              {"noise_sigma", meta.provenance.noise_sigma},
              {"oracle_kind", std::string(to_string(meta.provenance.oracle_kind))},
              {"oracle_config", oracle_config},
              {"model_hash", meta.provenance.model_hash},
              {"dataset_id", meta.provenance.dataset_id},
              {"sample_size", meta.sample_size},
              {"params", meta.params ? params_to_json(*meta.params) : json(nullptr)},
              {"complete", meta.complete}};
  return doc.dump(2) + "\n";
}

SampleMetadata metadata_from_json(std::string_view text) {
  try {
    const json doc = json::parse(text);
    SampleMetadata meta;
    meta.provenance.seed = doc.at("seed").get<std::uint64_t>();
    meta.provenance.noise_sigma = doc.at("noise_sigma").get<double>();
    meta.provenance.oracle_kind = parse_oracle_kind(doc.at("oracle_kind").get<std::string>());
    const json& cfg = doc.at("oracle_config");
    meta.provenance.oracle_config = cfg.is_string() ? cfg.get<std::string>() : cfg.dump();
    meta.provenance.model_hash = doc.at("model_hash").get<std::string>();
    meta.provenance.dataset_id = doc.at("dataset_id").get<std::string>();
    meta.sample_size = doc.at("sample_size").get<std::uint64_t>();
    if (doc.contains("params") && !doc["params"].is_null()) {
      const json& p = doc["params"];
      meta.params = CertificateParams{p.at("epsilon").get<double>(), p.at("delta").get<double>(),
                                      p.at("p_min").get<double>(), p.at("vc_dim").get<int>()};
    }
    meta.complete = doc.at("complete").get<bool>();
    return meta;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedFile, std::string("bad sample metadata: ") + e.what());
  }
}

void write_quality_sample(const QualitySample& sample, const std::filesystem::path& csv_path,
                          const std::optional<CertificateParams>& params) {
  std::string text(kSampleHeader);
  text += '\n';
  for (std::size_t i = 0; i < sample.points.size(); ++i) text += sample_row(i, sample.points[i]);
  write_text(csv_path, text);
  write_text(sidecar_path(csv_path), metadata_to_json({sample.provenance, sample.size(), params, true}));
}

QualitySample read_quality_sample(const std::filesystem::path& csv_path) {
  QualitySample sample;
  sample.points = read_sample_rows(read_file(csv_path, ErrorCode::MalformedFile), true);
  const auto meta_path = sidecar_path(csv_path);
  if (std::filesystem::exists(meta_path)) {
    sample.provenance = metadata_from_json(read_file(meta_path, ErrorCode::MalformedFile)).provenance;
  }
  return sample;
}

QualitySample build_quality_sample(const Dataset& dataset, QualityProvider& provider, const InputBox& box,
                                   const SamplingOptions& options,
                                   const std::optional<std::filesystem::path>& store,
                                   const std::optional<CertificateParams>& params) {
  if (options.sample_size == 0) throw Error(ErrorCode::ParameterOutOfRange, "sample size must be >= 1");
  if (dataset.rows.empty()) throw Error(ErrorCode::DatasetIo, "dataset has no rows");
  if (dataset.dim != box.dim()) {
    throw Error(ErrorCode::DimensionMismatch, "dataset dimension " + std::to_string(dataset.dim) +
                                                  " differs from input box dimension " + std::to_string(box.dim()));
  }
  if (!(options.noise_sigma >= 0.0) || !std::isfinite(options.noise_sigma)) {
    throw Error(ErrorCode::ParameterOutOfRange, "noise sigma must be finite and >= 0");
  }

  QualitySample sample;
  sample.provenance = {options.seed,        provider.kind(),         options.noise_sigma,
                       dataset.id,          provider.model_hash(),   provider.config_json()};
  const std::uint64_t total = options.sample_size;
  sample.points.reserve(total);

  std::ofstream csv;
  if (store) {
    const auto meta_path = sidecar_path(*store);
    if (std::filesystem::exists(*store) && std::filesystem::exists(meta_path)) {
      try {
        const SampleMetadata meta = metadata_from_json(read_file(meta_path, ErrorCode::MalformedFile));
        if (meta.provenance == sample.provenance && meta.sample_size == total) {
          sample.points = read_sample_rows(read_file(*store, ErrorCode::MalformedFile), false);
          if (sample.points.size() > total) sample.points.resize(total);
          if (meta.complete && sample.points.size() == total) return sample;
        }
      } catch (const Error&) {
        sample.points.clear();  // unreadable store: start over
      }
    }
    write_text(meta_path, metadata_to_json({sample.provenance, total, params, false}));
    std::string prefix(kSampleHeader);
    prefix += '\n';
    for (std::size_t i = 0; i < sample.points.size(); ++i) prefix += sample_row(i, sample.points[i]);
    write_text(*store, prefix);
    csv.open(*store, std::ios::binary | std::ios::app);
    if (!csv) throw Error(ErrorCode::DatasetIo, "cannot append to " + store->string());
  }

  const std::size_t batch = std::max<std::size_t>(options.batch, 1);
  std::vector<std::vector<double>> inputs;
  for (std::uint64_t start = sample.points.size(); start < total; start += batch) {
    const std::uint64_t end = std::min<std::uint64_t>(total, start + batch);
    inputs.clear();
    for (std::uint64_t i = start; i < end; ++i) {
      inputs.push_back(draw_instance(dataset, box, options.noise_sigma, options.seed, i));
    }
    std::vector<QualityEvaluation> evals;
    try {
      evals = provider.evaluate(inputs);
    } catch (const IndexedError& e) {
      throw IndexedError(e.code(), start + e.index(), std::string("draw failed: ") + e.what());
    } catch (const Error& e) {
      throw IndexedError(e.code(), start, std::string("batch failed: ") + e.what());
    }
    if (evals.size() != inputs.size()) {
      throw IndexedError(ErrorCode::OracleFailure, start, "provider returned a short batch");
    }
    std::string rows;
    for (std::size_t k = 0; k < evals.size(); ++k) {
      const QualityPoint q{evals[k].oracle.radius, evals[k].kappa};
      if (!std::isfinite(q.rho) || q.rho < 0.0 || !std::isfinite(q.kappa) || q.kappa <= 0.0 || q.kappa > 1.0) {
        throw IndexedError(ErrorCode::OracleFailure, start + k, "oracle produced an invalid quality point");
      }
      if (store) rows += sample_row(sample.points.size(), q);
      sample.points.push_back(q);
    }
    if (store) {
      csv << rows;
      csv.flush();
      if (!csv) throw Error(ErrorCode::DatasetIo, "append failed for " + store->string());
    }
  }
  if (store) {
    csv.close();
    write_text(sidecar_path(*store), metadata_to_json({sample.provenance, total, params, true}));
  }
  return sample;
}

}  // namespace pag
