#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cmath>

#include "pag/bounds.hpp"
#include "pag/certifier.hpp"
#include "pag/errors.hpp"
#include "pag/eval_harness.hpp"
#include "pag/model.hpp"
#include "pag/oracles.hpp"
#include "pag/quality.hpp"

namespace py = pybind11;
using namespace pag;

namespace {

using Vec = std::vector<double>;

std::vector<QualityPoint> to_points(const std::vector<std::pair<double, double>>& pairs) {
  std::vector<QualityPoint> pts;
  pts.reserve(pairs.size());
  for (const auto& [rho, kappa] : pairs) pts.push_back({rho, kappa});
  return pts;
}

QualitySample to_sample(const std::vector<std::pair<double, double>>& pairs) {
  QualitySample s;
  s.points = to_points(pairs);
  return s;
}

py::dict report_dict(const EvalReport& r) {
  py::list rows;
  for (const KappaRow& row : r.per_kappa) {
    py::dict d;
    d["kappa"] = row.kappa;
    d["p_kappa"] = std::isnan(row.p_kappa) ? py::object(py::none()) : py::object(py::float_(row.p_kappa));
    d["num"] = row.num;
    d["den"] = row.den;
    rows.append(d);
  }
  py::dict d;
  d["p_hat"] = r.p_hat;
  d["p_hat_kappa"] = r.p_hat_kappa;
  d["per_kappa"] = rows;
  d["denominator_zero_rows"] = r.denominator_zero_rows;
  d["n_c"] = r.n_c;
  d["map_size"] = r.map_size;
  d["test_size"] = r.test_size;
  d["above_kappa_max"] = r.above_kappa_max;
  d["kappa_max"] = r.kappa_max;
  d["p_hat_threshold"] = r.p_hat_threshold;
  d["n_c_threshold"] = r.n_c_threshold;
  d["good_run"] = r.good_run;
  return d;
}

py::dict mc_dict(const MonteCarloResult& r) {
  py::dict d;
  d["trials"] = r.trials;
  d["failures"] = r.failures;
  d["failure_rate"] = r.failure_rate;
  d["upper_bound_99"] = r.upper_bound_99;
  d["sample_size"] = r.sample_size;
  return d;
}

}  // namespace

PYBIND11_MODULE(_pagcert, m) {
  m.doc() = "PAG robustness certification core";

  static py::exception<Error> pag_error(m, "PagError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = pag_error;
      py::object instance = exc(e.what());
      instance.attr("code") = std::string(to_string(e.code()));
      PyErr_SetObject(exc.ptr(), instance.ptr());
    }
  });

  py::class_<CertificateParams>(m, "CertificateParams")
      .def(py::init([](double epsilon, double delta, double p_min, int vc_dim) {
             CertificateParams p{epsilon, delta, p_min, vc_dim};
             p.validate();
             return p;
           }),
           py::arg("epsilon"), py::arg("delta"), py::arg("p_min"), py::arg("vc_dim") = 2)
      .def_readonly("epsilon", &CertificateParams::epsilon)
      .def_readonly("delta", &CertificateParams::delta)
      .def_readonly("p_min", &CertificateParams::p_min)
      .def_readonly("vc_dim", &CertificateParams::vc_dim);

  m.def("solve_sample_size", &solve_sample_size, py::arg("epsilon"), py::arg("delta"), py::arg("vc_dim") = 2);
  m.def("sample_size_satisfied", &sample_size_satisfied, py::arg("s"), py::arg("epsilon"), py::arg("delta"),
        py::arg("vc_dim") = 2);
  m.def("quantile_index", &quantile_index, py::arg("s"), py::arg("p"), py::arg("delta"));
  m.def("quantile_index_bound", &quantile_index_bound, py::arg("s"), py::arg("p"), py::arg("delta"));
  m.def("guarantee_bound", &guarantee_bound, py::arg("params"));
  m.def("shift_adjusted_bound", &shift_adjusted_bound, py::arg("params"), py::arg("lam"));
  m.def("union_bound_violation", &union_bound_violation, py::arg("map_size"), py::arg("epsilon"));

  py::class_<RobustnessMap>(m, "RobustnessMap")
      .def(py::init([](const std::vector<std::pair<double, double>>& steps, double kappa_max) {
             std::vector<MapStep> s;
             for (const auto& [kappa, rho] : steps) s.push_back({kappa, rho});
             return RobustnessMap(std::move(s), kappa_max);
           }),
           py::arg("steps"), py::arg("kappa_max"))
      .def_property_readonly("steps",
                             [](const RobustnessMap& map) {
                               std::vector<std::pair<double, double>> out;
                               for (const MapStep& s : map.steps()) out.emplace_back(s.kappa, s.rho);
                               return out;
                             })
      .def_property_readonly("kappa_max", &RobustnessMap::kappa_max)
      .def("__len__", &RobustnessMap::codomain_size)
      .def(
          "lookup",
          [](const RobustnessMap& map, double kappa, bool largest_lower) {
            return map.lookup(kappa, largest_lower ? LookupRule::LargestLowerStep
                                                   : LookupRule::MinOverHigherConfidence);
          },
          py::arg("kappa"), py::arg("largest_lower") = false);

  m.def(
      "build_map",
      [](const std::vector<std::pair<double, double>>& points, double kappa_max, std::optional<double> quantum) {
        return build_map(to_points(points), kappa_max, quantum);
      },
      py::arg("points"), py::arg("kappa_max"), py::arg("rho_quantum") = py::none());
  m.def(
      "kappa_order_statistic",
      [](const std::vector<std::pair<double, double>>& points, std::uint64_t i) {
        return kappa_order_statistic(to_points(points), i);
      },
      py::arg("points"), py::arg("i"));
  m.def(
      "compute_kappa_max",
      [](const std::vector<std::pair<double, double>>& points, const CertificateParams& params) {
        return compute_kappa_max(to_sample(points), params);
      },
      py::arg("points"), py::arg("params"));
  m.def(
      "certify",
      [](const std::vector<std::pair<double, double>>& points, const CertificateParams& params, double rho,
         double kappa) {
        const CertifyOutcome r = certify(to_sample(points), params, rho, kappa);
        py::dict d;
        d["status"] = std::string(to_string(r.status));
        d["bound"] = r.bound;
        d["confidence_level"] = r.confidence_level;
        d["kappa_max"] = r.kappa_max;
        if (r.witness) {
          d["witness"] = std::make_pair(r.witness->rho, r.witness->kappa);
        } else {
          d["witness"] = py::none();
        }
        return d;
      },
      py::arg("points"), py::arg("params"), py::arg("rho"), py::arg("kappa"));
  m.def(
      "evaluate_on_test",
      [](const RobustnessMap& map, const std::vector<std::pair<double, double>>& test, const CertificateParams& params) {
        return report_dict(evaluate_on_test(map, to_points(test), params));
      },
      py::arg("map"), py::arg("test"), py::arg("params"));

  m.def(
      "load_certificate",
      [](const std::filesystem::path& path) { return certificate_to_json(load_certificate(path)); },
      py::arg("path"), "Load and validate a certificate; returns its canonical JSON text.");

  py::class_<OracleConfig>(m, "OracleConfig")
      .def(py::init<>())
      .def_readwrite("radius_cap", &OracleConfig::radius_cap)
      .def_readwrite("pgd_step", &OracleConfig::pgd_step)
      .def_readwrite("pgd_max_steps", &OracleConfig::pgd_max_steps)
      .def_readwrite("binsearch_bits", &OracleConfig::binsearch_bits)
      .def_readwrite("grid_resolution", &OracleConfig::grid_resolution)
      .def_static("mnist_like", &OracleConfig::mnist_like)
      .def_static("cifar_like", &OracleConfig::cifar_like);

  py::class_<MlpModel>(m, "MlpModel")
      .def_static("from_json", [](const std::string& text) { return model_from_json(text); })
      .def_static("load", [](const std::filesystem::path& p) { return load_model(p); })
      .def("to_json", [](const MlpModel& model) { return model_to_json(model); })
      .def_property_readonly("input_dim", &MlpModel::input_dim)
      .def_property_readonly("num_classes", &MlpModel::num_classes)
      .def_property_readonly("hash", &MlpModel::hash)
      .def("logits", [](const MlpModel& model, const Vec& x) { return model.logits(x); })
      .def("predict", [](const MlpModel& model, const Vec& x) {
        const Prediction p = model.forward(x);
        return std::make_pair(p.class_index, p.confidence);
      });

  auto result = [](const OracleResult& r) {
    py::dict d;
    d["radius"] = r.radius;
    d["kind"] = std::string(to_string(r.kind));
    d["adversarial"] = r.adversarial;
    return d;
  };
  m.def(
      "pgd_oracle", [result](const MlpModel& model, const Vec& x, const OracleConfig& cfg) {
        return result(pgd_oracle(model, x, cfg));
      },
      py::arg("model"), py::arg("x"), py::arg("cfg") = OracleConfig{});
  m.def(
      "certified_binsearch_oracle",
      [result](const MlpModel& model, const Vec& x, const OracleConfig& cfg) {
        return result(certified_binsearch_oracle(model, x, cfg));
      },
      py::arg("model"), py::arg("x"), py::arg("cfg") = OracleConfig{});
  m.def(
      "exact_grid_oracle",
      [result](const MlpModel& model, const Vec& x, const OracleConfig& cfg) {
        return result(exact_grid_oracle(model, x, cfg));
      },
      py::arg("model"), py::arg("x"), py::arg("cfg") = OracleConfig{});
  m.def(
      "analytic_linear_oracle",
      [result](const Vec& w, double b, const Vec& x) { return result(analytic_linear_oracle(w, b, x)); },
      py::arg("weight_diff"), py::arg("bias_diff"), py::arg("x"));

  py::class_<SyntheticWorld>(m, "SyntheticWorld")
      .def_property_readonly("model", [](const SyntheticWorld& w) { return w.model; })
      .def_readonly("noise_sigma", &SyntheticWorld::noise_sigma)
      .def("draw", &SyntheticWorld::draw, py::arg("seed"), py::arg("index"))
      .def("quality",
           [](const SyntheticWorld& w, const Vec& x) {
             const QualityPoint q = w.quality(x);
             return std::make_pair(q.rho, q.kappa);
           })
      .def("range_probability",
           [](const SyntheticWorld& w, double rho, double kappa) { return w.range_probability({rho, kappa}); })
      .def("confidence_tail", &SyntheticWorld::confidence_tail)
      .def("epsilon_contour_witnesses", [](const SyntheticWorld& w, double epsilon, std::size_t count) {
        std::vector<std::tuple<double, double, double>> out;
        for (const WitnessRange& r : epsilon_contour_witnesses(w, epsilon, count)) {
          out.emplace_back(r.range.rho, r.range.kappa, r.probability);
        }
        return out;
      }, py::arg("epsilon"), py::arg("count") = 64)
      .def(
          "monte_carlo_epsnet_check",
          [](const SyntheticWorld& w, const CertificateParams& params, std::uint64_t trials, std::uint64_t seed,
             std::size_t witnesses, std::size_t workers) {
            const auto family = epsilon_contour_witnesses(w, params.epsilon, witnesses);
            py::gil_scoped_release release;
            return monte_carlo_epsnet_check(w, family, params, trials, seed, workers);
          },
          py::arg("params"), py::arg("trials"), py::arg("seed"), py::arg("witnesses") = 64, py::arg("workers") = 0);
  m.def("synthetic_linear_world", &synthetic_linear_world, py::arg("seed"));

  py::class_<MonteCarloResult>(m, "MonteCarloResult")
      .def_readonly("trials", &MonteCarloResult::trials)
      .def_readonly("failures", &MonteCarloResult::failures)
      .def_readonly("failure_rate", &MonteCarloResult::failure_rate)
      .def_readonly("upper_bound_99", &MonteCarloResult::upper_bound_99)
      .def_readonly("sample_size", &MonteCarloResult::sample_size)
      .def("as_dict", &mc_dict);
  m.def(
      "monte_carlo_quantile_uniform",
      [](std::uint64_t s, double p, double delta, std::uint64_t trials, std::uint64_t seed, std::size_t workers) {
        py::gil_scoped_release release;
        return monte_carlo_quantile_check(uniform_distribution(), s, p, delta, trials, seed, workers);
      },
      py::arg("s"), py::arg("p"), py::arg("delta"), py::arg("trials"), py::arg("seed"), py::arg("workers") = 0);
  m.def("binomial_upper_bound", &binomial_upper_bound, py::arg("k"), py::arg("n"), py::arg("confidence") = 0.99);
}
