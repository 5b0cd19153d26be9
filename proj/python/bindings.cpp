#include <sstream>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cli.hpp"
#include "mixdetect/classifier.hpp"
#include "mixdetect/mixing_law.hpp"
#include "mixdetect/pipeline.hpp"
#include "mixdetect/toy_lm.hpp"

namespace py = pybind11;
using namespace mixdetect;

namespace {

PyObject* error_type = nullptr;  // owned by the module for the life of the process

TokenSequence to_sequence(const std::vector<Token>& content) { return TokenSequence::from_content(content); }

std::vector<std::vector<Token>> contents(std::span<const TokenSequence> seqs) {
  std::vector<std::vector<Token>> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) {
    const auto c = s.content();
    out.emplace_back(c.begin(), c.end());
  }
  return out;
}

py::dict inversion_dict(const InversionResult& r) {
  py::dict d;
  d["alpha"] = r.alpha;
  d["raw_alpha"] = r.raw_alpha;
  d["residual"] = r.diagnostics.residual;
  d["raw_residual"] = r.diagnostics.raw_residual;
  d["condition"] = r.diagnostics.condition;
  d["simplex_violation"] = r.diagnostics.simplex_violation;
  d["projection_changed"] = r.diagnostics.projection_changed;
  return d;
}

DetectionConfig config_from(const py::dict& kw) {
  DetectionConfig c;
  for (const auto& [key, value] : kw) {
    const auto k = key.cast<std::string>();
    if (k == "sample_count") c.sample_count = value.cast<std::size_t>();
    else if (k == "temperature") c.temperature = value.cast<double>();
    else if (k == "max_len") c.max_len = value.cast<std::size_t>();
    else if (k == "seed") c.seed = value.cast<std::uint64_t>();
    else if (k == "estimator") c.gamma_estimator = parse_gamma_estimator(value.cast<std::string>());
    else if (k == "mode") c.inversion_mode = parse_inversion_mode(value.cast<std::string>());
    else if (k == "units") c.units = parse_loss_units(value.cast<std::string>());
    else if (k == "clamp_gamma") c.clamp_gamma = value.cast<bool>();
    else if (k == "condition_cap") c.condition_cap = value.cast<double>();
    else if (k == "threads") c.threads = value.cast<std::size_t>();
    else throw Error(ErrorKind::InvalidArgument, "unknown detection option '" + k + "'");
  }
  c.validate();
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Data-proportion detection on toy language models";

  error_type = py::exception<Error>(m, "Error", PyExc_ValueError).release().ptr();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object exc = py::reinterpret_borrow<py::object>(error_type)(std::string(e.what()));
      exc.attr("kind") = std::string(to_string(e.kind()));
      exc.attr("domain") = e.domain() ? py::cast(*e.domain()) : py::none();
      exc.attr("value") = e.value() ? py::cast(*e.value()) : py::none();
      PyErr_SetObject(error_type, exc.ptr());
    }
  });

  py::class_<MixingLawParams>(m, "MixingLaw")
      .def(py::init([](std::vector<double> c, std::vector<double> k, Eigen::MatrixXd t) {
             MixingLawParams p{std::move(c), std::move(k), std::move(t)};
             p.validate();
             return p;
           }),
           py::arg("c"), py::arg("k"), py::arg("t"))
      .def_readwrite("c", &MixingLawParams::c)
      .def_readwrite("k", &MixingLawParams::k)
      .def_readwrite("t", &MixingLawParams::t)
      .def_property_readonly("size", &MixingLawParams::size)
      .def("to_json", &MixingLawParams::to_json)
      .def_static("from_json", &MixingLawParams::from_json)
      .def("loss", [](const MixingLawParams& p, const std::vector<double>& alpha) {
        return eval_loss(p, make_proportions(alpha));
      });

  m.def("gamma_from_loss", [](const std::vector<double>& losses) { return gamma_from_loss(losses).values; });
  m.def(
      "beta_from_gamma",
      [](const std::vector<double>& gamma, const MixingLawParams& law) {
        GammaVector g;
        g.values = gamma;
        return beta_from_gamma(g, law).values;
      },
      py::arg("gamma"), py::arg("law"));
  m.def(
      "invert",
      [](const MixingLawParams& law, const std::vector<double>& beta, const std::string& mode, double cap) {
        return inversion_dict(invert(law, BetaVector{beta}, parse_inversion_mode(mode), cap));
      },
      py::arg("law"), py::arg("beta"), py::arg("mode") = "constrained", py::arg("condition_cap") = kDefaultConditionCap);
  m.def("project_to_simplex", [](const std::vector<double>& v) { return project_to_simplex(v).values(); });
  m.def("condition_number", &condition_number);
  m.def(
      "fit",
      [](const std::vector<std::vector<double>>& alphas, const std::vector<std::vector<double>>& losses,
         int max_iterations, double tolerance, double min_offset) {
        if (alphas.size() != losses.size()) throw Error(ErrorKind::DimensionMismatch, "one loss vector per mixture");
        std::vector<RunObservation> runs;
        for (std::size_t i = 0; i < alphas.size(); ++i) runs.push_back({make_proportions(alphas[i]), losses[i]});
        FitOptions opts;
        opts.max_iterations = max_iterations;
        opts.tolerance = tolerance;
        opts.min_offset = min_offset;
        auto r = fit(runs, opts);
        return py::make_tuple(r.params, r.report.rmse);
      },
      py::arg("alphas"), py::arg("losses"), py::arg("max_iterations") = 500, py::arg("tolerance") = 1e-12,
      py::arg("min_offset") = 0.0);
  m.def("law_diagnostics", [](const MixingLawParams& law) { return law_diagnostics(law).to_json(); });

  py::class_<ToyLM>(m, "ToyLM")
      .def_static(
          "train",
          [](const std::vector<std::vector<Token>>& seqs, std::size_t order, double smoothing, std::size_t vocab) {
            Corpus c;
            for (const auto& s : seqs) c.sequences.push_back(to_sequence(s));
            return ToyLM::train(c, order, smoothing, vocab);
          },
          py::arg("sequences"), py::arg("order") = 2, py::arg("smoothing") = 0.01, py::arg("vocab_size") = 0)
      .def_static("deserialize", &ToyLM::deserialize)
      .def("serialize", &ToyLM::serialize)
      .def_property_readonly("order", &ToyLM::order)
      .def_property_readonly("vocab_size", &ToyLM::vocab_size)
      .def(
          "sample",
          [](const ToyLM& lm, std::size_t count, double temperature, std::size_t max_len, std::uint64_t seed) {
            const auto ys = sample(lm, count, temperature, max_len, seed);
            return contents(ys);
          },
          py::arg("count"), py::arg("temperature") = 1.0, py::arg("max_len") = 64, py::arg("seed") = 0)
      .def(
          "loss",
          [](const ToyLM& lm, const std::vector<Token>& content, const std::string& units) {
            return sequence_loss(lm, to_sequence(content), parse_loss_units(units));
          },
          py::arg("content"), py::arg("units") = "per-token");

  py::class_<Classifier>(m, "Classifier")
      .def_static("deserialize", &Classifier::deserialize)
      .def("serialize", &Classifier::serialize)
      .def_property_readonly("domains", [](const Classifier& c) { return c.domains().names(); })
      .def("classify", [](const Classifier& c, const std::vector<Token>& content) {
        return classify(c, to_sequence(content)).domain;
      });

  py::class_<Scenario>(m, "Scenario")
      .def_readonly("model", &Scenario::model)
      .def_readonly("classifier", &Scenario::classifier)
      .def_readonly("heldout_accuracy", &Scenario::heldout_accuracy)
      .def_property_readonly("domains", [](const Scenario& s) { return s.domains.names(); });

  m.def(
      "build_scenario",
      [](std::vector<double> alpha, double overlap, std::size_t train_total, std::uint64_t seed) {
        ScenarioConfig sc;
        sc.n_domains = alpha.size();
        sc.alpha = std::move(alpha);
        sc.overlap_fraction = overlap;
        sc.train_total = train_total;
        sc.seed = seed;
        sc.corpus_seed = seed;
        return build_scenario(sc);
      },
      py::arg("alpha"), py::arg("overlap") = 0.4, py::arg("train_total") = 20000, py::arg("seed") = 1);

  m.def(
      "detect",
      [](const ToyLM& model, const Classifier& clf, const MixingLawParams* law, const py::kwargs& kw) {
        const auto config = config_from(kw);
        py::gil_scoped_release release;
        return law ? detect(model, clf, *law, config).to_json() : detect_gamma_only(model, clf, config).to_json();
      },
      py::arg("model"), py::arg("classifier"), py::arg("law") = py::none(),
      "Runs detection and returns the report as JSON text; without a law, gamma is the estimate.");

  m.def("render_report", &render_report, py::arg("report_json"), py::arg("format") = "md");

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = cli::run_command(args, out, err);
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
