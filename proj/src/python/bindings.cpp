#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include <nlohmann/json.hpp>

#include "masklab/baselines.hpp"
#include "masklab/cli.hpp"
#include "masklab/config.hpp"
#include "masklab/dataset.hpp"
#include "masklab/experiment.hpp"
#include "masklab/masking.hpp"
#include "masklab/metrics.hpp"
#include "masklab/noise_model.hpp"

namespace py = pybind11;
using namespace masklab;

namespace {

StructureMask as_mask(const Matrix& m) { return StructureMask(m, MaskKind::custom); }

}  // namespace

PYBIND11_MODULE(_masklab, m) {
  m.doc() = "Noise-transition estimation with structure priors (C++ core).";

  m.def(
      "build_mask",
      [](const std::string& kind, std::size_t classes, std::vector<std::size_t> noise_columns,
         std::vector<std::size_t> block_sizes) {
        MaskParams p;
        p.noise_columns = std::move(noise_columns);
        p.block_sizes = std::move(block_sizes);
        return build_mask(mask_kind_from_string(kind), classes, p).values();
      },
      py::arg("kind"), py::arg("classes"), py::arg("noise_columns") = std::vector<std::size_t>{},
      py::arg("block_sizes") = std::vector<std::size_t>{});

  m.def(
      "build_transition",
      [](const Matrix& mask, double rate) { return build_transition(as_mask(mask), rate).values(); },
      py::arg("mask"), py::arg("rate"));

  m.def(
      "corrupt_labels",
      [](const std::vector<int>& clean, const Matrix& t, std::uint64_t seed) {
        Rng rng(seed);
        return corrupt_labels(clean, TransitionMatrix(t), rng);
      },
      py::arg("clean"), py::arg("transition"), py::arg("seed"));

  m.def(
      "tempered_sigmoid",
      [](const Matrix& s, double alpha, double beta) {
        const TemperedSigmoidParams p{alpha, beta};
        p.validate();
        return tempered_sigmoid(s, p);
      },
      py::arg("s"), py::arg("alpha") = 0.05, py::arg("beta") = 0.005);

  m.def(
      "distill_mask",
      [](const Matrix& t, double hi, double lo) { return distill_mask(TransitionMatrix(t), hi, lo).values(); },
      py::arg("transition"), py::arg("hi") = 0.1, py::arg("lo") = 0.01);

  m.def(
      "noisy_posterior",
      [](const std::vector<double>& p, const Matrix& t) { return noisy_posterior(p, TransitionMatrix(t)); },
      py::arg("p"), py::arg("transition"));

  m.def(
      "forward_loss",
      [](const std::vector<double>& p, const Matrix& t, int label) {
        return forward_loss(p, TransitionMatrix(t), label);
      },
      py::arg("p"), py::arg("transition"), py::arg("noisy_label"));

  m.def(
      "transition_error",
      [](const Matrix& a, const Matrix& b) { return transition_error(TransitionMatrix(a), TransitionMatrix(b)); },
      py::arg("estimate"), py::arg("truth"));

  m.def(
      "structure_f1",
      [](const Matrix& hat, const Matrix& truth) {
        const StructureScore s = structure_f1(as_mask(hat), as_mask(truth));
        py::dict out;
        out["precision"] = s.precision;
        out["recall"] = s.recall;
        out["f1"] = s.f1;
        return out;
      },
      py::arg("estimate"), py::arg("truth"));

  m.def(
      "estimate_T_anchor",
      [](const Matrix& probs, double percentile) {
        const AnchorEstimate e = estimate_T_anchor(probs, percentile);
        return py::make_tuple(e.matrix.values(), e.degenerate);
      },
      py::arg("probabilities"), py::arg("percentile") = 97.0);

  m.def(
      "synth_dataset",
      [](std::size_t classes, std::size_t n_per_class, std::size_t dim, double separation, std::uint64_t seed) {
        const LabeledDataset d = synth_dataset(classes, n_per_class, dim, separation, seed);
        py::dict out;
        out["features"] = d.features;
        out["labels"] = d.noisy_labels;
        out["train_index"] = d.train_index;
        out["test_index"] = d.test_index;
        return out;
      },
      py::arg("classes"), py::arg("n_per_class"), py::arg("dim"), py::arg("separation"), py::arg("seed"));

  m.def(
      "run_comparison",
      [](const std::string& config_json, std::size_t jobs) {
        const RunConfig cfg = RunConfig::from_json(nlohmann::json::parse(config_json));
        ComparisonOptions options;
        options.jobs = jobs;
        nlohmann::json report;
        {
          py::gil_scoped_release release;
          report = run_comparison(cfg, options);
        }
        return report.dump();
      },
      py::arg("config_json") = "{}", py::arg("jobs") = 1,
      "Run the seeded comparison; takes and returns JSON text.");

  m.def(
      "strip_timing", [](const std::string& report) { return strip_timing(nlohmann::json::parse(report)).dump(); },
      py::arg("report_json"));

  m.def(
      "elbo_toy_check",
      [](const std::string& toy_json) {
        const ElboCheck r = elbo_toy_check(ElboToy::from_json(nlohmann::json::parse(toy_json)));
        return py::make_tuple(r.elbo, r.loglik);
      },
      py::arg("toy_json"));

  m.def(
      "cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        const int code = cli::run(args, out, err);
        py::print(out.str(), py::arg("end") = "");
        if (!err.str().empty()) py::print(err.str(), py::arg("end") = "", py::arg("file") = py::module_::import("sys").attr("stderr"));
        return code;
      },
      py::arg("args"));
}
