// Python bindings for the pipeline stages and the core statistics.
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "apricot/calibrate.hpp"
#include "apricot/metrics.hpp"
#include "apricot/model.hpp"
#include "apricot/pipeline.hpp"

namespace py = pybind11;
namespace pl = apricot::pipeline;
using namespace apricot;

namespace {

pl::RunConfig resolve(const std::vector<std::string>& overrides, std::optional<std::uint64_t> seed,
                      std::optional<std::filesystem::path> config_file) {
  pl::ConfigSources s;
  s.file = std::move(config_file);
  s.overrides = overrides;
  s.seed = seed;
  return pl::resolve_config(s);
}

void run_stage(const std::string& stage, const std::filesystem::path& out, const std::vector<std::string>& overrides,
               std::optional<std::uint64_t> seed, bool force, std::optional<std::filesystem::path> data,
               std::optional<std::filesystem::path> config_file, bool verbose) {
  const pl::RunConfig config = resolve(overrides, seed, std::move(config_file));
  pl::StageOptions opts;
  opts.out = out;
  opts.force = force;
  if (verbose) opts.log = [](const std::string& m) { py::print(m); };
  py::gil_scoped_release release;
  if (stage == "synth") pl::run_synth(config, opts);
  else if (stage == "prepare") pl::run_prepare(config, opts, data);
  else if (stage == "train") pl::run_train(config, opts);
  else if (stage == "calibrate") pl::run_calibrate(config, opts);
  else if (stage == "eval") pl::run_eval(config, opts);
  else if (stage == "attribute") pl::run_attribute(config, opts);
  else if (stage == "analyze") pl::run_analyze(config, opts);
  else if (stage == "pipeline") pl::run_pipeline(config, opts, data);
  else throw pl::PipelineError(pl::ErrorCategory::kUsage, "unknown stage '" + stage + "'");
}

}  // namespace

PYBIND11_MODULE(_apricot, m) {
  m.doc() = "ICU acuity pipeline: stages, model size and evaluation statistics";

  static py::exception<pl::PipelineError> pipeline_error(m, "PipelineError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const pl::PipelineError& e) {
      const std::string msg = "error[" + std::string(pl::category_name(e.category())) + "]: " + e.what();
      py::set_error(pipeline_error, msg.c_str());
    }
  });

  m.def(
      "resolve_config",
      [](const std::vector<std::string>& overrides, std::optional<std::uint64_t> seed,
         std::optional<std::filesystem::path> config_file) {
        return pl::to_json(resolve(overrides, seed, std::move(config_file)));
      },
      py::arg("overrides") = std::vector<std::string>{}, py::arg("seed") = py::none(),
      py::arg("config_file") = py::none(), "Fully resolved run configuration as a JSON string.");

  m.def("run_stage", &run_stage, py::arg("stage"), py::arg("out"), py::arg("overrides") = std::vector<std::string>{},
        py::arg("seed") = py::none(), py::arg("force") = false, py::arg("data") = py::none(),
        py::arg("config_file") = py::none(), py::arg("verbose") = false,
        "Run one stage (synth, prepare, train, calibrate, eval, attribute, analyze) or the whole pipeline.");

  m.def(
      "param_count",
      [](std::size_t vocab_size, std::size_t n_static) {
        model::ModelConfig c;
        c.vocab_size = vocab_size;
        c.n_static = n_static;
        return model::param_count(c);
      },
      py::arg("vocab_size") = 24, py::arg("n_static") = 16);

  m.def("auroc", [](const std::vector<double>& s, const std::vector<double>& y) { return metrics::auroc(s, y); });
  m.def("auprc", [](const std::vector<double>& s, const std::vector<double>& y) { return metrics::auprc(s, y); });
  m.def("youden_threshold", [](const std::vector<double>& s, const std::vector<double>& y) -> std::optional<py::tuple> {
    const auto r = metrics::youden_threshold(s, y);
    if (!r) return std::nullopt;
    return py::make_tuple(r->threshold, r->j);
  });
  m.def(
      "wilcoxon_ranksum",
      [](const std::vector<double>& a, const std::vector<double>& b) {
        const auto r = metrics::wilcoxon_ranksum(a, b);
        return py::make_tuple(r.u, r.p_two_sided);
      },
      "Mann-Whitney U of the first sample and the two-sided p value.");
  m.def("brier", [](const std::vector<double>& p, const std::vector<double>& y) { return calibrate::brier(p, y); });
  m.def(
      "isotonic_fit",
      [](const std::vector<double>& s, const std::vector<double>& y) {
        const auto f = calibrate::isotonic_fit(s, y);
        return py::make_tuple(f.x, f.y);
      },
      "Knots (x, y) of the nondecreasing least-squares fit.");
  m.def(
      "calibrate_cv3",
      [](const std::vector<double>& s, const std::vector<double>& y, std::uint64_t seed,
         const std::vector<double>& query) {
        const auto cal = calibrate::calibrate_cv3(s, y, seed);
        std::vector<double> out;
        for (double q : query) out.push_back(cal(q));
        return out;
      },
      py::arg("scores"), py::arg("labels"), py::arg("seed"), py::arg("query"),
      "Fit the three-fold averaged isotonic calibrator and apply it to `query`.");
  m.def(
      "decide_status",
      [](const std::vector<bool>& bits) {
        if (bits.size() != kNumHeads) throw py::value_error("expected nine head bits");
        model::HeadBits b{};
        for (std::size_t i = 0; i < kNumHeads; ++i) b[i] = bits[i];
        return std::string(state_name(model::decide_status(b)));
      },
      "Acuity status from nine thresholded head outputs.");
  m.def("head_names", [] {
    std::vector<std::string> out;
    for (std::size_t h = 0; h < kNumHeads; ++h) out.emplace_back(head_name(h));
    return out;
  });
}
