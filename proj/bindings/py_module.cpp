#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>
#include <string>
#include <vector>

#include "fscil/cli.hpp"
#include "fscil/common.hpp"
#include "fscil/config.hpp"
#include "fscil/data.hpp"
#include "fscil/metrics.hpp"
#include "fscil/report.hpp"
#include "fscil/rng.hpp"
#include "fscil/search.hpp"
#include "fscil/train.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using nlohmann::json;
using namespace fscil;

namespace {

// JSON text is the boundary format; the fscil_bench package turns it back
// into dicts so this layer stays free of recursive object conversion.
json parse_text(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

std::string normalize_config_py(const std::string& text) {
  return render_experiment_config(parse_experiment_config(parse_text(text))).dump(2);
}

uint64_t config_hash_py(const std::string& text) {
  return config_hash(parse_experiment_config(parse_text(text)));
}

std::string train_py(const std::string& text, const std::string& output, bool resume,
                     double scale) {
  ExperimentConfig cfg = parse_experiment_config(parse_text(text));
  if (!output.empty()) cfg.output_dir = output;
  apply_scale(cfg, scale);
  fs::path run_dir = resolve_output_path(cfg.output_dir);
  RunOptions opts;
  opts.run_dir = run_dir;
  opts.resume = resume;
  run_training(cfg, load_dataset(cfg), opts);
  RunRecord rec = load_run_record(run_dir);
  json sessions = json::array();
  for (const SessionResult& s : rec.sessions) sessions.push_back(session_metrics_json(s.metrics));
  return json{{"run_dir", run_dir.string()},
              {"strategy", rec.strategy},
              {"status", rec.status},
              {"sessions", sessions}}
      .dump();
}

std::string search_py(const std::string& text, const std::string& output, int workers,
                      double scale) {
  ExperimentConfig cfg = parse_experiment_config(parse_text(text));
  if (!cfg.search) throw ConfigError("search: the config has no search block");
  if (!output.empty()) cfg.output_dir = output;
  apply_scale(cfg, scale);
  SearchSpace space = default_search_space(cfg.search->technique);
  std::vector<TrialRecord> records = run_random_search(
      cfg, space, cfg.search->trials, resolve_output_path(cfg.output_dir), workers);
  json arr = json::array();
  for (const TrialRecord& r : records) arr.push_back(trial_record_json(r));
  return arr.dump();
}

std::string report_py(const std::vector<std::string>& dirs, const std::string& output,
                      bool session_table, bool confusion_heatmaps, bool resource_curves,
                      bool cka_grid, const std::string& metric, int cka_sample) {
  ReportOptions opts;
  opts.session_table = session_table;
  opts.confusion_heatmaps = confusion_heatmaps;
  opts.resource_curves = resource_curves;
  opts.cka_grid = cka_grid;
  opts.curve_metric = metric;
  opts.cka_sample = cka_sample;
  std::vector<fs::path> run_dirs(dirs.begin(), dirs.end());
  ReportBundle b = write_report(run_dirs, resolve_output_path(output), opts);
  json files = json::array();
  for (const fs::path& f : b.files) files.push_back(f.string());
  return json{{"dir", b.dir.string()}, {"files", files}, {"warnings", b.warnings}}.dump();
}

Tensor tensor_from_array(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw ConfigError("linear_cka: expected a 2-d array of shape (n, d)");
  Tensor t = Tensor::matrix(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + t.size(), t.data());
  return t;
}

py::object linear_cka_py(
    const py::array_t<float, py::array::c_style | py::array::forcecast>& x,
    const py::array_t<float, py::array::c_style | py::array::forcecast>& y) {
  std::optional<double> v = linear_cka(tensor_from_array(x), tensor_from_array(y));
  if (!v) return py::none();
  return py::float_(*v);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Few-shot class-incremental learning benchmark core";
  m.attr("__version__") = "0.1.0";

  py::register_exception<ConfigError>(m, "ConfigError");
  py::register_exception<DataError>(m, "DataError");
  py::register_exception<TrainingError>(m, "TrainingError");

  m.def("normalize_config", &normalize_config_py, py::arg("config"),
        "Validate config text and return it with every default filled in.");
  m.def("config_hash", &config_hash_py, py::arg("config"),
        "Stable hash of the fully rendered config.");
  m.def("derive_seed", &derive_seed, py::arg("seed"), py::arg("purpose"),
        "Per-purpose RNG stream seed derived from the master seed.");
  m.def("train", &train_py, py::arg("config"), py::arg("output") = "",
        py::arg("resume") = false, py::arg("scale") = 1.0,
        py::call_guard<py::gil_scoped_release>(),
        "Run one experiment; returns a JSON summary of the run record.");
  m.def("search", &search_py, py::arg("config"), py::arg("output") = "", py::arg("workers") = 1,
        py::arg("scale") = 1.0, py::call_guard<py::gil_scoped_release>(),
        "Random hyperparameter search; returns the trial records as JSON.");
  m.def("report", &report_py, py::arg("run_dirs"), py::arg("output"),
        py::arg("session_table") = true, py::arg("confusion_heatmaps") = true,
        py::arg("resource_curves") = true, py::arg("cka_grid") = false,
        py::arg("metric") = "a_acc", py::arg("cka_sample") = 2048,
        py::call_guard<py::gil_scoped_release>(),
        "Emit tables and figures for run directories; returns a JSON bundle.");
  m.def("inspect", [](const std::string& dir) { return inspect_run(dir); }, py::arg("run_dir"),
        "One line per session of a stored run.");
  m.def("linear_cka", &linear_cka_py, py::arg("x"), py::arg("y"),
        "Linear centered kernel alignment between two (n, d) representations; "
        "None when either input has no variance.");
}
