#include "fscil/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fscil/common.hpp"
#include "fscil/config.hpp"
#include "fscil/data.hpp"
#include "fscil/report.hpp"
#include "fscil/search.hpp"
#include "fscil/train.hpp"

namespace fscil {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path resolve_output_path(const std::string& p) {
  fs::path path(p);
  if (path.is_absolute()) return path;
  if (const char* root = std::getenv("FSCIL_OUTPUT_ROOT"); root && *root)
    return fs::path(root) / path;
  return path;
}

namespace {

int cmd_train(const std::string& config, const std::string& output, bool resume, double scale) {
  ExperimentConfig cfg = load_experiment_config(config);
  if (!output.empty()) cfg.output_dir = output;
  apply_scale(cfg, scale);
  fs::path run_dir = resolve_output_path(cfg.output_dir);
  RunOptions opts;
  opts.run_dir = run_dir;
  opts.resume = resume;
  run_training(cfg, load_dataset(cfg), opts);
  std::cout << inspect_run(run_dir);
  return 0;
}

int cmd_search(const std::string& config, const std::string& output, bool resume, int workers,
               const std::string& metric_flag, double scale) {
  ExperimentConfig cfg = load_experiment_config(config);
  if (!cfg.search) throw ConfigError("search: the config has no search block");
  if (!output.empty()) cfg.output_dir = output;
  apply_scale(cfg, scale);
  fs::path dir = resolve_output_path(cfg.output_dir);
  if (!resume && fs::exists(dir) && !fs::is_empty(dir))
    throw ConfigError("search: " + dir.string() +
                      " already holds results; pass --resume to continue it");
  const std::string metric =
      canonical_metric(metric_flag.empty() ? cfg.search->metric : metric_flag);

  SearchSpace space = default_search_space(cfg.search->technique);
  std::vector<TrialRecord> records =
      run_random_search(cfg, space, cfg.search->trials, dir, workers);

  std::string diagnostic;
  std::vector<TrialRecord> ranking =
      select_top(records, metric, static_cast<int>(records.size()), &diagnostic);
  json summary = load_json_file(dir / "search.json");
  summary["metric"] = metric;
  json order = json::array();
  for (const TrialRecord& r : ranking) order.push_back(r.trial);
  summary["ranking"] = order;
  json top = json::array();
  for (size_t i = 0; i < ranking.size() && i < static_cast<size_t>(cfg.search->top_k); ++i)
    top.push_back(ranking[i].trial);
  summary["top"] = top;
  if (!diagnostic.empty()) summary["diagnostic"] = diagnostic;
  atomic_write_json(dir / "search.json", summary);

  int failed = 0;
  for (const TrialRecord& r : records)
    if (r.status == "failed") ++failed;
  std::cout << "search " << dir.string() << ": " << records.size() - failed << " complete, "
            << failed << " failed\n";
  for (const json& t : summary["top"]) {
    const TrialRecord& r = records.at(t.get<size_t>());
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", *r.metric_value(metric));
    std::cout << "  t" << r.trial << "  " << metric << " " << buf << "  " << r.params.dump()
              << "\n";
  }
  if (!diagnostic.empty()) std::cout << "note: " << diagnostic << "\n";
  return 0;
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& output,
               const std::string& config, const std::string& metric, bool cka) {
  ReportOptions opts;
  if (!config.empty()) {
    ReportConfig rc = load_experiment_config(config).report;
    opts.session_table = rc.session_table;
    opts.confusion_heatmaps = rc.confusion_heatmaps;
    opts.resource_curves = rc.resource_curves;
    opts.cka_grid = rc.cka_grid;
  }
  if (cka) opts.cka_grid = true;
  if (!metric.empty()) opts.curve_metric = canonical_metric(metric);
  std::vector<fs::path> run_dirs(dirs.begin(), dirs.end());
  ReportBundle b = write_report(run_dirs, resolve_output_path(output), opts);
  std::cout << "report " << b.dir.string() << "\n";
  for (const fs::path& f : b.files) std::cout << "  wrote " << f.filename().string() << "\n";
  for (const std::string& w : b.warnings) std::cerr << "warning: " << w << "\n";
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{
      "Few-shot class-incremental learning benchmark.\n"
      "Relative output paths are placed under $FSCIL_OUTPUT_ROOT when it is set.\n"
      "Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime failure."};
  app.require_subcommand(1);

  std::string config, output, metric, inspect_dir;
  std::string report_out = "report";
  std::vector<std::string> report_dirs;
  bool resume = false, cka = false;
  int workers = 1;
  double scale = 1.0;

  CLI::App* train = app.add_subcommand("train", "Run one experiment end to end");
  train->add_option("--config", config, "experiment config file")->required();
  train->add_option("--output", output, "run directory (overrides the config)");
  train->add_flag("--resume", resume, "continue an interrupted run");
  train->add_option("--scale", scale, "shrink epochs and sample counts by this factor");

  CLI::App* search = app.add_subcommand("search", "Random hyperparameter search");
  search->add_option("--config", config, "experiment config file with a search block")
      ->required();
  search->add_option("--output", output, "search directory (overrides the config)");
  search->add_flag("--resume", resume, "skip trials that already have records");
  search->add_option("--workers", workers, "parallel trial workers")
      ->check(CLI::PositiveNumber);
  search->add_option("--metric", metric, "ranking metric: a_acc or g_acc");
  search->add_option("--scale", scale, "shrink epochs and sample counts by this factor");

  CLI::App* report = app.add_subcommand("report", "Tables and figures from run directories");
  report->add_option("dirs", report_dirs, "run directories to compare")->required();
  report->add_option("--output", report_out, "report directory");
  report->add_option("--config", config, "config whose report block picks the artifacts");
  report->add_option("--metric", metric, "resource-curve metric: a_acc or g_acc");
  report->add_flag("--cka", cka, "emit the session-pair representation similarity grid");

  CLI::App* inspect = app.add_subcommand("inspect", "Dump a run's metrics as text");
  inspect->add_option("dir", inspect_dir, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (train->parsed()) return cmd_train(config, output, resume, scale);
    if (search->parsed()) return cmd_search(config, output, resume, workers, metric, scale);
    if (report->parsed()) return cmd_report(report_dirs, report_out, config, metric, cka);
    std::cout << inspect_run(inspect_dir);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}

}  // namespace fscil
