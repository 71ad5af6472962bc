#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fscil/train.hpp"

namespace fscil {

struct ReportOptions {
  bool session_table = true;
  bool confusion_heatmaps = true;
  bool resource_curves = true;
  bool cka_grid = false;
  std::string curve_metric = "a_acc";  // a_acc | g_acc
  int cka_sample = 2048;               // eval examples embedded per model
};

struct TableRow {
  std::string name;
  std::vector<std::optional<double>> session_acc;  // overall accuracy per session
  double base = 0.0, aacc = 0.0;                   // final-session summary
  std::optional<double> inc, gacc;
};

/// One row per run: per-session overall accuracy columns plus the final
/// session's base/incremental/overall/generalized summary.
struct SessionTable {
  int sessions = 0;  // widest session count across rows
  std::vector<TableRow> rows;
};

SessionTable build_session_table(const std::vector<RunRecord>& runs,
                                 const std::vector<std::string>& names);

/// Fixed-width table with per-column styling: best value **bold**, second
/// best _underlined_ (only when two or more rows compete).
std::string render_table_text(const SessionTable& t);

/// Comma-separated values at full double precision; cells parse back to
/// exactly the stored metrics.
std::string render_table_csv(const SessionTable& t);

struct CurvePoint {
  int session = 0, epoch = 0;
  bool final = false;
  double seconds = 0.0;  // cumulative wall-clock across sessions
  double value = 0.0;
};

/// Metric-versus-time points: one per stored snapshot plus one per session
/// final, with cumulative seconds so the x axis is monotone. Points whose
/// metric is undefined are omitted with a warning.
std::vector<CurvePoint> resource_curve(const RunRecord& run, const std::string& metric,
                                       const std::string& run_name,
                                       std::vector<std::string>* warnings = nullptr);

struct ReportBundle {
  std::filesystem::path dir;
  std::vector<std::filesystem::path> files;
  std::vector<std::string> warnings;
};

/// Loads the run directories, refuses mixed protocols, and emits the
/// requested artifacts into out_dir: session table (text + csv), confusion
/// heatmaps, resource curves (png + csv, log-scale time axis), the
/// session-by-session CKA grid, and a provenance file.
ReportBundle write_report(const std::vector<std::filesystem::path>& run_dirs,
                          const std::filesystem::path& out_dir, const ReportOptions& opts);

/// Human-readable dump of one run's stored metrics.
std::string inspect_run(const std::filesystem::path& run_dir);

}  // namespace fscil
