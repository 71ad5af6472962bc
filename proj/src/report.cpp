#include "fscil/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "fscil/common.hpp"
#include "fscil/config.hpp"
#include "fscil/search.hpp"

namespace fscil {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt_full(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v * 100.0);
  return buf;
}

std::optional<double> metric_of(const SessionMetrics& m, const std::string& metric) {
  if (metric == "a_acc") return m.acc.overall;
  return m.gacc;  // canonical_metric leaves only these two
}

}  // namespace

SessionTable build_session_table(const std::vector<RunRecord>& runs,
                                 const std::vector<std::string>& names) {
  if (runs.size() != names.size()) throw ContractError("table: one name per run required");
  SessionTable t;
  for (const auto& r : runs)
    t.sessions = std::max(t.sessions, static_cast<int>(r.sessions.size()));
  for (size_t i = 0; i < runs.size(); ++i) {
    const RunRecord& r = runs[i];
    if (r.sessions.empty())
      throw DataError("table: run " + names[i] + " has no completed sessions");
    TableRow row;
    row.name = names[i];
    row.session_acc.assign(t.sessions, std::nullopt);
    for (const auto& s : r.sessions)
      if (s.session >= 0 && s.session < t.sessions)
        row.session_acc[s.session] = s.metrics.acc.overall;
    const SessionMetrics& last = r.sessions.back().metrics;
    row.base = last.acc.base;
    row.inc = last.acc.incremental;
    row.aacc = last.acc.overall;
    row.gacc = last.gacc;
    t.rows.push_back(std::move(row));
  }
  return t;
}

namespace {

/// Per-column decoration: cells holding the best value get **bold**, the
/// second-best distinct value gets _underline_. Needs two competing rows.
void style_column(std::vector<std::string>& cells, const std::vector<std::optional<double>>& vals) {
  std::vector<double> distinct;
  int present = 0;
  for (const auto& v : vals)
    if (v) {
      ++present;
      distinct.push_back(*v);
    }
  if (present < 2) return;
  std::sort(distinct.begin(), distinct.end(), std::greater<>());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  for (size_t i = 0; i < vals.size(); ++i) {
    if (!vals[i]) continue;
    if (*vals[i] == distinct[0])
      cells[i] = "**" + cells[i] + "**";
    else if (distinct.size() > 1 && *vals[i] == distinct[1])
      cells[i] = "_" + cells[i] + "_";
  }
}

}  // namespace

std::string render_table_text(const SessionTable& t) {
  const int n_rows = static_cast<int>(t.rows.size());
  std::vector<std::string> header = {"Method"};
  for (int s = 0; s < t.sessions; ++s) header.push_back("S" + std::to_string(s));
  for (const char* h : {"Base", "Inc", "aAcc", "gAcc"}) header.push_back(h);
  const int n_cols = static_cast<int>(header.size());

  // column-major values for styling, column 0 is the name
  std::vector<std::vector<std::optional<double>>> vals(n_cols);
  for (const TableRow& r : t.rows) {
    for (int s = 0; s < t.sessions; ++s) vals[1 + s].push_back(r.session_acc[s]);
    vals[1 + t.sessions + 0].push_back(r.base);
    vals[1 + t.sessions + 1].push_back(r.inc);
    vals[1 + t.sessions + 2].push_back(r.aacc);
    vals[1 + t.sessions + 3].push_back(r.gacc);
  }
  std::vector<std::vector<std::string>> cells(n_cols);
  for (int c = 0; c < n_cols; ++c) {
    if (c == 0) {
      for (const TableRow& r : t.rows) cells[0].push_back(r.name);
      continue;
    }
    for (const auto& v : vals[c]) cells[c].push_back(v ? fmt_pct(*v) : "-");
    style_column(cells[c], vals[c]);
  }

  std::vector<size_t> width(n_cols);
  for (int c = 0; c < n_cols; ++c) {
    width[c] = header[c].size();
    for (const auto& s : cells[c]) width[c] = std::max(width[c], s.size());
  }
  std::ostringstream out;
  auto emit_row = [&](const std::vector<std::string>& row) {
    for (int c = 0; c < n_cols; ++c) {
      std::string cell = row[c];
      if (c == 0)
        cell.resize(width[c], ' ');
      else
        cell.insert(0, width[c] - cell.size(), ' ');
      out << cell << (c + 1 == n_cols ? "" : "  ");
    }
    out << "\n";
  };
  emit_row(header);
  std::string rule;
  for (int c = 0; c < n_cols; ++c) rule += std::string(width[c], '-') + (c + 1 == n_cols ? "" : "  ");
  out << rule << "\n";
  for (int r = 0; r < n_rows; ++r) {
    std::vector<std::string> row;
    for (int c = 0; c < n_cols; ++c) row.push_back(cells[c][r]);
    emit_row(row);
  }
  return out.str();
}

std::string render_table_csv(const SessionTable& t) {
  std::ostringstream out;
  out << "method";
  for (int s = 0; s < t.sessions; ++s) out << ",s" << s << "_aacc";
  out << ",base,inc,aacc,gacc\n";
  for (const TableRow& r : t.rows) {
    out << r.name;
    for (int s = 0; s < t.sessions; ++s)
      out << "," << (r.session_acc[s] ? fmt_full(*r.session_acc[s]) : "");
    out << "," << fmt_full(r.base);
    out << "," << (r.inc ? fmt_full(*r.inc) : "");
    out << "," << fmt_full(r.aacc);
    out << "," << (r.gacc ? fmt_full(*r.gacc) : "");
    out << "\n";
  }
  return out.str();
}

std::vector<CurvePoint> resource_curve(const RunRecord& run, const std::string& metric,
                                       const std::string& run_name,
                                       std::vector<std::string>* warnings) {
  const std::string m = canonical_metric(metric);
  std::vector<CurvePoint> pts;
  double cum = 0.0;
  auto push = [&](const SessionMetrics& sm, int session, int epoch, bool final, double seconds) {
    std::optional<double> v = metric_of(sm, m);
    if (!v) {
      if (warnings)
        warnings->push_back("run " + run_name + ": session " + std::to_string(session) +
                            " epoch " + std::to_string(epoch) + ": " + m +
                            " undefined, point omitted");
      return;
    }
    pts.push_back({session, epoch, final, seconds, *v});
  };
  for (const SessionResult& s : run.sessions) {
    for (const EpochSnapshot& snap : s.snapshots)
      push(snap.metrics, s.session, snap.epoch, false, cum + snap.seconds);
    push(s.metrics, s.session, static_cast<int>(s.epoch_losses.size()), true, cum + s.seconds);
    cum += s.seconds;
  }
  return pts;
}

// ---- figures ----

namespace {

const std::vector<cv::Scalar>& palette() {
  static const std::vector<cv::Scalar> p = {
      {180, 119, 31},  {14, 127, 255},  {44, 160, 44},  {40, 39, 214},
      {189, 103, 148}, {75, 86, 140},   {194, 119, 227}, {127, 127, 127}};
  return p;
}

/// Values in [0,1] rendered cell-by-cell through the viridis colormap.
void heatmap_png(const std::vector<std::vector<double>>& values, const fs::path& path) {
  const int rows = static_cast<int>(values.size());
  const int cols = rows ? static_cast<int>(values[0].size()) : 0;
  if (!rows || !cols) throw ContractError("heatmap: empty value grid");
  cv::Mat gray(rows, cols, CV_8UC1);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      double v = values[i][j];
      if (!std::isfinite(v)) v = 0.0;
      v = std::clamp(v, 0.0, 1.0);
      gray.at<uint8_t>(i, j) = static_cast<uint8_t>(std::lround(v * 255.0));
    }
  const int cell = std::max(6, 384 / std::max(rows, cols));
  cv::Mat big;
  cv::resize(gray, big, {}, cell, cell, cv::INTER_NEAREST);
  cv::Mat color;
  cv::applyColorMap(big, color, cv::COLORMAP_VIRIDIS);
  if (!cv::imwrite(path.string(), color))
    throw DataError("report: cannot write " + path.string());
}

void curves_png(const std::vector<std::pair<std::string, std::vector<CurvePoint>>>& series,
                const std::string& metric, const fs::path& path) {
  double lx_min = std::numeric_limits<double>::infinity();
  double lx_max = -lx_min;
  for (const auto& [name, pts] : series)
    for (const CurvePoint& p : pts) {
      double lx = std::log10(std::max(p.seconds, 1e-4));
      lx_min = std::min(lx_min, lx);
      lx_max = std::max(lx_max, lx);
    }
  if (!std::isfinite(lx_min)) throw DataError("report: no curve points to plot");
  if (lx_max - lx_min < 1e-9) {
    lx_min -= 0.5;
    lx_max += 0.5;
  }

  const int W = 900, H = 600, left = 80, right = 30, top = 40, bottom = 70;
  cv::Mat img(H, W, CV_8UC3, cv::Scalar(255, 255, 255));
  auto X = [&](double sec) {
    double lx = std::log10(std::max(sec, 1e-4));
    return left + static_cast<int>(std::lround((lx - lx_min) / (lx_max - lx_min) *
                                               (W - left - right)));
  };
  auto Y = [&](double v) {
    return H - bottom - static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) *
                                                     (H - top - bottom)));
  };
  const cv::Scalar black(0, 0, 0), gridc(220, 220, 220);
  for (int i = 0; i <= 5; ++i) {
    double v = i / 5.0;
    cv::line(img, {left, Y(v)}, {W - right, Y(v)}, gridc, 1);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.1f", v);
    cv::putText(img, buf, {left - 45, Y(v) + 5}, cv::FONT_HERSHEY_SIMPLEX, 0.45, black, 1);
  }
  bool any_decade = false;
  for (int k = static_cast<int>(std::ceil(lx_min)); k <= static_cast<int>(std::floor(lx_max));
       ++k) {
    any_decade = true;
    int x = X(std::pow(10.0, k));
    cv::line(img, {x, top}, {x, H - bottom}, gridc, 1);
    cv::putText(img, "1e" + std::to_string(k), {x - 15, H - bottom + 25},
                cv::FONT_HERSHEY_SIMPLEX, 0.45, black, 1);
  }
  if (!any_decade) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%.3gs", std::pow(10.0, lx_min));
    cv::putText(img, buf, {left - 10, H - bottom + 25}, cv::FONT_HERSHEY_SIMPLEX, 0.45, black, 1);
    std::snprintf(buf, sizeof(buf), "%.3gs", std::pow(10.0, lx_max));
    cv::putText(img, buf, {W - right - 40, H - bottom + 25}, cv::FONT_HERSHEY_SIMPLEX, 0.45,
                black, 1);
  }
  cv::rectangle(img, {left, top}, {W - right, H - bottom}, black, 1);
  cv::putText(img, "seconds (log scale)", {W / 2 - 80, H - 20}, cv::FONT_HERSHEY_SIMPLEX, 0.5,
              black, 1);
  cv::putText(img, metric, {10, 25}, cv::FONT_HERSHEY_SIMPLEX, 0.5, black, 1);

  for (size_t si = 0; si < series.size(); ++si) {
    const auto& [name, pts] = series[si];
    const cv::Scalar& col = palette()[si % palette().size()];
    for (size_t i = 1; i < pts.size(); ++i)
      cv::line(img, {X(pts[i - 1].seconds), Y(pts[i - 1].value)},
               {X(pts[i].seconds), Y(pts[i].value)}, col, 2);
    for (const CurvePoint& p : pts)
      cv::circle(img, {X(p.seconds), Y(p.value)}, p.final ? 5 : 3, col, cv::FILLED);
    int ly = top + 20 + static_cast<int>(si) * 22;
    cv::rectangle(img, {left + 12, ly - 10}, {left + 28, ly + 2}, col, cv::FILLED);
    cv::putText(img, name, {left + 36, ly}, cv::FONT_HERSHEY_SIMPLEX, 0.5, black, 1);
  }
  if (!cv::imwrite(path.string(), img))
    throw DataError("report: cannot write " + path.string());
}

std::vector<std::string> run_names(const std::vector<fs::path>& dirs) {
  std::vector<std::string> names;
  std::map<std::string, int> seen;
  for (const fs::path& d : dirs) {
    fs::path clean = d;
    clean.make_preferred();
    std::string base = clean.filename().string();
    if (base.empty()) base = clean.parent_path().filename().string();
    if (base.empty()) base = "run";
    int n = seen[base]++;
    names.push_back(n == 0 ? base : base + "#" + std::to_string(n));
  }
  return names;
}

}  // namespace

ReportBundle write_report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir,
                          const ReportOptions& opts) {
  if (run_dirs.empty()) throw ConfigError("report: no run directories given");
  std::vector<RunRecord> runs;
  for (const fs::path& d : run_dirs) runs.push_back(load_run_record(d));
  std::vector<std::string> names = run_names(run_dirs);
  for (size_t i = 1; i < runs.size(); ++i) {
    if (runs[i].protocol_hash != runs[0].protocol_hash)
      throw DataError("report: " + names[i] + " and " + names[0] +
                      " were produced under different protocols; their sessions are not "
                      "comparable");
  }
  for (size_t i = 0; i < runs.size(); ++i)
    if (runs[i].sessions.empty())
      throw DataError("report: " + names[i] + " has no completed sessions");

  ReportBundle bundle;
  bundle.dir = out_dir;
  fs::create_directories(out_dir);
  auto emit = [&](const fs::path& f) { bundle.files.push_back(f); };

  if (opts.session_table) {
    SessionTable table = build_session_table(runs, names);
    atomic_write_text(out_dir / "table.txt", render_table_text(table));
    atomic_write_text(out_dir / "table.csv", render_table_csv(table));
    emit(out_dir / "table.txt");
    emit(out_dir / "table.csv");
  }

  if (opts.confusion_heatmaps) {
    for (size_t i = 0; i < runs.size(); ++i) {
      const SessionMetrics& last = runs[i].sessions.back().metrics;
      const ConfusionMatrix& cm = last.confusion;
      std::vector<std::vector<double>> prob(cm.num_classes,
                                            std::vector<double>(cm.num_classes, 0.0));
      for (int t = 0; t < cm.num_classes; ++t) {
        int rs = cm.row_sum(t);
        if (!rs) continue;
        for (int p = 0; p < cm.num_classes; ++p)
          prob[t][p] = static_cast<double>(cm.at(t, p)) / rs;
      }
      fs::path f = out_dir / ("confusion_" + names[i] + "_s" +
                              std::to_string(runs[i].sessions.back().session) + ".png");
      heatmap_png(prob, f);
      emit(f);
    }
  }

  if (opts.resource_curves) {
    std::vector<std::pair<std::string, std::vector<CurvePoint>>> series;
    std::ostringstream csv;
    csv << "run,session,epoch,final,seconds,value\n";
    for (size_t i = 0; i < runs.size(); ++i) {
      std::vector<CurvePoint> pts =
          resource_curve(runs[i], opts.curve_metric, names[i], &bundle.warnings);
      for (const CurvePoint& p : pts)
        csv << names[i] << "," << p.session << "," << p.epoch << "," << (p.final ? 1 : 0) << ","
            << fmt_full(p.seconds) << "," << fmt_full(p.value) << "\n";
      if (!pts.empty()) series.emplace_back(names[i], std::move(pts));
    }
    atomic_write_text(out_dir / "resource_curves.csv", csv.str());
    emit(out_dir / "resource_curves.csv");
    if (series.empty()) {
      bundle.warnings.push_back("resource curves: no plottable points, figure skipped");
    } else {
      curves_png(series, canonical_metric(opts.curve_metric), out_dir / "resource_curves.png");
      emit(out_dir / "resource_curves.png");
    }
  }

  if (opts.cka_grid) {
    // Session-by-session representation similarity between the first two
    // runs (or of the first run against itself). Both sides embed the first
    // run's evaluation subsample so the comparison shares examples.
    const RunRecord& ra = runs[0];
    const RunRecord& rb = runs.size() > 1 ? runs[1] : runs[0];
    const fs::path da = run_dirs[0];
    const fs::path db = run_dirs.size() > 1 ? run_dirs[1] : run_dirs[0];
    if (!ra.config_snapshot.is_object())
      throw DataError("report: " + names[0] + " lacks a config snapshot for the cka grid");
    ExperimentConfig cfg = parse_experiment_config(ra.config_snapshot);
    if (runs.size() > 1 && rb.config_snapshot.is_object()) {
      ExperimentConfig cfg_b = parse_experiment_config(rb.config_snapshot);
      if (render_experiment_config(cfg_b).at("dataset") !=
              render_experiment_config(cfg).at("dataset") ||
          cfg_b.seed != cfg.seed)
        bundle.warnings.push_back(
            "cka grid: runs were configured with different data; both models embed the first "
            "run's evaluation set");
    }
    DatasetPtr ds = load_dataset(cfg);
    ProtocolConfig pc = protocol_config(cfg);
    pc.total_classes = ds->num_classes;
    FscilProtocol proto = build_protocol(pc);
    if (!ds->normalized) ds->normalize_with(session_view(proto, *ds, 0).train_indices);
    const int sessions = static_cast<int>(std::min(ra.sessions.size(), rb.sessions.size()));
    std::vector<int> ids = cumulative_test_ids(proto, *ds, sessions - 1);
    ids = evaluation_subsample(ids, opts.cka_sample, derive_seed(cfg.seed, "metrics/cka_subsample"));
    EvalView view(ds, ids);
    auto embed = [&](const fs::path& dir, int s) {
      Model m = model_from_checkpoint(dir / "checkpoints" / ("s" + std::to_string(s) +
                                                             "_final.ckpt"));
      return eval_embeddings(m, view);
    };
    std::vector<Tensor> ea, eb;
    for (int s = 0; s < sessions; ++s) ea.push_back(embed(da, s));
    for (int s = 0; s < sessions; ++s) eb.push_back(embed(db, s));
    std::vector<std::vector<double>> grid(sessions, std::vector<double>(sessions));
    std::ostringstream csv;
    csv << "a_session,b_session,cka\n";
    for (int i = 0; i < sessions; ++i)
      for (int j = 0; j < sessions; ++j) {
        std::optional<double> v = linear_cka(ea[i], eb[j]);
        grid[i][j] = v ? *v : std::numeric_limits<double>::quiet_NaN();
        csv << i << "," << j << "," << (v ? fmt_full(*v) : "nan") << "\n";
      }
    atomic_write_text(out_dir / "cka_grid.csv", csv.str());
    heatmap_png(grid, out_dir / "cka_grid.png");
    emit(out_dir / "cka_grid.csv");
    emit(out_dir / "cka_grid.png");
  }

  json prov;
  prov["runs"] = json::array();
  for (size_t i = 0; i < runs.size(); ++i) {
    json r = {{"name", names[i]},
              {"path", run_dirs[i].string()},
              {"strategy", runs[i].strategy},
              {"status", runs[i].status},
              {"protocol_hash", runs[i].protocol_hash}};
    if (runs[i].config_snapshot.is_object()) {
      ExperimentConfig cfg = parse_experiment_config(runs[i].config_snapshot);
      r["seed"] = cfg.seed;
      r["config_hash"] = config_hash(cfg);
    }
    prov["runs"].push_back(std::move(r));
  }
  atomic_write_json(out_dir / "provenance.json", prov);
  emit(out_dir / "provenance.json");
  return bundle;
}

std::string inspect_run(const fs::path& run_dir) {
  RunRecord rec = load_run_record(run_dir);
  std::ostringstream out;
  out << "run " << run_dir.string() << "\n";
  out << "strategy " << rec.strategy << "  status " << rec.status << "  protocol "
      << rec.protocol_hash << "\n";
  for (const SessionResult& s : rec.sessions) {
    const SessionMetrics& m = s.metrics;
    out << "session " << s.session << ": aAcc " << fmt_pct(m.acc.overall) << "  base "
        << fmt_pct(m.acc.base) << "  inc "
        << (m.acc.incremental ? fmt_pct(*m.acc.incremental) : std::string("-")) << "  gAcc "
        << (m.gacc ? fmt_pct(*m.gacc) : std::string("-")) << "  test " << m.num_test;
    if (!s.epoch_losses.empty())
      out << "  epochs " << s.epoch_losses.size() << "  loss " << s.epoch_losses.front() << " -> "
          << s.epoch_losses.back();
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", s.seconds);
    out << "  seconds " << buf << "\n";
  }
  return out.str();
}

}  // namespace fscil
