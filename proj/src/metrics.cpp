#include "fscil/metrics.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>

#include "fscil/common.hpp"
#include "fscil/rng.hpp"

namespace fscil {

std::vector<int> argmax_predictions(const Tensor& logits) {
  std::vector<int> preds(logits.n);
  const int C = logits.per_example();
  for (int i = 0; i < logits.n; ++i) {
    const float* z = logits.example(i);
    int best = 0;
    for (int c = 1; c < C; ++c)
      if (z[c] > z[best]) best = c;
    preds[i] = best;
  }
  return preds;
}

int ConfusionMatrix::total() const {
  int s = 0;
  for (int v : counts) s += v;
  return s;
}

int ConfusionMatrix::correct() const {
  int s = 0;
  for (int c = 0; c < num_classes; ++c) s += at(c, c);
  return s;
}

int ConfusionMatrix::row_sum(int t) const {
  int s = 0;
  for (int p = 0; p < num_classes; ++p) s += at(t, p);
  return s;
}

int ConfusionMatrix::col_sum(int p) const {
  int s = 0;
  for (int t = 0; t < num_classes; ++t) s += at(t, p);
  return s;
}

ConfusionMatrix confusion_matrix(const std::vector<int>& labels, const std::vector<int>& preds,
                                 int num_classes) {
  if (labels.size() != preds.size())
    throw ContractError("confusion_matrix: label/prediction count mismatch");
  ConfusionMatrix cm(num_classes);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes || preds[i] < 0 || preds[i] >= num_classes)
      throw ContractError("confusion_matrix: class id out of range");
    cm.at(labels[i], preds[i])++;
  }
  return cm;
}

SplitAccuracy session_accuracies(const ConfusionMatrix& cm, const std::set<int>& base_classes) {
  SplitAccuracy a;
  for (int t = 0; t < cm.num_classes; ++t) {
    int n = cm.row_sum(t);
    int c = cm.at(t, t);
    if (base_classes.count(t)) {
      a.base_examples += n;
      a.base_correct += c;
    } else {
      a.inc_examples += n;
      a.inc_correct += c;
    }
  }
  int total = a.base_examples + a.inc_examples;
  if (total == 0) throw ContractError("session_accuracies: empty confusion matrix");
  a.overall = static_cast<double>(a.base_correct + a.inc_correct) / total;
  a.base = a.base_examples > 0 ? static_cast<double>(a.base_correct) / a.base_examples : 0.0;
  if (a.inc_examples > 0)
    a.incremental = static_cast<double>(a.inc_correct) / a.inc_examples;
  return a;
}

std::vector<double> default_alpha_grid() {
  std::vector<double> g(11);
  for (int i = 0; i <= 10; ++i) g[i] = i / 10.0;
  return g;
}

std::optional<double> generalized_accuracy(const SplitAccuracy& acc,
                                           const std::vector<double>& grid) {
  if (acc.inc_examples == 0) return std::nullopt;
  if (grid.empty()) throw ContractError("generalized_accuracy: empty grid");
  double sum = 0.0;
  for (double alpha : grid) {
    double num = alpha * acc.base_correct + acc.inc_correct;
    double den = alpha * acc.base_examples + acc.inc_examples;
    sum += num / den;
  }
  return sum / grid.size();
}

ClassErrorRates fp_fn_rates(const ConfusionMatrix& cm) {
  ClassErrorRates r;
  const int C = cm.num_classes;
  r.fp_rate.assign(C, 0.0);
  r.fn_rate.assign(C, std::numeric_limits<double>::quiet_NaN());
  int total = cm.total();
  double fp_sum = 0.0, fn_sum = 0.0;
  int fp_n = 0, fn_n = 0;
  for (int c = 0; c < C; ++c) {
    int n_c = cm.row_sum(c);
    int tp = cm.at(c, c);
    int others = total - n_c;
    if (others > 0) {
      r.fp_rate[c] = static_cast<double>(cm.col_sum(c) - tp) / others;
      fp_sum += r.fp_rate[c];
      ++fp_n;
    } else {
      r.fp_rate[c] = std::numeric_limits<double>::quiet_NaN();
    }
    if (n_c > 0) {
      r.fn_rate[c] = static_cast<double>(n_c - tp) / n_c;
      fn_sum += r.fn_rate[c];
      ++fn_n;
    } else {
      r.skipped_classes.push_back(c);
    }
  }
  if (!r.skipped_classes.empty())
    std::cerr << "warning: " << r.skipped_classes.size()
              << " class(es) have no test examples; excluded from the miss-rate mean\n";
  r.mean_fp = fp_n > 0 ? fp_sum / fp_n : 0.0;
  r.mean_fn = fn_n > 0 ? fn_sum / fn_n : 0.0;
  return r;
}

std::optional<double> linear_cka(const Tensor& x, const Tensor& y) {
  if (x.n != y.n) throw ContractError("linear_cka: feature row counts differ");
  if (x.n < 2) throw ContractError("linear_cka: need at least two examples");
  const int N = x.n;
  Eigen::MatrixXd X(N, x.per_example()), Y(N, y.per_example());
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < x.per_example(); ++j) X(i, j) = x.example(i)[j];
    for (int j = 0; j < y.per_example(); ++j) Y(i, j) = y.example(i)[j];
  }
  X.rowwise() -= X.colwise().mean();
  Y.rowwise() -= Y.colwise().mean();
  double xx = (X.transpose() * X).norm();
  double yy = (Y.transpose() * Y).norm();
  if (xx == 0.0 || yy == 0.0) return std::nullopt;
  double xy = (Y.transpose() * X).squaredNorm();
  return xy / (xx * yy);
}

std::vector<int> evaluation_subsample(const std::vector<int>& ids, int max_count, uint64_t seed) {
  if (static_cast<int>(ids.size()) <= max_count) {
    std::vector<int> out = ids;
    std::sort(out.begin(), out.end());
    return out;
  }
  std::vector<int> pool = ids;
  Rng rng(derive_seed(seed, "metrics/cka_subsample"));
  rng.shuffle(pool);
  pool.resize(max_count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

std::vector<std::vector<double>> cka_grid(const std::vector<Tensor>& features) {
  const size_t n = features.size();
  std::vector<std::vector<double>> grid(n, std::vector<double>(n, 0.0));
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i; j < n; ++j) {
      auto v = linear_cka(features[i], features[j]);
      double val = v ? *v : std::numeric_limits<double>::quiet_NaN();
      grid[i][j] = val;
      grid[j][i] = val;
    }
  }
  return grid;
}

SessionMetrics compute_session_metrics(int session, const std::vector<int>& labels,
                                       const std::vector<int>& preds, int num_classes,
                                       const std::set<int>& base_classes) {
  SessionMetrics m;
  m.session = session;
  m.num_test = static_cast<int>(labels.size());
  m.confusion = confusion_matrix(labels, preds, num_classes);
  m.acc = session_accuracies(m.confusion, base_classes);
  m.gacc = generalized_accuracy(m.acc);
  ClassErrorRates rates = fp_fn_rates(m.confusion);
  m.mean_fp = rates.mean_fp;
  m.mean_fn = rates.mean_fn;
  m.per_class_acc.assign(num_classes, std::numeric_limits<double>::quiet_NaN());
  for (int c = 0; c < num_classes; ++c) {
    int row = m.confusion.row_sum(c);
    if (row > 0) m.per_class_acc[c] = static_cast<double>(m.confusion.at(c, c)) / row;
  }
  return m;
}

nlohmann::json session_metrics_json(const SessionMetrics& m) {
  nlohmann::json j;
  j["session"] = m.session;
  j["num_test"] = m.num_test;
  j["overall_acc"] = m.acc.overall;
  j["base_acc"] = m.acc.base;
  j["inc_acc"] = m.acc.incremental ? nlohmann::json(*m.acc.incremental) : nlohmann::json();
  j["gacc"] = m.gacc ? nlohmann::json(*m.gacc) : nlohmann::json();
  j["base_examples"] = m.acc.base_examples;
  j["inc_examples"] = m.acc.inc_examples;
  j["base_correct"] = m.acc.base_correct;
  j["inc_correct"] = m.acc.inc_correct;
  j["mean_fp"] = m.mean_fp;
  j["mean_fn"] = m.mean_fn;
  nlohmann::json per_class = nlohmann::json::array();
  for (double a : m.per_class_acc)
    per_class.push_back(std::isnan(a) ? nlohmann::json() : nlohmann::json(a));
  j["per_class_acc"] = std::move(per_class);
  j["num_classes"] = m.confusion.num_classes;
  j["confusion"] = m.confusion.counts;
  return j;
}

SessionMetrics session_metrics_from_json(const nlohmann::json& j) {
  SessionMetrics m;
  m.session = j.at("session");
  m.num_test = j.at("num_test");
  m.acc.overall = j.at("overall_acc");
  m.acc.base = j.at("base_acc");
  if (!j.at("inc_acc").is_null()) m.acc.incremental = j.at("inc_acc").get<double>();
  if (!j.at("gacc").is_null()) m.gacc = j.at("gacc").get<double>();
  m.acc.base_examples = j.at("base_examples");
  m.acc.inc_examples = j.at("inc_examples");
  m.acc.base_correct = j.at("base_correct");
  m.acc.inc_correct = j.at("inc_correct");
  m.mean_fp = j.at("mean_fp");
  m.mean_fn = j.at("mean_fn");
  if (j.contains("per_class_acc")) {
    for (const auto& cell : j.at("per_class_acc"))
      m.per_class_acc.push_back(cell.is_null() ? std::numeric_limits<double>::quiet_NaN()
                                               : cell.get<double>());
  }
  m.confusion = ConfusionMatrix(j.at("num_classes").get<int>());
  m.confusion.counts = j.at("confusion").get<std::vector<int>>();
  return m;
}

}  // namespace fscil
