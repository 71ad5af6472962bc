#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <vector>

#include <json.hpp>

#include "fscil/tensor.hpp"

namespace fscil {

/// Highest-scoring class per row; ties resolve to the lowest class id.
std::vector<int> argmax_predictions(const Tensor& logits);

struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<int> counts;  // row-major [true][pred]

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int n) : num_classes(n), counts(static_cast<size_t>(n) * n, 0) {}

  int& at(int t, int p) { return counts[static_cast<size_t>(t) * num_classes + p]; }
  int at(int t, int p) const { return counts[static_cast<size_t>(t) * num_classes + p]; }
  int total() const;
  int correct() const;
  int row_sum(int t) const;
  int col_sum(int p) const;
};

ConfusionMatrix confusion_matrix(const std::vector<int>& labels, const std::vector<int>& preds,
                                 int num_classes);

/// Micro accuracies over all / base-class / newer-class test examples.
struct SplitAccuracy {
  double overall = 0.0;
  double base = 0.0;
  std::optional<double> incremental;  // absent when no incremental examples
  int base_examples = 0, inc_examples = 0;
  int base_correct = 0, inc_correct = 0;
};

SplitAccuracy session_accuracies(const ConfusionMatrix& cm, const std::set<int>& base_classes);

/// Alpha grid 0.0, 0.1, ..., 1.0.
std::vector<double> default_alpha_grid();

/// Mean over the grid of A(a) = (a*Nb*Ab + Nn*An) / (a*Nb + Nn), a weighting
/// that sweeps from newer-classes-only (a=0) to plain accuracy (a=1).
/// Absent when the split has no incremental examples.
std::optional<double> generalized_accuracy(const SplitAccuracy& acc,
                                           const std::vector<double>& grid = default_alpha_grid());

struct ClassErrorRates {
  std::vector<double> fp_rate;  // share of other-class examples drawn into c
  std::vector<double> fn_rate;  // share of class-c examples lost; NaN if no examples
  double mean_fp = 0.0, mean_fn = 0.0;  // over classes where defined
  std::vector<int> skipped_classes;     // classes with no test examples
};

ClassErrorRates fp_fn_rates(const ConfusionMatrix& cm);

/// Linear centered-kernel alignment between two feature matrices [N,D1] and
/// [N,D2] over the same examples, computed in double precision. Absent when
/// either side is constant (zero variance).
std::optional<double> linear_cka(const Tensor& x, const Tensor& y);

/// Deterministic evaluation subsample: the full id list when it fits,
/// otherwise a seeded draw of max_count ids, returned sorted.
std::vector<int> evaluation_subsample(const std::vector<int>& ids, int max_count, uint64_t seed);

/// Pairwise CKA over a set of feature matrices; NaN marks undefined cells.
std::vector<std::vector<double>> cka_grid(const std::vector<Tensor>& features);

/// Everything the report needs about one session's evaluation.
struct SessionMetrics {
  int session = 0;
  int num_test = 0;
  SplitAccuracy acc;
  std::optional<double> gacc;
  double mean_fp = 0.0, mean_fn = 0.0;
  std::vector<double> per_class_acc;  // diagonal / row sum; NaN for empty rows
  ConfusionMatrix confusion;
};

SessionMetrics compute_session_metrics(int session, const std::vector<int>& labels,
                                       const std::vector<int>& preds, int num_classes,
                                       const std::set<int>& base_classes);

nlohmann::json session_metrics_json(const SessionMetrics& m);
SessionMetrics session_metrics_from_json(const nlohmann::json& j);

}  // namespace fscil
