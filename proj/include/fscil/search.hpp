#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fscil/config.hpp"
#include "fscil/metrics.hpp"
#include "fscil/rng.hpp"

namespace fscil {

enum class ParamKind { Uniform, LogUniform, Choice };

/// One searched hyperparameter. `target` says where the sampled value lands:
/// "plugin" params go into the technique's plugin block, "train" params
/// override the matching TrainConfig field (lr, weight_decay).
struct ParamSpec {
  std::string name;
  std::string target = "plugin";  // plugin | train
  ParamKind kind = ParamKind::Uniform;
  double lo = 0.0, hi = 0.0;
  std::vector<double> choices;
};

struct SearchSpace {
  std::string technique;  // plugin name: cmo | balanced_softmax | imbsam | ...
  std::string category;   // resampling | reweighting | optimizer
  std::vector<ParamSpec> params;

  /// Bounds must be finite, ordered, and positive for log-uniform; choice
  /// lists must be nonempty. Throws ConfigError on violation.
  void validate() const;
};

/// Built-in space for each technique. Counts-driven techniques with no
/// hyperparameter of their own search the optimizer knobs instead.
SearchSpace default_search_space(const std::string& technique);

/// One value per declared param, drawn in declaration order.
nlohmann::json sample_params(const SearchSpace& space, Rng& rng);

/// The base config with the technique's plugin wired in, sampled values
/// applied, and the trial's own seed. Always passes validation.
ExperimentConfig trial_config(const ExperimentConfig& base, const SearchSpace& space,
                              const nlohmann::json& sampled, uint64_t trial_seed);

struct TrialRecord {
  int trial = 0;
  std::string technique;
  std::string category;
  nlohmann::json params;  // sampled hyperparameters
  uint64_t seed = 0;
  std::string status;  // complete | failed
  std::string error;   // failure reason when failed
  SessionMetrics last;  // last session's metrics, valid when complete
  double seconds = 0.0;

  /// Ranking value of this record, absent when failed or the metric is
  /// undefined for the run (e.g. no incremental examples for g_acc).
  std::optional<double> metric_value(const std::string& metric) const;
};

nlohmann::json trial_record_json(const TrialRecord& r);
TrialRecord trial_record_from_json(const nlohmann::json& j);

/// Accepts a_acc/aacc and g_acc/gacc; anything else is a ConfigError.
std::string canonical_metric(const std::string& name);

/// Runs `trials` independent trials of the space applied to `base`. Each
/// trial trains in <out_dir>/trials/t<id>/ and leaves a t<id>.json record;
/// existing records are skipped, which makes the search resumable. Failed
/// trials are recorded and do not stop the search. Workers > 1 runs trials
/// in parallel threads; results are identical to the serial order because
/// every trial is seeded by its id alone. Writes a summary index and
/// returns the records sorted by trial id.
std::vector<TrialRecord> run_random_search(const ExperimentConfig& base, const SearchSpace& space,
                                           int trials, const std::filesystem::path& out_dir,
                                           int workers = 1);

/// Top-k successful records, descending by the metric at the last session,
/// ties broken by lower trial id. Records without the metric are skipped;
/// when nothing ranks, the result is empty and *diagnostic says why.
std::vector<TrialRecord> select_top(const std::vector<TrialRecord>& records,
                                    const std::string& metric, int k,
                                    std::string* diagnostic = nullptr);

/// A chosen technique with its winning hyperparameters, split into plugin
/// params and train-field overrides.
struct TechniqueSelection {
  std::string category;
  std::string technique;
  nlohmann::json plugin_params = nlohmann::json::object();
  nlohmann::json train_overrides = nlohmann::json::object();
};

/// Splits a winning record's sampled params using the space's targets.
TechniqueSelection selection_from(const SearchSpace& space, const TrialRecord& rec);

/// Standalone config combining the selected techniques: joint_imbalance
/// with plugins in resampling, reweighting, optimizer order, or plain
/// joint_standard when nothing is selected. Two selections in one category
/// raise ConfigError.
ExperimentConfig compose_benchmark(const ExperimentConfig& base,
                                   const std::vector<TechniqueSelection>& picks);

/// Cumulative combinations in canonical category order: no plugins, then
/// one more category per step. Three picks give the four-step ladder.
std::vector<ExperimentConfig> ablation_ladder(const ExperimentConfig& base,
                                              const std::vector<TechniqueSelection>& picks);

}  // namespace fscil
