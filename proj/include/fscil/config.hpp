#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fscil/data.hpp"
#include "fscil/protocol.hpp"

namespace fscil {

/// Where the examples come from. Synthetic parameters are ignored for the
/// on-disk loaders; `root` is ignored for synthetic data.
struct DatasetConfig {
  std::string name = "synthetic";  // synthetic | cifar100 | image_folder
  std::string root;
  bool augment = false;
  int num_classes = 10;
  int samples_per_class = 200;
  int test_per_class = 50;
  int image_size = 16;
  int channels = 3;
  double separation = 1.5;
  double noise = 1.0;
};

/// Session layout on top of the dataset's class inventory.
struct ProtocolBlock {
  int base_classes = 6;
  int ways = 2;
  int sessions = 2;
  int shots = 5;
  double val_fraction = 0.1;
  std::string class_order = "ascending";  // or seeded_permutation
};

/// One imbalance technique plugged into joint training. Each plugin owns
/// exactly one category slot; params are normalized to the full schema of
/// the named technique at parse time.
struct PluginConfig {
  std::string category;  // resampling | reweighting | optimizer
  std::string name;      // cmo | balanced_batch | balanced_softmax | class_balanced | imbsam
  nlohmann::json params = nlohmann::json::object();

  double number(const std::string& key) const;
  int integer(const std::string& key) const;
};

struct TrainConfig {
  std::string strategy = "joint_standard";
  // joint_standard | joint_imbalance | incr_prototype | incr_finetune
  int epochs = 20;
  int batch_size = 64;
  double lr = 0.1;
  std::vector<int> lr_milestones;  // 1-based epochs; lr decays after each
  double lr_decay = 0.1;
  double weight_decay = 5e-4;
  double momentum = 0.9;
  int backbone_depth = 20;
  int backbone_width = 16;
  std::string head = "linear";  // linear | cosine
  double init_temperature = 16.0;
  std::vector<int> checkpoint_epochs;  // strictly ascending, within [1, epochs]
  int incr_epochs = 10;                // fine-tune epochs per incremental session
  double incr_lr_scale = 0.01;         // fine-tune lr = lr * scale
  std::vector<PluginConfig> plugins;

  bool is_joint() const {
    return strategy == "joint_standard" || strategy == "joint_imbalance";
  }
  const PluginConfig* plugin(const std::string& category) const;

  /// Learning rate for 1-based epoch e under the step schedule.
  double lr_at_epoch(int e) const;
};

struct SearchConfig {
  int trials = 30;
  std::string technique = "cmo";
  std::string metric = "a_acc";  // a_acc | g_acc
  int top_k = 5;
};

struct ReportConfig {
  bool session_table = true;
  bool confusion_heatmaps = true;
  bool resource_curves = true;
  bool cka_grid = false;
};

/// Whole-experiment configuration. One master seed feeds every derived RNG
/// stream; a parsed config always satisfies validate_config.
struct ExperimentConfig {
  DatasetConfig dataset;
  ProtocolBlock protocol;
  TrainConfig train;
  std::optional<SearchConfig> search;
  ReportConfig report;
  std::string output_dir = "runs/experiment";
  uint64_t seed = 0;
};

/// Strict parser: unknown keys anywhere are an error, types must match,
/// and the result passes validate_config.
ExperimentConfig parse_experiment_config(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Emits every field, including defaults, so parse(render(c)) == c.
nlohmann::json render_experiment_config(const ExperimentConfig& c);
void save_experiment_config(const std::filesystem::path& path, const ExperimentConfig& c);

void validate_config(const ExperimentConfig& c);
void validate_train_config(const TrainConfig& t);

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);
inline bool operator!=(const ExperimentConfig& a, const ExperimentConfig& b) { return !(a == b); }

/// Stable hash of the rendered config (provenance records).
uint64_t config_hash(const ExperimentConfig& c);

/// Shrinks epoch counts and synthetic data volume by `scale` in (0, 1] while
/// keeping every invariant (milestones and checkpoints stay in range).
void apply_scale(ExperimentConfig& c, double scale);

/// Fills the protocol module's config from the experiment blocks.
ProtocolConfig protocol_config(const ExperimentConfig& c);

/// Materializes the configured dataset (not yet normalized).
DatasetPtr load_dataset(const ExperimentConfig& c);

}  // namespace fscil
