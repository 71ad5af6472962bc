#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fscil/protocol.hpp"

namespace fscil {

enum class AccessKind { Raw, Train, Eval };

/// Indexed labeled image collection. Examples carry stable integer ids:
/// train examples first, then test examples. Images are stored as float
/// C x H x W, scaled to [0,1] at ingestion and optionally normalized to
/// per-channel zero mean / unit variance afterwards.
class Dataset : public ClassIndexSource {
 public:
  int channels = 0, height = 0, width = 0;
  int num_classes = 0;
  bool augment = false;     // train-time crop+flip
  bool normalized = false;  // per-channel normalization applied
  std::vector<float> channel_mean, channel_std;
  std::string name;

  int num_examples() const { return static_cast<int>(labels_.size()); }
  int num_train() const { return num_train_; }
  int num_test() const { return num_examples() - num_train_; }
  int example_size() const { return channels * height * width; }

  int label(int id) const { return labels_.at(id); }
  bool is_test(int id) const { return id >= num_train_; }

  /// Raw pixel access. Every read funnels through here so tests can install
  /// a probe that audits which ids a code path touched.
  const float* image(int id, AccessKind kind = AccessKind::Raw) const;

  void set_access_probe(std::function<void(int, AccessKind)> probe) {
    access_probe_ = std::move(probe);
  }

  // ClassIndexSource
  int source_num_classes() const override { return num_classes; }
  const std::vector<int>& train_ids_of_class(int cls) const override;
  const std::vector<int>& test_ids_of_class(int cls) const override;

  /// Construction-side API used by the loaders.
  void reserve(int n, int c, int h, int w);
  int add_example(const float* pixels, int label, bool test);
  void finalize();

  /// Computes per-channel mean/std over the given ids and whitens every
  /// image in place with those frozen constants.
  void normalize_with(const std::vector<int>& reference_ids);

  std::vector<float> copy_image(int id) const;

 private:
  std::vector<float> images_;
  std::vector<int> labels_;
  int num_train_ = 0;
  std::vector<std::vector<int>> train_by_class_, test_by_class_;
  std::function<void(int, AccessKind)> access_probe_;
};

using DatasetPtr = std::shared_ptr<Dataset>;

/// Train-side accessor restricted to an explicit id set. Reading any id
/// outside the set throws; this is the leakage guard every trainer runs
/// behind.
class TrainView {
 public:
  TrainView(DatasetPtr ds, std::vector<int> allowed_ids);

  const Dataset& dataset() const { return *ds_; }
  const std::vector<int>& ids() const { return allowed_; }
  int size() const { return static_cast<int>(allowed_.size()); }

  const float* image(int id) const;
  int label(int id) const;

  /// Per-class counts over the allowed ids.
  std::map<int, int> class_counts() const;
  /// Allowed ids grouped by label, each group ascending.
  std::map<int, std::vector<int>> ids_by_class() const;

 private:
  DatasetPtr ds_;
  std::vector<int> allowed_;
  std::vector<uint8_t> mask_;
};

/// Evaluation-side accessor (test ids).
class EvalView {
 public:
  EvalView(DatasetPtr ds, std::vector<int> ids) : ds_(std::move(ds)), ids_(std::move(ids)) {}
  const Dataset& dataset() const { return *ds_; }
  const std::vector<int>& ids() const { return ids_; }
  int size() const { return static_cast<int>(ids_.size()); }
  const float* image(int id) const { return ds_->image(id, AccessKind::Eval); }
  int label(int id) const { return ds_->label(id); }

 private:
  DatasetPtr ds_;
  std::vector<int> ids_;
};

/// Per-class counts plus the head/tail partition consumed by the
/// class-aware optimizer.
struct ClassStats {
  std::map<int, int> counts;
  std::set<int> head_classes, tail_classes;
};

struct TailRule {
  enum Kind { BySession, ByThreshold } kind = BySession;
  int threshold = 0;

  static TailRule by_session() { return {BySession, 0}; }
  static TailRule by_threshold(int t) { return {ByThreshold, t}; }
};

/// Counts computed over the view's train ids only. The by-session rule needs
/// the protocol's base-class list to tell base from incremental.
ClassStats class_stats(const TrainView& view, const TailRule& rule,
                       const std::vector<int>& base_classes = {});
ClassStats class_stats_from_counts(const std::map<int, int>& counts, const TailRule& rule,
                                   const std::vector<int>& base_classes = {});

// ---- loaders ----

/// Bit-exact CIFAR-100 binary reader: expects <root>/train.bin and
/// <root>/test.bin, records of 3074 bytes (coarse label, fine label,
/// 3072 pixel bytes in R/G/B plane order, 32x32). The fine label is used.
DatasetPtr load_cifar100(const std::string& root);

/// Generic image-folder reader for one split: root/<class_name>/<image files>.
/// Class ids follow the manifest order when given, else lexicographic
/// class-name order. Returns examples as (pixels, class index).
struct FolderSplit {
  std::vector<std::string> class_names;
  std::vector<std::vector<float>> images;
  std::vector<int> labels;
  int channels = 3, height = 0, width = 0;
};
FolderSplit load_image_folder(const std::string& root,
                              const std::optional<std::vector<std::string>>& manifest,
                              int resize_h = 0, int resize_w = 0);

/// Image-folder dataset with train/ and test/ subdirectories.
DatasetPtr load_image_folder_dataset(const std::string& root,
                                     const std::optional<std::vector<std::string>>& manifest,
                                     int resize_h = 0, int resize_w = 0);

struct SyntheticSpec {
  int classes = 10;
  std::map<int, int> train_per_class;  // must cover all classes
  int test_per_class = 50;
  int channels = 3, height = 16, width = 16;
  double separation = 1.5;  // scale of the per-class mean direction
  double noise = 1.0;       // additive Gaussian sigma
  uint64_t seed = 0;
};

/// Class-conditional Gaussian images: each class gets a distinct seeded
/// random unit direction scaled by `separation`; pixels add N(0, noise^2).
/// Deterministic given seed; linearly separable at low noise.
DatasetPtr make_synthetic(const SyntheticSpec& spec);

/// Single-blob binary cache for synthetic datasets (magic, version, shape,
/// seed, then labels and pixels).
void save_dataset_cache(const Dataset& ds, const std::string& path);
DatasetPtr load_dataset_cache(const std::string& path);

}  // namespace fscil
