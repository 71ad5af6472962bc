#include "fscil/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "fscil/common.hpp"
#include "fscil/rng.hpp"

namespace fs = std::filesystem;

namespace fscil {

const float* Dataset::image(int id, AccessKind kind) const {
  if (id < 0 || id >= num_examples())
    throw ContractError("Dataset::image: id " + std::to_string(id) + " out of range");
  if (access_probe_) access_probe_(id, kind);
  return images_.data() + static_cast<size_t>(id) * example_size();
}

const std::vector<int>& Dataset::train_ids_of_class(int cls) const {
  if (cls < 0 || cls >= num_classes)
    throw ContractError("Dataset: class " + std::to_string(cls) + " out of range");
  return train_by_class_[cls];
}

const std::vector<int>& Dataset::test_ids_of_class(int cls) const {
  if (cls < 0 || cls >= num_classes)
    throw ContractError("Dataset: class " + std::to_string(cls) + " out of range");
  return test_by_class_[cls];
}

void Dataset::reserve(int n, int c, int h, int w) {
  channels = c;
  height = h;
  width = w;
  images_.reserve(static_cast<size_t>(n) * c * h * w);
  labels_.reserve(n);
}

int Dataset::add_example(const float* pixels, int label, bool test) {
  if (!test && num_train_ != static_cast<int>(labels_.size()))
    throw ContractError("Dataset::add_example: train examples must precede test examples");
  images_.insert(images_.end(), pixels, pixels + example_size());
  labels_.push_back(label);
  if (!test) ++num_train_;
  return static_cast<int>(labels_.size()) - 1;
}

void Dataset::finalize() {
  int max_label = -1;
  for (int l : labels_) max_label = std::max(max_label, l);
  num_classes = std::max(num_classes, max_label + 1);
  train_by_class_.assign(num_classes, {});
  test_by_class_.assign(num_classes, {});
  for (int id = 0; id < num_examples(); ++id) {
    int l = labels_[id];
    if (l < 0 || l >= num_classes)
      throw DataError("dataset: label " + std::to_string(l) + " out of range");
    (is_test(id) ? test_by_class_ : train_by_class_)[l].push_back(id);
  }
}

void Dataset::normalize_with(const std::vector<int>& reference_ids) {
  if (normalized) throw ContractError("Dataset::normalize_with: already normalized");
  if (reference_ids.empty()) throw ContractError("Dataset::normalize_with: empty reference set");
  const int hw = height * width;
  std::vector<double> sum(channels, 0.0), sumsq(channels, 0.0);
  for (int id : reference_ids) {
    const float* px = images_.data() + static_cast<size_t>(id) * example_size();
    for (int c = 0; c < channels; ++c) {
      for (int i = 0; i < hw; ++i) {
        double v = px[c * hw + i];
        sum[c] += v;
        sumsq[c] += v * v;
      }
    }
  }
  double n = static_cast<double>(reference_ids.size()) * hw;
  channel_mean.resize(channels);
  channel_std.resize(channels);
  for (int c = 0; c < channels; ++c) {
    double mean = sum[c] / n;
    double var = std::max(sumsq[c] / n - mean * mean, 1e-12);
    channel_mean[c] = static_cast<float>(mean);
    channel_std[c] = static_cast<float>(std::sqrt(var));
  }
  for (int id = 0; id < num_examples(); ++id) {
    float* px = images_.data() + static_cast<size_t>(id) * example_size();
    for (int c = 0; c < channels; ++c)
      for (int i = 0; i < hw; ++i)
        px[c * hw + i] = (px[c * hw + i] - channel_mean[c]) / channel_std[c];
  }
  normalized = true;
}

std::vector<float> Dataset::copy_image(int id) const {
  const float* p = image(id);
  return std::vector<float>(p, p + example_size());
}

TrainView::TrainView(DatasetPtr ds, std::vector<int> allowed_ids)
    : ds_(std::move(ds)), allowed_(std::move(allowed_ids)) {
  mask_.assign(ds_->num_examples(), 0);
  for (int id : allowed_) {
    if (id < 0 || id >= ds_->num_examples())
      throw ContractError("TrainView: id " + std::to_string(id) + " out of range");
    if (ds_->is_test(id))
      throw ContractError("TrainView: test id " + std::to_string(id) +
                          " may not enter a training view");
    mask_[id] = 1;
  }
}

const float* TrainView::image(int id) const {
  if (id < 0 || id >= static_cast<int>(mask_.size()) || !mask_[id])
    throw ContractError("TrainView: access to id " + std::to_string(id) +
                        " outside the allowed train set");
  return ds_->image(id, AccessKind::Train);
}

int TrainView::label(int id) const {
  if (id < 0 || id >= static_cast<int>(mask_.size()) || !mask_[id])
    throw ContractError("TrainView: access to id " + std::to_string(id) +
                        " outside the allowed train set");
  return ds_->label(id);
}

std::map<int, int> TrainView::class_counts() const {
  std::map<int, int> counts;
  for (int id : allowed_) counts[ds_->label(id)]++;
  return counts;
}

std::map<int, std::vector<int>> TrainView::ids_by_class() const {
  std::map<int, std::vector<int>> groups;
  for (int id : allowed_) groups[ds_->label(id)].push_back(id);
  return groups;
}

ClassStats class_stats_from_counts(const std::map<int, int>& counts, const TailRule& rule,
                                   const std::vector<int>& base_classes) {
  ClassStats stats;
  stats.counts = counts;
  if (rule.kind == TailRule::ByThreshold) {
    for (const auto& [cls, n] : counts)
      (n < rule.threshold ? stats.tail_classes : stats.head_classes).insert(cls);
  } else {
    std::set<int> base(base_classes.begin(), base_classes.end());
    for (const auto& [cls, n] : counts)
      (base.count(cls) ? stats.head_classes : stats.tail_classes).insert(cls);
  }
  return stats;
}

ClassStats class_stats(const TrainView& view, const TailRule& rule,
                       const std::vector<int>& base_classes) {
  return class_stats_from_counts(view.class_counts(), rule, base_classes);
}

// ---- CIFAR-100 binary reader ----

namespace {

constexpr size_t kCifarRecordBytes = 3074;  // coarse + fine + 3*32*32
constexpr int kCifarDim = 32;

void read_cifar_file(Dataset& ds, const std::string& path, bool test) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cifar100: cannot open " + path);
  f.seekg(0, std::ios::end);
  auto len = static_cast<size_t>(f.tellg());
  f.seekg(0);
  if (len == 0 || len % kCifarRecordBytes != 0)
    throw DataError("cifar100: " + path + " has " + std::to_string(len) +
                    " bytes, not a multiple of " + std::to_string(kCifarRecordBytes));
  size_t n = len / kCifarRecordBytes;
  std::vector<unsigned char> rec(kCifarRecordBytes);
  std::vector<float> px(3 * kCifarDim * kCifarDim);
  for (size_t i = 0; i < n; ++i) {
    f.read(reinterpret_cast<char*>(rec.data()), kCifarRecordBytes);
    if (!f) throw DataError("cifar100: short read in " + path);
    int fine = rec[1];
    for (size_t j = 0; j < px.size(); ++j) px[j] = rec[2 + j] / 255.0f;
    ds.add_example(px.data(), fine, test);
  }
}

}  // namespace

DatasetPtr load_cifar100(const std::string& root) {
  auto ds = std::make_shared<Dataset>();
  ds->name = "cifar100";
  ds->reserve(60000, 3, kCifarDim, kCifarDim);
  ds->augment = true;
  read_cifar_file(*ds, (fs::path(root) / "train.bin").string(), false);
  read_cifar_file(*ds, (fs::path(root) / "test.bin").string(), true);
  ds->num_classes = 100;
  ds->finalize();
  return ds;
}

// ---- synthetic generator ----

DatasetPtr make_synthetic(const SyntheticSpec& spec) {
  if (spec.classes <= 0) throw ValidationError("synthetic: classes must be positive");
  for (int c = 0; c < spec.classes; ++c) {
    auto it = spec.train_per_class.find(c);
    if (it == spec.train_per_class.end())
      throw ValidationError("synthetic: per-class count missing for class " + std::to_string(c));
    if (it->second <= 0)
      throw ValidationError("synthetic: nonpositive count for class " + std::to_string(c));
  }
  if (spec.test_per_class <= 0)
    throw ValidationError("synthetic: test_per_class must be positive");

  auto ds = std::make_shared<Dataset>();
  ds->name = "synthetic";
  ds->augment = false;
  const int dim = spec.channels * spec.height * spec.width;

  // One fixed unit direction per class, scaled by the separation knob.
  std::vector<std::vector<float>> means(spec.classes, std::vector<float>(dim));
  for (int c = 0; c < spec.classes; ++c) {
    Rng rng(derive_seed(spec.seed, "synthetic/mean/" + std::to_string(c)));
    double norm_sq = 0.0;
    for (int j = 0; j < dim; ++j) {
      double g = rng.normal();
      means[c][j] = static_cast<float>(g);
      norm_sq += g * g;
    }
    double scale = spec.separation * std::sqrt(static_cast<double>(dim)) /
                   std::max(std::sqrt(norm_sq), 1e-12);
    for (int j = 0; j < dim; ++j) means[c][j] = static_cast<float>(means[c][j] * scale);
  }

  int total_train = 0;
  for (const auto& [c, n] : spec.train_per_class) total_train += n;
  ds->reserve(total_train + spec.classes * spec.test_per_class, spec.channels, spec.height,
              spec.width);

  std::vector<float> px(dim);
  auto emit = [&](int cls, int count, bool test, const char* tag) {
    Rng rng(derive_seed(spec.seed, std::string("synthetic/") + tag + "/" + std::to_string(cls)));
    for (int i = 0; i < count; ++i) {
      for (int j = 0; j < dim; ++j)
        px[j] = means[cls][j] + static_cast<float>(spec.noise * rng.normal());
      ds->add_example(px.data(), cls, test);
    }
  };
  for (int c = 0; c < spec.classes; ++c) emit(c, spec.train_per_class.at(c), false, "train");
  for (int c = 0; c < spec.classes; ++c) emit(c, spec.test_per_class, true, "test");
  ds->num_classes = spec.classes;
  ds->finalize();
  return ds;
}

// ---- dataset cache ----

namespace {
constexpr uint32_t kCacheMagic = 0x4653434cu;  // "FSCL"
constexpr uint32_t kCacheVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
template <typename T>
void read_pod(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw DataError("dataset cache: truncated file");
}
}  // namespace

void save_dataset_cache(const Dataset& ds, const std::string& path) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw DataError("dataset cache: cannot write " + tmp);
    write_pod(os, kCacheMagic);
    write_pod(os, kCacheVersion);
    int32_t dims[6] = {ds.num_examples(), ds.num_train(), ds.channels,
                       ds.height,         ds.width,       ds.num_classes};
    os.write(reinterpret_cast<const char*>(dims), sizeof(dims));
    for (int id = 0; id < ds.num_examples(); ++id) {
      int32_t l = ds.label(id);
      write_pod(os, l);
    }
    for (int id = 0; id < ds.num_examples(); ++id)
      os.write(reinterpret_cast<const char*>(ds.image(id)),
               sizeof(float) * ds.example_size());
    if (!os) throw DataError("dataset cache: write failed for " + tmp);
  }
  fs::rename(tmp, path);
}

DatasetPtr load_dataset_cache(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("dataset cache: cannot open " + path);
  uint32_t magic = 0, version = 0;
  read_pod(is, magic);
  if (magic != kCacheMagic) throw DataError("dataset cache: bad magic in " + path);
  read_pod(is, version);
  if (version != kCacheVersion)
    throw DataError("dataset cache: unsupported version " + std::to_string(version));
  int32_t dims[6];
  is.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!is) throw DataError("dataset cache: truncated header");
  int n = dims[0], n_train = dims[1];
  auto ds = std::make_shared<Dataset>();
  ds->name = "cache";
  ds->reserve(n, dims[2], dims[3], dims[4]);
  std::vector<int32_t> labels(n);
  is.read(reinterpret_cast<char*>(labels.data()), sizeof(int32_t) * n);
  if (!is) throw DataError("dataset cache: truncated labels");
  std::vector<float> px(ds->example_size());
  for (int id = 0; id < n; ++id) {
    is.read(reinterpret_cast<char*>(px.data()), sizeof(float) * px.size());
    if (!is) throw DataError("dataset cache: truncated pixel data");
    ds->add_example(px.data(), labels[id], id >= n_train);
  }
  ds->num_classes = dims[5];
  ds->finalize();
  return ds;
}

}  // namespace fscil
