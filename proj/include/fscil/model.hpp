#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fscil/nn.hpp"
#include "fscil/tensor.hpp"

namespace fscil {

enum class HeadKind { Linear, Cosine };

HeadKind head_kind_from_string(const std::string& s);
std::string to_string(HeadKind k);

struct HeadConfig {
  HeadKind kind = HeadKind::Linear;
  int embedding_dim = 0;
  int num_classes = 0;
  double init_temperature = 16.0;  // cosine logit scale, learnable
};

enum class ExpandInit { Zeros, Seeded, Prototypes };

/// Maps embeddings [N,D] to class logits [N,C]. The linear variant is
/// W*e + b; the cosine variant is T * <e/|e|, w_c/|w_c|> with learnable T.
class ClassifierHead {
 public:
  explicit ClassifierHead(const HeadConfig& cfg);
  void init(uint64_t seed);

  Tensor forward(const Tensor& emb);
  Tensor backward(const Tensor& dlogits);
  void collect(ParamSet& ps, const std::string& prefix = "head");

  /// Grows the head to new_num_classes. Existing rows are preserved exactly.
  /// `prototypes`, when given, supplies one [D] row per added class.
  void expand(int new_num_classes, ExpandInit mode, uint64_t seed,
              const std::vector<std::vector<float>>* prototypes = nullptr);

  int num_classes() const { return num_classes_; }
  int embedding_dim() const { return cfg_.embedding_dim; }
  HeadKind kind() const { return cfg_.kind; }

  std::vector<float> weight, wgrad;  // [num_classes][embedding_dim]
  std::vector<float> bias, bgrad;    // linear only
  std::vector<float> temperature, tgrad;  // cosine only, one scalar

 private:
  HeadConfig cfg_;
  int num_classes_;
  // cosine backward caches
  Tensor cached_emb_;
  std::vector<float> emb_norm_, w_norm_;
  std::vector<float> ehat_, what_;
};

/// Backbone plus head. Heavyweight state lives in the members; this struct
/// just keeps them together and remembers the configs they were built from.
struct Model {
  BackboneConfig backbone_cfg;
  HeadConfig head_cfg;
  ResNetBackbone backbone;
  ClassifierHead head;

  Model(const BackboneConfig& bc, const HeadConfig& hc)
      : backbone_cfg(bc), head_cfg(hc), backbone(bc), head(hc) {}

  void init(uint64_t seed) {
    backbone.init(seed);
    head.init(seed);
  }

  /// Parameters with gradients, in checkpoint order.
  ParamSet params() {
    ParamSet ps;
    backbone.collect(ps);
    head.collect(ps);
    return ps;
  }
  /// Batch-norm running statistics (no gradients).
  ParamSet buffers() {
    ParamSet ps;
    backbone.collect_buffers(ps);
    return ps;
  }
};

struct ForwardResult {
  Tensor embeddings;  // [N, D] (h = w = 1)
  Tensor logits;      // [N, C]
};

ForwardResult forward(Model& m, const Tensor& images, bool train);

// ---- checkpoints ----

/// On-disk model snapshot: JSON metadata plus named float tensors. The file
/// carries a trailing checksum; any byte flip fails the load.
struct CheckpointData {
  nlohmann::json meta;
  std::vector<std::pair<std::string, std::vector<float>>> tensors;

  const std::vector<float>* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::filesystem::path& path);

/// Serializes model params, batch-norm buffers, and (when given) optimizer
/// momentum. `extra_meta` is merged into the stored metadata; callers record
/// protocol hash, session, epoch, and seed there.
void save_model_checkpoint(const std::filesystem::path& path, Model& model,
                           const SgdOptimizer* opt, const nlohmann::json& extra_meta);

/// Rebuilds the model (and optimizer momentum, when requested) from a file
/// written by save_model_checkpoint. Returns the stored metadata.
nlohmann::json load_model_checkpoint(const std::filesystem::path& path, Model& out_model,
                                     SgdOptimizer* opt);

/// Constructs a Model shaped like the one stored at `path` (reads metadata
/// only as far as needed), then loads into it.
Model model_from_checkpoint(const std::filesystem::path& path, SgdOptimizer* opt = nullptr,
                            nlohmann::json* meta_out = nullptr);

}  // namespace fscil
