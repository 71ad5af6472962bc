#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "fscil/tensor.hpp"

namespace fscil {

class Rng;

/// Named view onto one parameter tensor and its gradient.
struct ParamRef {
  std::string name;
  std::vector<float>* value = nullptr;
  std::vector<float>* grad = nullptr;  // null for buffers (running stats)
};

/// Flat list of parameter references. Order is construction order and is the
/// contract for optimizer state and flattened-vector round trips.
class ParamSet {
 public:
  void add(const std::string& name, std::vector<float>* v, std::vector<float>* g = nullptr) {
    refs_.push_back({name, v, g});
  }
  const std::vector<ParamRef>& refs() const { return refs_; }
  size_t scalar_count() const;

  std::vector<float> gather_values() const;
  std::vector<float> gather_grads() const;
  void scatter_values(const std::vector<float>& flat);
  void scatter_grads(const std::vector<float>& flat);
  void zero_grads();
  bool all_finite() const;

 private:
  std::vector<ParamRef> refs_;
};

// ---- layers ----

class Conv2d {
 public:
  Conv2d(int in_ch, int out_ch, int ksize, int stride, int pad);
  void init(Rng& rng);
  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& dy);
  void collect(ParamSet& ps, const std::string& prefix);

  int in_ch, out_ch, ksize, stride, pad;
  std::vector<float> weight, wgrad;  // [out_ch][in_ch*k*k]

 private:
  Tensor cached_x_;
  int out_h_ = 0, out_w_ = 0;
};

class BatchNorm2d {
 public:
  explicit BatchNorm2d(int channels);
  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& dy);
  void collect(ParamSet& ps, const std::string& prefix);
  void collect_buffers(ParamSet& ps, const std::string& prefix);

  int channels;
  float momentum = 0.9f;  // running = momentum*running + (1-momentum)*batch
  float eps = 1e-5f;
  // Cleared around extra forward passes (weight-perturbation steps) so the
  // running statistics see each batch exactly once.
  bool update_running = true;
  std::vector<float> gamma, ggrad, beta, bgrad;
  std::vector<float> running_mean, running_var;

 private:
  Tensor xhat_;
  std::vector<float> inv_std_;
  bool train_mode_ = false;
};

class ReluInplace {
 public:
  Tensor forward(Tensor x);
  Tensor backward(Tensor dy);

 private:
  std::vector<uint8_t> mask_;
};

struct ResidualBlock {
  ResidualBlock(int in_ch, int out_ch, int stride);
  void init(Rng& rng);
  Tensor forward(const Tensor& x, bool train);
  Tensor backward(const Tensor& dy);
  void collect(ParamSet& ps, const std::string& prefix);
  void collect_buffers(ParamSet& ps, const std::string& prefix);
  void set_bn_updates(bool on);

  Conv2d conv1, conv2;
  BatchNorm2d bn1, bn2;
  std::unique_ptr<Conv2d> down_conv;  // 1x1 projection when shape changes
  std::unique_ptr<BatchNorm2d> down_bn;
  ReluInplace relu1, relu_out;
};

struct BackboneConfig {
  int depth = 20;  // 6n+2
  int width = 16;  // stage widths: width, 2*width, 4*width
  int in_channels = 3;

  int blocks_per_stage() const;
  int embedding_dim() const { return width * 4; }
};

/// Small residual network for 32x32-class inputs. Produces a flat embedding
/// via global average pooling; the classifier head lives outside.
class ResNetBackbone {
 public:
  explicit ResNetBackbone(const BackboneConfig& cfg);
  void init(uint64_t seed);

  /// Images [N,C,H,W] -> embeddings [N,D,1,1].
  Tensor forward(const Tensor& images, bool train);
  /// dEmbeddings [N,D,1,1] -> accumulates parameter grads, returns dImages.
  Tensor backward(const Tensor& demb);

  void collect(ParamSet& ps, const std::string& prefix = "backbone");
  void collect_buffers(ParamSet& ps, const std::string& prefix = "backbone");

  /// Toggles running-stat accumulation across every norm layer.
  void set_bn_updates(bool on);

  const BackboneConfig& config() const { return cfg_; }
  int embedding_dim() const { return cfg_.embedding_dim(); }

 private:
  BackboneConfig cfg_;
  Conv2d conv1_;
  BatchNorm2d bn1_;
  ReluInplace relu1_;
  std::vector<ResidualBlock> blocks_;
  int pooled_h_ = 0, pooled_w_ = 0;
};

// ---- optimizer ----

struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

/// SGD with momentum and decoupled-from-schedule weight decay
/// (g <- g + wd*w; v <- mu*v + g; w <- w - lr*v).
class SgdOptimizer {
 public:
  explicit SgdOptimizer(SgdConfig cfg = {}) : cfg_(cfg) {}
  void step(ParamSet& params, double lr);

  /// Momentum buffers keyed by parameter order; checkpointed alongside the
  /// model so interrupted runs resume exactly.
  std::vector<std::vector<float>>& state() { return velocity_; }
  const std::vector<std::vector<float>>& state() const { return velocity_; }
  const SgdConfig& config() const { return cfg_; }

 private:
  SgdConfig cfg_;
  std::vector<std::vector<float>> velocity_;
};

}  // namespace fscil
