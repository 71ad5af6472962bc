#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <vector>

#include "fscil/data.hpp"
#include "fscil/tensor.hpp"

namespace fscil {

class Rng;

// ---- loss ----

struct LossOptions {
  /// When set, logits are shifted by log(n_c) before the softmax so that
  /// frequent classes need a larger margin. Classes with a zero count are
  /// excluded from the normalization entirely.
  const std::vector<double>* class_counts = nullptr;
  /// Per-class example weights; an example is weighted by the weight mass
  /// under its label distribution.
  const std::vector<double>* class_weights = nullptr;
  /// Restricts which label mass contributes to the loss. With masks that
  /// partition the classes, the masked losses sum to the unmasked loss.
  const std::set<int>* class_mask = nullptr;
};

struct LossResult {
  double loss = 0.0;
  Tensor dlogits;  // same shape as logits, mean-reduced over the batch
};

/// Cross entropy with optional count-based logit adjustment, per-class
/// weighting, label-mass masking, and soft (row-stochastic) targets.
LossResult softmax_loss(const Tensor& logits, const Tensor& soft_labels,
                        const LossOptions& opts = {});
LossResult softmax_loss(const Tensor& logits, const std::vector<int>& labels, int num_classes,
                        const LossOptions& opts = {});

Tensor one_hot(const std::vector<int>& labels, int num_classes);

/// w_c = (1 - beta) / (1 - beta^{n_c}), rescaled to mean one over the
/// classes that are present. Absent classes get weight zero.
std::vector<double> class_balanced_weights(const std::vector<double>& counts, double beta);

// ---- pixel-level resampling ----

struct CutRect {
  int y0 = 0, x0 = 0, y1 = 0, x1 = 0;  // half-open

  int area() const { return (y1 - y0) * (x1 - x0); }
};

/// Patch placement for a mix ratio lambda: side lengths H*sqrt(1-lambda)
/// and W*sqrt(1-lambda), center uniform over the image, clipped to bounds.
CutRect cutmix_rect(int h, int w, double lambda, Rng& rng);

/// Copies the rect from src into dst (both C x H x W) and returns the
/// realized patch area fraction, which can differ from 1-lambda after
/// clipping.
double apply_patch(float* dst, const float* src, int c, int h, int w, const CutRect& rect);

struct MixedBatch {
  Tensor images;
  Tensor soft_labels;  // [N, num_classes], rows sum to one
};

/// Pastes a patch of each foreground image onto the matching background
/// image and mixes the labels by realized area: the background keeps
/// lambda_adj of the mass, the foreground gets the rest.
MixedBatch cmo_mix(const Tensor& bg_images, const std::vector<int>& bg_labels,
                   const Tensor& fg_images, const std::vector<int>& fg_labels, int num_classes,
                   double beta, Rng& rng);

// ---- samplers ----

/// Draws ids with class probability proportional to 1/n_c, uniform within
/// the class. Feeds the foreground stream of the mixer.
class InverseFrequencySampler {
 public:
  explicit InverseFrequencySampler(const TrainView& view);
  int draw(Rng& rng) const;
  std::vector<int> draw_many(int n, Rng& rng) const;

 private:
  std::vector<int> classes_;
  std::vector<double> cdf_;
  std::vector<std::vector<int>> members_;
};

/// Emits ids so every batch covers the present classes near-uniformly:
/// classes rotate in a reshuffled round-robin order, members are drawn
/// uniformly within each class.
class BalancedBatchSampler {
 public:
  explicit BalancedBatchSampler(const TrainView& view);
  std::vector<int> next_batch(int batch_size, Rng& rng);

 private:
  std::vector<int> classes_;
  std::vector<std::vector<int>> members_;
  std::vector<size_t> order_;
  size_t cursor_ = 0;
};

// ---- sharpness-aware step for rare classes ----

struct SplitGrad {
  double head_loss = 0.0, tail_loss = 0.0;
  std::vector<float> head_grad, tail_grad;  // each over the full weight vector
};

/// Evaluates the loss split at a given weight vector. The trainer owns the
/// model; the optimizer core only sees flat vectors.
using SplitGradFn = std::function<SplitGrad(const std::vector<float>& weights)>;

struct ImbSamResult {
  double head_loss = 0.0, tail_loss = 0.0;  // at the unperturbed weights
  std::vector<float> grad;                  // combined descent direction
  int grad_evals = 0;
  bool perturbation_skipped = false;  // tail gradient had zero norm
};

/// Sharpness-aware gradient that perturbs only the rare-class loss:
/// grad = dL_head(w) + dL_tail(w + rho * dL_tail(w)/|dL_tail(w)|).
/// With an empty tail this reduces to one plain gradient evaluation.
ImbSamResult imbsam_combined_grad(const std::vector<float>& w, double rho, bool tail_empty,
                                  const SplitGradFn& fn);

}  // namespace fscil
