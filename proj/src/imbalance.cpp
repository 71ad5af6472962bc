#include "fscil/imbalance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fscil/common.hpp"
#include "fscil/rng.hpp"

namespace fscil {

Tensor one_hot(const std::vector<int>& labels, int num_classes) {
  Tensor y = Tensor::matrix(static_cast<int>(labels.size()), num_classes);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes)
      throw ContractError("one_hot: label " + std::to_string(labels[i]) + " out of range");
    y.v[i * num_classes + labels[i]] = 1.0f;
  }
  return y;
}

LossResult softmax_loss(const Tensor& logits, const Tensor& soft_labels,
                        const LossOptions& opts) {
  const int N = logits.n, C = logits.per_example();
  if (soft_labels.n != N || soft_labels.per_example() != C)
    throw ContractError("softmax_loss: label shape does not match logits");
  if (opts.class_counts && static_cast<int>(opts.class_counts->size()) != C)
    throw ContractError("softmax_loss: class_counts size does not match logits");
  if (opts.class_weights && static_cast<int>(opts.class_weights->size()) != C)
    throw ContractError("softmax_loss: class_weights size does not match logits");

  // count-based logit adjustment; zero-count classes leave the softmax
  std::vector<double> adjust(C, 0.0);
  std::vector<uint8_t> included(C, 1);
  if (opts.class_counts) {
    double max_adjust = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < C; ++c) {
      double n = (*opts.class_counts)[c];
      if (n < 0.0) throw ContractError("softmax_loss: negative class count");
      if (n == 0.0) {
        included[c] = 0;
      } else {
        adjust[c] = std::log(n);
        max_adjust = std::max(max_adjust, adjust[c]);
      }
    }
    // shift so the largest adjustment is zero; the softmax is invariant and
    // uniform counts then take the exact unadjusted code path
    for (int c = 0; c < C; ++c)
      if (included[c]) adjust[c] -= max_adjust;
  }

  LossResult res;
  res.dlogits = Tensor::matrix(N, C);
  double total = 0.0;
  std::vector<double> p(C);
  for (int i = 0; i < N; ++i) {
    const float* z = logits.example(i);
    const float* y = soft_labels.example(i);
    double zmax = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < C; ++c)
      if (included[c]) zmax = std::max(zmax, static_cast<double>(z[c]) + adjust[c]);
    double denom = 0.0;
    for (int c = 0; c < C; ++c) {
      if (!included[c]) {
        p[c] = 0.0;
        continue;
      }
      p[c] = std::exp(static_cast<double>(z[c]) + adjust[c] - zmax);
      denom += p[c];
    }
    double log_denom = std::log(denom);
    double loss_i = 0.0;
    double weight_i = 0.0;
    double mass_i = 0.0;
    for (int c = 0; c < C; ++c) {
      p[c] /= denom;
      if (y[c] == 0.0f) continue;
      if (!included[c])
        throw ContractError("softmax_loss: label mass on zero-count class " + std::to_string(c));
      if (opts.class_mask && !opts.class_mask->count(c)) continue;
      double log_p = static_cast<double>(z[c]) + adjust[c] - zmax - log_denom;
      loss_i -= y[c] * log_p;
      double wc = opts.class_weights ? (*opts.class_weights)[c] : 1.0;
      weight_i += y[c] * wc;
      mass_i += y[c];
    }
    total += loss_i * (mass_i > 0.0 ? weight_i / mass_i : 0.0);
    // d/dz of the weighted mean loss: u_i * (mass_i * p_c - y_c) / N,
    // restricted to the label mass the mask lets through
    double u = mass_i > 0.0 ? weight_i / mass_i : 0.0;
    float* d = res.dlogits.example(i);
    for (int c = 0; c < C; ++c) {
      if (!included[c]) continue;
      double yc = y[c];
      if (opts.class_mask && yc != 0.0f && !opts.class_mask->count(c)) yc = 0.0;
      d[c] = static_cast<float>(u * (mass_i * p[c] - yc) / N);
    }
  }
  res.loss = total / N;
  return res;
}

LossResult softmax_loss(const Tensor& logits, const std::vector<int>& labels, int num_classes,
                        const LossOptions& opts) {
  if (num_classes != logits.per_example())
    throw ContractError("softmax_loss: num_classes does not match logits");
  return softmax_loss(logits, one_hot(labels, num_classes), opts);
}

std::vector<double> class_balanced_weights(const std::vector<double>& counts, double beta) {
  if (beta < 0.0 || beta >= 1.0)
    throw ValidationError("class_balanced_weights: beta must be in [0,1)");
  std::vector<double> w(counts.size(), 0.0);
  double sum = 0.0;
  int present = 0;
  for (size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] <= 0.0) continue;
    w[c] = beta == 0.0 ? 1.0 : (1.0 - beta) / (1.0 - std::pow(beta, counts[c]));
    sum += w[c];
    ++present;
  }
  if (present == 0) throw ContractError("class_balanced_weights: all counts are zero");
  double scale = present / sum;  // mean one over present classes
  for (auto& x : w) x *= scale;
  return w;
}

// ---- pixel-level resampling ----

CutRect cutmix_rect(int h, int w, double lambda, Rng& rng) {
  if (lambda < 0.0 || lambda > 1.0) throw ContractError("cutmix_rect: lambda outside [0,1]");
  double cut = std::sqrt(1.0 - lambda);
  int cut_h = static_cast<int>(h * cut);
  int cut_w = static_cast<int>(w * cut);
  int cy = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(h)));
  int cx = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(w)));
  CutRect r;
  r.y0 = std::clamp(cy - cut_h / 2, 0, h);
  r.y1 = std::clamp(cy + (cut_h + 1) / 2, 0, h);
  r.x0 = std::clamp(cx - cut_w / 2, 0, w);
  r.x1 = std::clamp(cx + (cut_w + 1) / 2, 0, w);
  return r;
}

double apply_patch(float* dst, const float* src, int c, int h, int w, const CutRect& rect) {
  if (rect.y0 < 0 || rect.x0 < 0 || rect.y1 > h || rect.x1 > w || rect.y0 > rect.y1 ||
      rect.x0 > rect.x1)
    throw ContractError("apply_patch: rect out of bounds");
  for (int ch = 0; ch < c; ++ch) {
    for (int y = rect.y0; y < rect.y1; ++y) {
      size_t off = (static_cast<size_t>(ch) * h + y) * w;
      std::copy(src + off + rect.x0, src + off + rect.x1, dst + off + rect.x0);
    }
  }
  return static_cast<double>(rect.area()) / (static_cast<double>(h) * w);
}

MixedBatch cmo_mix(const Tensor& bg_images, const std::vector<int>& bg_labels,
                   const Tensor& fg_images, const std::vector<int>& fg_labels, int num_classes,
                   double beta, Rng& rng) {
  const int N = bg_images.n;
  if (static_cast<int>(bg_labels.size()) != N || fg_images.n != N ||
      static_cast<int>(fg_labels.size()) != N)
    throw ContractError("cmo_mix: batch sizes disagree");
  if (!bg_images.same_shape(fg_images)) throw ContractError("cmo_mix: image shapes disagree");

  MixedBatch out;
  out.images = bg_images;
  out.soft_labels = Tensor::matrix(N, num_classes);
  for (int i = 0; i < N; ++i) {
    double lambda = rng.beta(beta, beta);
    CutRect rect = cutmix_rect(bg_images.h, bg_images.w, lambda, rng);
    double area = apply_patch(out.images.example(i), fg_images.example(i), bg_images.c,
                              bg_images.h, bg_images.w, rect);
    // realized mix ratio, not the sampled one: clipping changes the area
    double lambda_adj = 1.0 - area;
    float* y = out.soft_labels.example(i);
    y[bg_labels[i]] += static_cast<float>(lambda_adj);
    y[fg_labels[i]] += static_cast<float>(1.0 - lambda_adj);
  }
  return out;
}

// ---- samplers ----

InverseFrequencySampler::InverseFrequencySampler(const TrainView& view) {
  for (auto& [cls, ids] : view.ids_by_class()) {
    classes_.push_back(cls);
    members_.push_back(ids);
  }
  if (classes_.empty()) throw ContractError("InverseFrequencySampler: empty view");
  double acc = 0.0;
  for (const auto& ids : members_) {
    acc += 1.0 / static_cast<double>(ids.size());
    cdf_.push_back(acc);
  }
  for (auto& x : cdf_) x /= acc;
}

int InverseFrequencySampler::draw(Rng& rng) const {
  double u = rng.uniform();
  size_t k = std::lower_bound(cdf_.begin(), cdf_.end(), u) - cdf_.begin();
  if (k >= classes_.size()) k = classes_.size() - 1;
  const auto& ids = members_[k];
  return ids[rng.uniform_int(ids.size())];
}

std::vector<int> InverseFrequencySampler::draw_many(int n, Rng& rng) const {
  std::vector<int> out(n);
  for (int i = 0; i < n; ++i) out[i] = draw(rng);
  return out;
}

BalancedBatchSampler::BalancedBatchSampler(const TrainView& view) {
  for (auto& [cls, ids] : view.ids_by_class()) {
    classes_.push_back(cls);
    members_.push_back(ids);
  }
  if (classes_.empty()) throw ContractError("BalancedBatchSampler: empty view");
}

std::vector<int> BalancedBatchSampler::next_batch(int batch_size, Rng& rng) {
  std::vector<int> batch(batch_size);
  for (int i = 0; i < batch_size; ++i) {
    if (cursor_ == 0) {
      // reshuffle the class rotation each full pass
      order_.resize(classes_.size());
      for (size_t j = 0; j < order_.size(); ++j) order_[j] = j;
      rng.shuffle(order_);
    }
    size_t k = order_[cursor_];
    cursor_ = (cursor_ + 1) % classes_.size();
    const auto& ids = members_[k];
    batch[i] = ids[rng.uniform_int(ids.size())];
  }
  return batch;
}

// ---- sharpness-aware step for rare classes ----

ImbSamResult imbsam_combined_grad(const std::vector<float>& w, double rho, bool tail_empty,
                                  const SplitGradFn& fn) {
  if (rho < 0.0) throw ValidationError("imbsam: rho must be nonnegative");
  ImbSamResult res;
  SplitGrad g0 = fn(w);
  if (g0.head_grad.size() != w.size() || g0.tail_grad.size() != w.size())
    throw ContractError("imbsam: gradient length does not match weights");
  res.head_loss = g0.head_loss;
  res.tail_loss = g0.tail_loss;
  res.grad_evals = 1;
  if (tail_empty) {
    res.grad = std::move(g0.head_grad);
    return res;
  }
  double norm_sq = 0.0;
  for (float v : g0.tail_grad) norm_sq += static_cast<double>(v) * v;
  double norm = std::sqrt(norm_sq);
  if (norm == 0.0) {
    res.perturbation_skipped = true;
    res.grad = std::move(g0.head_grad);
    for (size_t i = 0; i < w.size(); ++i) res.grad[i] += g0.tail_grad[i];
    return res;
  }
  std::vector<float> w_pert(w.size());
  double scale = rho / norm;
  for (size_t i = 0; i < w.size(); ++i)
    w_pert[i] = w[i] + static_cast<float>(scale * g0.tail_grad[i]);
  SplitGrad g1 = fn(w_pert);
  if (g1.tail_grad.size() != w.size())
    throw ContractError("imbsam: gradient length does not match weights");
  res.grad_evals = 2;
  res.grad = std::move(g0.head_grad);
  for (size_t i = 0; i < w.size(); ++i) res.grad[i] += g1.tail_grad[i];
  return res;
}

}  // namespace fscil
