#include "fscil/nn.hpp"

#include <Eigen/Core>
#include <cmath>

#include "fscil/common.hpp"
#include "fscil/rng.hpp"

namespace fscil {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

size_t ParamSet::scalar_count() const {
  size_t n = 0;
  for (const auto& r : refs_) n += r.value->size();
  return n;
}

std::vector<float> ParamSet::gather_values() const {
  std::vector<float> flat;
  flat.reserve(scalar_count());
  for (const auto& r : refs_) flat.insert(flat.end(), r.value->begin(), r.value->end());
  return flat;
}

std::vector<float> ParamSet::gather_grads() const {
  std::vector<float> flat;
  flat.reserve(scalar_count());
  for (const auto& r : refs_) {
    if (!r.grad) throw ContractError("ParamSet::gather_grads on a buffer ref " + r.name);
    flat.insert(flat.end(), r.grad->begin(), r.grad->end());
  }
  return flat;
}

void ParamSet::scatter_values(const std::vector<float>& flat) {
  size_t off = 0;
  for (auto& r : refs_) {
    if (off + r.value->size() > flat.size())
      throw ContractError("ParamSet::scatter_values: size mismatch");
    std::copy(flat.begin() + off, flat.begin() + off + r.value->size(), r.value->begin());
    off += r.value->size();
  }
  if (off != flat.size()) throw ContractError("ParamSet::scatter_values: size mismatch");
}

void ParamSet::scatter_grads(const std::vector<float>& flat) {
  size_t off = 0;
  for (auto& r : refs_) {
    if (!r.grad) throw ContractError("ParamSet::scatter_grads on a buffer ref " + r.name);
    std::copy(flat.begin() + off, flat.begin() + off + r.grad->size(), r.grad->begin());
    off += r.grad->size();
  }
  if (off != flat.size()) throw ContractError("ParamSet::scatter_grads: size mismatch");
}

void ParamSet::zero_grads() {
  for (auto& r : refs_)
    if (r.grad) std::fill(r.grad->begin(), r.grad->end(), 0.0f);
}

bool ParamSet::all_finite() const {
  for (const auto& r : refs_)
    for (float v : *r.value)
      if (!std::isfinite(v)) return false;
  return true;
}

// ---- Conv2d ----

Conv2d::Conv2d(int in_ch_, int out_ch_, int ksize_, int stride_, int pad_)
    : in_ch(in_ch_), out_ch(out_ch_), ksize(ksize_), stride(stride_), pad(pad_) {
  weight.assign(static_cast<size_t>(out_ch) * in_ch * ksize * ksize, 0.0f);
  wgrad.assign(weight.size(), 0.0f);
}

void Conv2d::init(Rng& rng) {
  // He initialization for ReLU nets.
  double std = std::sqrt(2.0 / (static_cast<double>(in_ch) * ksize * ksize));
  for (auto& w : weight) w = static_cast<float>(std * rng.normal());
}

namespace {

void im2col(const float* img, int C, int H, int W, int k, int stride, int pad, int out_h,
            int out_w, float* col) {
  // col layout: [C*k*k rows][out_h*out_w cols], row-major
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        float* dst = col + ((static_cast<size_t>(c) * k + ky) * k + kx) * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
          int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= H) {
            std::fill(dst + oy * out_w, dst + (oy + 1) * out_w, 0.0f);
            continue;
          }
          const float* src_row = img + (static_cast<size_t>(c) * H + iy) * W;
          for (int ox = 0; ox < out_w; ++ox) {
            int ix = ox * stride + kx - pad;
            dst[oy * out_w + ox] = (ix >= 0 && ix < W) ? src_row[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_add(const float* col, int C, int H, int W, int k, int stride, int pad, int out_h,
                int out_w, float* img) {
  for (int c = 0; c < C; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const float* src = col + ((static_cast<size_t>(c) * k + ky) * k + kx) * out_h * out_w;
        for (int oy = 0; oy < out_h; ++oy) {
          int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= H) continue;
          float* dst_row = img + (static_cast<size_t>(c) * H + iy) * W;
          for (int ox = 0; ox < out_w; ++ox) {
            int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < W) dst_row[ix] += src[oy * out_w + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor Conv2d::forward(const Tensor& x, bool train) {
  if (x.c != in_ch) throw ContractError("Conv2d: input has " + std::to_string(x.c) +
                                        " channels, expected " + std::to_string(in_ch));
  out_h_ = (x.h + 2 * pad - ksize) / stride + 1;
  out_w_ = (x.w + 2 * pad - ksize) / stride + 1;
  if (out_h_ <= 0 || out_w_ <= 0) throw ContractError("Conv2d: input spatially too small");
  cached_x_ = x;  // kept for the weight gradient
  (void)train;

  Tensor y(x.n, out_ch, out_h_, out_w_);
  const int patch = in_ch * ksize * ksize;
  const int cols = out_h_ * out_w_;
  std::vector<float> col(static_cast<size_t>(patch) * cols);
  CMapMat W(weight.data(), out_ch, patch);
  for (int i = 0; i < x.n; ++i) {
    im2col(x.example(i), in_ch, x.h, x.w, ksize, stride, pad, out_h_, out_w_, col.data());
    CMapMat colm(col.data(), patch, cols);
    MapMat out(y.example(i), out_ch, cols);
    out.noalias() = W * colm;
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
  const Tensor& x = cached_x_;
  const int patch = in_ch * ksize * ksize;
  const int cols = out_h_ * out_w_;
  Tensor dx(x.n, x.c, x.h, x.w);
  std::vector<float> col(static_cast<size_t>(patch) * cols);
  std::vector<float> dcol(static_cast<size_t>(patch) * cols);
  CMapMat W(weight.data(), out_ch, patch);
  MapMat dW(wgrad.data(), out_ch, patch);
  for (int i = 0; i < x.n; ++i) {
    im2col(x.example(i), in_ch, x.h, x.w, ksize, stride, pad, out_h_, out_w_, col.data());
    CMapMat colm(col.data(), patch, cols);
    CMapMat dYm(dy.example(i), out_ch, cols);
    dW.noalias() += dYm * colm.transpose();
    MapMat dcolm(dcol.data(), patch, cols);
    dcolm.noalias() = W.transpose() * dYm;
    col2im_add(dcol.data(), in_ch, x.h, x.w, ksize, stride, pad, out_h_, out_w_, dx.example(i));
  }
  return dx;
}

void Conv2d::collect(ParamSet& ps, const std::string& prefix) {
  ps.add(prefix + ".weight", &weight, &wgrad);
}

// ---- BatchNorm2d ----

BatchNorm2d::BatchNorm2d(int channels_) : channels(channels_) {
  gamma.assign(channels, 1.0f);
  ggrad.assign(channels, 0.0f);
  beta.assign(channels, 0.0f);
  bgrad.assign(channels, 0.0f);
  running_mean.assign(channels, 0.0f);
  running_var.assign(channels, 1.0f);
  inv_std_.assign(channels, 0.0f);
}

Tensor BatchNorm2d::forward(const Tensor& x, bool train) {
  train_mode_ = train;
  Tensor y(x.n, x.c, x.h, x.w);
  const int hw = x.h * x.w;
  const size_t per_ch = static_cast<size_t>(x.n) * hw;
  xhat_ = Tensor(x.n, x.c, x.h, x.w);
  for (int c = 0; c < channels; ++c) {
    float mean, var;
    if (train) {
      double s = 0.0, ss = 0.0;
      for (int i = 0; i < x.n; ++i) {
        const float* p = x.example(i) + static_cast<size_t>(c) * hw;
        for (int j = 0; j < hw; ++j) {
          s += p[j];
          ss += static_cast<double>(p[j]) * p[j];
        }
      }
      mean = static_cast<float>(s / per_ch);
      var = static_cast<float>(std::max(ss / per_ch - static_cast<double>(mean) * mean, 0.0));
      if (update_running) {
        running_mean[c] = momentum * running_mean[c] + (1.0f - momentum) * mean;
        running_var[c] = momentum * running_var[c] + (1.0f - momentum) * var;
      }
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    float inv = 1.0f / std::sqrt(var + eps);
    inv_std_[c] = inv;
    for (int i = 0; i < x.n; ++i) {
      const float* p = x.example(i) + static_cast<size_t>(c) * hw;
      float* xh = xhat_.example(i) + static_cast<size_t>(c) * hw;
      float* out = y.example(i) + static_cast<size_t>(c) * hw;
      for (int j = 0; j < hw; ++j) {
        xh[j] = (p[j] - mean) * inv;
        out[j] = gamma[c] * xh[j] + beta[c];
      }
    }
  }
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& dy) {
  Tensor dx(dy.n, dy.c, dy.h, dy.w);
  const int hw = dy.h * dy.w;
  const double per_ch = static_cast<double>(dy.n) * hw;
  for (int c = 0; c < channels; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int i = 0; i < dy.n; ++i) {
      const float* d = dy.example(i) + static_cast<size_t>(c) * hw;
      const float* xh = xhat_.example(i) + static_cast<size_t>(c) * hw;
      for (int j = 0; j < hw; ++j) {
        sum_dy += d[j];
        sum_dy_xhat += static_cast<double>(d[j]) * xh[j];
      }
    }
    ggrad[c] += static_cast<float>(sum_dy_xhat);
    bgrad[c] += static_cast<float>(sum_dy);
    float g_inv = gamma[c] * inv_std_[c];
    if (train_mode_) {
      float mean_dy = static_cast<float>(sum_dy / per_ch);
      float mean_dy_xhat = static_cast<float>(sum_dy_xhat / per_ch);
      for (int i = 0; i < dy.n; ++i) {
        const float* d = dy.example(i) + static_cast<size_t>(c) * hw;
        const float* xh = xhat_.example(i) + static_cast<size_t>(c) * hw;
        float* out = dx.example(i) + static_cast<size_t>(c) * hw;
        for (int j = 0; j < hw; ++j) out[j] = g_inv * (d[j] - mean_dy - xh[j] * mean_dy_xhat);
      }
    } else {
      for (int i = 0; i < dy.n; ++i) {
        const float* d = dy.example(i) + static_cast<size_t>(c) * hw;
        float* out = dx.example(i) + static_cast<size_t>(c) * hw;
        for (int j = 0; j < hw; ++j) out[j] = g_inv * d[j];
      }
    }
  }
  return dx;
}

void BatchNorm2d::collect(ParamSet& ps, const std::string& prefix) {
  ps.add(prefix + ".gamma", &gamma, &ggrad);
  ps.add(prefix + ".beta", &beta, &bgrad);
}

void BatchNorm2d::collect_buffers(ParamSet& ps, const std::string& prefix) {
  ps.add(prefix + ".running_mean", &running_mean);
  ps.add(prefix + ".running_var", &running_var);
}

// ---- ReLU ----

Tensor ReluInplace::forward(Tensor x) {
  mask_.assign(x.size(), 0);
  for (size_t i = 0; i < x.size(); ++i) {
    if (x.v[i] > 0.0f) {
      mask_[i] = 1;
    } else {
      x.v[i] = 0.0f;
    }
  }
  return x;
}

Tensor ReluInplace::backward(Tensor dy) {
  if (dy.size() != mask_.size()) throw ContractError("ReLU backward: shape mismatch");
  for (size_t i = 0; i < dy.size(); ++i)
    if (!mask_[i]) dy.v[i] = 0.0f;
  return dy;
}

// ---- ResidualBlock ----

ResidualBlock::ResidualBlock(int in_ch, int out_ch, int stride)
    : conv1(in_ch, out_ch, 3, stride, 1),
      conv2(out_ch, out_ch, 3, 1, 1),
      bn1(out_ch),
      bn2(out_ch) {
  if (stride != 1 || in_ch != out_ch) {
    down_conv = std::make_unique<Conv2d>(in_ch, out_ch, 1, stride, 0);
    down_bn = std::make_unique<BatchNorm2d>(out_ch);
  }
}

void ResidualBlock::init(Rng& rng) {
  conv1.init(rng);
  conv2.init(rng);
  if (down_conv) down_conv->init(rng);
}

Tensor ResidualBlock::forward(const Tensor& x, bool train) {
  Tensor main = relu1.forward(bn1.forward(conv1.forward(x, train), train));
  main = bn2.forward(conv2.forward(main, train), train);
  Tensor shortcut = down_conv ? down_bn->forward(down_conv->forward(x, train), train) : x;
  if (!main.same_shape(shortcut)) throw ContractError("ResidualBlock: shape mismatch on add");
  for (size_t i = 0; i < main.size(); ++i) main.v[i] += shortcut.v[i];
  return relu_out.forward(std::move(main));
}

Tensor ResidualBlock::backward(const Tensor& dy) {
  Tensor d = relu_out.backward(dy);
  // main branch
  Tensor dmain = conv1.backward(bn1.backward(relu1.backward(conv2.backward(bn2.backward(d)))));
  // shortcut branch
  Tensor dshort = down_conv ? down_conv->backward(down_bn->backward(d)) : std::move(d);
  for (size_t i = 0; i < dmain.size(); ++i) dmain.v[i] += dshort.v[i];
  return dmain;
}

void ResidualBlock::collect(ParamSet& ps, const std::string& prefix) {
  conv1.collect(ps, prefix + ".conv1");
  bn1.collect(ps, prefix + ".bn1");
  conv2.collect(ps, prefix + ".conv2");
  bn2.collect(ps, prefix + ".bn2");
  if (down_conv) {
    down_conv->collect(ps, prefix + ".down_conv");
    down_bn->collect(ps, prefix + ".down_bn");
  }
}

void ResidualBlock::collect_buffers(ParamSet& ps, const std::string& prefix) {
  bn1.collect_buffers(ps, prefix + ".bn1");
  bn2.collect_buffers(ps, prefix + ".bn2");
  if (down_bn) down_bn->collect_buffers(ps, prefix + ".down_bn");
}

void ResidualBlock::set_bn_updates(bool on) {
  bn1.update_running = on;
  bn2.update_running = on;
  if (down_bn) down_bn->update_running = on;
}

// ---- ResNetBackbone ----

int BackboneConfig::blocks_per_stage() const {
  if (depth < 8 || (depth - 2) % 6 != 0)
    throw ValidationError("backbone: depth must be 6n+2 with n >= 1, got " +
                          std::to_string(depth));
  return (depth - 2) / 6;
}

ResNetBackbone::ResNetBackbone(const BackboneConfig& cfg)
    : cfg_(cfg), conv1_(cfg.in_channels, cfg.width, 3, 1, 1), bn1_(cfg.width) {
  int n = cfg.blocks_per_stage();
  int widths[3] = {cfg.width, cfg.width * 2, cfg.width * 4};
  int in_ch = cfg.width;
  for (int stage = 0; stage < 3; ++stage) {
    for (int b = 0; b < n; ++b) {
      int stride = (stage > 0 && b == 0) ? 2 : 1;
      blocks_.emplace_back(in_ch, widths[stage], stride);
      in_ch = widths[stage];
    }
  }
}

void ResNetBackbone::init(uint64_t seed) {
  Rng rng(derive_seed(seed, "backbone/init"));
  conv1_.init(rng);
  for (auto& b : blocks_) b.init(rng);
}

Tensor ResNetBackbone::forward(const Tensor& images, bool train) {
  Tensor x = relu1_.forward(bn1_.forward(conv1_.forward(images, train), train));
  for (auto& b : blocks_) x = b.forward(x, train);
  pooled_h_ = x.h;
  pooled_w_ = x.w;
  // global average pool -> [N, D, 1, 1]
  Tensor emb(x.n, x.c, 1, 1);
  const float inv = 1.0f / static_cast<float>(x.h * x.w);
  for (int i = 0; i < x.n; ++i) {
    const float* p = x.example(i);
    float* e = emb.example(i);
    for (int c = 0; c < x.c; ++c) {
      float s = 0.0f;
      for (int j = 0; j < x.h * x.w; ++j) s += p[c * x.h * x.w + j];
      e[c] = s * inv;
    }
  }
  return emb;
}

Tensor ResNetBackbone::backward(const Tensor& demb) {
  const int hw = pooled_h_ * pooled_w_;
  Tensor dx(demb.n, demb.c, pooled_h_, pooled_w_);
  const float inv = 1.0f / static_cast<float>(hw);
  for (int i = 0; i < demb.n; ++i) {
    const float* de = demb.example(i);
    float* p = dx.example(i);
    for (int c = 0; c < demb.c; ++c)
      for (int j = 0; j < hw; ++j) p[c * hw + j] = de[c] * inv;
  }
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) dx = it->backward(dx);
  return conv1_.backward(bn1_.backward(relu1_.backward(dx)));
}

void ResNetBackbone::collect(ParamSet& ps, const std::string& prefix) {
  conv1_.collect(ps, prefix + ".conv1");
  bn1_.collect(ps, prefix + ".bn1");
  for (size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i].collect(ps, prefix + ".block" + std::to_string(i));
}

void ResNetBackbone::collect_buffers(ParamSet& ps, const std::string& prefix) {
  bn1_.collect_buffers(ps, prefix + ".bn1");
  for (size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i].collect_buffers(ps, prefix + ".block" + std::to_string(i));
}

void ResNetBackbone::set_bn_updates(bool on) {
  bn1_.update_running = on;
  for (auto& b : blocks_) b.set_bn_updates(on);
}

// ---- SGD ----

void SgdOptimizer::step(ParamSet& params, double lr) {
  const auto& refs = params.refs();
  if (velocity_.empty()) {
    velocity_.resize(refs.size());
    for (size_t i = 0; i < refs.size(); ++i) velocity_[i].assign(refs[i].value->size(), 0.0f);
  }
  if (velocity_.size() != refs.size()) throw ContractError("SgdOptimizer: param set changed");
  const float mu = static_cast<float>(cfg_.momentum);
  const float wd = static_cast<float>(cfg_.weight_decay);
  const float flr = static_cast<float>(lr);
  for (size_t i = 0; i < refs.size(); ++i) {
    auto& w = *refs[i].value;
    auto& g = *refs[i].grad;
    auto& v = velocity_[i];
    for (size_t j = 0; j < w.size(); ++j) {
      float grad = g[j] + wd * w[j];
      v[j] = mu * v[j] + grad;
      w[j] -= flr * v[j];
    }
  }
}

}  // namespace fscil
