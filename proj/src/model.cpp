#include "fscil/model.hpp"

#include <Eigen/Core>
#include <cmath>

#include "fscil/common.hpp"
#include "fscil/rng.hpp"

namespace fscil {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

HeadKind head_kind_from_string(const std::string& s) {
  if (s == "linear") return HeadKind::Linear;
  if (s == "cosine") return HeadKind::Cosine;
  throw ValidationError("unknown head kind '" + s + "' (expected linear or cosine)");
}

std::string to_string(HeadKind k) { return k == HeadKind::Linear ? "linear" : "cosine"; }

ClassifierHead::ClassifierHead(const HeadConfig& cfg) : cfg_(cfg), num_classes_(cfg.num_classes) {
  if (cfg.embedding_dim <= 0) throw ValidationError("head: embedding_dim must be positive");
  if (cfg.num_classes <= 0) throw ValidationError("head: num_classes must be positive");
  weight.assign(static_cast<size_t>(num_classes_) * cfg_.embedding_dim, 0.0f);
  wgrad.assign(weight.size(), 0.0f);
  if (cfg_.kind == HeadKind::Linear) {
    bias.assign(num_classes_, 0.0f);
    bgrad.assign(num_classes_, 0.0f);
  } else {
    temperature.assign(1, static_cast<float>(cfg_.init_temperature));
    tgrad.assign(1, 0.0f);
  }
}

void ClassifierHead::init(uint64_t seed) {
  Rng rng(derive_seed(seed, "head/init"));
  double std = 1.0 / std::sqrt(static_cast<double>(cfg_.embedding_dim));
  for (auto& w : weight) w = static_cast<float>(std * rng.normal());
  if (!bias.empty()) std::fill(bias.begin(), bias.end(), 0.0f);
  if (!temperature.empty()) temperature[0] = static_cast<float>(cfg_.init_temperature);
}

Tensor ClassifierHead::forward(const Tensor& emb) {
  const int N = emb.n, D = cfg_.embedding_dim, C = num_classes_;
  if (emb.per_example() != D)
    throw ContractError("head: embedding dim " + std::to_string(emb.per_example()) +
                        ", expected " + std::to_string(D));
  Tensor logits = Tensor::matrix(N, C);
  CMapMat E(emb.data(), N, D);
  CMapMat W(weight.data(), C, D);
  MapMat L(logits.data(), N, C);
  if (cfg_.kind == HeadKind::Linear) {
    cached_emb_ = emb;
    L.noalias() = E * W.transpose();
    for (int i = 0; i < N; ++i)
      for (int c = 0; c < C; ++c) L(i, c) += bias[c];
    return logits;
  }
  // cosine: normalize rows of E and W, scale by temperature
  cached_emb_ = emb;
  constexpr float kEps = 1e-12f;
  emb_norm_.assign(N, 0.0f);
  w_norm_.assign(C, 0.0f);
  ehat_.assign(static_cast<size_t>(N) * D, 0.0f);
  what_.assign(static_cast<size_t>(C) * D, 0.0f);
  MapMat Eh(ehat_.data(), N, D);
  MapMat Wh(what_.data(), C, D);
  for (int i = 0; i < N; ++i) {
    float n = std::sqrt(E.row(i).squaredNorm() + kEps);
    emb_norm_[i] = n;
    Eh.row(i) = E.row(i) / n;
  }
  for (int c = 0; c < C; ++c) {
    float n = std::sqrt(W.row(c).squaredNorm() + kEps);
    w_norm_[c] = n;
    Wh.row(c) = W.row(c) / n;
  }
  L.noalias() = temperature[0] * (Eh * Wh.transpose());
  return logits;
}

Tensor ClassifierHead::backward(const Tensor& dlogits) {
  const int N = cached_emb_.n, D = cfg_.embedding_dim, C = num_classes_;
  Tensor demb(N, D, 1, 1);
  CMapMat dL(dlogits.data(), N, C);
  CMapMat E(cached_emb_.data(), N, D);
  MapMat dE(demb.data(), N, D);
  CMapMat W(weight.data(), C, D);
  MapMat dW(wgrad.data(), C, D);
  if (cfg_.kind == HeadKind::Linear) {
    dE.noalias() = dL * W;
    dW.noalias() += dL.transpose() * E;
    for (int c = 0; c < C; ++c) bgrad[c] += dL.col(c).sum();
    return demb;
  }
  CMapMat Eh(ehat_.data(), N, D);
  CMapMat Wh(what_.data(), C, D);
  // logits = T * Eh Wh^T; dT accumulates the full inner product
  float T = temperature[0];
  tgrad[0] += (dL.array() * (Eh * Wh.transpose()).array()).sum();
  RowMat dS = T * dL;  // gradient wrt the cosine similarities
  // through the embedding normalization: d(e/n) with n = sqrt(e.e + eps)
  RowMat Ge = dS * Wh;  // [N, D], gradient wrt Eh
  for (int i = 0; i < N; ++i) {
    float n = emb_norm_[i];
    float dot = Ge.row(i).dot(E.row(i));
    dE.row(i) = Ge.row(i) / n - E.row(i) * (dot / (n * n * n));
  }
  RowMat Gw = dS.transpose() * Eh;  // [C, D], gradient wrt Wh
  for (int c = 0; c < C; ++c) {
    float n = w_norm_[c];
    float dot = Gw.row(c).dot(W.row(c));
    dW.row(c) += Gw.row(c) / n - W.row(c) * (dot / (n * n * n));
  }
  return demb;
}

void ClassifierHead::collect(ParamSet& ps, const std::string& prefix) {
  ps.add(prefix + ".weight", &weight, &wgrad);
  if (cfg_.kind == HeadKind::Linear) {
    ps.add(prefix + ".bias", &bias, &bgrad);
  } else {
    ps.add(prefix + ".temperature", &temperature, &tgrad);
  }
}

void ClassifierHead::expand(int new_num_classes, ExpandInit mode, uint64_t seed,
                            const std::vector<std::vector<float>>* prototypes) {
  const int D = cfg_.embedding_dim;
  const int added = new_num_classes - num_classes_;
  if (added <= 0)
    throw ValidationError("head expand: new class count " + std::to_string(new_num_classes) +
                          " must exceed current " + std::to_string(num_classes_));
  weight.resize(static_cast<size_t>(new_num_classes) * D, 0.0f);
  wgrad.assign(weight.size(), 0.0f);
  if (cfg_.kind == HeadKind::Linear) {
    bias.resize(new_num_classes, 0.0f);
    bgrad.assign(bias.size(), 0.0f);
  }
  float* rows = weight.data() + static_cast<size_t>(num_classes_) * D;
  switch (mode) {
    case ExpandInit::Zeros:
      break;  // resize already zero-filled
    case ExpandInit::Seeded: {
      Rng rng(derive_seed(seed, "head/expand"));
      double std = 1.0 / std::sqrt(static_cast<double>(D));
      for (int i = 0; i < added * D; ++i) rows[i] = static_cast<float>(std * rng.normal());
      break;
    }
    case ExpandInit::Prototypes: {
      if (!prototypes || static_cast<int>(prototypes->size()) != added)
        throw ValidationError("head expand: need one prototype per added class");
      for (int r = 0; r < added; ++r) {
        if (static_cast<int>((*prototypes)[r].size()) != D)
          throw ValidationError("head expand: prototype dim mismatch");
        std::copy((*prototypes)[r].begin(), (*prototypes)[r].end(), rows + static_cast<size_t>(r) * D);
      }
      break;
    }
  }
  num_classes_ = new_num_classes;
}

ForwardResult forward(Model& m, const Tensor& images, bool train) {
  ForwardResult r;
  r.embeddings = m.backbone.forward(images, train);
  r.logits = m.head.forward(r.embeddings);
  return r;
}

}  // namespace fscil
