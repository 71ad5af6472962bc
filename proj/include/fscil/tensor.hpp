#pragma once

#include <cstddef>
#include <vector>

namespace fscil {

/// Dense NCHW float tensor. Matrices use h = w = 1 (n rows, c columns).
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<float> v;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), v(static_cast<size_t>(n_) * c_ * h_ * w_, 0.0f) {}

  static Tensor matrix(int rows, int cols) { return Tensor(rows, cols, 1, 1); }

  size_t size() const { return v.size(); }
  int per_example() const { return c * h * w; }

  float* data() { return v.data(); }
  const float* data() const { return v.data(); }

  float* example(int i) { return v.data() + static_cast<size_t>(i) * per_example(); }
  const float* example(int i) const { return v.data() + static_cast<size_t>(i) * per_example(); }

  float& at(int in, int ic, int ih, int iw) {
    return v[((static_cast<size_t>(in) * c + ic) * h + ih) * w + iw];
  }
  float at(int in, int ic, int ih, int iw) const {
    return v[((static_cast<size_t>(in) * c + ic) * h + ih) * w + iw];
  }

  void zero() { std::fill(v.begin(), v.end(), 0.0f); }

  bool same_shape(const Tensor& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
};

}  // namespace fscil
