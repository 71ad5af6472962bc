#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace fscil {

/// Derives a child seed from a master seed and a purpose string.
/// Stable across platforms: FNV-1a over the purpose bytes mixed with the
/// master seed, finalized with splitmix64. Every RNG stream in the framework
/// is keyed this way so one master seed pins a whole experiment.
uint64_t derive_seed(uint64_t master, std::string_view purpose);

/// Deterministic RNG wrapper. All sampling helpers draw through explicit,
/// portable algorithms (Lemire bounded ints, Box-Muller normals,
/// Marsaglia-Tsang gammas) instead of distribution objects whose output is
/// implementation-defined.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  /// Uniform integer in [0, bound). bound must be > 0.
  uint64_t uniform_int(uint64_t bound);

  /// Uniform double in [0, 1).
  double uniform();

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller.
  double normal();

  /// Gamma(alpha, 1) via Marsaglia-Tsang, alpha > 0.
  double gamma(double alpha);

  /// Beta(a, b) from two gamma draws.
  double beta(double a, double b);

  /// In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fscil
