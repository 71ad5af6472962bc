#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "fscil/rng.hpp"

using fscil::Rng;
using fscil::derive_seed;

TEST_SUITE_BEGIN("rng");

TEST_CASE("derive_seed is a pure function of master and purpose") {
  CHECK(derive_seed(42, "a/b") == derive_seed(42, "a/b"));
  CHECK(derive_seed(42, "a/b") != derive_seed(42, "a/c"));
  CHECK(derive_seed(42, "a/b") != derive_seed(43, "a/b"));
  CHECK(derive_seed(0, "") != derive_seed(1, ""));
}

TEST_CASE("identically seeded generators emit identical streams") {
  Rng a(123), b(123), c(124);
  bool all_eq = true, any_diff = false;
  for (int i = 0; i < 100; ++i) {
    uint64_t va = a.next_u64();
    all_eq = all_eq && (va == b.next_u64());
    any_diff = any_diff || (va != c.next_u64());
  }
  CHECK(all_eq);
  CHECK(any_diff);
}

TEST_CASE("uniform_int stays in range and covers small supports") {
  Rng rng(7);
  std::set<uint64_t> seen;
  for (int i = 0; i < 2000; ++i) {
    uint64_t v = rng.uniform_int(7);
    CHECK(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
}

TEST_CASE("uniform lies in the half-open unit interval") {
  Rng rng(11);
  double mn = 1.0, mx = 0.0, sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    double u = rng.uniform();
    mn = std::min(mn, u);
    mx = std::max(mx, u);
    sum += u;
  }
  CHECK(mn >= 0.0);
  CHECK(mx < 1.0);
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.01));
}

TEST_CASE("normal has zero mean and unit variance") {
  Rng rng(5);
  const int n = 200000;
  double sum = 0.0, ss = 0.0;
  for (int i = 0; i < n; ++i) {
    double g = rng.normal();
    sum += g;
    ss += g * g;
  }
  double mean = sum / n;
  double var = ss / n - mean * mean;
  CHECK(std::abs(mean) < 0.01);
  CHECK(var == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("gamma matches its first two moments") {
  for (double alpha : {0.5, 1.0, 2.5}) {
    Rng rng(31);
    const int n = 200000;
    double sum = 0.0, ss = 0.0;
    for (int i = 0; i < n; ++i) {
      double g = rng.gamma(alpha);
      CHECK(g > 0.0);
      sum += g;
      ss += g * g;
    }
    double mean = sum / n;
    double var = ss / n - mean * mean;
    CHECK(mean == doctest::Approx(alpha).epsilon(0.03));
    CHECK(var == doctest::Approx(alpha).epsilon(0.05));
  }
}

TEST_CASE("beta stays in the unit interval with the right mean") {
  Rng rng(13);
  const int n = 100000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    double b = rng.beta(2.0, 3.0);
    CHECK(b >= 0.0);
    CHECK(b <= 1.0);
    sum += b;
  }
  CHECK(sum / n == doctest::Approx(2.0 / 5.0).epsilon(0.02));
}

TEST_CASE("symmetric beta is symmetric around one half") {
  Rng rng(17);
  const int n = 100000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += rng.beta(0.7, 0.7);
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("shuffle permutes without loss and is seed-deterministic") {
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  auto a = v, b = v, c = v;
  Rng r1(99), r2(99), r3(100);
  r1.shuffle(a);
  r2.shuffle(b);
  r3.shuffle(c);
  CHECK(a == b);
  CHECK(a != c);
  CHECK(a != v);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == v);
}

TEST_SUITE_END();
