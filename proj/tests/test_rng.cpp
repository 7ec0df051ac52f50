#include <cmath>
#include <vector>

#include "doctest.h"
#include "qvae/rng.hpp"

using namespace qvae;

TEST_CASE("identical seeds replay identical streams") {
  Rng a(42), b(42);
  for (int i = 0; i < 64; ++i) {
    CHECK(a.next_u64() == b.next_u64());
  }
  Rng c(42), d(42);
  for (int i = 0; i < 64; ++i) {
    CHECK(c.uniform() == d.uniform());
    CHECK(c.normal() == d.normal());
  }
}

TEST_CASE("different seeds diverge immediately") {
  Rng a(1), b(2);
  int same = 0;
  for (int i = 0; i < 16; ++i)
    if (a.next_u64() == b.next_u64()) ++same;
  CHECK(same == 0);
}

TEST_CASE("derive gives stable label-keyed child streams") {
  Rng root(7);
  Rng init1 = root.derive("init");
  Rng init2 = root.derive("init");
  Rng noise = root.derive("noise");
  CHECK(init1.seed() == init2.seed());
  CHECK(init1.seed() != noise.seed());
  CHECK(init1.seed() != root.seed());

  // Deriving must not advance the parent.
  Rng fresh(7);
  (void)fresh.derive("init");
  Rng untouched(7);
  CHECK(fresh.next_u64() == untouched.next_u64());

  // Child streams with different labels should look unrelated.
  int same = 0;
  for (int i = 0; i < 64; ++i)
    if (init1.next_u64() == noise.next_u64()) ++same;
  CHECK(same == 0);
}

TEST_CASE("uniform stays in range and covers it") {
  Rng rng(99);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(lo < 0.01);
  CHECK(hi > 0.99);

  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform(-2.0, 3.0);
    CHECK(u >= -2.0);
    CHECK(u < 3.0);
  }
}

TEST_CASE("uniform_index covers [0, n)") {
  Rng rng(5);
  std::vector<int> counts(10, 0);
  for (int i = 0; i < 10000; ++i) {
    const uint64_t k = rng.uniform_index(10);
    REQUIRE(k < 10);
    ++counts[static_cast<size_t>(k)];
  }
  for (int c : counts) CHECK(c > 700);  // expected 1000 each
}

TEST_CASE("normal has the right first two moments") {
  Rng rng(2024);
  const int n = 200000;
  double s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    s1 += x;
    s2 += x * x;
  }
  const double mean = s1 / n;
  const double var = s2 / n - mean * mean;
  // 5 sigma bounds: sd(mean) = 1/sqrt(n), sd(var) ~ sqrt(2/n).
  CHECK(std::abs(mean) < 5.0 / std::sqrt(static_cast<double>(n)));
  CHECK(std::abs(var - 1.0) < 5.0 * std::sqrt(2.0 / n));
}
