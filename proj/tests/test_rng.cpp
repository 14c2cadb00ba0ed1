#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "snatchml/rng.hpp"

using namespace snatchml;

TEST_SUITE("rng") {

TEST_CASE("same seed, same stream") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) {
    CHECK(a.uniform() == b.uniform());
    CHECK(a.normal() == b.normal());
  }
}

TEST_CASE("uniform stays in [0, 1) and below respects its bound") {
  Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(rng.below(7) < 7u);
  }
}

TEST_CASE("normal has roughly unit moments") {
  Rng rng(3);
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  const double mean = sum / n;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(sq / n - mean * mean - 1.0) < 0.02);
}

TEST_CASE("below is close to uniform over a small range") {
  Rng rng(11);
  std::vector<int> counts(5, 0);
  for (int i = 0; i < 50000; ++i) ++counts[rng.below(5)];
  for (int c : counts) CHECK(std::abs(c - 10000) < 400);
}

TEST_CASE("shuffle is a permutation and depends on the seed") {
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  auto a = v, b = v, c = v;
  Rng(5).shuffle(a);
  Rng(5).shuffle(b);
  Rng(6).shuffle(c);
  CHECK(a == b);
  CHECK(a != c);
  std::sort(a.begin(), a.end());
  CHECK(a == v);
}

TEST_CASE("derive_seed separates tags and bases") {
  std::set<std::uint64_t> seen;
  for (std::uint64_t base = 0; base < 20; ++base) {
    for (std::uint64_t tag = 0; tag < 20; ++tag) seen.insert(derive_seed(base, tag));
  }
  CHECK(seen.size() == 400);
  CHECK(derive_seed(7, 3) == derive_seed(7, 3));
}

}  // TEST_SUITE
