#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mm/rng.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

TEST_CASE("identical seeds give identical streams") {
  mm::Rng a(12345);
  mm::Rng b(12345);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
  for (int i = 0; i < 1000; ++i) CHECK(a.next_normal() == b.next_normal());
}

TEST_CASE("different seeds give different streams") {
  mm::Rng a(1);
  mm::Rng b(2);
  int same = 0;
  for (int i = 0; i < 64; ++i) same += a.next_u64() == b.next_u64() ? 1 : 0;
  CHECK(same < 4);
}

TEST_CASE("split streams do not depend on the parent's position") {
  mm::Rng fresh(777);
  mm::Rng consumed(777);
  for (int i = 0; i < 500; ++i) consumed.next_double();

  mm::Rng s1 = fresh.split(42);
  mm::Rng s2 = consumed.split(42);
  for (int i = 0; i < 100; ++i) CHECK(s1.next_u64() == s2.next_u64());

  mm::Rng t1 = fresh.split("label");
  mm::Rng t2 = consumed.split("label");
  for (int i = 0; i < 100; ++i) CHECK(t1.next_u64() == t2.next_u64());
}

TEST_CASE("split streams differ from the parent and from each other") {
  mm::Rng parent(9);
  mm::Rng c1 = parent.split(1);
  mm::Rng c2 = parent.split(2);
  mm::Rng cl = parent.split("one");
  mm::Rng base(9);
  int same12 = 0;
  int same1p = 0;
  int same1l = 0;
  for (int i = 0; i < 64; ++i) {
    const mm::u64 v1 = c1.next_u64();
    const mm::u64 v2 = c2.next_u64();
    const mm::u64 vl = cl.next_u64();
    const mm::u64 vp = base.next_u64();
    same12 += v1 == v2 ? 1 : 0;
    same1p += v1 == vp ? 1 : 0;
    same1l += v1 == vl ? 1 : 0;
  }
  CHECK(same12 < 4);
  CHECK(same1p < 4);
  CHECK(same1l < 4);
}

TEST_CASE("uniform doubles live in [0,1) with the right moments") {
  mm::Rng rng(31);
  const int n = 200000;
  double sum = 0.0;
  double sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.next_double();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
    sum += x;
    sum2 += x * x;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  CHECK(std::abs(mean - 0.5) < 0.01);
  CHECK(std::abs(var - 1.0 / 12.0) < 0.01);
}

TEST_CASE("next_uniform maps to the requested interval") {
  mm::Rng rng(32);
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.next_uniform(-3.0, 5.0);
    CHECK(x >= -3.0);
    CHECK(x < 5.0);
  }
}

TEST_CASE("normal draws have standard moments") {
  mm::Rng rng(33);
  const int n = 200000;
  double sum = 0.0;
  double sum2 = 0.0;
  double sum3 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.next_normal();
    sum += x;
    sum2 += x * x;
    sum3 += x * x * x;
  }
  CHECK(std::abs(sum / n) < 0.02);
  CHECK(std::abs(sum2 / n - 1.0) < 0.03);
  CHECK(std::abs(sum3 / n) < 0.08);

  mm::Rng shifted(33);
  double sum_s = 0.0;
  for (int i = 0; i < 50000; ++i) sum_s += shifted.next_normal(7.0, 0.5);
  CHECK(std::abs(sum_s / 50000 - 7.0) < 0.02);
}

TEST_CASE("next_index is bounded and roughly uniform") {
  mm::Rng rng(34);
  std::vector<int> counts(10, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const std::size_t k = rng.next_index(10);
    REQUIRE(k < 10);
    ++counts[k];
  }
  for (int c : counts) {
    CHECK(c > n / 10 - 800);
    CHECK(c < n / 10 + 800);
  }
}

TEST_CASE("shuffle produces a permutation") {
  mm::Rng rng(35);
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[i] = i;
  auto w = v;
  rng.shuffle(w);
  auto sorted = w;
  std::sort(sorted.begin(), sorted.end());
  CHECK(sorted == v);
  CHECK(w != v);  // 50! permutations; identity is effectively impossible
}

TEST_CASE("sample_without_replacement draws distinct indices in range") {
  mm::Rng rng(36);
  const auto picked = rng.sample_without_replacement(100, 20);
  REQUIRE(picked.size() == 20);
  std::set<std::size_t> unique(picked.begin(), picked.end());
  CHECK(unique.size() == 20);
  for (std::size_t i : picked) CHECK(i < 100);

  // Requesting more than available returns everything once.
  const auto all = rng.sample_without_replacement(5, 50);
  CHECK(all.size() == 5);
  std::set<std::size_t> unique_all(all.begin(), all.end());
  CHECK(unique_all.size() == 5);
}

TEST_CASE("generator identifies its algorithm and remembers its seed") {
  mm::Rng rng(99);
  CHECK(rng.seed() == 99);
  CHECK(std::string(mm::Rng::algorithm_id).find("xoshiro") != std::string::npos);
}
