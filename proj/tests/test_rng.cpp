#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>
#include <unordered_set>

#include "flsim/rng.hpp"

using namespace flsim;

TEST_CASE("derive_seed is deterministic and tag-sensitive") {
  CHECK(derive_seed(1, 2, 3, "train") == derive_seed(1, 2, 3, "train"));
  CHECK(derive_seed(1, 2, 3, "train") != derive_seed(1, 2, 3, "poison"));
  CHECK(derive_seed(1, 2, 3, "train") != derive_seed(1, 2, 4, "train"));
  CHECK(derive_seed(1, 2, 3, "train") != derive_seed(1, 3, 3, "train"));
  CHECK(derive_seed(2, 2, 3, "train") != derive_seed(1, 2, 3, "train"));
}

TEST_CASE("derive_seed: no collisions across a million distinct tuples") {
  std::unordered_set<std::uint64_t> seen;
  seen.reserve(1u << 21);
  for (std::uint64_t r = 0; r < 100; ++r)
    for (std::uint64_t c = 0; c < 100; ++c)
      for (std::uint64_t m = 0; m < 100; ++m)
        seen.insert(derive_seed(m, r, c, "scan"));
  CHECK(seen.size() == 1000000);
}

TEST_CASE("derive_seed: distinct purpose tags give distinct seeds") {
  std::unordered_set<std::uint64_t> seen;
  for (int t = 0; t < 10000; ++t)
    seen.insert(derive_seed(42, 1, 2, "tag-" + std::to_string(t)));
  CHECK(seen.size() == 10000);
}

TEST_CASE("uniform stays in [0,1) and covers both halves") {
  Rng rng(9);
  bool low = false, high = false;
  for (int i = 0; i < 1000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    if (u < 0.5) low = true;
    else high = true;
  }
  CHECK(low);
  CHECK(high);
}

TEST_CASE("uniform_int is unbiased enough and in range") {
  Rng rng(10);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) counts[rng.uniform_int(7)] += 1;
  for (int c : counts) {
    CHECK(c > 9000);
    CHECK(c < 11000);
  }
}

TEST_CASE("normal has roughly zero mean and unit variance") {
  Rng rng(11);
  double sum = 0.0, sum2 = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sum2 += x * x;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("gamma mean matches its shape") {
  for (double shape : {0.3, 1.0, 4.5}) {
    Rng rng(static_cast<std::uint64_t>(shape * 100));
    double sum = 0.0;
    const int n = 50000;
    for (int i = 0; i < n; ++i) sum += rng.gamma(shape);
    CHECK(std::abs(sum / n - shape) < 0.1 * std::max(1.0, shape));
  }
}

TEST_CASE("dirichlet sums to one and concentrates with large beta") {
  Rng rng(12);
  auto p = rng.dirichlet(10000.0, 10);
  double sum = 0.0;
  for (double v : p) {
    sum += v;
    CHECK(std::abs(v - 0.1) < 0.01);
  }
  CHECK(std::abs(sum - 1.0) < 1e-12);
}

TEST_CASE("permutation and sampling are permutations") {
  Rng rng(13);
  auto perm = rng.permutation(100);
  std::set<std::size_t> unique(perm.begin(), perm.end());
  CHECK(unique.size() == 100);

  auto sample = rng.sample_without_replacement(50, 20);
  std::set<std::size_t> s(sample.begin(), sample.end());
  CHECK(s.size() == 20);
  for (auto v : s) CHECK(v < 50);
}

TEST_CASE("identical seeds give identical streams") {
  Rng a(77), b(77);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}
