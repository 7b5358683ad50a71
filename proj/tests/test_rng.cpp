#include <doctest.h>

#include <numeric>

#include "masklab/error.hpp"
#include "masklab/rng.hpp"

using namespace masklab;

TEST_CASE("same seed, same stream") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("forks are deterministic and distinct") {
  const Rng root(5);
  Rng x = root.fork("batches"), y = root.fork("batches"), z = root.fork("critic");
  CHECK(x.seed() == y.seed());
  CHECK(x.seed() != z.seed());
  CHECK(root.fork(std::uint64_t{1}).seed() != root.fork(std::uint64_t{2}).seed());
}

TEST_CASE("uniform, below and normal moments") {
  Rng rng(7);
  const int n = 200000;
  double su = 0.0, sn = 0.0, sn2 = 0.0;
  std::vector<int> counts(5, 0);
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    su += u;
    const double z = rng.normal();
    sn += z;
    sn2 += z * z;
    ++counts[rng.below(5)];
  }
  CHECK(su / n == doctest::Approx(0.5).epsilon(0.01));
  CHECK(std::abs(sn / n) < 0.01);
  CHECK(sn2 / n == doctest::Approx(1.0).epsilon(0.02));
  for (int c : counts) CHECK(c == doctest::Approx(n / 5.0).epsilon(0.03));
}

TEST_CASE("categorical follows weights and rejects bad input") {
  Rng rng(8);
  const std::vector<double> w{0.0, 3.0, 1.0};
  int hits = 0;
  for (int i = 0; i < 40000; ++i) {
    const auto k = rng.categorical(w);
    REQUIRE(k != 0);
    hits += k == 1;
  }
  CHECK(hits / 40000.0 == doctest::Approx(0.75).epsilon(0.02));
  const std::vector<double> zero{0.0, 0.0};
  CHECK_THROWS_AS(rng.categorical(zero), ValidationError);
  CHECK_THROWS_AS(rng.below(0), ValidationError);
}

TEST_CASE("shuffle is a permutation") {
  Rng rng(9);
  std::vector<std::size_t> v(50);
  std::iota(v.begin(), v.end(), 0);
  rng.shuffle(v);
  std::vector<std::size_t> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
}

TEST_CASE("fnv1a64 reference values") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}
