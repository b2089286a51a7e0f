#include <admkit/arithmetic.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>
#include <random>

#include "reference_posit.hpp"

using namespace admkit;
using admkit::testing::Rational;
using admkit::testing::reference_decode;
using admkit::testing::ReferenceTable;

namespace {

std::vector<Posit> random_vector(PositFormat f, std::size_t n, std::mt19937_64& rng) {
  std::uniform_int_distribution<uint64_t> pick(0, f.mask());
  std::vector<Posit> v;
  v.reserve(n);
  while (v.size() < n) {
    Posit p = Posit::from_bits(f, pick(rng));
    if (!p.is_nar()) v.push_back(p);
  }
  return v;
}

Rational exact_dot(const std::vector<Posit>& xs, const std::vector<Posit>& ys) {
  Rational sum = 0;
  for (std::size_t i = 0; i < xs.size(); ++i)
    sum += *reference_decode(xs[i].bits(), xs[i].format()) * *reference_decode(ys[i].bits(), ys[i].format());
  return sum;
}

}  // namespace

TEST_CASE("layout covers the product range", "[quire]") {
  const QuireLayout l16 = QuireLayout::for_format(PositFormat{16, 2, 6});
  CHECK(l16.width_bits() == 256);
  CHECK(l16.frac_bits == 62);
  const QuireLayout l32 = QuireLayout::for_format(PositFormat{32, 2, 6});
  CHECK(l32.width_bits() == 512);
  // 16*nbits is too narrow here; the layout widens to the format's range.
  const QuireLayout wide = QuireLayout::for_format(PositFormat{8, 4, 6});
  CHECK(wide.width_bits() > 16 * 8);
}

TEST_CASE("cancellation keeps the small term", "[quire]") {
  const PositFormat f{32, 2, 6};
  std::vector<Posit> xs{encode(1e6L, f), encode(1.0L, f), encode(-1e6L, f)};
  std::vector<Posit> ys(3, encode(1.0L, f));
  CHECK(quire_dot(xs, ys, f) == encode(1.0L, f));
  // Sequential float32 rounding loses the 1 once the large term needs all 24 bits.
  std::vector<Posit> harder{encode(16777216.0L, f), encode(1.0L, f), encode(-16777216.0L, f)};
  CHECK(quire_dot(harder, ys, f) == encode(1.0L, f));
  float naive = 16777216.0f;
  naive += 1.0f;
  naive -= 16777216.0f;
  CHECK(naive == 0.0f);
}

TEST_CASE("empty dot product is zero", "[quire]") {
  const PositFormat f{16, 2, 6};
  CHECK(quire_dot({}, {}, f).is_zero());
}

TEST_CASE("NaR propagates", "[quire]") {
  const PositFormat f{16, 2, 6};
  std::vector<Posit> xs{encode(2.0L, f), Posit::nar(f)};
  std::vector<Posit> ys{encode(2.0L, f), encode(1.0L, f)};
  CHECK(quire_dot(xs, ys, f).is_nar());
  Quire q(f);
  q.fma(xs[0], ys[0]);
  Quire bad(f);
  bad.add(Posit::nar(f));
  std::vector<Quire> parts{q, bad};
  CHECK(distributed_reduce(parts).is_nar());
}

TEST_CASE("length and format mismatches throw", "[quire]") {
  const PositFormat f{16, 2, 6};
  std::vector<Posit> one{encode(1.0L, f)};
  CHECK_THROWS_AS(quire_dot(one, {}, f), FormatError);
  std::vector<Posit> other{encode(1.0L, PositFormat{32, 2, 6})};
  CHECK_THROWS_AS(quire_dot(one, other, f), FormatError);
}

TEST_CASE("dot products equal the exact rational sum rounded once", "[quire]") {
  std::mt19937_64 rng(3);
  for (PositFormat f : {PositFormat{8, 0, 6}, PositFormat{10, 2, 6}, PositFormat{12, 1, 4}, PositFormat{8, 4, 6}}) {
    ReferenceTable table(f);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t n = 1 + trial % 40;
      auto xs = random_vector(f, n, rng);
      auto ys = random_vector(f, n, rng);
      // Force cancellation: mirror half the terms.
      for (std::size_t i = 0; i + 1 < n; i += 2) {
        xs[i + 1] = -xs[i];
        ys[i + 1] = ys[i];
      }
      INFO(f.to_string() << " trial " << trial);
      REQUIRE(quire_dot(xs, ys, f).bits() == table.round(exact_dot(xs, ys)));
    }
  }
}

TEST_CASE("16-bit dot products against the rational oracle", "[quire]") {
  const PositFormat f{16, 2, 6};
  ReferenceTable table(f);
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    auto xs = random_vector(f, 200, rng);
    auto ys = random_vector(f, 200, rng);
    for (std::size_t i = 0; i < 100; ++i) {
      xs[100 + i] = -xs[i];
      ys[100 + i] = ys[i];
    }
    xs[150] = random_vector(f, 1, rng)[0];
    REQUIRE(quire_dot(xs, ys, f).bits() == table.round(exact_dot(xs, ys)));
  }
}

TEST_CASE("distributed reduce is partition invariant", "[quire]") {
  const PositFormat f{16, 2, 6};
  std::mt19937_64 data_rng(99);
  auto xs = random_vector(f, 1000, data_rng);
  auto ys = random_vector(f, 1000, data_rng);
  const Posit single = quire_dot(xs, ys, f);

  SECTION("one worker is the plain dot product") {
    Quire q(f);
    for (std::size_t i = 0; i < xs.size(); ++i) q.fma(xs[i], ys[i]);
    std::vector<Quire> parts{q};
    CHECK(distributed_reduce(parts) == single);
  }
  SECTION("four workers") {
    std::vector<Quire> parts(4, Quire(f));
    for (std::size_t i = 0; i < xs.size(); ++i) parts[i / 250].fma(xs[i], ys[i]);
    CHECK(distributed_reduce(parts) == single);
  }
  SECTION("random permutations and partitions over 100 seeds") {
    for (int seed = 0; seed < 100; ++seed) {
      std::mt19937_64 rng(seed);
      std::vector<std::size_t> order(xs.size());
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      const int workers = 1 + seed % 16;
      std::vector<Quire> parts(workers, Quire(f));
      std::uniform_int_distribution<int> who(0, workers - 1);
      for (std::size_t i : order) parts[who(rng)].fma(xs[i], ys[i]);
      REQUIRE(distributed_reduce(parts) == single);
    }
  }
}

TEST_CASE("scalar arithmetic rounds once", "[quire]") {
  const PositFormat f{10, 1, 6};
  ReferenceTable table(f);
  for (uint64_t a = 0; a < 1024; a += 7) {
    for (uint64_t b = 0; b < 1024; b += 5) {
      const Posit pa = Posit::from_bits(f, a);
      const Posit pb = Posit::from_bits(f, b);
      if (pa.is_nar() || pb.is_nar()) continue;
      const Rational ra = *reference_decode(a, f);
      const Rational rb = *reference_decode(b, f);
      REQUIRE((pa + pb).bits() == table.round(ra + rb));
      REQUIRE((pa - pb).bits() == table.round(ra - rb));
      REQUIRE((pa * pb).bits() == table.round(ra * rb));
    }
  }
}
