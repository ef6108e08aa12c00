#include <cmath>
#include <random>

#include "doctest.h"
#include "segfuse/errors.hpp"
#include "segfuse/tensor.hpp"
#include "support/oracles.hpp"

using namespace segfuse;

TEST_CASE("pixelwise_mul") {
  CHECK(pixelwise_mul(LogitMap(2, 2, 1, 1.0), AttentionMap(2, 2, 0.0)) == LogitMap(2, 2, 1, 0.0));
  CHECK(pixelwise_mul(LogitMap(2, 2, 1, 1.0), AttentionMap(2, 2, 1.0)) == LogitMap(2, 2, 1, 1.0));
  LogitMap a(2, 2, 1, 0.0);
  a.at(0, 0, 0) = 2.0;
  AttentionMap w(2, 2, 0.0);
  w.set(0, 0, 0.5);
  CHECK(pixelwise_mul(a, w).at(0, 0, 0) == 1.0);
  CHECK_THROWS_AS(pixelwise_mul(a, AttentionMap(3, 2, 0.0)), ShapeError);
}

TEST_CASE("pixelwise_add") {
  const LogitMap z(2, 3, 2, 0.0);
  CHECK(pixelwise_add(z, z) == z);
  std::mt19937_64 rng(1);
  const LogitMap a = fixture::random_logits(rng, 2, 3, 2);
  CHECK(pixelwise_add(a, z) == a);
  CHECK(pixelwise_add(LogitMap(1, 1, 1, 1.5), LogitMap(1, 1, 1, 2.5)).at(0, 0, 0) == 4.0);
  CHECK_THROWS_AS(pixelwise_add(a, LogitMap(2, 3, 1, 0.0)), ShapeError);
}

TEST_CASE("complement") {
  CHECK(complement(AttentionMap(2, 2, 0.5)) == AttentionMap(2, 2, 0.5));
  CHECK(complement(AttentionMap(2, 2, 1.0)) == AttentionMap(2, 2, 0.0));
  CHECK(complement(AttentionMap(1, 1, 0.25)).at(0, 0) == 0.75);
}

TEST_CASE("attention values outside [0,1] are rejected") {
  CHECK_THROWS_AS(AttentionMap(1, 1, 1.5), ArgumentError);
  CHECK_THROWS_AS(AttentionMap(1, 2, std::vector<double>{0.1, -0.1}), ArgumentError);
  CHECK_THROWS(LogitMap(1, 1, 1, std::vector<double>{NAN}));
}

TEST_CASE("bilinear_resize examples") {
  const LogitMap c(3, 5, 2, 3.7);
  const LogitMap up = bilinear_resize(c, 7, 11);
  for (double v : up.data()) CHECK(v == 3.7);
  const LogitMap down = bilinear_resize(c, 2, 1);
  for (double v : down.data()) CHECK(v == 3.7);

  std::mt19937_64 rng(3);
  const LogitMap r = fixture::random_logits(rng, 4, 6, 3);
  CHECK(bilinear_resize(r, 4, 6) == r);

  // [[0,1],[0,1]] to 2x4: source x = (d+0.5)/2 - 0.5 = -0.25, 0.25, 0.75, 1.25,
  // clamped to 0, 0.25, 0.75, 1.
  const LogitMap ramp(2, 2, 1, std::vector<double>{0, 1, 0, 1});
  const LogitMap wide = bilinear_resize(ramp, 2, 4);
  const double expect[] = {0.0, 0.25, 0.75, 1.0};
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 4; ++x) CHECK(wide.at(y, x, 0) == expect[x]);
}

TEST_CASE("bilinear_resize matches the per-pixel oracle on small grids") {
  std::mt19937_64 rng(7);
  for (int ih = 1; ih <= 8; ++ih) {
    for (int iw = 1; iw <= 8; iw += 3) {
      const LogitMap in = fixture::random_logits(rng, ih, iw, 2);
      for (int oh : {1, 3, 8}) {
        for (int ow : {2, 5, 8}) {
          const LogitMap got = bilinear_resize(in, oh, ow);
          const LogitMap want = oracle::resize(in, oh, ow);
          CHECK(got == want);
        }
      }
    }
  }
}

TEST_CASE("bilinear_resize stays within the input range") {
  std::mt19937_64 rng(11);
  const LogitMap in = fixture::random_logits(rng, 5, 4, 1);
  const auto [lo, hi] = std::minmax_element(in.data().begin(), in.data().end());
  const LogitMap big = bilinear_resize(in, 13, 9);
  for (double v : big.data()) {
    CHECK(v >= *lo);
    CHECK(v <= *hi);
  }
  const AttentionMap g = fixture::random_gate(rng, 3, 3);
  const AttentionMap gbig = bilinear_resize(g, 10, 10);
  for (double v : gbig.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("softmax_rows") {
  const Matrix z = softmax_rows(Matrix(1, 3, 0.0));
  for (double v : z.data) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  const Matrix two = softmax_rows(Matrix(1, 2, std::vector<double>{5.0, 5.0 + std::log(2.0)}));
  CHECK(two.at(0, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(two.at(0, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));

  CHECK_THROWS_AS(softmax_rows(Matrix(2, 0)), ArgumentError);
}

TEST_CASE("softmax_rows is shift invariant") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  for (int trial = 0; trial < 200; ++trial) {
    Matrix m(3, 6);
    for (double& v : m.data) v = u(rng);
    Matrix shifted = m;
    for (int r = 0; r < 3; ++r) {
      const double k = u(rng);
      for (int c = 0; c < 6; ++c) shifted.at(r, c) += k;
    }
    const Matrix a = softmax_rows(m);
    const Matrix b = softmax_rows(shifted);
    for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == doctest::Approx(b.data[i]).epsilon(1e-9));
    for (int r = 0; r < 3; ++r) {
      double s = 0.0;
      for (double v : a.row(r)) s += v;
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("argmax_channel") {
  std::mt19937_64 rng(2);
  const LabelGrid one = argmax_channel(fixture::random_logits(rng, 3, 3, 1));
  for (auto l : one.labels) CHECK(l == 0);
  CHECK(argmax_channel(LogitMap(1, 1, 3, std::vector<double>{1, 3, 2})).at(0, 0) == 1);
  CHECK(argmax_channel(LogitMap(1, 1, 2, std::vector<double>{5, 5})).at(0, 0) == 0);
}

TEST_CASE("blend is exact at the endpoints and between operands") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-100.0, 100.0);
  std::uniform_real_distribution<double> g(0.0, 1.0);
  for (int i = 0; i < 10000; ++i) {
    const double hi = u(rng), lo = u(rng), a = g(rng);
    CHECK(blend(hi, lo, 1.0) == hi);
    CHECK(blend(hi, lo, 0.0) == lo);
    const double v = blend(hi, lo, a);
    CHECK(v >= std::min(hi, lo));
    CHECK(v <= std::max(hi, lo));
  }
  CHECK(blend(4.0, 2.0, 0.5) == 3.0);
}
