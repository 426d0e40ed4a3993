#include <doctest.h>

#include <cmath>
#include <limits>

#include "odml/tensor_math.hpp"
#include "support.hpp"

using namespace odml;

TEST_CASE("softmax of equal logits is uniform") {
  Matrix m(1, 2);
  m << 0, 0;
  const Matrix s = softmax_rows(m);
  CHECK(s(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(s(0, 1) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("softmax closed form") {
  Matrix m(1, 2);
  m << std::log(2.0), 0;
  const Matrix s = softmax_rows(m);
  CHECK(s(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(s(0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("softmax survives large logits") {
  Matrix m(1, 2);
  m << 1000, 0;
  const Matrix s = softmax_rows(m);
  CHECK(all_finite(s));
  CHECK(s(0, 0) == doctest::Approx(1.0));
  CHECK(s(0, 1) >= 0);
  CHECK(s(0, 1) < 1e-300);
}

TEST_CASE("softmax rejects non-finite input") {
  Matrix m(1, 2);
  m << std::numeric_limits<double>::quiet_NaN(), 0;
  CHECK_THROWS_AS(softmax_rows(m), Error);
  m << std::numeric_limits<double>::infinity(), 0;
  CHECK_THROWS_AS(softmax_rows(m), Error);
}

TEST_CASE("softmax matches direct evaluation") {
  std::mt19937_64 rng(3);
  const Matrix logits = test::random_matrix(5, 7, rng, 2.0);
  const Matrix s = softmax_rows(logits);
  const Matrix oracle = test::softmax_direct(logits);
  CHECK((s - oracle).cwiseAbs().maxCoeff() < 1e-15);
  CHECK((s.rowwise().sum().array() - 1).abs().maxCoeff() < 1e-15);
}

TEST_CASE("kl of identical distributions is zero") {
  std::mt19937_64 rng(4);
  const Matrix p = test::random_distribution_rows(4, 5, rng);
  CHECK(kl_rows(p, p) == 0.0);
}

TEST_CASE("kl closed form ln 2") {
  Matrix p(1, 2), q(1, 2);
  p << 1, 0;
  q << 0.5, 0.5;
  CHECK(kl_rows(p, q) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("kl matches brute-force summation") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix p = test::random_distribution_rows(6, 4, rng);
    const Matrix q = test::random_distribution_rows(6, 4, rng);
    CHECK(kl_rows(p, q) == doctest::Approx(test::kl_direct(p, q)).epsilon(1e-13));
    CHECK(kl_rows(p, q) >= -1e-12);
  }
}

TEST_CASE("kl input validation") {
  Matrix p(1, 2), q(1, 3);
  p << 0.5, 0.5;
  q << 0.2, 0.3, 0.5;
  CHECK_THROWS_AS(kl_rows(p, q), Error);
  Matrix bad(1, 2);
  bad << 0.7, 0.7;
  CHECK_THROWS_AS(kl_rows(p, bad), Error);
  CHECK_THROWS_AS(kl_rows(bad, p), Error);
  bad << 1.5, -0.5;
  CHECK_THROWS_AS(kl_rows(bad, p), Error);
}

TEST_CASE("kl floors a zero second argument") {
  Matrix p(1, 2), q(1, 2);
  p << 0.5, 0.5;
  q << 1, 0;
  const double v = kl_rows(p, q);
  CHECK(std::isfinite(v));
  CHECK(v == doctest::Approx(0.5 * std::log(0.5) + 0.5 * (std::log(0.5) - std::log(kLogFloor))));
}

TEST_CASE("l2 normalize") {
  Vector v(2);
  v << 3, 4;
  const Vector n = l2_normalize(v);
  CHECK(n(0) == doctest::Approx(0.6).epsilon(1e-15));
  CHECK(n(1) == doctest::Approx(0.8).epsilon(1e-15));

  Vector unit(3);
  unit << 0, 1, 0;
  CHECK(l2_normalize(unit) == unit);

  Vector tiny = Vector::Constant(4, 1e-300);
  CHECK(all_finite(l2_normalize(tiny)));
  CHECK(all_finite(l2_normalize(Vector::Zero(4).eval())));
}

TEST_CASE("l2 normalize rows gives unit rows") {
  std::mt19937_64 rng(6);
  const Matrix m = l2_normalize_rows(test::random_matrix(8, 5, rng));
  for (Index i = 0; i < m.rows(); ++i) CHECK(std::abs(m.row(i).norm() - 1) < 1e-15);
}

TEST_CASE("cosine similarity") {
  Vector a(2), b(2), c(2);
  a << 1, 0;
  b << 0, 1;
  c << -1, 0;
  CHECK(cosine_sim(a, b) == 0.0);
  CHECK(cosine_sim(a, a) == 1.0);
  CHECK(cosine_sim(a, c) == -1.0);
  std::mt19937_64 rng(7);
  const Vector v = test::random_matrix(6, 1, rng).col(0);
  CHECK(cosine_sim(v, v) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_sim(v, 3.0 * v) <= 1.0);
  CHECK_THROWS_AS(cosine_sim(a, Vector::Zero(3).eval()), Error);
}
