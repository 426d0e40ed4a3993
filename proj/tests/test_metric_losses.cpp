#include <doctest.h>

#include "odml/metric_losses.hpp"
#include "support.hpp"

using namespace odml;

namespace {

Matrix two_class_points() {
  Matrix e(4, 2);
  e << 1, 0,  //
      0.8, 0.6,  //
      -1, 0,  //
      -0.6, -0.8;
  return e;
}

const std::vector<int> kTwoByTwo = {0, 0, 1, 1};

}  // namespace

TEST_CASE("gram of orthonormal rows is the identity") {
  const Matrix e = Matrix::Identity(3, 3);
  CHECK(gram(e).g() == Matrix::Identity(3, 3));
}

TEST_CASE("gram of identical rows is all ones") {
  Matrix e(2, 2);
  e << 0.6, 0.8, 0.6, 0.8;
  CHECK((gram(e).g() - Matrix::Ones(2, 2)).cwiseAbs().maxCoeff() < 1e-15);
  Matrix single(1, 3);
  single << 0, 0, 1;
  CHECK(gram(single).g() == Matrix::Ones(1, 1));
}

TEST_CASE("gram matches direct products and is symmetric") {
  std::mt19937_64 rng(1);
  const Matrix e = test::random_unit_rows(7, 4, rng);
  const Matrix g = gram(e).g();
  CHECK((g - test::gram_direct(e)).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(g == g.transpose());
}

TEST_CASE("gram rejects non-normalized rows") {
  Matrix e(2, 2);
  e << 1, 0, 0, 1.001;
  CHECK_THROWS_AS(gram(e), Error);
}

TEST_CASE("triplet loss of collapsed embeddings equals the margin") {
  const Matrix e = Matrix::Ones(4, 3) / std::sqrt(3.0);
  const auto r = triplet_batch_hard(e, kTwoByTwo, 0.2);
  CHECK(r.loss == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(r.grad.isZero(0));
}

TEST_CASE("triplet loss of well separated classes is zero") {
  Matrix e(4, 2);
  e << 1, 0, 0.99, 0.01, -1, 0, -0.99, -0.01;
  const auto r = triplet_batch_hard(e, kTwoByTwo, 0.5);
  CHECK(r.loss == 0.0);
  CHECK(r.grad.isZero(0));
}

TEST_CASE("triplet hand case matches enumeration") {
  const Matrix e = two_class_points();
  for (double margin : {0.2, 1.0, 2.5}) {
    const auto r = triplet_batch_hard(e, kTwoByTwo, margin);
    CHECK(r.loss == test::triplet_enumerated(e, kTwoByTwo, margin));
  }
}

TEST_CASE("triplet matches enumeration on random batches") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const int classes = 2 + trial % 3;
    const auto labels = test::random_labels(classes, 2 + trial % 2, rng);
    const Matrix e = test::random_unit_rows(static_cast<Index>(labels.size()), 3, rng);
    CHECK(triplet_batch_hard(e, labels, 0.3).loss ==
          test::triplet_enumerated(e, labels, 0.3));
  }
}

TEST_CASE("triplet precondition errors name the class") {
  Matrix e = Matrix::Identity(3, 3);
  const std::vector<int> singleton = {0, 0, 1};
  try {
    triplet_batch_hard(e, singleton, 0.2);
    FAIL("expected an error");
  } catch (const Error& err) {
    CHECK(std::string(err.what()).find("class 1") != std::string::npos);
  }
  const std::vector<int> one_class = {0, 0, 0};
  CHECK_THROWS_AS(triplet_batch_hard(e, one_class, 0.2), Error);
}

TEST_CASE("corr loss of equal grams is zero with zero gradient") {
  std::mt19937_64 rng(3);
  const Matrix e = test::random_unit_rows(5, 3, rng);
  const auto r = corr_loss(gram(e), gram(e), 0.7);
  CHECK(r.loss == 0.0);
  CHECK(r.grad.cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("corr loss N=2 hand case") {
  // Target Gram [[1, 0.5], [0.5, 1]], student Gram identity.
  Matrix t(2, 2), s(2, 2);
  t << 1, 0, 0.5, std::sqrt(0.75);
  s << 1, 0, 0, 1;
  for (double temp : {1.0, 0.5}) {
    const double a = std::exp(1 / temp), b = std::exp(0.5 / temp), c = std::exp(0.0);
    const double p1 = a / (a + b), p2 = b / (a + b);
    const double q1 = a / (a + c), q2 = c / (a + c);
    const double row = p1 * std::log(p1 / q1) + p2 * std::log(p2 / q2);
    // Both rows are mirror images, so the mean equals one row.
    CHECK(corr_loss(gram(t), gram(s), temp).loss == doctest::Approx(row).epsilon(1e-14));
  }
}

TEST_CASE("corr loss gradient matches finite differences through a model") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const auto m = EmbeddingModel::init({4, 6, 3}, 20 + trial);
    const Matrix x = test::random_matrix(6, 4, rng);
    const Matrix target = test::random_unit_rows(6, 3, rng);
    const double temp = trial % 2 ? 0.65 : 1.0;
    auto loss = [&](const Matrix& e) {
      auto r = corr_loss(gram(target), gram(e), temp);
      return std::make_pair(r.loss, r.grad);
    };
    CHECK(test::max_param_grad_error(m, x, loss) < 1e-4);
  }
}

TEST_CASE("mutual loss is symmetric and matches the direct formula") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix a = test::random_unit_rows(4, 3, rng);
    const Matrix b = test::random_unit_rows(4, 3, rng);
    const auto ab = mutual_loss(gram(a), gram(b), 0.8);
    const auto ba = mutual_loss(gram(b), gram(a), 0.8);
    CHECK(ab.loss == ba.loss);
    const Matrix p = test::softmax_direct(test::gram_direct(a) / 0.8);
    const Matrix s = test::softmax_direct(test::gram_direct(b) / 0.8);
    const double oracle = 0.5 * (test::kl_direct(p, s) + test::kl_direct(s, p));
    CHECK(ab.loss == doctest::Approx(oracle).epsilon(1e-12));
    CHECK(ab.loss >= -1e-12);
  }
  const Matrix e = test::random_unit_rows(4, 3, rng);
  CHECK(mutual_loss(gram(e), gram(e)).loss == 0.0);
}

TEST_CASE("mutual loss gradients match finite differences per branch") {
  std::mt19937_64 rng(6);
  const auto mp = EmbeddingModel::init({4, 5, 3}, 30);
  const auto ms = EmbeddingModel::init({4, 5, 3}, 31);
  const Matrix x = test::random_matrix(5, 4, rng);
  const Matrix ep = mp.forward(x);
  const Matrix es = ms.forward(x);
  auto loss_p = [&](const Matrix& e) {
    auto r = mutual_loss(gram(e), gram(es), 0.65);
    return std::make_pair(r.loss, r.grad_p);
  };
  auto loss_s = [&](const Matrix& e) {
    auto r = mutual_loss(gram(ep), gram(e), 0.65);
    return std::make_pair(r.loss, r.grad_s);
  };
  CHECK(test::max_param_grad_error(mp, x, loss_p) < 1e-4);
  CHECK(test::max_param_grad_error(ms, x, loss_s) < 1e-4);
}

TEST_CASE("default loss weights") {
  const LossWeights w;
  CHECK(w.lambda1 == 1.0);
  CHECK(w.lambda2 == 10.0);
  CHECK(w.lambda3 == 8.0);
  LossWeights bad;
  bad.lambda2 = -1;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("objective without distillation is two triplet losses") {
  std::mt19937_64 rng(7);
  const auto labels = test::random_labels(3, 2, rng);
  const Matrix t = test::random_unit_rows(6, 3, rng);
  const Matrix p = test::random_unit_rows(6, 3, rng);
  const Matrix s = test::random_unit_rows(6, 3, rng);
  ObjectiveConfig cfg;
  cfg.weights = {1, 0, 0};
  cfg.margin = 0.5;
  const auto r = one_task_objective(t, p, s, labels, cfg);
  const auto tp = triplet_batch_hard(p, labels, 0.5);
  const auto ts = triplet_batch_hard(s, labels, 0.5);
  CHECK(r.total == tp.loss + ts.loss);
  CHECK(r.grad_p == tp.grad);
  CHECK(r.grad_s == ts.grad);
}

TEST_CASE("objective vanishes when all branches agree on separated classes") {
  Matrix e(4, 2);
  e << 1, 0, 1, 0, -1, 0, -1, 0;
  ObjectiveConfig cfg;
  cfg.margin = 0.5;
  const auto r = one_task_objective(e, e, e, kTwoByTwo, cfg);
  CHECK(r.total == 0.0);
}

TEST_CASE("objective terms combine with their weights") {
  std::mt19937_64 rng(8);
  const auto labels = test::random_labels(2, 3, rng);
  const Matrix t = test::random_unit_rows(6, 4, rng);
  const Matrix p = test::random_unit_rows(6, 4, rng);
  const Matrix s = test::random_unit_rows(6, 4, rng);
  ObjectiveConfig cfg;
  cfg.temperature = 0.65;
  const auto r = one_task_objective(t, p, s, labels, cfg);
  const double expected =
      triplet_batch_hard(p, labels, cfg.margin).loss +
      triplet_batch_hard(s, labels, cfg.margin).loss +
      10 * corr_loss(gram(t), gram(p), 0.65).loss +
      8 * mutual_loss(gram(p), gram(s), 0.65).loss;
  CHECK(r.total == doctest::Approx(expected).epsilon(1e-13));
}

TEST_CASE("objective gradients match finite differences for both students") {
  std::mt19937_64 rng(9);
  const auto labels = test::random_labels(3, 2, rng);
  const auto mp = EmbeddingModel::init({5, 7, 3}, 40);
  const auto ms = EmbeddingModel::init({5, 7, 3}, 41);
  const auto mt = EmbeddingModel::init({5, 7, 3}, 42);
  const Matrix x = test::random_matrix(6, 5, rng);
  const Matrix t = mt.forward(x), ep = mp.forward(x), es = ms.forward(x);
  ObjectiveConfig cfg;
  cfg.temperature = 0.65;
  auto loss_p = [&](const Matrix& e) {
    auto r = one_task_objective(t, e, es, labels, cfg);
    return std::make_pair(r.total, r.grad_p);
  };
  auto loss_s = [&](const Matrix& e) {
    auto r = one_task_objective(t, ep, e, labels, cfg);
    return std::make_pair(r.total, r.grad_s);
  };
  CHECK(test::max_param_grad_error(mp, x, loss_p) < 1e-4);
  CHECK(test::max_param_grad_error(ms, x, loss_s) < 1e-4);
}
