#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "odml/embedding_model.hpp"

namespace odml::test {

inline Matrix random_matrix(Index rows, Index cols, std::mt19937_64& rng,
                            double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = n(rng);
  return m;
}

inline Matrix random_unit_rows(Index rows, Index cols, std::mt19937_64& rng) {
  Matrix m = random_matrix(rows, cols, rng);
  for (Index i = 0; i < rows; ++i) m.row(i) /= m.row(i).norm();
  return m;
}

inline Matrix random_distribution_rows(Index rows, Index cols, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = u(rng);
    m.row(i) /= m.row(i).sum();
  }
  return m;
}

/// Labels with `classes` classes of `per` samples each, shuffled.
inline std::vector<int> random_labels(int classes, int per, std::mt19937_64& rng) {
  std::vector<int> labels;
  for (int c = 0; c < classes; ++c)
    for (int i = 0; i < per; ++i) labels.push_back(c);
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

// Scalar KL over rows, written out term by term.
inline double kl_direct(const Matrix& p, const Matrix& q) {
  double total = 0;
  for (Index i = 0; i < p.rows(); ++i) {
    double row = 0;
    for (Index j = 0; j < p.cols(); ++j) {
      if (p(i, j) > 0) row += p(i, j) * std::log(p(i, j) / q(i, j));
    }
    total += row;
  }
  return total / static_cast<double>(p.rows());
}

inline Matrix softmax_direct(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    double z = 0;
    for (Index j = 0; j < logits.cols(); ++j) z += std::exp(logits(i, j));
    for (Index j = 0; j < logits.cols(); ++j) out(i, j) = std::exp(logits(i, j)) / z;
  }
  return out;
}

inline Matrix gram_direct(const Matrix& e) {
  Matrix g(e.rows(), e.rows());
  for (Index i = 0; i < e.rows(); ++i)
    for (Index j = 0; j < e.rows(); ++j) {
      double s = 0;
      for (Index k = 0; k < e.cols(); ++k) s += e(i, k) * e(j, k);
      g(i, j) = s;
    }
  return g;
}

inline double dist_direct(const Matrix& e, Index a, Index b) {
  double s = 0;
  for (Index k = 0; k < e.cols(); ++k) s += (e(a, k) - e(b, k)) * (e(a, k) - e(b, k));
  return std::sqrt(s);
}

// Enumerates every (a, p, n) triplet, picks the hardest positive and the
// hardest negative per anchor and averages the hinge.
inline double triplet_enumerated(const Matrix& e, const std::vector<int>& labels,
                                 double margin) {
  const Index n = e.rows();
  double total = 0;
  for (Index a = 0; a < n; ++a) {
    double hardest_pos = -1;
    double hardest_neg = std::numeric_limits<double>::infinity();
    for (Index p = 0; p < n; ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      for (Index q = 0; q < n; ++q) {
        if (labels[q] == labels[a]) continue;
        hardest_pos = std::max(hardest_pos, dist_direct(e, a, p));
        hardest_neg = std::min(hardest_neg, dist_direct(e, a, q));
      }
    }
    total += std::max(0.0, hardest_pos - hardest_neg + margin);
  }
  return total / static_cast<double>(n);
}

inline double recall_direct(const Matrix& e, const std::vector<int>& labels) {
  const Index n = e.rows();
  int hits = 0;
  for (Index q = 0; q < n; ++q) {
    Index best = -1;
    double best_d = 0;
    for (Index g = 0; g < n; ++g) {
      if (g == q) continue;
      double d = 0;
      for (Index k = 0; k < e.cols(); ++k) d += (e(q, k) - e(g, k)) * (e(q, k) - e(g, k));
      if (best < 0 || d < best_d) {
        best = g;
        best_d = d;
      }
    }
    if (labels[best] == labels[q]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

/// Loss of the embeddings and its gradient w.r.t. them.
using EmbeddingLoss = std::function<std::pair<double, Matrix>(const Matrix&)>;

/// Per-element relative error |a - n| / max(|a|, |n|, floor).
inline double rel_error(double analytic, double numeric, double floor = 1e-4) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Worst relative error between the backpropagated parameter gradient of
/// loss(model(x)) and central finite differences over every parameter.
inline double max_param_grad_error(const EmbeddingModel& model, const Matrix& x,
                                   const EmbeddingLoss& loss, double h = 1e-5) {
  ForwardCache cache;
  const Matrix e = model.forward(x, &cache);
  const ModelGradients grads = model.backward(cache, loss(e).second);
  EmbeddingModel m = model;
  double worst = 0;
  auto probe = [&](double& param, double analytic) {
    const double saved = param;
    param = saved + h;
    const double up = loss(m.forward(x)).first;
    param = saved - h;
    const double down = loss(m.forward(x)).first;
    param = saved;
    worst = std::max(worst, rel_error(analytic, (up - down) / (2 * h)));
  };
  for (std::size_t l = 0; l < m.layers().size(); ++l) {
    auto& layer = m.layers()[l];
    for (Index i = 0; i < layer.weight.rows(); ++i)
      for (Index j = 0; j < layer.weight.cols(); ++j)
        probe(layer.weight(i, j), grads.layers[l].weight(i, j));
    for (Index i = 0; i < layer.bias.size(); ++i)
      probe(layer.bias(i), grads.layers[l].bias(i));
  }
  return worst;
}

/// Scratch directory removed on destruction.
struct TempDir {
  std::filesystem::path path;

  explicit TempDir(const std::string& name) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() /
           ("odml_" + name + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

inline std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace odml::test
