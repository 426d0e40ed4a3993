#include "odml/metric_losses.hpp"

#include <cmath>
#include <limits>
#include <map>

namespace odml {

GramMatrix::GramMatrix(const Matrix& embeddings) : embeddings_(embeddings) {
  Matrix full = embeddings_ * embeddings_.transpose();
  // Mirror the upper triangle so G is exactly symmetric.
  g_ = full.selfadjointView<Eigen::Upper>();
}

Matrix GramMatrix::backprop(const Matrix& grad_g) const {
  if (grad_g.rows() != n() || grad_g.cols() != n()) {
    throw Error("gram backprop: gradient shape mismatch");
  }
  return (grad_g + grad_g.transpose()) * embeddings_;
}

GramMatrix gram(const Matrix& embeddings) {
  if (embeddings.rows() == 0) throw Error("gram: empty batch");
  for (Index r = 0; r < embeddings.rows(); ++r) {
    const double norm = embeddings.row(r).norm();
    if (!std::isfinite(norm) || std::abs(norm - 1.0) > 1e-6) {
      throw Error("gram: row " + std::to_string(r) +
                  " is not unit-norm (norm " + std::to_string(norm) + ")");
    }
  }
  return GramMatrix(embeddings);
}

LossAndGrad triplet_batch_hard(const Matrix& embeddings,
                               std::span<const int> labels, double margin) {
  const Index n = embeddings.rows();
  if (static_cast<Index>(labels.size()) != n) {
    throw Error("triplet_batch_hard: label count does not match batch size");
  }
  std::map<int, int> counts;
  for (int label : labels) ++counts[label];
  if (counts.size() < 2) {
    throw Error("triplet_batch_hard: batch needs at least two classes");
  }
  for (const auto& [label, count] : counts) {
    if (count < 2) {
      throw Error("triplet_batch_hard: class " + std::to_string(label) +
                  " has fewer than 2 samples in the batch");
    }
  }

  Matrix dist(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      double sq = 0;
      for (Index c = 0; c < embeddings.cols(); ++c) {
        const double diff = embeddings(i, c) - embeddings(j, c);
        sq += diff * diff;
      }
      dist(i, j) = std::sqrt(sq);
    }
  }

  LossAndGrad out;
  out.grad = Matrix::Zero(n, embeddings.cols());
  const double inv_n = 1.0 / static_cast<double>(n);
  // Adds d dist(a, b) / d e scaled by `scale` to the gradient.
  auto add_distance_grad = [&](Index a, Index b, double scale) {
    const double d = dist(a, b);
    if (d <= 0) return;
    const auto dir = (embeddings.row(a) - embeddings.row(b)) / d;
    out.grad.row(a) += scale * dir;
    out.grad.row(b) -= scale * dir;
  };

  for (Index a = 0; a < n; ++a) {
    Index pos = -1;
    Index neg = -1;
    for (Index j = 0; j < n; ++j) {
      if (j == a) continue;
      if (labels[j] == labels[a]) {
        if (pos < 0 || dist(a, j) > dist(a, pos)) pos = j;
      } else {
        if (neg < 0 || dist(a, j) < dist(a, neg)) neg = j;
      }
    }
    const double hinge = dist(a, pos) - dist(a, neg) + margin;
    if (hinge <= 0) continue;
    out.loss += hinge;
    add_distance_grad(a, pos, inv_n);
    add_distance_grad(a, neg, -inv_n);
  }
  out.loss /= static_cast<double>(n);
  return out;
}

Matrix kl_grad_second(const Matrix& target_probs, const Matrix& student_probs,
                      double temperature) {
  const Index rows = target_probs.rows();
  Matrix grad(rows, target_probs.cols());
  const double scale = 1.0 / (static_cast<double>(rows) * temperature);
  for (Index r = 0; r < rows; ++r) {
    double active_mass = 0;
    for (Index c = 0; c < target_probs.cols(); ++c) {
      if (student_probs(r, c) >= kLogFloor) active_mass += target_probs(r, c);
    }
    for (Index c = 0; c < target_probs.cols(); ++c) {
      const double p = student_probs(r, c) >= kLogFloor ? target_probs(r, c) : 0.0;
      grad(r, c) = scale * (student_probs(r, c) * active_mass - p);
    }
  }
  return grad;
}

Matrix kl_grad_first(const Matrix& target_probs, const Matrix& student_probs,
                     double temperature) {
  const Index rows = target_probs.rows();
  const Index cols = target_probs.cols();
  Matrix grad(rows, cols);
  const double scale = 1.0 / (static_cast<double>(rows) * temperature);
  Vector log_ratio(cols);
  for (Index r = 0; r < rows; ++r) {
    double mean_ratio = 0;
    for (Index c = 0; c < cols; ++c) {
      const double p = target_probs(r, c);
      log_ratio(c) =
          p > 0 ? std::log(p) - std::log(std::max(student_probs(r, c), kLogFloor))
                : 0.0;
      mean_ratio += p * log_ratio(c);
    }
    for (Index c = 0; c < cols; ++c) {
      grad(r, c) = scale * target_probs(r, c) * (log_ratio(c) - mean_ratio);
    }
  }
  return grad;
}

namespace {

void check_temperature(double temperature) {
  if (!(temperature > 0) || !std::isfinite(temperature)) {
    throw Error("softmax temperature must be positive and finite");
  }
}

}  // namespace

LossAndGrad corr_loss(const GramMatrix& target, const GramMatrix& student,
                      double temperature) {
  if (target.n() != student.n()) throw Error("corr_loss: batch size mismatch");
  check_temperature(temperature);
  const Matrix p = softmax_rows(target.g() / temperature);
  const Matrix q = softmax_rows(student.g() / temperature);
  LossAndGrad out;
  out.loss = kl_rows(p, q);
  out.grad = student.backprop(kl_grad_second(p, q, temperature));
  return out;
}

MutualLoss mutual_loss(const GramMatrix& g_p, const GramMatrix& g_s,
                       double temperature) {
  if (g_p.n() != g_s.n()) throw Error("mutual_loss: batch size mismatch");
  check_temperature(temperature);
  const Matrix pp = softmax_rows(g_p.g() / temperature);
  const Matrix ps = softmax_rows(g_s.g() / temperature);
  MutualLoss out;
  out.loss = 0.5 * (kl_rows(pp, ps) + kl_rows(ps, pp));
  const Matrix dgp = 0.5 * (kl_grad_first(pp, ps, temperature) +
                            kl_grad_second(ps, pp, temperature));
  const Matrix dgs = 0.5 * (kl_grad_second(pp, ps, temperature) +
                            kl_grad_first(ps, pp, temperature));
  out.grad_p = g_p.backprop(dgp);
  out.grad_s = g_s.backprop(dgs);
  return out;
}

void LossWeights::validate() const {
  for (double w : {lambda1, lambda2, lambda3}) {
    if (!std::isfinite(w) || w < 0) {
      throw Error("loss weights must be finite and non-negative");
    }
  }
}

LossReport branch_objective(std::span<const Matrix> corr_targets,
                            const Matrix& p_emb, const Matrix* s_emb,
                            std::span<const int> labels,
                            const ObjectiveConfig& config) {
  config.weights.validate();
  const auto& w = config.weights;
  for (const auto& target : corr_targets) {
    if (target.rows() != p_emb.rows() || target.cols() != p_emb.cols()) {
      throw Error("objective: correlation target shape mismatch");
    }
  }
  if (s_emb && s_emb->rows() != p_emb.rows()) {
    throw Error("objective: student batch sizes differ");
  }

  LossReport report;
  auto trip_p = triplet_batch_hard(p_emb, labels, config.margin);
  report.triplet_p = trip_p.loss;
  report.grad_p = w.lambda1 * trip_p.grad;

  if (!corr_targets.empty()) {
    const GramMatrix g_p = gram(p_emb);
    Matrix corr_grad = Matrix::Zero(p_emb.rows(), p_emb.cols());
    for (const auto& target : corr_targets) {
      auto term = corr_loss(gram(target), g_p, config.temperature);
      report.corr += term.loss;
      corr_grad += term.grad;
    }
    if (w.lambda2 != 0) report.grad_p += w.lambda2 * corr_grad;
  }

  if (s_emb) {
    auto trip_s = triplet_batch_hard(*s_emb, labels, config.margin);
    report.triplet_s = trip_s.loss;
    report.grad_s = w.lambda1 * trip_s.grad;
    auto mutual = mutual_loss(gram(p_emb), gram(*s_emb), config.temperature);
    report.mutual = mutual.loss;
    if (w.lambda3 != 0) {
      report.grad_p += w.lambda3 * mutual.grad_p;
      report.grad_s += w.lambda3 * mutual.grad_s;
    }
  }

  report.total = w.lambda1 * report.triplet_p + w.lambda1 * report.triplet_s +
                 w.lambda2 * report.corr + w.lambda3 * report.mutual;
  return report;
}

LossReport one_task_objective(const Matrix& teacher_emb, const Matrix& p_emb,
                              const Matrix& s_emb, std::span<const int> labels,
                              const ObjectiveConfig& config) {
  const Matrix targets[] = {teacher_emb};
  return branch_objective(targets, p_emb, &s_emb, labels, config);
}

}  // namespace odml
