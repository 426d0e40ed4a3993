#pragma once

#include <span>
#include <vector>

#include "odml/tensor_math.hpp"

namespace odml {

/// Pairwise inner products of a batch of unit-norm embeddings, G = E E^T.
/// Keeps the embeddings so gradients w.r.t. G can be pulled back to E.
class GramMatrix {
 public:
  explicit GramMatrix(const Matrix& embeddings);

  const Matrix& g() const { return g_; }
  const Matrix& embeddings() const { return embeddings_; }
  Index n() const { return g_.rows(); }

  /// dL/dE given dL/dG: (dG + dG^T) E.
  Matrix backprop(const Matrix& grad_g) const;

 private:
  Matrix embeddings_;
  Matrix g_;
};

/// Rejects rows whose norm deviates from 1 by more than 1e-6.
GramMatrix gram(const Matrix& embeddings);

struct LossAndGrad {
  double loss = 0;
  Matrix grad;  // w.r.t. the embeddings the loss was computed from
};

struct MutualLoss {
  double loss = 0;
  Matrix grad_p;
  Matrix grad_s;
};

inline constexpr double kDefaultMargin = 1.0;

/// Batch-hard triplet loss averaged over all anchors. Hardest positive is the
/// farthest same-class sample, hardest negative the nearest other-class
/// sample; ties go to the lowest index.
LossAndGrad triplet_batch_hard(const Matrix& embeddings,
                               std::span<const int> labels,
                               double margin = kDefaultMargin);

/// Gradient of mean-row KL(softmax(target/T) || softmax(student/T)) w.r.t.
/// the student logits (the Gram entries).
Matrix kl_grad_second(const Matrix& target_probs, const Matrix& student_probs,
                      double temperature);
/// Same KL, gradient w.r.t. the first argument's logits.
Matrix kl_grad_first(const Matrix& target_probs, const Matrix& student_probs,
                     double temperature);

/// KL(softmax(G_target) || softmax(G_student)) averaged over rows; the target
/// is a constant and the gradient is w.r.t. the student's embeddings.
LossAndGrad corr_loss(const GramMatrix& target, const GramMatrix& student,
                      double temperature = 1.0);

/// 1/2 (KL(p||s) + KL(s||p)). grad_p treats G_s as constant and vice versa.
MutualLoss mutual_loss(const GramMatrix& g_p, const GramMatrix& g_s,
                       double temperature = 1.0);

struct LossWeights {
  double lambda1 = 1.0;   // triplet, applied to both students
  double lambda2 = 10.0;  // correlation distillation from the teacher
  double lambda3 = 8.0;   // mutual distillation between students

  void validate() const;
};

struct ObjectiveConfig {
  LossWeights weights;
  double margin = kDefaultMargin;
  double temperature = 1.0;
};

struct LossReport {
  double total = 0;
  double triplet_p = 0;
  double triplet_s = 0;
  double corr = 0;
  double mutual = 0;
  Matrix grad_p;
  Matrix grad_s;  // empty when there is no supporting student
};

/// Combined three-branch objective:
///   l1 T(p) + l1 T(s) + l2 sum_t corr(target_t -> p) + l3 mutual(p, s).
/// `corr_targets` are constant embeddings (teacher, or virtual features of
/// past tasks); an empty list drops the correlation term. A null `s_emb`
/// drops the supporting student and the mutual term. Gradient terms with a
/// zero weight are not accumulated at all.
LossReport branch_objective(std::span<const Matrix> corr_targets,
                            const Matrix& p_emb, const Matrix* s_emb,
                            std::span<const int> labels,
                            const ObjectiveConfig& config);

/// The one-task objective with the frozen teacher as the single target.
LossReport one_task_objective(const Matrix& teacher_emb, const Matrix& p_emb,
                              const Matrix& s_emb, std::span<const int> labels,
                              const ObjectiveConfig& config);

}  // namespace odml
