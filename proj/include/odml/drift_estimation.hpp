#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "odml/metric_losses.hpp"
#include "odml/tensor_math.hpp"

namespace odml {

/// Centroid of class `class_id` of task `task_id`, expressed in the feature
/// space of the model trained at `stage_id`.
struct Prototype {
  int task_id = 0;
  int class_id = 0;
  int stage_id = 0;
  Vector centroid;
};

/// Per-class prototype drifts of one past task between two stage models.
struct DriftTable {
  int task_id = 0;
  int source_stage = 0;
  int target_stage = 0;
  std::vector<int> class_ids;
  std::vector<Vector> drifts;  // aligned with class_ids
};

/// Offline artifacts produced at the end of a stage for the next one:
/// prototypes of every finished task expressed at `stage`, plus the drift
/// of each earlier task from its own stage to `stage`.
struct StageState {
  int stage = 0;
  std::vector<Prototype> prototypes;
  std::vector<DriftTable> drift_tables;

  /// Prototypes of `task_id`, in class order.
  std::vector<Prototype> prototypes_of(int task_id) const;
  const DriftTable* drift_for(int task_id) const;
  Index dim() const;

  bool operator==(const StageState& other) const;
};

/// Per-class arithmetic mean of feature rows. Output is sorted by class id.
std::vector<Prototype> compute_prototypes(const Matrix& features,
                                          std::span<const int> labels,
                                          int task_id = 0, int stage_id = 0);

/// Similarity weight used by both drift estimates: max(cos, 0) + 1e-8.
double drift_weight(const Vector& feature, const Vector& centroid);

/// Similarity-weighted mean of (current - past) feature displacements, with
/// weights taken between each past feature and the past prototype.
/// Rows of `past_feats` and `current_feats` come from the same samples.
Vector prototype_drift(const Matrix& past_feats, const Matrix& current_feats,
                       const Prototype& past_proto);

/// Translates a prototype by its drift and moves it to `new_stage`.
Prototype update_prototype(const Prototype& proto, const Vector& drift,
                           int new_stage);

/// Estimated displacement from a teacher feature back to the feature the
/// past task's model would produce: minus the similarity-weighted mean of
/// the task's prototype drifts. `protos` are the drifted prototypes at the
/// teacher's stage, aligned with `drifts.class_ids`.
Vector feature_drift(const Vector& teacher_feature,
                     std::span<const Prototype> protos, const DriftTable& drifts);

/// Teacher feature plus drift, before re-normalization.
inline Vector raw_virtual_feature(const Vector& teacher_feature,
                                  const Vector& delta) {
  if (teacher_feature.size() != delta.size()) {
    throw Error("virtual_feature: dimension mismatch");
  }
  return teacher_feature + delta;
}

/// Teacher feature plus drift, re-normalized to unit length.
inline Vector virtual_feature(const Vector& teacher_feature, const Vector& delta) {
  return l2_normalize(raw_virtual_feature(teacher_feature, delta));
}

/// Unit-norm virtual embeddings of a batch of teacher embeddings for one past
/// task.
Matrix virtual_embeddings(const Matrix& teacher_emb, const StageState& state,
                          int task_id);

/// Sum over past tasks of corr_loss(target_t -> current). Each target is
/// constant; the gradient flows into `current_emb` only.
LossAndGrad multi_task_corr(std::span<const Matrix> targets,
                            const Matrix& current_emb, double temperature = 1.0);

/// Stage-state file: "ODST", u32 version, u32 stage, u32 dim, u32 entries,
/// then per entry (task u32, class u32, centroid f64[dim], drift f64[dim]).
/// Entries of the stage's own task carry a zero drift.
void save_stage_state(const StageState& state, const std::filesystem::path& path);
StageState load_stage_state(const std::filesystem::path& path);

inline constexpr std::uint32_t kStageStateFormatVersion = 1;

}  // namespace odml
