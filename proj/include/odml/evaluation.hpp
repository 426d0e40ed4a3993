#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "odml/dataset.hpp"
#include "odml/embedding_model.hpp"

namespace odml {

/// Fraction of rows whose nearest other row (Euclidean, lowest index on
/// ties) shares its label. Needs at least two rows.
double recall_at_1(const Matrix& embeddings, std::span<const int> labels);

struct EvalReport {
  int stage = 0;
  std::map<int, double> per_task;      // task id -> recall@1 on that task's test set
  std::map<int, Index> per_task_size;  // task id -> number of test queries
  double all = 0;                      // recall@1 over the union of test sets
  Index all_size = 0;
  std::string config_hash;

  /// {"stage", "per_task", "all", "config_hash"} plus query sizes.
  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
};

/// Per-task recall with each task's test set as query and gallery, plus the
/// merged-gallery recall over all given tasks.
EvalReport evaluate_stages(const EmbeddingModel& model,
                           std::span<const TaskDataset> tasks);

}  // namespace odml
