#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "odml/dataset.hpp"
#include "odml/drift_estimation.hpp"
#include "odml/embedding_model.hpp"
#include "odml/evaluation.hpp"
#include "odml/metric_losses.hpp"
#include "odml/registry.hpp"

namespace odml {

enum class Mode { initial, fine_tune, joint, ours, teacher_only, mutual_only };

std::string to_string(Mode mode);
Mode parse_mode(const std::string& name);

struct TrainingConfig {
  Mode mode = Mode::ours;
  LossWeights weights;
  double margin = kDefaultMargin;
  double temperature = 0.65;
  double lr = 1e-2;
  int epochs = 60;
  int p = 8;  // classes per batch
  int k = 4;  // samples per class
  std::uint64_t seed = 0;
  std::vector<Index> hidden = {64};
  Index embedding_dim = 8;

  void validate() const;
  std::vector<Index> layer_dims(Index input_dim) const;
  /// Objective settings with the mode's ablations applied.
  ObjectiveConfig objective() const;

  nlohmann::ordered_json to_json() const;
  /// Missing fields keep their defaults.
  static TrainingConfig from_json(const nlohmann::json& j);
  std::string hash() const;
};

/// Stable 64-bit FNV-1a hash, hex encoded.
std::string fnv1a_hex(std::string_view bytes);

/// Seed for one RNG stream of one stage, independent of other streams.
std::uint64_t derive_seed(std::uint64_t seed, int stage, int stream);

enum SeedStream : int { kInitStream = 0, kSamplerStream = 1, kSupportStream = 2 };

/// Hooks into the training loop. All optional.
struct TrainTrace {
  std::vector<double> epoch_losses;  // mean total loss per epoch
  std::function<void(int step, const EmbeddingModel& deployed)> on_step;
};

/// Trains a fresh model on `task` with the triplet term only.
EmbeddingModel train_initial(const TaskDataset& task, const TrainingConfig& config,
                             TrainTrace* trace = nullptr);

struct StudentPair {
  EmbeddingModel deployed;    // F_p, initialized from the teacher
  EmbeddingModel supporting;  // F_s, randomly initialized (empty if unused)
};

/// One-task online learning against a frozen teacher trained on
/// `teacher_classes`. `stage` selects the RNG streams (2 for the first new
/// task).
StudentPair train_one_task(const EmbeddingModel& teacher,
                           std::span<const int> teacher_classes,
                           const TaskDataset& new_task, const TrainingConfig& config,
                           int stage = 2, TrainTrace* trace = nullptr);

/// Offline step at the end of `stage`: fresh prototypes of the stage's task
/// under F_stage, and for every earlier task b the drift of its prototypes
/// from F_b to F_stage measured on `task` (the just-finished stage's train
/// samples). Reads F_1..F_stage and earlier stage states from the registry
/// and persists the result.
StageState post_stage_offline(const ModelRegistry& registry, int stage,
                              const TaskDataset& task);

/// Same computation from in-memory models and earlier states; `models[b-1]`
/// is F_b and `states[b-1]` the state saved after stage b.
StageState compute_stage_state(std::span<const EmbeddingModel> models,
                               std::span<const StageState> states, int stage,
                               const TaskDataset& task);

/// Multi-task stage training: teacher F_{i-1}, correlation targets are the
/// real teacher embeddings plus virtual embeddings of every earlier task.
StudentPair train_stage_multi(const EmbeddingModel& teacher, const StageState& state,
                              const TaskDataset& new_task, const TrainingConfig& config,
                              int stage, TrainTrace* trace = nullptr);

/// Per-batch correlation targets for stage training: virtual embeddings for
/// tasks with a drift table in `state` (ascending task id), then the teacher
/// embeddings themselves.
std::vector<Matrix> correlation_targets(const Matrix& teacher_emb,
                                        const StageState* state);

struct ModeResult {
  Mode mode = Mode::ours;
  EmbeddingModel final_model;
  std::vector<EvalReport> stage_reports;  // one per trained stage
  EvalReport final_report;                // final model over all tasks
  std::vector<std::vector<double>> stage_losses;  // per stage, per epoch
};

struct RunOptions {
  std::optional<std::filesystem::path> registry_root;  // persist + resume
  std::string config_hash;                              // stamped into reports
  std::function<void(const std::string&)> log;
};

/// Runs one mode over the task sequence: stage 1 on tasks[0], then one stage
/// per further task (joint trains once on the union, initial stops after
/// stage 1). Every mode is evaluated on all tasks at the end.
ModeResult run_mode(Mode mode, std::span<const TaskDataset> tasks,
                    const TrainingConfig& config, const RunOptions& options = {});

/// Same as run_mode, with `mode` taken from the config.
inline ModeResult run_baseline(std::span<const TaskDataset> tasks,
                               const TrainingConfig& config,
                               const RunOptions& options = {}) {
  return run_mode(config.mode, tasks, config, options);
}

}  // namespace odml
