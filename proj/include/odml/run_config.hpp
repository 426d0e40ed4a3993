#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "odml/dataset.hpp"
#include "odml/pipeline.hpp"

namespace odml {

/// Everything needed to reproduce a run. Serialized verbatim into the run
/// directory as config.json.
struct RunConfig {
  std::optional<std::filesystem::path> csv;  // overrides synthetic data
  SyntheticParams synthetic;
  int stages = 1;  // new tasks after the first half; 1 is the one-task setup
  std::vector<Mode> modes = {Mode::initial, Mode::fine_tune, Mode::joint, Mode::ours};
  TrainingConfig training;
  std::filesystem::path out = "runs/default";

  void validate() const;
  nlohmann::ordered_json to_json() const;
  /// Every omitted field keeps its default.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);

  Dataset load_dataset() const;
  std::vector<TaskDataset> tasks() const;

  /// Hash over data, split and training settings for one mode.
  std::string hash_for(Mode mode) const;
};

/// Summary table: one row per task range plus the "all" row, one column per
/// mode, values are Recall@1 of each mode's final model.
std::string summary_csv(std::span<const TaskDataset> tasks,
                        std::span<const ModeResult> results);

}  // namespace odml
