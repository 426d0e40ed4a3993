#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "odml/drift_estimation.hpp"
#include "odml/embedding_model.hpp"
#include "odml/evaluation.hpp"

namespace odml {

struct StageMeta {
  int stage = 0;
  std::string mode;
  std::vector<int> classes;  // class set of the stage's task
  std::string config_hash;
  std::uint64_t seed = 0;
};

/// Directory of persisted stages:
///   <root>/stage_<i>/model.bin, state.bin, meta.json, report.json
class ModelRegistry {
 public:
  explicit ModelRegistry(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path stage_dir(int stage) const;

  bool has_model(int stage) const;
  bool has_state(int stage) const;

  void save_model(int stage, const EmbeddingModel& model, const StageMeta& meta) const;
  EmbeddingModel load_model(int stage) const;
  StageMeta load_meta(int stage) const;

  void save_state(const StageState& state) const;
  StageState load_state(int stage) const;

  void save_report(int stage, const EvalReport& report) const;
  EvalReport load_report(int stage) const;

  /// Highest n such that stages 1..n all have a model and meta.
  int contiguous_stages() const;

  /// Throws unless stages 1..n exist with `config_hash` and pairwise
  /// disjoint class sets.
  void verify_chain(int n, const std::string& config_hash) const;

 private:
  std::filesystem::path root_;
};

}  // namespace odml
