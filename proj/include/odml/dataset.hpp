#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "odml/tensor_math.hpp"

namespace odml {

/// Feature rows with dense class ids 0..num_classes-1.
struct Dataset {
  Matrix features;
  std::vector<int> labels;
  int num_classes = 0;

  Index size() const { return features.rows(); }
  Index dim() const { return features.cols(); }
};

/// One task of the curriculum: a set of classes with their train and test
/// samples. Task ids start at 1.
struct TaskDataset {
  int task_id = 0;
  std::vector<int> classes;  // ascending
  Matrix train_x;
  std::vector<int> train_y;
  Matrix test_x;
  std::vector<int> test_y;

  /// "first-last" with 1-based class ids, e.g. "1-20".
  std::string class_range() const;
};

struct SyntheticParams {
  int n_classes = 40;
  int per_class = 30;
  int dim = 64;
  double separation = 10.0;
  double noise_sigma = 1.0;
  std::uint64_t seed = 7;
};

/// Class centers uniform on the sphere of radius `separation`; samples are
/// center + N(0, sigma^2 I). Rows are grouped by class.
Dataset gen_synthetic(const SyntheticParams& params);

inline constexpr double kTrainFraction = 0.6;

/// First ceil(C/2) classes form task 1, the rest task 2.
std::vector<TaskDataset> split_one_task(const Dataset& data);

/// Task 1 is the first ceil(C/2) classes; the remaining classes are split
/// evenly in class-id order across `n_stages` further tasks, remainder going
/// to the earliest ones.
std::vector<TaskDataset> split_multi_task(const Dataset& data, int n_stages);

/// Merges tasks into one (used by joint training and "all" evaluation).
TaskDataset merge_tasks(std::span<const TaskDataset> tasks, int task_id = 0);

struct Batch {
  Matrix x;
  std::vector<int> labels;
};

/// P distinct classes, K distinct train samples each.
Batch pk_batch(const TaskDataset& task, int p, int k, std::mt19937_64& rng);

/// Same draw, returning the chosen train-row indices (row order of the batch).
std::vector<Index> pk_batch_indices(const TaskDataset& task, int p, int k,
                                    std::mt19937_64& rng);

/// CSV with header `label,f0,...,f{d-1}`. Labels are arbitrary tokens,
/// re-indexed densely in first-occurrence order.
Dataset load_csv(const std::filesystem::path& path);
void save_csv(const Dataset& data, const std::filesystem::path& path);

}  // namespace odml
