#include "odml/evaluation.hpp"

#include <limits>

#include <json.hpp>

namespace odml {

double recall_at_1(const Matrix& embeddings, std::span<const int> labels) {
  const Index n = embeddings.rows();
  if (n < 2) throw Error("recall_at_1: need at least 2 samples");
  if (static_cast<Index>(labels.size()) != n) {
    throw Error("recall_at_1: label count does not match embeddings");
  }
  Index hits = 0;
  for (Index q = 0; q < n; ++q) {
    Index best = -1;
    double best_dist = std::numeric_limits<double>::infinity();
    for (Index g = 0; g < n; ++g) {
      if (g == q) continue;
      double d = 0;
      for (Index c = 0; c < embeddings.cols(); ++c) {
        const double diff = embeddings(q, c) - embeddings(g, c);
        d += diff * diff;
      }
      if (d < best_dist) {
        best_dist = d;
        best = g;
      }
    }
    if (best >= 0 && labels[best] == labels[q]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["stage"] = stage;
  nlohmann::ordered_json tasks = nlohmann::ordered_json::object();
  for (const auto& [task, recall] : per_task) tasks[std::to_string(task)] = recall;
  j["per_task"] = tasks;
  j["all"] = all;
  j["config_hash"] = config_hash;
  nlohmann::ordered_json sizes = nlohmann::ordered_json::object();
  for (const auto& [task, size] : per_task_size) sizes[std::to_string(task)] = size;
  j["query_sizes"] = {{"per_task", sizes}, {"all", all_size}};
  return j.dump(2) + "\n";
}

EvalReport EvalReport::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  EvalReport r;
  r.stage = j.at("stage").get<int>();
  for (const auto& [task, recall] : j.at("per_task").items()) {
    r.per_task[std::stoi(task)] = recall.get<double>();
  }
  r.all = j.at("all").get<double>();
  r.config_hash = j.at("config_hash").get<std::string>();
  if (j.contains("query_sizes")) {
    const auto& sizes = j["query_sizes"];
    for (const auto& [task, size] : sizes.at("per_task").items()) {
      r.per_task_size[std::stoi(task)] = size.get<Index>();
    }
    r.all_size = sizes.at("all").get<Index>();
  }
  return r;
}

EvalReport evaluate_stages(const EmbeddingModel& model,
                           std::span<const TaskDataset> tasks) {
  if (tasks.empty()) throw Error("evaluate_stages: no tasks");
  EvalReport report;
  for (const auto& task : tasks) {
    if (task.test_x.rows() == 0) {
      throw Error("evaluate_stages: task " + std::to_string(task.task_id) +
                  " has no test samples");
    }
    report.per_task[task.task_id] =
        recall_at_1(model.forward(task.test_x), task.test_y);
    report.per_task_size[task.task_id] = task.test_x.rows();
  }
  const TaskDataset merged = merge_tasks(tasks);
  report.all = recall_at_1(model.forward(merged.test_x), merged.test_y);
  report.all_size = merged.test_x.rows();
  return report;
}

}  // namespace odml
