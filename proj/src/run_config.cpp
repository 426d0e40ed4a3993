#include "odml/run_config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace odml {

void RunConfig::validate() const {
  if (stages < 1) throw Error("config: stages must be >= 1");
  if (modes.empty()) throw Error("config: no modes selected");
  training.validate();
}

nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json j;
  nlohmann::ordered_json data;
  if (csv) {
    data["csv"] = csv->string();
  } else {
    data["classes"] = synthetic.n_classes;
    data["per_class"] = synthetic.per_class;
    data["dim"] = synthetic.dim;
    data["separation"] = synthetic.separation;
    data["sigma"] = synthetic.noise_sigma;
    data["seed"] = synthetic.seed;
  }
  j["data"] = data;
  j["stages"] = stages;
  std::vector<std::string> names;
  for (Mode m : modes) names.push_back(to_string(m));
  j["modes"] = names;
  j["training"] = training.to_json();
  j["out"] = out.string();
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  if (!j.is_object()) throw Error("run config must be a JSON object");
  static const std::set<std::string> known = {"data", "stages", "modes", "training", "out"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw Error("unknown config field '" + key + "'");
  }
  try {
    if (j.contains("data")) {
      const auto& d = j["data"];
      static const std::set<std::string> data_keys = {"csv", "classes", "per_class", "dim",
                                                      "separation", "sigma", "seed"};
      for (const auto& [key, value] : d.items()) {
        if (!data_keys.count(key)) throw Error("unknown data field '" + key + "'");
      }
      if (d.contains("csv") && !d["csv"].is_null()) c.csv = d["csv"].get<std::string>();
      c.synthetic.n_classes = d.value("classes", c.synthetic.n_classes);
      c.synthetic.per_class = d.value("per_class", c.synthetic.per_class);
      c.synthetic.dim = d.value("dim", c.synthetic.dim);
      c.synthetic.separation = d.value("separation", c.synthetic.separation);
      c.synthetic.noise_sigma = d.value("sigma", c.synthetic.noise_sigma);
      c.synthetic.seed = d.value("seed", c.synthetic.seed);
    }
    c.stages = j.value("stages", c.stages);
    if (j.contains("modes")) {
      c.modes.clear();
      for (const auto& m : j["modes"]) c.modes.push_back(parse_mode(m.get<std::string>()));
    }
    if (j.contains("training")) c.training = TrainingConfig::from_json(j["training"]);
    if (j.contains("out")) c.out = j["out"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("config " + path.string() + ": " + e.what());
  }
}

Dataset RunConfig::load_dataset() const {
  return csv ? load_csv(*csv) : gen_synthetic(synthetic);
}

std::vector<TaskDataset> RunConfig::tasks() const {
  const Dataset data = load_dataset();
  return stages == 1 ? split_one_task(data) : split_multi_task(data, stages);
}

std::string RunConfig::hash_for(Mode mode) const {
  auto j = to_json();
  j.erase("out");
  j.erase("modes");
  j["training"]["mode"] = to_string(mode);
  return fnv1a_hex(j.dump());
}

std::string summary_csv(std::span<const TaskDataset> tasks,
                        std::span<const ModeResult> results) {
  std::ostringstream out;
  out << "tasks";
  for (const auto& r : results) out << ',' << to_string(r.mode);
  out << '\n';
  char buf[32];
  auto cell = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  for (const auto& task : tasks) {
    out << task.class_range();
    for (const auto& r : results) out << ',' << cell(r.final_report.per_task.at(task.task_id));
    out << '\n';
  }
  out << "1-" << (tasks.back().classes.back() + 1);
  for (const auto& r : results) out << ',' << cell(r.final_report.all);
  out << '\n';
  return out.str();
}

}  // namespace odml
