#include "odml/registry.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace odml {

namespace {

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

}  // namespace

ModelRegistry::ModelRegistry(std::filesystem::path root) : root_(std::move(root)) {}

std::filesystem::path ModelRegistry::stage_dir(int stage) const {
  return root_ / ("stage_" + std::to_string(stage));
}

bool ModelRegistry::has_model(int stage) const {
  return std::filesystem::exists(stage_dir(stage) / "model.bin") &&
         std::filesystem::exists(stage_dir(stage) / "meta.json");
}

bool ModelRegistry::has_state(int stage) const {
  return std::filesystem::exists(stage_dir(stage) / "state.bin");
}

void ModelRegistry::save_model(int stage, const EmbeddingModel& model,
                               const StageMeta& meta) const {
  std::filesystem::create_directories(stage_dir(stage));
  odml::save_model(model, stage_dir(stage) / "model.bin");
  nlohmann::ordered_json j;
  j["stage"] = meta.stage;
  j["mode"] = meta.mode;
  j["classes"] = meta.classes;
  j["config_hash"] = meta.config_hash;
  j["seed"] = meta.seed;
  write_text(stage_dir(stage) / "meta.json", j.dump(2) + "\n");
}

EmbeddingModel ModelRegistry::load_model(int stage) const {
  return odml::load_model(stage_dir(stage) / "model.bin");
}

StageMeta ModelRegistry::load_meta(int stage) const {
  try {
    const auto j = nlohmann::json::parse(read_text(stage_dir(stage) / "meta.json"));
    StageMeta meta;
    meta.stage = j.at("stage").get<int>();
    meta.mode = j.at("mode").get<std::string>();
    meta.classes = j.at("classes").get<std::vector<int>>();
    meta.config_hash = j.at("config_hash").get<std::string>();
    meta.seed = j.at("seed").get<std::uint64_t>();
    return meta;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("stage " + std::to_string(stage) + " meta.json: " + e.what());
  }
}

void ModelRegistry::save_state(const StageState& state) const {
  std::filesystem::create_directories(stage_dir(state.stage));
  save_stage_state(state, stage_dir(state.stage) / "state.bin");
}

StageState ModelRegistry::load_state(int stage) const {
  auto state = load_stage_state(stage_dir(stage) / "state.bin");
  if (state.stage != stage) {
    throw FormatError("state.bin in stage_" + std::to_string(stage) +
                      " belongs to stage " + std::to_string(state.stage));
  }
  return state;
}

void ModelRegistry::save_report(int stage, const EvalReport& report) const {
  std::filesystem::create_directories(stage_dir(stage));
  write_text(stage_dir(stage) / "report.json", report.to_json());
}

EvalReport ModelRegistry::load_report(int stage) const {
  return EvalReport::from_json(read_text(stage_dir(stage) / "report.json"));
}

int ModelRegistry::contiguous_stages() const {
  int n = 0;
  while (has_model(n + 1)) ++n;
  return n;
}

void ModelRegistry::verify_chain(int n, const std::string& config_hash) const {
  std::set<int> seen;
  for (int stage = 1; stage <= n; ++stage) {
    if (!has_model(stage)) {
      throw FormatError("registry " + root_.string() + " is missing stage " +
                        std::to_string(stage));
    }
    const auto meta = load_meta(stage);
    if (meta.stage != stage) {
      throw FormatError("stage_" + std::to_string(stage) + " meta names stage " +
                        std::to_string(meta.stage));
    }
    if (meta.config_hash != config_hash) {
      throw FormatError("stage " + std::to_string(stage) +
                        " was trained with a different config (hash " +
                        meta.config_hash + ")");
    }
    for (int c : meta.classes) {
      if (!seen.insert(c).second) {
        throw FormatError("class " + std::to_string(c) + " appears in two stages");
      }
    }
  }
}

}  // namespace odml
