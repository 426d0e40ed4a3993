#include "odml/pipeline.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <set>

namespace odml {

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::initial: return "initial";
    case Mode::fine_tune: return "fine_tune";
    case Mode::joint: return "joint";
    case Mode::ours: return "ours";
    case Mode::teacher_only: return "teacher_only";
    case Mode::mutual_only: return "mutual_only";
  }
  return "unknown";
}

Mode parse_mode(const std::string& name) {
  for (Mode m : {Mode::initial, Mode::fine_tune, Mode::joint, Mode::ours,
                 Mode::teacher_only, Mode::mutual_only}) {
    if (to_string(m) == name) return m;
  }
  throw Error("unknown mode '" + name +
              "' (expected initial, fine_tune, joint, ours, teacher_only, mutual_only)");
}

void TrainingConfig::validate() const {
  weights.validate();
  auto positive = [](double v, const char* name) {
    if (!std::isfinite(v) || v <= 0) {
      throw Error(std::string("config: ") + name + " must be positive and finite");
    }
  };
  positive(margin, "margin");
  positive(temperature, "temperature");
  positive(lr, "lr");
  if (epochs < 0) throw Error("config: epochs must be >= 0");
  if (p < 2) throw Error("config: P must be >= 2");
  if (k < 2) throw Error("config: K must be >= 2");
  if (embedding_dim < 1) throw Error("config: embedding_dim must be >= 1");
  for (Index h : hidden) {
    if (h < 1) throw Error("config: hidden sizes must be >= 1");
  }
}

std::vector<Index> TrainingConfig::layer_dims(Index input_dim) const {
  std::vector<Index> dims{input_dim};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(embedding_dim);
  return dims;
}

ObjectiveConfig TrainingConfig::objective() const {
  ObjectiveConfig out{weights, margin, temperature};
  switch (mode) {
    case Mode::initial:
    case Mode::fine_tune:
    case Mode::joint:
      out.weights.lambda2 = 0;
      out.weights.lambda3 = 0;
      break;
    case Mode::teacher_only:
      out.weights.lambda3 = 0;
      break;
    case Mode::mutual_only:
      out.weights.lambda2 = 0;
      break;
    case Mode::ours:
      break;
  }
  return out;
}

nlohmann::ordered_json TrainingConfig::to_json() const {
  nlohmann::ordered_json j;
  j["mode"] = to_string(mode);
  j["lambda1"] = weights.lambda1;
  j["lambda2"] = weights.lambda2;
  j["lambda3"] = weights.lambda3;
  j["margin"] = margin;
  j["temperature"] = temperature;
  j["lr"] = lr;
  j["epochs"] = epochs;
  j["P"] = p;
  j["K"] = k;
  j["seed"] = seed;
  j["hidden"] = hidden;
  j["embedding_dim"] = embedding_dim;
  return j;
}

TrainingConfig TrainingConfig::from_json(const nlohmann::json& j) {
  TrainingConfig c;
  if (!j.is_object()) throw Error("training config must be a JSON object");
  static const std::set<std::string> known = {
      "mode", "lambda1", "lambda2", "lambda3", "margin", "temperature", "lr",
      "epochs", "P", "K", "seed", "hidden", "embedding_dim"};
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw Error("unknown training config field '" + key + "'");
  }
  try {
    if (j.contains("mode")) c.mode = parse_mode(j["mode"].get<std::string>());
    c.weights.lambda1 = j.value("lambda1", c.weights.lambda1);
    c.weights.lambda2 = j.value("lambda2", c.weights.lambda2);
    c.weights.lambda3 = j.value("lambda3", c.weights.lambda3);
    c.margin = j.value("margin", c.margin);
    c.temperature = j.value("temperature", c.temperature);
    c.lr = j.value("lr", c.lr);
    c.epochs = j.value("epochs", c.epochs);
    c.p = j.value("P", c.p);
    c.k = j.value("K", c.k);
    c.seed = j.value("seed", c.seed);
    if (j.contains("hidden")) c.hidden = j["hidden"].get<std::vector<Index>>();
    c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string TrainingConfig::hash() const { return fnv1a_hex(to_json().dump()); }

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::uint64_t derive_seed(std::uint64_t seed, int stage, int stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stage),
                    static_cast<std::uint32_t>(stream)};
  std::array<std::uint32_t, 2> out{};
  seq.generate(out.begin(), out.end());
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

namespace {

struct BranchSetup {
  const EmbeddingModel* teacher = nullptr;
  const StageState* state = nullptr;  // enables virtual targets
  bool supporting = false;
};

BranchSetup setup_for(Mode mode, const EmbeddingModel& teacher,
                      const StageState* state) {
  switch (mode) {
    case Mode::ours: return {&teacher, state, true};
    case Mode::teacher_only: return {&teacher, nullptr, false};
    case Mode::mutual_only: return {&teacher, nullptr, true};
    case Mode::initial:
    case Mode::fine_tune:
    case Mode::joint: return {};
  }
  return {};
}

StudentPair train_branches(EmbeddingModel deployed, const TaskDataset& task,
                           const BranchSetup& setup, const TrainingConfig& config,
                           int stage, TrainTrace* trace) {
  config.validate();
  if (task.train_x.rows() == 0) throw Error("training task has no samples");
  if (task.train_x.cols() != deployed.input_dim()) {
    throw Error("training task dim does not match the model input");
  }
  std::mt19937_64 sampler(derive_seed(config.seed, stage, kSamplerStream));
  // Small tasks cannot supply P classes; use all of them.
  const int p = std::min<int>(config.p, static_cast<int>(task.classes.size()));
  const int batch_size = p * config.k;
  const auto iters = static_cast<int>(
      (task.train_x.rows() + batch_size - 1) / batch_size);
  const ObjectiveConfig objective = config.objective();
  const AdamConfig adam{config.lr};

  StudentPair out{std::move(deployed), {}};
  AdamState adam_p(out.deployed, adam);
  AdamState adam_s;
  if (setup.supporting) {
    out.supporting = EmbeddingModel::init(
        out.deployed.layer_dims(), derive_seed(config.seed, stage, kSupportStream));
    adam_s = AdamState(out.supporting, adam);
  }
  const bool use_corr = setup.teacher && objective.weights.lambda2 != 0;

  int step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    double loss_sum = 0;
    for (int it = 0; it < iters; ++it) {
      const Batch batch = pk_batch(task, p, config.k, sampler);
      ForwardCache cache_p;
      ForwardCache cache_s;
      const Matrix emb_p = out.deployed.forward(batch.x, &cache_p);
      Matrix emb_s;
      if (setup.supporting) emb_s = out.supporting.forward(batch.x, &cache_s);
      std::vector<Matrix> targets;
      if (use_corr) {
        targets = correlation_targets(setup.teacher->forward(batch.x), setup.state);
      }
      const LossReport report = branch_objective(
          targets, emb_p, setup.supporting ? &emb_s : nullptr, batch.labels, objective);
      if (!std::isfinite(report.total)) {
        throw DivergenceError("stage " + std::to_string(stage) + " epoch " +
                              std::to_string(epoch) + ": non-finite loss");
      }
      adam_p.step(out.deployed, out.deployed.backward(cache_p, report.grad_p));
      if (setup.supporting) {
        adam_s.step(out.supporting, out.supporting.backward(cache_s, report.grad_s));
      }
      loss_sum += report.total;
      if (trace && trace->on_step) trace->on_step(step, out.deployed);
      ++step;
    }
    if (trace) trace->epoch_losses.push_back(loss_sum / iters);
  }
  return out;
}

void check_disjoint(std::span<const int> old_classes, const TaskDataset& new_task) {
  const std::set<int> old(old_classes.begin(), old_classes.end());
  for (int c : new_task.classes) {
    if (old.count(c)) {
      throw Error("class " + std::to_string(c) +
                  " is in both the teacher's and the new task's class sets");
    }
  }
}

}  // namespace

std::vector<Matrix> correlation_targets(const Matrix& teacher_emb,
                                        const StageState* state) {
  std::vector<Matrix> targets;
  if (state) {
    std::vector<int> tasks;
    for (const auto& table : state->drift_tables) tasks.push_back(table.task_id);
    std::sort(tasks.begin(), tasks.end());
    for (int t : tasks) targets.push_back(virtual_embeddings(teacher_emb, *state, t));
  }
  targets.push_back(teacher_emb);
  return targets;
}

EmbeddingModel train_initial(const TaskDataset& task, const TrainingConfig& config,
                             TrainTrace* trace) {
  auto model = EmbeddingModel::init(config.layer_dims(task.train_x.cols()),
                                    derive_seed(config.seed, 1, kInitStream));
  return train_branches(std::move(model), task, {}, config, 1, trace).deployed;
}

StudentPair train_one_task(const EmbeddingModel& teacher,
                           std::span<const int> teacher_classes,
                           const TaskDataset& new_task, const TrainingConfig& config,
                           int stage, TrainTrace* trace) {
  check_disjoint(teacher_classes, new_task);
  return train_branches(clone_weights(teacher), new_task,
                        setup_for(config.mode, teacher, nullptr), config, stage, trace);
}

StudentPair train_stage_multi(const EmbeddingModel& teacher, const StageState& state,
                              const TaskDataset& new_task, const TrainingConfig& config,
                              int stage, TrainTrace* trace) {
  if (state.stage != stage - 1) {
    throw Error("train_stage_multi: stage " + std::to_string(stage) +
                " needs the state of stage " + std::to_string(stage - 1) +
                ", got " + std::to_string(state.stage));
  }
  std::vector<int> seen;
  for (const auto& proto : state.prototypes) seen.push_back(proto.class_id);
  check_disjoint(seen, new_task);
  return train_branches(clone_weights(teacher), new_task,
                        setup_for(config.mode, teacher, &state), config, stage, trace);
}

StageState compute_stage_state(std::span<const EmbeddingModel> models,
                               std::span<const StageState> states, int stage,
                               const TaskDataset& task) {
  if (stage < 1 || static_cast<int>(models.size()) < stage ||
      static_cast<int>(states.size()) < stage - 1) {
    throw Error("compute_stage_state: missing models or states before stage " +
                std::to_string(stage));
  }
  const Matrix current = models[stage - 1].forward(task.train_x);
  StageState out;
  out.stage = stage;
  for (int b = 1; b < stage; ++b) {
    const Matrix past = models[b - 1].forward(task.train_x);
    const auto originals = states[b - 1].prototypes_of(b);
    if (originals.empty()) {
      throw Error("compute_stage_state: stage " + std::to_string(b) +
                  " state has no prototypes for its own task");
    }
    DriftTable table{b, b, stage, {}, {}};
    for (const auto& proto : originals) {
      Vector drift = prototype_drift(past, current, proto);
      out.prototypes.push_back(update_prototype(proto, drift, stage));
      table.class_ids.push_back(proto.class_id);
      table.drifts.push_back(std::move(drift));
    }
    out.drift_tables.push_back(std::move(table));
  }
  for (auto& proto : compute_prototypes(current, task.train_y, stage, stage)) {
    out.prototypes.push_back(std::move(proto));
  }
  return out;
}

StageState post_stage_offline(const ModelRegistry& registry, int stage,
                              const TaskDataset& task) {
  std::vector<EmbeddingModel> models;
  std::vector<StageState> states;
  for (int b = 1; b <= stage; ++b) {
    if (!registry.has_model(b)) {
      throw FormatError("registry " + registry.root().string() + " has no model for stage " +
                        std::to_string(b));
    }
    models.push_back(registry.load_model(b));
    if (b < stage) {
      if (!registry.has_state(b)) {
        throw FormatError("registry " + registry.root().string() +
                          " has no state for stage " + std::to_string(b));
      }
      states.push_back(registry.load_state(b));
    }
  }
  auto state = compute_stage_state(models, states, stage, task);
  registry.save_state(state);
  return state;
}

ModeResult run_mode(Mode mode, std::span<const TaskDataset> tasks,
                    const TrainingConfig& config, const RunOptions& options) {
  if (tasks.empty()) throw Error("run_mode: no tasks");
  TrainingConfig cfg = config;
  cfg.mode = mode;
  cfg.validate();
  const std::string hash = options.config_hash.empty() ? cfg.hash() : options.config_hash;
  std::optional<ModelRegistry> registry;
  if (options.registry_root) registry.emplace(*options.registry_root);
  auto log = [&](const std::string& msg) {
    if (options.log) options.log("[" + to_string(mode) + "] " + msg);
  };

  ModeResult result;
  result.mode = mode;

  // Loads stage `stage` from the registry when present, otherwise trains it
  // with `train` and persists it.
  auto stage_model = [&](int stage, const TaskDataset& task, auto&& train) {
    if (registry && registry->has_model(stage)) {
      const auto meta = registry->load_meta(stage);
      if (meta.config_hash != hash) {
        throw FormatError("registry stage " + std::to_string(stage) +
                          " was produced by a different config");
      }
      log("stage " + std::to_string(stage) + ": resumed from registry");
      result.stage_losses.emplace_back();
      return registry->load_model(stage);
    }
    TrainTrace trace;
    EmbeddingModel model = train(trace);
    result.stage_losses.push_back(trace.epoch_losses);
    if (registry) {
      registry->save_model(stage, model,
                           {stage, to_string(mode), task.classes, hash, cfg.seed});
    }
    if (!trace.epoch_losses.empty()) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.6f", trace.epoch_losses.back());
      log("stage " + std::to_string(stage) + " (classes " + task.class_range() +
          "): final epoch loss " + buf);
    }
    return model;
  };
  auto report_stage = [&](int stage, const EmbeddingModel& model,
                          std::span<const TaskDataset> seen) {
    EvalReport report = evaluate_stages(model, seen);
    report.stage = stage;
    report.config_hash = hash;
    if (registry) registry->save_report(stage, report);
    result.stage_reports.push_back(report);
  };

  if (mode == Mode::joint) {
    const TaskDataset merged = merge_tasks(tasks, 1);
    result.final_model = stage_model(1, merged, [&](TrainTrace& trace) {
      return train_initial(merged, cfg, &trace);
    });
    report_stage(1, result.final_model, tasks);
    result.final_report = result.stage_reports.back();
    return result;
  }

  std::vector<EmbeddingModel> models;
  std::vector<StageState> states;
  const bool needs_states = mode == Mode::ours;
  auto boundary = [&](int stage, const TaskDataset& task) {
    if (!needs_states) return;
    if (registry && registry->has_state(stage)) {
      states.push_back(registry->load_state(stage));
      return;
    }
    states.push_back(compute_stage_state(models, states, stage, task));
    if (registry) registry->save_state(states.back());
  };

  models.push_back(stage_model(1, tasks[0], [&](TrainTrace& trace) {
    return train_initial(tasks[0], cfg, &trace);
  }));
  boundary(1, tasks[0]);
  report_stage(1, models.back(), tasks.first(1));

  if (mode != Mode::initial) {
    std::vector<int> seen_classes = tasks[0].classes;
    for (int stage = 2; stage <= static_cast<int>(tasks.size()); ++stage) {
      const TaskDataset& task = tasks[stage - 1];
      check_disjoint(seen_classes, task);
      const EmbeddingModel& teacher = models.back();
      models.push_back(stage_model(stage, task, [&](TrainTrace& trace) {
        if (needs_states) {
          return train_stage_multi(teacher, states.back(), task, cfg, stage, &trace)
              .deployed;
        }
        return train_one_task(teacher, seen_classes, task, cfg, stage, &trace).deployed;
      }));
      boundary(stage, task);
      report_stage(stage, models.back(), tasks.first(stage));
      seen_classes.insert(seen_classes.end(), task.classes.begin(), task.classes.end());
    }
  }

  result.final_model = models.back();
  if (result.stage_reports.back().per_task.size() == tasks.size()) {
    result.final_report = result.stage_reports.back();
  } else {
    result.final_report = evaluate_stages(result.final_model, tasks);
    result.final_report.stage = static_cast<int>(models.size());
    result.final_report.config_hash = hash;
  }
  return result;
}

}  // namespace odml
