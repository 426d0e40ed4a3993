#include "odml/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <CLI11.hpp>

#include "odml/run_config.hpp"

namespace odml::cli {

namespace {

namespace fs = std::filesystem;

/// Raised for argument combinations CLI11 cannot express.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw Error("write failed for " + path.string());
}

std::vector<Mode> parse_modes(const std::string& list) {
  std::vector<Mode> modes;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      modes.push_back(parse_mode(item));
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
  }
  if (modes.empty()) throw UsageError("--modes is empty");
  return modes;
}

std::optional<std::uint64_t> seed_from_env() {
  const char* value = std::getenv("ODML_SEED");
  if (!value || !*value) return std::nullopt;
  char* end = nullptr;
  const auto seed = std::strtoull(value, &end, 10);
  if (*end != '\0') throw UsageError(std::string("ODML_SEED is not an integer: ") + value);
  return seed;
}

struct GenDataArgs {
  SyntheticParams params;
  std::string output;
};

int cmd_gen_data(const GenDataArgs& args, std::ostream& out) {
  const Dataset data = gen_synthetic(args.params);
  save_csv(data, args.output);
  out << "wrote " << args.output << ": " << data.num_classes << " classes, "
      << data.size() << " samples, dim " << data.dim() << "\n";
  return kExitOk;
}

struct RunArgs {
  std::string config;
  std::string modes;
  std::string out;
  std::string data;
  int stages = 0;
  std::optional<std::uint64_t> seed;
};

RunConfig resolve_run_config(const RunArgs& args) {
  RunConfig cfg = args.config.empty() ? RunConfig{} : RunConfig::load(args.config);
  if (auto env = seed_from_env()) cfg.training.seed = *env;
  if (args.seed) cfg.training.seed = *args.seed;
  if (!args.modes.empty()) cfg.modes = parse_modes(args.modes);
  if (!args.out.empty()) cfg.out = args.out;
  if (!args.data.empty()) cfg.csv = args.data;
  if (args.stages > 0) cfg.stages = args.stages;
  cfg.validate();
  return cfg;
}

int cmd_run(const RunArgs& args, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = resolve_run_config(args);
  const auto tasks = cfg.tasks();
  fs::create_directories(cfg.out);
  const auto config_path = cfg.out / "config.json";
  const std::string config_text = cfg.to_json().dump(2) + "\n";
  write_file(config_path, config_text);

  out << "tasks:";
  for (const auto& t : tasks) out << " " << t.class_range();
  out << "\n";

  std::vector<ModeResult> results;
  for (Mode mode : cfg.modes) {
    RunOptions options;
    options.registry_root = cfg.out / to_string(mode);
    options.config_hash = cfg.hash_for(mode);
    options.log = [&](const std::string& msg) { err << msg << "\n"; };
    results.push_back(run_mode(mode, tasks, cfg.training, options));
    const auto& report = results.back().final_report;
    write_file(cfg.out / to_string(mode) / "final_report.json", report.to_json());
    out << to_string(mode) << ": all " << report.all;
    for (const auto& [task, recall] : report.per_task) {
      out << "  task" << task << " " << recall;
    }
    out << "\n";
  }
  const auto summary = summary_csv(tasks, results);
  write_file(cfg.out / "summary.csv", summary);
  out << summary;
  return kExitOk;
}

struct EvalArgs {
  std::string run_dir;
  std::string mode = "ours";
  int stage = 0;
  std::string model;
  std::string config;
  std::string data;
  int stages = 0;
  std::string task = "all";
  std::string output;
};

int cmd_eval(const EvalArgs& args, std::ostream& out) {
  RunConfig cfg;
  std::string hash;
  fs::path model_path;
  std::optional<int> report_stage;
  std::optional<int> task_prefix;  // evaluate tasks 1..n only
  if (!args.run_dir.empty()) {
    cfg = RunConfig::load(fs::path(args.run_dir) / "config.json");
    const Mode mode = parse_mode(args.mode);
    hash = cfg.hash_for(mode);
    const ModelRegistry registry(fs::path(args.run_dir) / to_string(mode));
    const int stages = registry.contiguous_stages();
    if (stages == 0) throw FormatError("no trained stages under " + registry.root().string());
    // Without --stage, reproduce the final report: last model, every task.
    const int stage = args.stage > 0 ? args.stage : stages;
    if (stage > stages) {
      throw UsageError("stage " + std::to_string(stage) + " has not been trained");
    }
    model_path = registry.stage_dir(stage) / "model.bin";
    report_stage = stage;
    if (args.stage > 0 && mode != Mode::joint) task_prefix = stage;
  } else {
    if (args.model.empty()) throw UsageError("eval needs --run or --model");
    if (!args.config.empty()) cfg = RunConfig::load(args.config);
    if (!args.data.empty()) cfg.csv = args.data;
    if (args.stages > 0) cfg.stages = args.stages;
    model_path = args.model;
  }
  const EmbeddingModel model = load_model(model_path);
  auto tasks = cfg.tasks();
  if (task_prefix) tasks.resize(*task_prefix);

  EvalReport report;
  if (args.task == "all") {
    report = evaluate_stages(model, tasks);
  } else {
    int id = 0;
    try {
      id = std::stoi(args.task);
    } catch (const std::exception&) {
      throw UsageError("--task must be 'all' or a task id");
    }
    if (id < 1 || id > static_cast<int>(tasks.size())) {
      throw UsageError("--task " + args.task + " is out of range");
    }
    report = evaluate_stages(model, std::span(tasks).subspan(id - 1, 1));
  }
  report.stage = report_stage.value_or(static_cast<int>(tasks.size()));
  report.config_hash = hash;
  const std::string text = report.to_json();
  out << text;
  if (!args.output.empty()) write_file(args.output, text);
  return kExitOk;
}

struct DriftArgs {
  std::string run_dir;
  std::string mode = "ours";
  int stage = 0;
};

int cmd_drift(const DriftArgs& args, std::ostream& out) {
  const RunConfig cfg = RunConfig::load(fs::path(args.run_dir) / "config.json");
  const auto tasks = cfg.tasks();
  if (args.stage < 1 || args.stage > static_cast<int>(tasks.size())) {
    throw UsageError("--stage must be in 1.." + std::to_string(tasks.size()));
  }
  const ModelRegistry registry(fs::path(args.run_dir) / args.mode);
  const StageState state = post_stage_offline(registry, args.stage, tasks[args.stage - 1]);
  out << "stage " << state.stage << ": " << state.prototypes.size() << " prototypes, "
      << state.drift_tables.size() << " drift tables\n";
  for (const auto& table : state.drift_tables) {
    double mean = 0;
    for (const auto& d : table.drifts) mean += d.norm();
    mean /= static_cast<double>(table.drifts.size());
    out << "  task " << table.task_id << " -> stage " << table.target_stage
        << ": mean drift norm " << mean << "\n";
  }
  out << "wrote " << (registry.stage_dir(state.stage) / "state.bin").string() << "\n";
  return kExitOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Online deep metric learning with mutual distillation"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic clustered CSV dataset");
  gen_cmd->add_option("--classes", gen.params.n_classes, "Number of classes")
      ->check(CLI::Range(2, 1 << 20));
  gen_cmd->add_option("--per-class", gen.params.per_class, "Samples per class")
      ->check(CLI::Range(4, 1 << 20));
  gen_cmd->add_option("--dim", gen.params.dim, "Feature dimension")->check(CLI::Range(2, 1 << 20));
  gen_cmd->add_option("--separation", gen.params.separation, "Radius of the class-center sphere")
      ->check(CLI::NonNegativeNumber);
  gen_cmd->add_option("--sigma", gen.params.noise_sigma, "Per-coordinate noise stddev")
      ->check(CLI::NonNegativeNumber);
  gen_cmd->add_option("--seed", gen.params.seed, "RNG seed");
  gen_cmd->add_option("-o,--output", gen.output, "Output CSV path")->required();

  RunArgs run_args;
  auto* run_cmd = app.add_subcommand("run", "Run one or more training modes end to end");
  run_cmd->add_option("--config", run_args.config, "JSON run config (omitted fields default)");
  run_cmd->add_option("--modes", run_args.modes,
                      "Comma list: initial,fine_tune,joint,ours,teacher_only,mutual_only");
  run_cmd->add_option("--stages", run_args.stages, "New-task stages after the first half")
      ->check(CLI::PositiveNumber);
  run_cmd->add_option("-o,--out", run_args.out, "Run directory");
  run_cmd->add_option("--data", run_args.data, "CSV dataset instead of synthetic data");
  run_cmd->add_option("--seed", run_args.seed, "Training seed (overrides config and ODML_SEED)");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate Recall@1 of a trained model");
  eval_cmd->add_option("--run", eval_args.run_dir, "Run directory written by `run`");
  eval_cmd->add_option("--mode", eval_args.mode, "Mode inside the run directory");
  eval_cmd->add_option("--stage", eval_args.stage, "Stage model to evaluate (default: last)")
      ->check(CLI::PositiveNumber);
  eval_cmd->add_option("--model", eval_args.model, "Model file (without --run)");
  eval_cmd->add_option("--config", eval_args.config, "Run config describing the data");
  eval_cmd->add_option("--data", eval_args.data, "CSV dataset");
  eval_cmd->add_option("--stages", eval_args.stages, "Task split when not using --run")
      ->check(CLI::PositiveNumber);
  eval_cmd->add_option("--task", eval_args.task, "'all' or a single task id");
  eval_cmd->add_option("-o,--output", eval_args.output, "Write the JSON report here");

  DriftArgs drift_args;
  auto* drift_cmd = app.add_subcommand("drift", "Recompute the offline stage state of a run");
  drift_cmd->add_option("--run", drift_args.run_dir, "Run directory")->required();
  drift_cmd->add_option("--mode", drift_args.mode, "Mode inside the run directory");
  drift_cmd->add_option("--stage", drift_args.stage, "Stage boundary to compute")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << e.what() << "\n";
      return kExitOk;
    }
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen_data(gen, out);
    if (run_cmd->parsed()) return cmd_run(run_args, out, err);
    if (eval_cmd->parsed()) return cmd_eval(eval_args, out);
    if (drift_cmd->parsed()) return cmd_drift(drift_args, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace odml::cli
