#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "lopt/harness.hpp"

namespace fs = std::filesystem;
using namespace lopt;

namespace {

int exit_code_for(ErrorCategory cat) {
  switch (cat) {
    case ErrorCategory::Config: return 2;
    case ErrorCategory::Data: return 3;
    case ErrorCategory::Checkpoint: return 4;
    case ErrorCategory::Shape: return 5;
    case ErrorCategory::Runtime: return 6;
  }
  return 1;
}

struct CommonArgs {
  std::string config_path;
  int64_t seed = -1;
  int64_t steps = -1;
  int64_t repeats = -1;
  int64_t threads = -1;
  std::string out = "out";
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "key = value config file");
  cmd->add_option("--seed", args.seed, "override run.seed / meta.seed / control.seed");
  cmd->add_option("--steps", args.steps, "override run.steps");
  cmd->add_option("--repeats", args.repeats, "override run.repeats");
  cmd->add_option("--threads", args.threads, "worker threads for independent runs");
  cmd->add_option("--out", args.out, "output directory");
}

Config load_config(const CommonArgs& args) {
  Config cfg;
  if (!args.config_path.empty()) cfg = Config::load(args.config_path);
  cfg.validate(known_config_keys());
  if (args.seed >= 0) {
    cfg.set("run.seed", std::to_string(args.seed));
    cfg.set("meta.seed", std::to_string(args.seed));
    cfg.set("control.seed", std::to_string(args.seed));
  }
  if (args.steps >= 0) cfg.set("run.steps", std::to_string(args.steps));
  if (args.repeats >= 0) cfg.set("run.repeats", std::to_string(args.repeats));
  if (args.threads >= 0) {
    cfg.set("run.threads", std::to_string(args.threads));
    cfg.set("control.threads", std::to_string(args.threads));
  }
  return cfg;
}

RunSpec run_spec_from(const Config& cfg) {
  RunSpec spec;
  spec.task_id = cfg.get_str("task", "base-mlp");
  spec.optimizer = OptimizerSpec::from_config(cfg);
  spec.steps = cfg.get_int("run.steps", 100);
  spec.repeats = static_cast<int>(cfg.get_int("run.repeats", 1));
  spec.seed = static_cast<uint64_t>(cfg.get_int("run.seed", 1));
  spec.threads = static_cast<int>(cfg.get_int("run.threads", 1));
  if (spec.steps < 1)
    throw Error(ErrorCategory::Config, "bad_steps", "run.steps must be >= 1");
  if (spec.repeats < 1)
    throw Error(ErrorCategory::Config, "bad_repeats", "run.repeats must be >= 1");
  return spec;
}

int cmd_meta_train(const CommonArgs& args) {
  Config cfg = load_config(args);
  Environment env = Environment::from_config(cfg);

  MetaConfig mc;
  mc.horizon = static_cast<int>(cfg.get_int("meta.horizon", mc.horizon));
  mc.periods = static_cast<int>(cfg.get_int("meta.periods", mc.periods));
  mc.meta_lr = cfg.get_double("meta.lr", mc.meta_lr);
  mc.scale_l_f = cfg.get_double("meta.l_f", mc.scale_l_f);
  mc.scale_l_g = cfg.get_double("meta.l_g", mc.scale_l_g);
  mc.n_convex = static_cast<int>(cfg.get_int("meta.n_convex", mc.n_convex));
  mc.use_random_scaling = cfg.get_bool("meta.rs", true);
  mc.use_convex_companion = cfg.get_bool("meta.cc", true);
  mc.checkpoint_every = static_cast<int>(cfg.get_int("meta.checkpoint_every", mc.checkpoint_every));
  mc.selection_decay = cfg.get_double("meta.selection_decay", mc.selection_decay);
  std::string weights = cfg.get_str("meta.weights", "");
  std::string model = cfg.get_str("meta.model", "rnnprop");
  if (weights.empty()) weights = model == "dm" ? "uniform" : "final";
  mc.weights = weights == "uniform" ? MetaWeightScheme::Uniform : MetaWeightScheme::FinalOnly;

  uint64_t seed = static_cast<uint64_t>(cfg.get_int("meta.seed", 1));
  int64_t iterations = cfg.get_int("meta.iterations", 2000);

  CoreKind kind = model == "dm" ? CoreKind::Dm : CoreKind::RnnProp;
  RandomStream init_rng(seed, 0x77);
  auto core = make_core_random(kind, init_rng);

  std::shared_ptr<Optimizee> task = make_task(cfg.get_str("task", "base-mlp"), env, cfg);
  MetaTrainer trainer(std::move(core), mc, [task](RandomStream&) { return task; }, seed);

  fs::create_directories(args.out);
  std::ofstream log(fs::path(args.out) / "train_log.csv", std::ios::binary);
  MetaTrainResult r = trainer.train(iterations, args.out, &log);

  nlohmann::json sel;
  sel["initial_checkpoint"] = r.initial_dir.string();
  sel["selected_checkpoint"] = r.checkpoints[r.selected].dir.string();
  sel["selected_iteration"] = r.checkpoints[r.selected].iteration;
  sel["selected_moving_avg"] = r.checkpoints[r.selected].moving_avg;
  sel["final_moving_avg"] = r.final_moving_avg;
  sel["resamples"] = r.total_resamples;
  nlohmann::json cks = nlohmann::json::array();
  for (const auto& c : r.checkpoints)
    cks.push_back({{"iteration", c.iteration},
                   {"moving_avg", c.moving_avg},
                   {"dir", c.dir.string()}});
  sel["checkpoints"] = cks;
  std::ofstream sf(fs::path(args.out) / "selection.json", std::ios::binary);
  sf << sel.dump(2) << "\n";
  std::printf("meta-train: %lld iterations, selected %s (moving avg %.6g)\n",
              static_cast<long long>(iterations),
              r.checkpoints[r.selected].dir.string().c_str(),
              r.checkpoints[r.selected].moving_avg);
  return 0;
}

int cmd_evaluate(const CommonArgs& args) {
  Config cfg = load_config(args);
  Environment env = Environment::from_config(cfg);
  RunSpec spec = run_spec_from(cfg);
  RunSet rs = run_training(spec, env, cfg);
  fs::create_directories(args.out);
  write_trajectories_csv(rs, fs::path(args.out) / "trajectories.csv");
  write_finals_csv(rs, fs::path(args.out) / "finals.csv");
  int diverged = 0;
  for (const auto& r : rs.runs) diverged += r.diverged ? 1 : 0;
  std::printf("evaluate: %zu runs of %lld steps, %d diverged -> %s\n", rs.runs.size(),
              static_cast<long long>(spec.steps), diverged, args.out.c_str());
  return 0;
}

int cmd_sweep(const CommonArgs& args) {
  Config cfg = load_config(args);
  Environment env = Environment::from_config(cfg);
  std::vector<double> grid = cfg.get_doubles("sweep.lrs");
  if (grid.empty())
    grid = {1e-5, 4.6416e-5, 2.1544e-4, 1e-3, 4.6416e-3, 2.1544e-2, 1e-1};
  std::vector<SweepRow> rows = lr_sweep(
      cfg.get_str("task", "base-mlp"), cfg.get_str("optimizer", "adam"), grid,
      cfg.get_int("run.steps", 100), static_cast<int>(cfg.get_int("run.repeats", 1)),
      static_cast<uint64_t>(cfg.get_int("run.seed", 1)),
      static_cast<int>(cfg.get_int("run.threads", 1)), env, cfg);
  fs::create_directories(args.out);
  write_sweep_csv(rows, fs::path(args.out) / "sweep.csv");
  std::printf("sweep: %zu rates -> %s/sweep.csv\n", rows.size(), args.out.c_str());
  return 0;
}

int cmd_control(const CommonArgs& args) {
  Config cfg = load_config(args);
  Environment env = Environment::from_config(cfg);
  ControlSettings settings = ControlSettings::from_config(cfg);
  fs::create_directories(args.out);
  ControlResult result = control_experiment(settings, env, cfg, args.out);
  write_control_csv(result, settings, fs::path(args.out) / "control.csv");
  std::printf("control: %zu cells -> %s/control.csv\n", result.cells.size(), args.out.c_str());
  return 0;
}

int cmd_report(const CommonArgs& args, const std::string& results_dir) {
  fs::create_directories(args.out);
  report_results(results_dir, fs::path(args.out) / "summary.json");
  std::printf("report: %s -> %s/summary.json\n", results_dir.c_str(), args.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"learned-optimizer workbench"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string results_dir;

  CLI::App* mt = app.add_subcommand("meta-train", "train a learned optimizer");
  add_common(mt, args);
  CLI::App* ev = app.add_subcommand("evaluate", "run an optimizer on a task");
  add_common(ev, args);
  CLI::App* sw = app.add_subcommand("sweep", "learning-rate sweep for a classic optimizer");
  add_common(sw, args);
  CLI::App* ct = app.add_subcommand("control", "trick-ablation control experiment");
  add_common(ct, args);
  CLI::App* rp = app.add_subcommand("report", "aggregate finals.csv files into summary.json");
  add_common(rp, args);
  rp->add_option("--results", results_dir, "directory holding run outputs")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (mt->parsed()) return cmd_meta_train(args);
    if (ev->parsed()) return cmd_evaluate(args);
    if (sw->parsed()) return cmd_sweep(args);
    if (ct->parsed()) return cmd_control(args);
    if (rp->parsed()) return cmd_report(args, results_dir);
  } catch (const Error& e) {
    nlohmann::json err;
    err["error"] = {{"category", category_name(e.category())},
                    {"code", e.code()},
                    {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return exit_code_for(e.category());
  } catch (const std::exception& e) {
    nlohmann::json err;
    err["error"] = {{"category", "internal"}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 0;
}
