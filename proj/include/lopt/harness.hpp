#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "lopt/config.hpp"
#include "lopt/meta.hpp"
#include "lopt/optim.hpp"
#include "lopt/optimizee.hpp"
#include "lopt/rnn_optimizer.hpp"

namespace lopt {

// Round-trip double formatting (shortest form) for bit-stable CSV output.
std::string fmt_double(double v);

// Dataset + task construction shared by every subcommand.
struct Environment {
  std::shared_ptr<const Dataset> dataset;

  static Environment from_config(const Config& cfg);
};

// task ids: base-mlp | mlp-act:<name> | mlp-depth:<k> | sine-lstm |
// sine-lstm:2layer | sine-lstm:smallnoise | quadratic
std::shared_ptr<Optimizee> make_task(const std::string& task_id, const Environment& env,
                                     const Config& cfg);

struct OptimizerSpec {
  std::string id;  // sgd|momentum|adagrad|adadelta|rmsprop|adam|rnnprop|dm
  ClassicHyper hyper;
  std::filesystem::path checkpoint;  // learned optimizers
  bool learned() const { return id == "rnnprop" || id == "dm"; }

  static OptimizerSpec from_config(const Config& cfg);
};

struct RunRecord {
  std::vector<double> step_loss;      // step t holds F(theta_t); step 0 is the initial loss
  std::vector<double> step_max_dtheta;
  double final_loss = 0.0;            // loss at frozen final theta on the last sample
  double final_avg_loss = 0.0;        // frozen final theta over all encountered samples
  double max_abs_dtheta = 0.0;
  bool diverged = false;
  int64_t diverged_step = -1;
};

struct RunSpec {
  std::string task_id;
  OptimizerSpec optimizer;
  int64_t steps = 100;
  int repeats = 1;
  uint64_t seed = 1;
  int threads = 1;
};

struct RunSet {
  std::vector<RunRecord> runs;
  uint64_t phi_hash_before = 0, phi_hash_after = 0;  // learned optimizers only
};

// Executes the optimization loop `repeats` times with per-run seeds derived
// from (seed, run index). Divergence is flagged per run, never fatal.
RunSet run_training(const RunSpec& spec, const Environment& env, const Config& cfg);

void write_trajectories_csv(const RunSet& rs, const std::filesystem::path& path);
void write_finals_csv(const RunSet& rs, const std::filesystem::path& path);

struct SweepRow {
  double lr = 0.0;
  double mean_final_avg_loss = 0.0;  // over non-diverged runs; inf if all diverged
  double median_final_avg_loss = 0.0;
  int diverged = 0;
};

// One run_training per grid point; grid must hold >= 5 positive rates.
std::vector<SweepRow> lr_sweep(const std::string& task_id, const std::string& optimizer_id,
                               const std::vector<double>& grid, int64_t steps, int repeats,
                               uint64_t seed, int threads, const Environment& env,
                               const Config& cfg);
void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path);

// Control-experiment variants: rnnprop (both tricks), rnnprop-no-rs,
// rnnprop-no-cc, dm (no tricks, uniform meta-loss weights), dm-with-tricks.
struct ControlVariant {
  std::string name;
  CoreKind core = CoreKind::RnnProp;
  bool random_scaling = true;
  bool convex_companion = true;
  MetaWeightScheme weights = MetaWeightScheme::FinalOnly;
};
ControlVariant control_variant(const std::string& name);

struct ControlCell {
  std::string variant;
  std::string task;
  int64_t iterations = 0;  // checkpoint position in meta-iterations
  double median_final_avg_loss = 0.0;
};

struct ControlSettings {
  std::vector<std::string> variants = {"rnnprop", "rnnprop-no-cc"};
  int64_t budget = 200;                         // meta-iterations per variant
  std::vector<double> fractions = {0.25, 0.5, 0.75, 1.0};
  std::vector<std::string> eval_tasks = {"base-mlp"};
  int64_t eval_steps = 100;
  int eval_repeats = 5;
  double adam_reference_lr = 0.003;
  uint64_t seed = 1;
  int threads = 1;

  static ControlSettings from_config(const Config& cfg);
};

struct ControlResult {
  std::vector<ControlCell> cells;
  std::vector<ControlCell> adam_reference;  // one per (task, iterations) row
};

// Meta-trains every variant with the same budget and seed, snapshots at the
// configured fractions, then evaluates each snapshot on the eval tasks.
ControlResult control_experiment(const ControlSettings& settings, const Environment& env,
                                 const Config& cfg, const std::filesystem::path& work_dir);
void write_control_csv(const ControlResult& result, const ControlSettings& settings,
                       const std::filesystem::path& path);

// Aggregates finals.csv files below `dir` into summary.json: mean/median of
// non-diverged final losses, divergent runs counted separately.
void report_results(const std::filesystem::path& dir, const std::filesystem::path& out_json);

// Config key registry (README documents the keys).
const std::vector<std::string>& known_config_keys();

}  // namespace lopt
