#include "lopt/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <thread>

#include "json.hpp"

namespace lopt {

std::string fmt_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, p);
}

const std::vector<std::string>& known_config_keys() {
  static const std::vector<std::string> keys = {
      "task", "optimizer", "optimizer.alpha", "optimizer.beta1", "optimizer.beta2",
      "optimizer.gamma", "optimizer.eps", "optimizer.checkpoint",
      "data.images_path", "data.labels_path", "data.synthetic", "data.size", "data.subset",
      "data.seed",
      "mlp.minibatch", "lstm.batch",
      "quadratic.lambda", "quadratic.dim", "quadratic.init_stddev",
      "run.steps", "run.repeats", "run.seed", "run.threads",
      "sweep.lrs",
      "meta.model", "meta.iterations", "meta.lr", "meta.horizon", "meta.periods",
      "meta.weights", "meta.rs", "meta.cc", "meta.l_f", "meta.l_g", "meta.n_convex",
      "meta.checkpoint_every", "meta.selection_decay", "meta.seed",
      "control.variants", "control.budget", "control.budgets", "control.fractions",
      "control.eval_tasks", "control.eval_steps", "control.eval_repeats", "control.adam_lr",
      "control.seed", "control.threads",
  };
  return keys;
}

// ---------------------------------------------------------------------------
// environment / tasks / optimizers
// ---------------------------------------------------------------------------

Environment Environment::from_config(const Config& cfg) {
  Environment env;
  bool synthetic = cfg.get_bool("data.synthetic", !cfg.has("data.images_path"));
  if (synthetic) {
    int n = static_cast<int>(cfg.get_int("data.size", 1000));
    env.dataset = std::make_shared<Dataset>(
        synthetic_fallback(static_cast<uint64_t>(cfg.get_int("data.seed", 7)), n));
  } else {
    Dataset ds = load_idx(cfg.get_str("data.images_path", ""), cfg.get_str("data.labels_path", ""));
    int64_t subset = cfg.get_int("data.subset", 0);
    if (subset > 0 && subset < ds.size()) {
      Dataset cut;
      cut.source = ds.source;
      cut.images = Tensor(std::vector<int>{static_cast<int>(subset), kImageDim});
      std::memcpy(cut.images.data(), ds.images.data(),
                  sizeof(double) * static_cast<size_t>(subset) * kImageDim);
      cut.labels.assign(ds.labels.begin(), ds.labels.begin() + subset);
      ds = std::move(cut);
    }
    env.dataset = std::make_shared<Dataset>(std::move(ds));
  }
  return env;
}

std::shared_ptr<Optimizee> make_task(const std::string& task_id, const Environment& env,
                                     const Config& cfg) {
  MlpConfig mlp;
  mlp.minibatch = static_cast<int>(cfg.get_int("mlp.minibatch", 128));
  if (task_id == "base-mlp") {
    return std::make_shared<MlpOptimizee>(env.dataset, mlp);
  }
  if (task_id.starts_with("mlp-act:")) {
    mlp.activation = activation_from_name(task_id.substr(8));
    return std::make_shared<MlpOptimizee>(env.dataset, mlp);
  }
  if (task_id.starts_with("mlp-depth:")) {
    mlp.hidden_layers = std::stoi(task_id.substr(10));
    return std::make_shared<MlpOptimizee>(env.dataset, mlp);
  }
  if (task_id == "sine-lstm" || task_id == "sine-lstm:2layer" || task_id == "sine-lstm:smallnoise") {
    SineTaskConfig sc;
    sc.batch = static_cast<int>(cfg.get_int("lstm.batch", 128));
    if (task_id == "sine-lstm:2layer") sc.lstm_layers = 2;
    if (task_id == "sine-lstm:smallnoise") sc.noise_sigma = 0.01;
    return std::make_shared<SineLstmOptimizee>(sc);
  }
  if (task_id == "quadratic") {
    return std::make_shared<QuadraticOptimizee>(cfg.get_double("quadratic.lambda", 1.0),
                                                static_cast<int>(cfg.get_int("quadratic.dim", 20)),
                                                cfg.get_double("quadratic.init_stddev", 1.0));
  }
  throw Error(ErrorCategory::Config, "bad_task", "unknown task '" + task_id + "'");
}

OptimizerSpec OptimizerSpec::from_config(const Config& cfg) {
  OptimizerSpec spec;
  spec.id = cfg.get_str("optimizer", "adam");
  if (spec.learned()) {
    spec.checkpoint = cfg.get_str("optimizer.checkpoint", "");
    if (spec.checkpoint.empty())
      throw Error(ErrorCategory::Config, "missing_checkpoint",
                  "optimizer '" + spec.id + "' needs optimizer.checkpoint");
  } else {
    ClassicKind kind = classic_kind_from_name(spec.id);
    spec.hyper = default_hyper(kind, cfg.get_double("optimizer.alpha", 0.001));
    if (cfg.has("optimizer.beta1")) spec.hyper.beta1 = cfg.get_double("optimizer.beta1", 0.9);
    if (cfg.has("optimizer.beta2")) spec.hyper.beta2 = cfg.get_double("optimizer.beta2", 0.999);
    if (cfg.has("optimizer.gamma")) spec.hyper.gamma = cfg.get_double("optimizer.gamma", 0.9);
    if (cfg.has("optimizer.eps")) spec.hyper.eps = cfg.get_double("optimizer.eps", 1e-8);
  }
  return spec;
}

// ---------------------------------------------------------------------------
// evaluation runs
// ---------------------------------------------------------------------------

namespace {

// One optimization run. Step-t losses are F(theta_t) on step t's sample
// (step 0 records the initial loss, a byproduct of the first gradient).
RunRecord run_once(const Optimizee& task, const OptimizerSpec& spec,
                   const OptimizerCore* learned, int64_t steps, uint64_t seed, uint64_t run_idx) {
  RunRecord rec;
  rec.step_loss.assign(static_cast<size_t>(steps), std::numeric_limits<double>::infinity());
  rec.step_max_dtheta.assign(static_cast<size_t>(steps), 0.0);

  RandomStream init_rng(seed + 0x9e01 * run_idx, 0x1);
  std::vector<Tensor> theta = task.init_params(init_rng);
  CoordLayout layout(task.param_spec());

  std::unique_ptr<ClassicOptimizer> classic;
  std::unique_ptr<OptimizerCore> core;
  CoordState state;
  if (learned) {
    core = learned->clone();
    state = CoordState::init(layout.total, core->state_layers());
  } else {
    std::vector<std::vector<int>> shapes;
    for (const auto& s : task.param_spec()) shapes.push_back(s.shape);
    classic = std::make_unique<ClassicOptimizer>(classic_kind_from_name(spec.id), spec.hyper,
                                                 std::move(shapes));
  }

  const uint64_t sample_seed = seed + 0x51f7 * run_idx;
  RandomStream sample_rng(sample_seed, 0x2);
  Tensor g_flat;
  Sample last_sample;
  int64_t t = 0;
  for (t = 0; t < steps; t++) {
    Sample d = task.draw_sample(sample_rng);
    EvalResult eg = task.loss_and_grad(theta, d);
    rec.step_loss[static_cast<size_t>(t)] = eg.loss;  // F(theta_t) pre-update
    if (!std::isfinite(eg.loss)) {
      rec.diverged = true;
      rec.diverged_step = t;
      break;
    }
    double step_max = 0.0;
    if (learned) {
      layout.flatten(eg.grads, g_flat);
      Tensor feats = optimizer_features(*core, state, g_flat);
      Tensor delta = core->step_values(state, feats);
      for (size_t p = 0; p < theta.size(); p++) {
        const double* dsrc = delta.data() + layout.offsets[p];
        double* th = theta[p].data();
        for (int64_t i = 0; i < theta[p].numel(); i++) {
          th[i] += dsrc[i];
          step_max = std::max(step_max, std::abs(dsrc[i]));
        }
      }
    } else {
      std::vector<Tensor> deltas = classic->step(eg.grads);
      for (size_t p = 0; p < theta.size(); p++) {
        for (int64_t i = 0; i < theta[p].numel(); i++) {
          theta[p][i] += deltas[p][i];
          step_max = std::max(step_max, std::abs(deltas[p][i]));
        }
      }
    }
    rec.step_max_dtheta[static_cast<size_t>(t)] = step_max;
    rec.max_abs_dtheta = std::max(rec.max_abs_dtheta, step_max);
    bool bounded = true;
    for (const Tensor& th : theta)
      if (!th.all_finite()) bounded = false;
    if (!bounded) {
      rec.diverged = true;
      rec.diverged_step = t;
      break;
    }
    last_sample = std::move(d);
  }

  if (rec.diverged) {
    rec.final_loss = std::numeric_limits<double>::infinity();
    rec.final_avg_loss = std::numeric_limits<double>::infinity();
    return rec;
  }

  // Frozen-final protocol: freeze theta and average the loss over every
  // sample encountered during the run (replayed from the sample stream).
  rec.final_loss = task.loss_value(theta, last_sample);
  RandomStream replay_rng(sample_seed, 0x2);
  double acc = 0.0;
  for (int64_t s = 0; s < steps; s++) {
    Sample d = task.draw_sample(replay_rng);
    acc += task.loss_value(theta, d);
  }
  rec.final_avg_loss = acc / static_cast<double>(steps);
  return rec;
}

void parallel_runs(int repeats, int threads, const std::function<void(int)>& body) {
  if (threads <= 1) {
    for (int r = 0; r < repeats; r++) body(r);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<int> next{0};
  for (int w = 0; w < threads; w++)
    pool.emplace_back([&]() {
      for (;;) {
        int r = next.fetch_add(1);
        if (r >= repeats) return;
        body(r);
      }
    });
  for (auto& th : pool) th.join();
}

}  // namespace

RunSet run_training(const RunSpec& spec, const Environment& env, const Config& cfg) {
  std::shared_ptr<Optimizee> task = make_task(spec.task_id, env, cfg);
  std::unique_ptr<OptimizerCore> learned;
  if (spec.optimizer.learned()) {
    learned = load_checkpoint(spec.optimizer.checkpoint);
    std::string want = spec.optimizer.id == "rnnprop" ? "rnnprop" : "dm";
    if (core_kind_name(learned->kind()) != want)
      throw Error(ErrorCategory::Checkpoint, "bad_model",
                  "checkpoint holds '" + std::string(core_kind_name(learned->kind())) +
                      "', expected '" + want + "'");
  }

  RunSet rs;
  rs.runs.resize(static_cast<size_t>(spec.repeats));
  if (learned) rs.phi_hash_before = learned->phi_hash();
  parallel_runs(spec.repeats, spec.threads, [&](int r) {
    rs.runs[static_cast<size_t>(r)] =
        run_once(*task, spec.optimizer, learned.get(), spec.steps, spec.seed,
                 static_cast<uint64_t>(r));
  });
  if (learned) {
    rs.phi_hash_after = learned->phi_hash();
    if (rs.phi_hash_after != rs.phi_hash_before)
      throw Error(ErrorCategory::Runtime, "phi_mutated",
                  "evaluation must not update learned-optimizer parameters");
  }
  return rs;
}

void write_trajectories_csv(const RunSet& rs, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCategory::Data, "write_failed", "cannot write " + path.string());
  f << "run,step,loss,max_abs_step\n";
  for (size_t r = 0; r < rs.runs.size(); r++)
    for (size_t t = 0; t < rs.runs[r].step_loss.size(); t++)
      f << r << ',' << t << ',' << fmt_double(rs.runs[r].step_loss[t]) << ','
        << fmt_double(rs.runs[r].step_max_dtheta[t]) << '\n';
}

void write_finals_csv(const RunSet& rs, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCategory::Data, "write_failed", "cannot write " + path.string());
  f << "run,final_loss,final_avg_loss,max_abs_dtheta,diverged,diverged_step\n";
  for (size_t r = 0; r < rs.runs.size(); r++) {
    const RunRecord& rec = rs.runs[r];
    f << r << ',' << fmt_double(rec.final_loss) << ',' << fmt_double(rec.final_avg_loss) << ','
      << fmt_double(rec.max_abs_dtheta) << ',' << (rec.diverged ? 1 : 0) << ','
      << rec.diverged_step << '\n';
  }
}

// ---------------------------------------------------------------------------
// learning-rate sweep
// ---------------------------------------------------------------------------

static double median_of(std::vector<double> xs) {
  if (xs.empty()) return std::numeric_limits<double>::infinity();
  std::sort(xs.begin(), xs.end());
  size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

std::vector<SweepRow> lr_sweep(const std::string& task_id, const std::string& optimizer_id,
                               const std::vector<double>& grid, int64_t steps, int repeats,
                               uint64_t seed, int threads, const Environment& env,
                               const Config& cfg) {
  if (grid.size() < 5)
    throw Error(ErrorCategory::Config, "bad_grid", "lr_sweep: need a grid of >= 5 rates");
  for (double lr : grid)
    if (!(lr > 0.0))
      throw Error(ErrorCategory::Config, "bad_grid", "lr_sweep: rates must be positive");

  std::vector<SweepRow> rows;
  for (double lr : grid) {
    RunSpec spec;
    spec.task_id = task_id;
    spec.optimizer.id = optimizer_id;
    spec.optimizer.hyper = default_hyper(classic_kind_from_name(optimizer_id), lr);
    spec.steps = steps;
    spec.repeats = repeats;
    spec.seed = seed;
    spec.threads = threads;
    RunSet rs = run_training(spec, env, cfg);
    SweepRow row;
    row.lr = lr;
    std::vector<double> finals;
    for (const RunRecord& r : rs.runs) {
      if (r.diverged)
        row.diverged++;
      else
        finals.push_back(r.final_avg_loss);
    }
    if (finals.empty()) {
      row.mean_final_avg_loss = std::numeric_limits<double>::infinity();
      row.median_final_avg_loss = std::numeric_limits<double>::infinity();
    } else {
      double s = 0.0;
      for (double v : finals) s += v;
      row.mean_final_avg_loss = s / static_cast<double>(finals.size());
      row.median_final_avg_loss = median_of(finals);
    }
    rows.push_back(row);
  }
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCategory::Data, "write_failed", "cannot write " + path.string());
  f << "lr,mean_final_avg_loss,median_final_avg_loss,diverged\n";
  for (const SweepRow& r : rows)
    f << fmt_double(r.lr) << ',' << fmt_double(r.mean_final_avg_loss) << ','
      << fmt_double(r.median_final_avg_loss) << ',' << r.diverged << '\n';
}

// ---------------------------------------------------------------------------
// control experiment
// ---------------------------------------------------------------------------

ControlVariant control_variant(const std::string& name) {
  ControlVariant v;
  v.name = name;
  if (name == "rnnprop") {
    v.core = CoreKind::RnnProp;
  } else if (name == "rnnprop-no-rs") {
    v.core = CoreKind::RnnProp;
    v.random_scaling = false;
  } else if (name == "rnnprop-no-cc") {
    v.core = CoreKind::RnnProp;
    v.convex_companion = false;
  } else if (name == "dm") {
    v.core = CoreKind::Dm;
    v.random_scaling = false;
    v.convex_companion = false;
    v.weights = MetaWeightScheme::Uniform;
  } else if (name == "dm-with-tricks") {
    v.core = CoreKind::Dm;
    v.weights = MetaWeightScheme::Uniform;
  } else {
    throw Error(ErrorCategory::Config, "bad_variant", "unknown control variant '" + name + "'");
  }
  return v;
}

ControlSettings ControlSettings::from_config(const Config& cfg) {
  ControlSettings s;
  if (cfg.has("control.variants")) s.variants = cfg.get_strs("control.variants");
  s.budget = cfg.get_int("control.budget", s.budget);
  if (cfg.has("control.budgets")) {
    // optional per-variant budgets; the protocol requires them equal
    auto budgets = cfg.get_doubles("control.budgets");
    for (double b : budgets)
      if (static_cast<int64_t>(b) != static_cast<int64_t>(budgets[0]))
        throw Error(ErrorCategory::Config, "budget_mismatch",
                    "control: variants must share one meta-iteration budget");
    if (!budgets.empty()) s.budget = static_cast<int64_t>(budgets[0]);
  }
  if (cfg.has("control.fractions")) s.fractions = cfg.get_doubles("control.fractions");
  if (cfg.has("control.eval_tasks")) s.eval_tasks = cfg.get_strs("control.eval_tasks");
  s.eval_steps = cfg.get_int("control.eval_steps", s.eval_steps);
  s.eval_repeats = static_cast<int>(cfg.get_int("control.eval_repeats", s.eval_repeats));
  s.adam_reference_lr = cfg.get_double("control.adam_lr", s.adam_reference_lr);
  s.seed = static_cast<uint64_t>(cfg.get_int("control.seed", static_cast<int64_t>(s.seed)));
  s.threads = static_cast<int>(cfg.get_int("control.threads", s.threads));
  return s;
}

ControlResult control_experiment(const ControlSettings& settings, const Environment& env,
                                 const Config& cfg, const std::filesystem::path& work_dir) {
  namespace fs = std::filesystem;
  ControlResult result;
  std::shared_ptr<Optimizee> base = make_task("base-mlp", env, cfg);

  int64_t ckpt_every = std::max<int64_t>(1, settings.budget / 4);
  for (const std::string& vname : settings.variants) {
    ControlVariant variant = control_variant(vname);
    MetaConfig mc;
    mc.use_random_scaling = variant.random_scaling;
    mc.use_convex_companion = variant.convex_companion;
    mc.weights = variant.weights;
    mc.meta_lr = cfg.get_double("meta.lr", mc.meta_lr);
    mc.horizon = static_cast<int>(cfg.get_int("meta.horizon", mc.horizon));
    mc.periods = static_cast<int>(cfg.get_int("meta.periods", mc.periods));
    mc.checkpoint_every = static_cast<int>(ckpt_every);

    RandomStream init_rng(settings.seed, 0x77);
    MetaTrainer trainer(make_core_random(variant.core, init_rng), mc,
                        [base](RandomStream&) { return base; }, settings.seed);
    fs::path vdir = work_dir / ("variant_" + vname);
    fs::create_directories(vdir);
    std::ofstream log(vdir / "train_log.csv", std::ios::binary);
    MetaTrainResult tr = trainer.train(settings.budget, vdir, &log);

    for (double frac : settings.fractions) {
      int64_t want = static_cast<int64_t>(frac * static_cast<double>(settings.budget));
      // snapshot at the checkpoint nearest the requested fraction
      const CheckpointRecord* best = nullptr;
      for (const auto& c : tr.checkpoints)
        if (!best || std::llabs(c.iteration - want) < std::llabs(best->iteration - want)) best = &c;
      if (!best) continue;
      for (const std::string& task_id : settings.eval_tasks) {
        RunSpec rspec;
        rspec.task_id = task_id;
        rspec.optimizer.id = variant.core == CoreKind::Dm ? "dm" : "rnnprop";
        rspec.optimizer.checkpoint = best->dir;
        rspec.steps = settings.eval_steps;
        rspec.repeats = settings.eval_repeats;
        rspec.seed = settings.seed + 0xe7a1;
        rspec.threads = settings.threads;
        RunSet rs = run_training(rspec, env, cfg);
        std::vector<double> finals;
        for (const RunRecord& r : rs.runs)
          finals.push_back(r.diverged ? std::numeric_limits<double>::infinity()
                                      : r.final_avg_loss);
        result.cells.push_back({vname, task_id, best->iteration, median_of(finals)});
      }
    }
  }

  // Adam reference column at the full budget row
  for (const std::string& task_id : settings.eval_tasks) {
    RunSpec rspec;
    rspec.task_id = task_id;
    rspec.optimizer.id = "adam";
    rspec.optimizer.hyper = default_hyper(ClassicKind::Adam, settings.adam_reference_lr);
    rspec.steps = settings.eval_steps;
    rspec.repeats = settings.eval_repeats;
    rspec.seed = settings.seed + 0xe7a1;
    rspec.threads = settings.threads;
    RunSet rs = run_training(rspec, env, cfg);
    std::vector<double> finals;
    for (const RunRecord& r : rs.runs)
      finals.push_back(r.diverged ? std::numeric_limits<double>::infinity() : r.final_avg_loss);
    result.adam_reference.push_back({"adam", task_id, settings.budget, median_of(finals)});
  }
  return result;
}

void write_control_csv(const ControlResult& result, const ControlSettings& settings,
                       const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCategory::Data, "write_failed", "cannot write " + path.string());
  f << "task,iterations,adam";
  for (const auto& v : settings.variants) f << ',' << v;
  f << '\n';
  for (const std::string& task : settings.eval_tasks) {
    for (double frac : settings.fractions) {
      int64_t want = static_cast<int64_t>(frac * static_cast<double>(settings.budget));
      // match cells by nearest recorded iteration
      const ControlCell* sample = nullptr;
      for (const auto& c : result.cells)
        if (c.task == task && (!sample || std::llabs(c.iterations - want) <
                                               std::llabs(sample->iterations - want)))
          sample = &c;
      if (!sample) continue;
      int64_t iters = sample->iterations;
      f << task << ',' << iters;
      double adam = std::numeric_limits<double>::quiet_NaN();
      for (const auto& c : result.adam_reference)
        if (c.task == task) adam = c.median_final_avg_loss;
      f << ',' << fmt_double(adam);
      for (const auto& vname : settings.variants) {
        double val = std::numeric_limits<double>::quiet_NaN();
        for (const auto& c : result.cells)
          if (c.variant == vname && c.task == task && c.iterations == iters)
            val = c.median_final_avg_loss;
        f << ',' << fmt_double(val);
      }
      f << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

void report_results(const std::filesystem::path& dir, const std::filesystem::path& out_json) {
  namespace fs = std::filesystem;
  if (!fs::exists(dir))
    throw Error(ErrorCategory::Data, "empty_results", "report: no such directory " + dir.string());
  nlohmann::json summary;
  summary["source"] = dir.string();
  nlohmann::json files = nlohmann::json::array();
  size_t n_files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().filename() != "finals.csv") continue;
    n_files++;
    std::ifstream f(entry.path());
    std::string line;
    std::getline(f, line);  // header
    std::vector<double> finals;
    int diverged = 0;
    while (std::getline(f, line)) {
      // run,final_loss,final_avg_loss,max_abs_dtheta,diverged,diverged_step
      std::vector<std::string> cols;
      size_t pos = 0;
      while (pos <= line.size()) {
        size_t comma = line.find(',', pos);
        if (comma == std::string::npos) {
          cols.push_back(line.substr(pos));
          break;
        }
        cols.push_back(line.substr(pos, comma - pos));
        pos = comma + 1;
      }
      if (cols.size() < 6) continue;
      if (cols[4] == "1")
        diverged++;
      else
        finals.push_back(std::stod(cols[2]));
    }
    nlohmann::json entry_json;
    entry_json["file"] = entry.path().string();
    entry_json["runs"] = finals.size() + static_cast<size_t>(diverged);
    entry_json["diverged"] = diverged;
    if (!finals.empty()) {
      double s = 0.0;
      for (double v : finals) s += v;
      entry_json["mean_final_avg_loss"] = s / static_cast<double>(finals.size());
      entry_json["median_final_avg_loss"] = median_of(finals);
    }
    files.push_back(entry_json);
  }
  if (n_files == 0)
    throw Error(ErrorCategory::Data, "empty_results",
                "report: no finals.csv under " + dir.string());
  summary["files"] = files;
  std::ofstream out(out_json, std::ios::binary);
  if (!out) throw Error(ErrorCategory::Data, "write_failed", "cannot write " + out_json.string());
  out << summary.dump(2) << "\n";
}

}  // namespace lopt
