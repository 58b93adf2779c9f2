#include "lopt/meta.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <utility>

namespace lopt {

Tensor sample_scaling(int64_t dim, double L, RandomStream& rng) {
  if (!(L > 0.0))
    throw Error(ErrorCategory::Config, "bad_scale", "sample_scaling: L must be positive");
  Tensor c(std::vector<int>{static_cast<int>(dim)});
  for (int64_t i = 0; i < dim; i++) c[i] = std::exp(rng.uniform(-L, L));
  return c;
}

std::shared_ptr<Optimizee> apply_random_scaling(std::shared_ptr<const Optimizee> f,
                                                const Tensor& c) {
  return std::make_shared<ScaledOptimizee>(std::move(f), c);
}

std::shared_ptr<Optimizee> combine_with_convex(std::shared_ptr<const Optimizee> f_c,
                                               std::shared_ptr<const Optimizee> g_c) {
  return std::make_shared<CombinedOptimizee>(std::move(f_c), std::move(g_c));
}

int MetaConfig::period_len() const {
  if (periods <= 0 || horizon % periods != 0)
    throw Error(ErrorCategory::Config, "bad_horizon",
                "meta: horizon " + std::to_string(horizon) + " not divisible into " +
                    std::to_string(periods) + " periods");
  return horizon / periods;
}

double MetaConfig::weight_at(int t) const {
  switch (weights) {
    case MetaWeightScheme::FinalOnly: return t == horizon ? 1.0 : 0.0;
    case MetaWeightScheme::Uniform: return 1.0;
  }
  return 0.0;
}

size_t checkpoint_select(const std::vector<CheckpointRecord>& history) {
  if (history.empty())
    throw Error(ErrorCategory::Runtime, "empty_history", "checkpoint_select: no checkpoints");
  size_t best = 0;
  for (size_t i = 1; i < history.size(); i++)
    if (history[i].moving_avg < history[best].moving_avg) best = i;
  return best;
}

// ---------------------------------------------------------------------------
// shared unroll window
// ---------------------------------------------------------------------------

namespace {

bool theta_in_bounds(std::span<const Tensor> theta, double threshold) {
  for (const Tensor& t : theta)
    for (int64_t i = 0; i < t.numel(); i++)
      if (!std::isfinite(t[i]) || std::abs(t[i]) > threshold) return false;
  return true;
}

struct WindowIo {
  std::vector<Tensor>* record_g = nullptr;        // appended per step
  const std::vector<Tensor>* replay_g = nullptr;  // indexed by t-1
};

// One BPTT window over steps t_first..t_last. Weighted loss terms w_t
// F(theta_t) are evaluated after the step-t update, on step t's sample.
// When phi_grads is non-null the window records a tape and backpropagates
// scale(sum_t w_t F(theta_t), 1/horizon) to phi; otherwise it runs in value
// mode. Returns false on divergence.
bool unroll_window(OptimizerCore& core, const Optimizee& objective, CoordLayout& layout,
                   std::vector<Tensor>& theta, CoordState& state, RandomStream& sample_rng,
                   const MetaConfig& cfg, int t_first, int t_last,
                   std::vector<Tensor>* phi_grads, double* weighted_loss_sum,
                   const WindowIo& io = {}) {
  const auto& spec = objective.param_spec();
  Tensor g_flat;

  if (phi_grads == nullptr) {
    for (int t = t_first; t <= t_last; t++) {
      Sample d = objective.draw_sample(sample_rng);
      if (io.replay_g) {
        g_flat = (*io.replay_g)[static_cast<size_t>(t - 1)];
      } else {
        EvalResult eg = objective.loss_and_grad(theta, d);
        layout.flatten(eg.grads, g_flat);
      }
      if (io.record_g) io.record_g->push_back(g_flat);
      Tensor feats = optimizer_features(core, state, g_flat);
      Tensor delta = core.step_values(state, feats);
      for (size_t p = 0; p < theta.size(); p++) {
        const double* dsrc = delta.data() + layout.offsets[p];
        double* th = theta[p].data();
        for (int64_t i = 0; i < theta[p].numel(); i++) th[i] += dsrc[i];
      }
      if (!theta_in_bounds(theta, cfg.divergence_threshold)) return false;
      double w = cfg.weight_at(t);
      if (w != 0.0 && weighted_loss_sum) *weighted_loss_sum += w * objective.loss_value(theta, d);
    }
    return true;
  }

  Tape tape;
  std::vector<Value> phi_nodes;
  for (Tensor* t : core.phi()) phi_nodes.push_back(tape.param(*t));
  std::vector<Value> hc_nodes;
  for (const Tensor& hc : state.hc) hc_nodes.push_back(tape.constant(hc));
  std::vector<Value> theta_nodes;
  for (const Tensor& th : theta) theta_nodes.push_back(tape.constant(th));

  Value acc;
  bool has_acc = false;
  std::vector<Tensor> theta_vals(theta.size());
  for (int t = t_first; t <= t_last; t++) {
    Sample d = objective.draw_sample(sample_rng);
    for (size_t p = 0; p < theta_nodes.size(); p++) theta_vals[p] = tape.value(theta_nodes[p]);
    if (io.replay_g) {
      g_flat = (*io.replay_g)[static_cast<size_t>(t - 1)];
    } else {
      EvalResult eg = objective.loss_and_grad(theta_vals, d);
      layout.flatten(eg.grads, g_flat);
    }
    if (io.record_g) io.record_g->push_back(g_flat);
    // g_t enters the tape as a constant: meta-gradients are first-order.
    Tensor feats = optimizer_features(core, state, g_flat);
    Value fnode = tape.constant(std::move(feats));
    Value delta = core.step_on_tape(tape, phi_nodes, hc_nodes, fnode);
    for (size_t p = 0; p < theta_nodes.size(); p++)
      theta_nodes[p] = add(theta_nodes[p], slice_flat(delta, layout.offsets[p], spec[p].shape));
    for (size_t p = 0; p < theta_nodes.size(); p++) theta_vals[p] = tape.value(theta_nodes[p]);
    if (!theta_in_bounds(theta_vals, cfg.divergence_threshold)) return false;
    double w = cfg.weight_at(t);
    if (w != 0.0) {
      Value f = objective.loss_on_tape(tape, theta_nodes, d);
      if (!std::isfinite(tape.value(f).item())) return false;
      if (weighted_loss_sum) *weighted_loss_sum += w * tape.value(f).item();
      Value term = scale(f, w);
      acc = has_acc ? add(acc, term) : term;
      has_acc = true;
    }
  }

  phi_grads->clear();
  if (has_acc) {
    Value root = scale(acc, 1.0 / cfg.horizon);
    Gradients g = tape.backward(root);
    for (Value pn : phi_nodes) phi_grads->push_back(g.at(pn));
  } else {
    for (Tensor* t : core.phi()) phi_grads->push_back(Tensor(t->shape()));
  }
  for (size_t l = 0; l < state.hc.size(); l++) state.hc[l] = tape.value(hc_nodes[l]);
  for (size_t p = 0; p < theta.size(); p++) theta[p] = tape.value(theta_nodes[p]);
  return true;
}

}  // namespace

// ---------------------------------------------------------------------------
// MetaTrainer
// ---------------------------------------------------------------------------

MetaTrainer::MetaTrainer(std::unique_ptr<OptimizerCore> core, MetaConfig config,
                         BaseFactory base_factory, uint64_t seed)
    : core_(std::move(core)), cfg_(config), base_factory_(std::move(base_factory)),
      rng_(seed, /*stream=*/0x3e7a) {
  cfg_.period_len();  // validates horizon/periods
  std::vector<std::vector<int>> shapes;
  for (const Tensor* t : core_->phi_view()) shapes.push_back(t->shape());
  meta_adam_ = std::make_unique<ClassicOptimizer>(
      ClassicKind::Adam, default_hyper(ClassicKind::Adam, cfg_.meta_lr), shapes);
}

MetaTrainer::Instance MetaTrainer::sample_instance() {
  RandomStream iter_rng(rng_.raw(), 0x11);
  std::shared_ptr<const Optimizee> objective = base_factory_(iter_rng);
  if (cfg_.use_random_scaling) {
    Tensor c = sample_scaling(objective->coord_count(), cfg_.scale_l_f, iter_rng);
    objective = apply_random_scaling(objective, c);
  }
  if (cfg_.use_convex_companion) {
    Tensor v = Tensor::uniform({cfg_.n_convex}, iter_rng, -1.0, 1.0);
    std::shared_ptr<const Optimizee> companion = std::make_shared<ConvexCompanion>(std::move(v));
    if (cfg_.use_random_scaling) {
      Tensor cg = sample_scaling(cfg_.n_convex, cfg_.scale_l_g, iter_rng);
      companion = apply_random_scaling(companion, cg);
    }
    objective = combine_with_convex(objective, companion);
  }
  std::vector<Tensor> theta0 = objective->init_params(iter_rng);
  CoordState st = CoordState::init(objective->coord_count(), core_->state_layers());
  return Instance(std::move(objective), std::move(theta0), std::move(st),
                  RandomStream(iter_rng.raw(), 0x51));
}

bool MetaTrainer::run_period(Instance& inst, int t0, std::vector<Tensor>* phi_grads,
                             double* loss_acc) {
  int len = cfg_.period_len();
  bool any_weight = false;
  for (int t = t0; t < t0 + len; t++)
    if (cfg_.weight_at(t) != 0.0) any_weight = true;
  if (!any_weight) {
    bool ok = unroll_window(*core_, *inst.objective, inst.layout, inst.theta, inst.state,
                            inst.sample_rng, cfg_, t0, t0 + len - 1, nullptr, loss_acc);
    phi_grads->clear();
    for (Tensor* t : core_->phi()) phi_grads->push_back(Tensor(t->shape()));
    return ok;
  }
  return unroll_window(*core_, *inst.objective, inst.layout, inst.theta, inst.state,
                       inst.sample_rng, cfg_, t0, t0 + len - 1, phi_grads, loss_acc);
}

MetaIterationResult MetaTrainer::iterate() {
  // Snapshot phi and the meta-Adam slots so a diverged unroll can be
  // abandoned cleanly and resampled.
  std::vector<Tensor> phi_snapshot;
  for (const Tensor* t : core_->phi_view()) phi_snapshot.push_back(*t);
  ClassicOptimizer adam_snapshot = *meta_adam_;

  MetaIterationResult res;
  for (int attempt = 0;; attempt++) {
    if (attempt > cfg_.max_resamples)
      throw Error(ErrorCategory::Runtime, "diverged",
                  "meta_iteration: diverged " + std::to_string(attempt) + " times at iteration " +
                      std::to_string(iteration_ + 1));
    Instance inst = sample_instance();
    double loss_sum = 0.0;
    std::vector<Tensor> phi_grads;
    bool ok = true;
    for (int period = 0; period < cfg_.periods; period++) {
      int t0 = 1 + period * cfg_.period_len();
      if (!run_period(inst, t0, &phi_grads, &loss_sum)) {
        ok = false;
        break;
      }
      std::vector<Tensor> deltas = meta_adam_->step(phi_grads);
      auto phi = core_->phi();
      for (size_t i = 0; i < phi.size(); i++) tmath::add_inplace(*phi[i], deltas[i]);
    }
    double weight_total = 0.0;
    for (int t = 1; t <= cfg_.horizon; t++) weight_total += cfg_.weight_at(t);
    double meta_loss = loss_sum / weight_total;
    if (ok && std::isfinite(meta_loss)) {
      res.meta_loss = meta_loss;
      res.resamples = attempt;
      total_resamples_ += attempt;
      break;
    }
    std::fprintf(stderr,
                 "[meta] iteration %lld attempt %d diverged or non-finite; resampling\n",
                 static_cast<long long>(iteration_ + 1), attempt + 1);
    auto phi = core_->phi();
    for (size_t i = 0; i < phi.size(); i++) *phi[i] = phi_snapshot[i];
    *meta_adam_ = adam_snapshot;
  }
  iteration_ += 1;
  return res;
}

static std::filesystem::path checkpoint_dir(const std::filesystem::path& out, int64_t iter) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ckpt_%06lld", static_cast<long long>(iter));
  return out / buf;
}

MetaTrainResult MetaTrainer::train(int64_t iterations, const std::filesystem::path& out_dir,
                                   std::ostream* log_csv) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  MetaTrainResult result;
  result.initial_dir = checkpoint_dir(out_dir, 0);
  save_checkpoint(result.initial_dir, *core_, 0, 0.0);
  if (log_csv) *log_csv << "iteration,meta_loss,moving_avg\n";
  for (int64_t it = 1; it <= iterations; it++) {
    MetaIterationResult r = iterate();
    if (!moving_avg_init_) {
      moving_avg_ = r.meta_loss;
      moving_avg_init_ = true;
    } else {
      moving_avg_ = cfg_.selection_decay * moving_avg_ + (1.0 - cfg_.selection_decay) * r.meta_loss;
    }
    if (log_csv) {
      char line[128];
      std::snprintf(line, sizeof line, "%lld,%.17g,%.17g\n", static_cast<long long>(it),
                    r.meta_loss, moving_avg_);
      *log_csv << line;
    }
    if (it % cfg_.checkpoint_every == 0 || it == iterations) {
      auto dir = checkpoint_dir(out_dir, it);
      save_checkpoint(dir, *core_, it, moving_avg_);
      result.checkpoints.push_back({it, moving_avg_, dir});
    }
  }
  result.selected = checkpoint_select(result.checkpoints);
  result.final_moving_avg = moving_avg_;
  result.total_resamples = total_resamples_;
  return result;
}

// ---------------------------------------------------------------------------
// MetaProbe
// ---------------------------------------------------------------------------

MetaProbe MetaProbe::run(OptimizerCore& core, const Optimizee& objective,
                         const std::vector<Tensor>& theta0, const MetaConfig& cfg,
                         uint64_t sample_seed) {
  MetaProbe probe;
  CoordLayout layout(objective.param_spec());
  std::vector<Tensor> theta = theta0;
  CoordState state = CoordState::init(objective.coord_count(), core.state_layers());
  RandomStream sample_rng(sample_seed, 0x51);
  WindowIo io;
  io.record_g = &probe.g_sequence;
  double loss_sum = 0.0;
  bool ok = unroll_window(core, objective, layout, theta, state, sample_rng, cfg, 1, cfg.horizon,
                          &probe.phi_grad, &loss_sum, io);
  if (!ok)
    throw Error(ErrorCategory::Runtime, "diverged", "meta probe: unroll diverged");
  probe.loss = loss_sum / cfg.horizon;
  return probe;
}

double MetaProbe::replay_loss(const OptimizerCore& core, const Optimizee& objective,
                              const std::vector<Tensor>& theta0, const MetaConfig& cfg,
                              uint64_t sample_seed, const std::vector<Tensor>& g_sequence) {
  CoordLayout layout(objective.param_spec());
  std::vector<Tensor> theta = theta0;
  auto core_copy = core.clone();
  CoordState state = CoordState::init(objective.coord_count(), core.state_layers());
  RandomStream sample_rng(sample_seed, 0x51);
  WindowIo io;
  io.replay_g = &g_sequence;
  double loss_sum = 0.0;
  bool ok = unroll_window(*core_copy, objective, layout, theta, state, sample_rng, cfg, 1,
                          cfg.horizon, nullptr, &loss_sum, io);
  if (!ok)
    throw Error(ErrorCategory::Runtime, "diverged", "meta probe: replay diverged");
  return loss_sum / cfg.horizon;
}

}  // namespace lopt
