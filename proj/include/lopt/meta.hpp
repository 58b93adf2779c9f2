#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "lopt/optim.hpp"
#include "lopt/optimizee.hpp"
#include "lopt/rnn_optimizer.hpp"

namespace lopt {

// Coordinatewise random scaling factors c_i = exp(p_i), p_i ~ U[-L, L].
Tensor sample_scaling(int64_t dim, double L, RandomStream& rng);

// f_c(theta) = f(c . theta); the wrapper's init rule divides theta0 by c,
// so the initial loss is preserved.
std::shared_ptr<Optimizee> apply_random_scaling(std::shared_ptr<const Optimizee> f,
                                                const Tensor& c);

// F(theta, x) = f_c(theta) + g_c(x) (no cross terms).
std::shared_ptr<Optimizee> combine_with_convex(std::shared_ptr<const Optimizee> f_c,
                                               std::shared_ptr<const Optimizee> g_c);

enum class MetaWeightScheme { FinalOnly, Uniform };

struct MetaConfig {
  int horizon = 100;
  int periods = 5;  // period_len = horizon / periods
  MetaWeightScheme weights = MetaWeightScheme::FinalOnly;
  double meta_lr = 1e-3;
  double scale_l_f = 3.0;
  double scale_l_g = 1.0;
  int n_convex = 20;
  bool use_random_scaling = true;
  bool use_convex_companion = true;
  int checkpoint_every = 1000;
  double selection_decay = 0.9;
  double divergence_threshold = 1e6;
  int max_resamples = 10;

  int period_len() const;
  double weight_at(int t) const;  // t in 1..horizon
};

struct CheckpointRecord {
  int64_t iteration = 0;
  double moving_avg = 0.0;
  std::filesystem::path dir;
};

// Index into `history` of the checkpoint with the lowest moving-average
// train loss (ties keep the earliest).
size_t checkpoint_select(const std::vector<CheckpointRecord>& history);

struct MetaIterationResult {
  double meta_loss = 0.0;  // sum w_t F(theta_t) / sum w_t over the horizon
  int resamples = 0;
};

struct MetaTrainResult {
  std::vector<CheckpointRecord> checkpoints;  // excludes the iteration-0 snapshot
  std::filesystem::path initial_dir;          // untrained-phi snapshot
  size_t selected = 0;                        // index into checkpoints
  double final_moving_avg = 0.0;
  int64_t total_resamples = 0;
};

// Trains learned-optimizer parameters phi by truncated BPTT over unrolled
// training of a freshly sampled objective per iteration. The horizon splits
// into `periods` windows; each window unrolls on its own tape, backpropagates
// its share of the meta-loss to phi, applies one Adam update, and carries
// (theta, h, c, m, v) values forward detached. Gradient features g_t enter
// the tape as constants (first-order meta-gradients).
class MetaTrainer {
 public:
  // base_factory samples the per-iteration base objective (tasks with random
  // hyperparameters draw them here; fixed tasks return the same object).
  using BaseFactory = std::function<std::shared_ptr<const Optimizee>(RandomStream&)>;

  MetaTrainer(std::unique_ptr<OptimizerCore> core, MetaConfig config, BaseFactory base_factory,
              uint64_t seed);

  MetaIterationResult iterate();
  MetaTrainResult train(int64_t iterations, const std::filesystem::path& out_dir,
                        std::ostream* log_csv = nullptr);

  const OptimizerCore& core() const { return *core_; }
  OptimizerCore& core() { return *core_; }
  double moving_avg() const { return moving_avg_; }
  int64_t iteration() const { return iteration_; }

 private:
  struct Instance {
    std::shared_ptr<const Optimizee> objective;
    std::vector<Tensor> theta;
    CoordState state;
    CoordLayout layout;
    RandomStream sample_rng;
    Instance(std::shared_ptr<const Optimizee> obj, std::vector<Tensor> th, CoordState st,
             RandomStream rng)
        : objective(std::move(obj)), theta(std::move(th)), state(std::move(st)),
          layout(objective->param_spec()), sample_rng(rng) {}
  };

  Instance sample_instance();
  // Runs one period. Returns false if the unroll diverged. Appends the
  // period's weighted loss sum into loss_acc.
  bool run_period(Instance& inst, int t0, std::vector<Tensor>* phi_grads, double* loss_acc);

  std::unique_ptr<OptimizerCore> core_;
  MetaConfig cfg_;
  BaseFactory base_factory_;
  RandomStream rng_;
  std::unique_ptr<ClassicOptimizer> meta_adam_;
  double moving_avg_ = 0.0;
  bool moving_avg_init_ = false;
  int64_t iteration_ = 0;
  int64_t total_resamples_ = 0;

  friend struct MetaProbe;
};

// Test access: a single unrolled meta-gradient evaluation without updating
// phi, plus a loss-only replay with a frozen gradient-feature sequence (the
// finite-difference oracle must see the same first-order semantics the tape
// uses, i.e. g_t held fixed).
struct MetaProbe {
  double loss = 0.0;
  std::vector<Tensor> phi_grad;
  std::vector<Tensor> g_sequence;

  static MetaProbe run(OptimizerCore& core, const Optimizee& objective,
                       const std::vector<Tensor>& theta0, const MetaConfig& cfg,
                       uint64_t sample_seed);
  static double replay_loss(const OptimizerCore& core, const Optimizee& objective,
                            const std::vector<Tensor>& theta0, const MetaConfig& cfg,
                            uint64_t sample_seed, const std::vector<Tensor>& g_sequence);
};

}  // namespace lopt
