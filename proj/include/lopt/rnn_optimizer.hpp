#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lopt/optimizee.hpp"
#include "lopt/tape.hpp"
#include "lopt/tensor.hpp"

namespace lopt {

enum class CoreKind { RnnProp, Dm, LinearFeature };
const char* core_kind_name(CoreKind k);

enum class FeatureKind { AdamNormalized, DmLogSign };

// Per-coordinate optimizer state: Adam-style moment accumulators plus one
// packed [h | c] block (n x 40) per LSTM layer. One row per coordinate.
struct CoordState {
  Tensor m, v;              // n
  std::vector<Tensor> hc;   // n x 40 per layer
  int64_t t = 0;

  static CoordState init(int64_t n_coords, int layers);
  int64_t coords() const { return m.numel(); }
};

// Eqs-style normalized features: m <- b1*m + (1-b1)*g, v <- b2*v + (1-b2)*g^2,
// hat values bias-corrected with the shared step counter, and
// mt = mhat / (sqrt(vhat) + eps), gt = g / (sqrt(vhat) + eps).
// Returns (n x 2) with column 0 = mt, column 1 = gt. Increments state.t.
Tensor compute_inputs(CoordState& state, const Tensor& g_flat, double beta1, double beta2,
                      double eps);

// Log-magnitude/sign preprocessing of the raw gradient:
// |g| >= e^-p: (log|g|/p, sign(g)); else (-1, e^p * g). Returns (n x 2).
Tensor dm_preprocess(const Tensor& g_flat, double p);

// Test hook: replaces the network output x_out with coeff * features[:, column].
struct OutputOverride {
  int column = 0;
  double coeff = 0.01;
};

// A coordinatewise learned optimizer: shared parameters phi applied
// independently to every coordinate. step_values is the fast path for
// evaluation; step_on_tape records the identical arithmetic for
// meta-gradients. phi ordering is fixed and shared by both paths and the
// checkpoint format.
class OptimizerCore {
 public:
  virtual ~OptimizerCore() = default;
  virtual CoreKind kind() const = 0;
  virtual FeatureKind feature_kind() const = 0;
  virtual int state_layers() const = 0;
  virtual double feature_beta1() const { return 0.95; }
  virtual double feature_beta2() const { return 0.95; }
  virtual double feature_eps() const { return 1e-8; }

  virtual std::vector<ParamSpec> phi_spec() const = 0;
  virtual std::vector<Tensor*> phi() = 0;
  std::vector<const Tensor*> phi_view() const;
  virtual std::unique_ptr<OptimizerCore> clone() const = 0;

  // features: (n x 2). Returns the flat increment (n). Mutates state.hc.
  virtual Tensor step_values(CoordState& state, const Tensor& features,
                             const OutputOverride* override_out = nullptr) const = 0;
  // Same arithmetic on a tape; phi_nodes follow phi_spec() order, hc_nodes
  // are replaced with the new state nodes.
  virtual Value step_on_tape(Tape& tape, std::span<const Value> phi_nodes,
                             std::vector<Value>& hc_nodes, Value features) const = 0;

  uint64_t phi_hash() const;  // FNV over parameter bytes (frozen-phi checks)
};

// Two-layer coordinatewise LSTM over normalized gradient features, with a
// 2->20 elu preprocessing layer and a tanh-bounded readout:
// delta = alpha * tanh(x_out), so |delta| < alpha always.
class RnnPropCore : public OptimizerCore {
 public:
  struct Params {
    Tensor w_pre;  // 2 x 20
    Tensor b_pre;  // 20
    Tensor w1;     // 40 x 80
    Tensor b1;     // 80
    Tensor w2;     // 40 x 80
    Tensor b2;     // 80
    Tensor w_out;  // 20 x 1
    Tensor b_out;  // 1
  };

  RnnPropCore();  // zero-initialized parameters
  static std::unique_ptr<RnnPropCore> random_init(RandomStream& rng);

  CoreKind kind() const override { return CoreKind::RnnProp; }
  FeatureKind feature_kind() const override { return FeatureKind::AdamNormalized; }
  int state_layers() const override { return 2; }
  std::vector<ParamSpec> phi_spec() const override;
  std::vector<Tensor*> phi() override;
  std::unique_ptr<OptimizerCore> clone() const override;
  Tensor step_values(CoordState& state, const Tensor& features,
                     const OutputOverride* override_out = nullptr) const override;
  Value step_on_tape(Tape& tape, std::span<const Value> phi_nodes,
                     std::vector<Value>& hc_nodes, Value features) const override;

  double alpha() const { return alpha_; }
  Params& params() { return p_; }
  const Params& params() const { return p_; }

 private:
  Params p_;
  double alpha_ = 0.1;
};

// Baseline model: the same two-layer coordinatewise LSTM skeleton, raw
// gradients with log/sign preprocessing as input, unbounded affine output.
class DmCore : public OptimizerCore {
 public:
  struct Params {
    Tensor w1;     // 22 x 80
    Tensor b1;     // 80
    Tensor w2;     // 40 x 80
    Tensor b2;     // 80
    Tensor w_out;  // 20 x 1
    Tensor b_out;  // 1
  };

  DmCore();
  static std::unique_ptr<DmCore> random_init(RandomStream& rng);

  CoreKind kind() const override { return CoreKind::Dm; }
  FeatureKind feature_kind() const override { return FeatureKind::DmLogSign; }
  int state_layers() const override { return 2; }
  std::vector<ParamSpec> phi_spec() const override;
  std::vector<Tensor*> phi() override;
  std::unique_ptr<OptimizerCore> clone() const override;
  Tensor step_values(CoordState& state, const Tensor& features,
                     const OutputOverride* override_out = nullptr) const override;
  Value step_on_tape(Tape& tape, std::span<const Value> phi_nodes,
                     std::vector<Value>& hc_nodes, Value features) const override;

  double p_scale() const { return p_scale_; }
  Params& params() { return p_; }
  const Params& params() const { return p_; }

 private:
  Params p_;
  double p_scale_ = 10.0;
};

// Stateless 3-parameter probe (w_m, w_g, bias): delta = alpha * tanh(F w + b).
// Small enough for finite-difference meta-gradient checks.
class LinearFeatureCore : public OptimizerCore {
 public:
  LinearFeatureCore();

  CoreKind kind() const override { return CoreKind::LinearFeature; }
  FeatureKind feature_kind() const override { return FeatureKind::AdamNormalized; }
  int state_layers() const override { return 0; }
  std::vector<ParamSpec> phi_spec() const override;
  std::vector<Tensor*> phi() override;
  std::unique_ptr<OptimizerCore> clone() const override;
  Tensor step_values(CoordState& state, const Tensor& features,
                     const OutputOverride* override_out = nullptr) const override;
  Value step_on_tape(Tape& tape, std::span<const Value> phi_nodes,
                     std::vector<Value>& hc_nodes, Value features) const override;

  double alpha() const { return alpha_; }
  Tensor& weights() { return w_; }
  Tensor& bias() { return b_; }

 private:
  Tensor w_;  // 2 x 1
  Tensor b_;  // 1
  double alpha_ = 0.1;
};

std::unique_ptr<OptimizerCore> make_core(CoreKind kind);
std::unique_ptr<OptimizerCore> make_core_random(CoreKind kind, RandomStream& rng);

// Dispatches to the core's feature scheme; increments state.t either way.
Tensor optimizer_features(const OptimizerCore& core, CoordState& state, const Tensor& g_flat);

// Checkpoint directory: manifest.json (format_version, model, tensor names,
// shapes, offsets) plus params.bin of raw little-endian 64-bit floats.
void save_checkpoint(const std::filesystem::path& dir, const OptimizerCore& core,
                     int64_t iteration = -1, double moving_avg_loss = 0.0);
std::unique_ptr<OptimizerCore> load_checkpoint(const std::filesystem::path& dir);

}  // namespace lopt
