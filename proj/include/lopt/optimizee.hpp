#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "lopt/data.hpp"
#include "lopt/rng.hpp"
#include "lopt/tape.hpp"
#include "lopt/tensor.hpp"

namespace lopt {

struct ParamSpec {
  std::string name;
  std::vector<int> shape;
};

// One stochastic draw of an objective's data. MLP tasks carry
// {inputs, one-hot labels} plus the dataset indices (the frozen-final-loss
// protocol re-evaluates them); the sine task carries {inputs, targets};
// deterministic objectives carry nothing.
struct Sample {
  std::vector<Tensor> tensors;
  std::vector<int> indices;
};

struct EvalResult {
  double loss = 0.0;
  std::vector<Tensor> grads;
};

// An objective to minimize: named parameter shapes, an initialization rule,
// and a stochastic sample-dependent loss. eval is deterministic given
// (params, sample). Evaluations are pure and may run concurrently on
// distinct tapes.
class Optimizee {
 public:
  virtual ~Optimizee() = default;

  virtual const std::vector<ParamSpec>& param_spec() const = 0;
  virtual std::vector<Tensor> init_params(RandomStream& rng) const = 0;
  virtual Sample draw_sample(RandomStream& rng) const = 0;
  virtual Value loss_on_tape(Tape& tape, std::span<const Value> params,
                             const Sample& sample) const = 0;

  // Scratch-tape wrappers; the single evaluation code path is loss_on_tape.
  double loss_value(std::span<const Tensor> params, const Sample& sample) const;
  EvalResult loss_and_grad(std::span<const Tensor> params, const Sample& sample) const;

  int64_t coord_count() const;
};

// Flat coordinate layout over a parameter list (the coordinatewise
// optimizers see every optimizee as one long vector).
struct CoordLayout {
  explicit CoordLayout(const std::vector<ParamSpec>& spec);
  int64_t total = 0;
  std::vector<int64_t> offsets;
  void flatten(std::span<const Tensor> tensors, Tensor& flat) const;
  std::vector<Tensor> split(const Tensor& flat, const std::vector<ParamSpec>& spec) const;
};

enum class Activation { Sigmoid, Relu, Elu, Tanh };
Activation activation_from_name(const std::string& name);
const char* activation_name(Activation a);

struct MlpConfig {
  int hidden_layers = 1;
  int hidden_units = 20;
  Activation activation = Activation::Sigmoid;
  int input_dim = kImageDim;
  int classes = kClasses;
  int minibatch = 128;
};

// Softmax cross-entropy MLP over a dataset; biases included.
class MlpOptimizee : public Optimizee {
 public:
  MlpOptimizee(std::shared_ptr<const Dataset> data, MlpConfig cfg);
  const std::vector<ParamSpec>& param_spec() const override { return spec_; }
  std::vector<Tensor> init_params(RandomStream& rng) const override;
  Sample draw_sample(RandomStream& rng) const override;
  Value loss_on_tape(Tape& tape, std::span<const Value> params,
                     const Sample& sample) const override;
  Sample sample_at(const std::vector<int>& indices) const;
  const MlpConfig& config() const { return cfg_; }

 private:
  std::shared_ptr<const Dataset> data_;
  MlpConfig cfg_;
  std::vector<ParamSpec> spec_;
};

// f(theta) = lambda * |theta|^2; gradient 2*lambda*theta. Deterministic.
class QuadraticOptimizee : public Optimizee {
 public:
  QuadraticOptimizee(double lambda, int dim, double init_stddev = 1.0);
  const std::vector<ParamSpec>& param_spec() const override { return spec_; }
  std::vector<Tensor> init_params(RandomStream& rng) const override;
  Sample draw_sample(RandomStream&) const override { return {}; }
  Value loss_on_tape(Tape& tape, std::span<const Value> params,
                     const Sample& sample) const override;
  double lambda() const { return lambda_; }

 private:
  double lambda_;
  int dim_;
  double init_stddev_;
  std::vector<ParamSpec> spec_;
};

// g(x) = (1/n) sum_i (x_i - v_i)^2 with x0 ~ U[-1,1]^n. Deterministic given v.
class ConvexCompanion : public Optimizee {
 public:
  explicit ConvexCompanion(Tensor v);
  const std::vector<ParamSpec>& param_spec() const override { return spec_; }
  std::vector<Tensor> init_params(RandomStream& rng) const override;
  Sample draw_sample(RandomStream&) const override { return {}; }
  Value loss_on_tape(Tape& tape, std::span<const Value> params,
                     const Sample& sample) const override;
  const Tensor& target() const { return v_; }

 private:
  Tensor v_;
  std::vector<ParamSpec> spec_;
};

struct SineTaskConfig {
  int lstm_layers = 1;
  double noise_sigma = 0.1;
  int batch = 128;
  int seq_len = 10;
  int hidden = 20;
};

// Mean squared loss of an LSTM (hidden size 20) predicting f(10) from
// noisy samples f(0..9), f(x) = A sin(wx + phi), A ~ U(0,10),
// w ~ U(0, pi/2), phi ~ U(0, 2pi).
class SineLstmOptimizee : public Optimizee {
 public:
  explicit SineLstmOptimizee(SineTaskConfig cfg);
  const std::vector<ParamSpec>& param_spec() const override { return spec_; }
  std::vector<Tensor> init_params(RandomStream& rng) const override;
  Sample draw_sample(RandomStream& rng) const override;
  Value loss_on_tape(Tape& tape, std::span<const Value> params,
                     const Sample& sample) const override;
  const SineTaskConfig& config() const { return cfg_; }

 private:
  SineTaskConfig cfg_;
  std::vector<ParamSpec> spec_;
};

// f_c(theta) = f(c . theta) with initial parameter c^-1 . theta0.
class ScaledOptimizee : public Optimizee {
 public:
  ScaledOptimizee(std::shared_ptr<const Optimizee> base, Tensor c_flat);
  const std::vector<ParamSpec>& param_spec() const override { return base_->param_spec(); }
  std::vector<Tensor> init_params(RandomStream& rng) const override;
  Sample draw_sample(RandomStream& rng) const override { return base_->draw_sample(rng); }
  Value loss_on_tape(Tape& tape, std::span<const Value> params,
                     const Sample& sample) const override;
  const Tensor& scaling() const { return c_; }
  const Optimizee& base() const { return *base_; }

 private:
  std::shared_ptr<const Optimizee> base_;
  Tensor c_;  // flat, positive
  std::vector<Tensor> c_split_;
};

// F(theta, x) = f(theta) + g(x); parameters are f's followed by g's.
class CombinedOptimizee : public Optimizee {
 public:
  CombinedOptimizee(std::shared_ptr<const Optimizee> f, std::shared_ptr<const Optimizee> g);
  const std::vector<ParamSpec>& param_spec() const override { return spec_; }
  std::vector<Tensor> init_params(RandomStream& rng) const override;
  Sample draw_sample(RandomStream& rng) const override { return f_->draw_sample(rng); }
  Value loss_on_tape(Tape& tape, std::span<const Value> params,
                     const Sample& sample) const override;
  const Optimizee& first() const { return *f_; }
  const Optimizee& second() const { return *g_; }

 private:
  std::shared_ptr<const Optimizee> f_;
  std::shared_ptr<const Optimizee> g_;
  std::vector<ParamSpec> spec_;
};

}  // namespace lopt
