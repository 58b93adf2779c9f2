#pragma once

#include <string>
#include <vector>

#include "lopt/tensor.hpp"

namespace lopt {

enum class ClassicKind { Sgd, Momentum, Adagrad, Adadelta, RmsProp, Adam };

enum class ScaleBehavior { FirstClass, SecondClass };

// First class: step size follows the absolute gradient magnitude.
// Second class: steps are normalized by a second-moment estimate.
ScaleBehavior classify_scale_behavior(ClassicKind kind);

const char* classic_kind_name(ClassicKind kind);
ClassicKind classic_kind_from_name(const std::string& name);

struct ClassicHyper {
  double alpha = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double gamma = 0.9;
  double eps = 1e-8;
  bool adam_bias_correction = true;
};

// Defaults: Adam beta1=0.9 beta2=0.999, RMSprop beta2=0.9, Momentum
// gamma=0.9, Adadelta beta1=beta2=0.95, eps=1e-8 everywhere.
ClassicHyper default_hyper(ClassicKind kind, double alpha);

// One of the six classic update rules over a fixed list of parameter
// tensors. step() consumes one gradient per parameter and returns the
// increments; slots and the step counter mutate. All arithmetic is
// coordinatewise; eps is added after every square root in a denominator.
class ClassicOptimizer {
 public:
  ClassicOptimizer(ClassicKind kind, ClassicHyper hyper, std::vector<std::vector<int>> shapes);

  std::vector<Tensor> step(const std::vector<Tensor>& grads);
  Tensor step_one(const Tensor& grad);  // single-parameter convenience

  ClassicKind kind() const { return kind_; }
  const ClassicHyper& hyper() const { return hyper_; }
  int64_t t() const { return t_; }

  const Tensor& slot_m(size_t p) const { return m_[p]; }
  const Tensor& slot_v(size_t p) const { return v_[p]; }
  const Tensor& slot_d(size_t p) const { return d_[p]; }

 private:
  void step_into(const Tensor& g, size_t p, Tensor& delta);

  ClassicKind kind_;
  ClassicHyper hyper_;
  std::vector<std::vector<int>> shapes_;
  std::vector<Tensor> m_;  // momentum / Adagrad G
  std::vector<Tensor> v_;
  std::vector<Tensor> d_;  // Adadelta squared-delta average
  int64_t t_ = 0;
};

}  // namespace lopt
