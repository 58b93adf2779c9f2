#include "lopt/optim.hpp"

#include <cmath>

namespace lopt {

ScaleBehavior classify_scale_behavior(ClassicKind kind) {
  switch (kind) {
    case ClassicKind::Sgd:
    case ClassicKind::Momentum:
      return ScaleBehavior::FirstClass;
    case ClassicKind::Adagrad:
    case ClassicKind::Adadelta:
    case ClassicKind::RmsProp:
    case ClassicKind::Adam:
      return ScaleBehavior::SecondClass;
  }
  return ScaleBehavior::FirstClass;
}

const char* classic_kind_name(ClassicKind kind) {
  switch (kind) {
    case ClassicKind::Sgd: return "sgd";
    case ClassicKind::Momentum: return "momentum";
    case ClassicKind::Adagrad: return "adagrad";
    case ClassicKind::Adadelta: return "adadelta";
    case ClassicKind::RmsProp: return "rmsprop";
    case ClassicKind::Adam: return "adam";
  }
  return "?";
}

ClassicKind classic_kind_from_name(const std::string& name) {
  for (ClassicKind k : {ClassicKind::Sgd, ClassicKind::Momentum, ClassicKind::Adagrad,
                        ClassicKind::Adadelta, ClassicKind::RmsProp, ClassicKind::Adam})
    if (name == classic_kind_name(k)) return k;
  throw Error(ErrorCategory::Config, "bad_optimizer", "unknown classic optimizer '" + name + "'");
}

ClassicHyper default_hyper(ClassicKind kind, double alpha) {
  ClassicHyper h;
  h.alpha = alpha;
  switch (kind) {
    case ClassicKind::Adam:
      h.beta1 = 0.9;
      h.beta2 = 0.999;
      break;
    case ClassicKind::RmsProp:
      h.beta2 = 0.9;
      break;
    case ClassicKind::Momentum:
      h.gamma = 0.9;
      break;
    case ClassicKind::Adadelta:
      h.beta1 = 0.95;
      h.beta2 = 0.95;
      break;
    default:
      break;
  }
  return h;
}

ClassicOptimizer::ClassicOptimizer(ClassicKind kind, ClassicHyper hyper,
                                   std::vector<std::vector<int>> shapes)
    : kind_(kind), hyper_(hyper), shapes_(std::move(shapes)) {
  if (!(hyper_.alpha > 0.0))
    throw Error(ErrorCategory::Config, "bad_alpha",
                std::string(classic_kind_name(kind)) + ": alpha must be positive, got " +
                    std::to_string(hyper_.alpha));
  for (const auto& s : shapes_) {
    m_.emplace_back(s);
    v_.emplace_back(s);
    d_.emplace_back(s);
  }
}

std::vector<Tensor> ClassicOptimizer::step(const std::vector<Tensor>& grads) {
  if (grads.size() != shapes_.size())
    throw ShapeError("classic_step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(shapes_.size()) + " parameters");
  t_ += 1;
  std::vector<Tensor> deltas;
  deltas.reserve(grads.size());
  for (size_t p = 0; p < grads.size(); p++) {
    if (grads[p].shape() != shapes_[p])
      throw ShapeError("classic_step: gradient " + grads[p].shape_str() +
                       " for parameter " + shape_str(shapes_[p]));
    Tensor delta(shapes_[p]);
    step_into(grads[p], p, delta);
    deltas.push_back(std::move(delta));
  }
  return deltas;
}

Tensor ClassicOptimizer::step_one(const Tensor& grad) {
  std::vector<Tensor> g;
  g.push_back(grad);
  return std::move(step(g)[0]);
}

void ClassicOptimizer::step_into(const Tensor& g, size_t p, Tensor& delta) {
  const double a = hyper_.alpha;
  const double b1 = hyper_.beta1;
  const double b2 = hyper_.beta2;
  const double eps = hyper_.eps;
  const int64_t n = g.numel();
  Tensor& m = m_[p];
  Tensor& v = v_[p];
  Tensor& d = d_[p];
  switch (kind_) {
    case ClassicKind::Sgd:
      for (int64_t i = 0; i < n; i++) delta[i] = -a * g[i];
      break;
    case ClassicKind::Momentum:
      for (int64_t i = 0; i < n; i++) {
        m[i] = hyper_.gamma * m[i] + (1.0 - hyper_.gamma) * g[i];
        delta[i] = -a * m[i];
      }
      break;
    case ClassicKind::Adagrad:
      for (int64_t i = 0; i < n; i++) {
        m[i] += g[i] * g[i];
        delta[i] = -a * g[i] / (std::sqrt(m[i]) + eps);
      }
      break;
    case ClassicKind::Adadelta:
      // delta uses D from the previous step, then D updates from delta.
      // The numerator sqrt also carries eps: with D0 = 0 the update would
      // otherwise stay identically zero.
      for (int64_t i = 0; i < n; i++) {
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        delta[i] = -a * g[i] * (std::sqrt(d[i]) + eps) / (std::sqrt(v[i]) + eps);
        double r = delta[i] / a;
        d[i] = b1 * d[i] + (1.0 - b1) * r * r;
      }
      break;
    case ClassicKind::RmsProp:
      for (int64_t i = 0; i < n; i++) {
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        delta[i] = -a * g[i] / (std::sqrt(v[i]) + eps);
      }
      break;
    case ClassicKind::Adam: {
      double c1 = 1.0, c2 = 1.0;
      if (hyper_.adam_bias_correction) {
        c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
        c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
      }
      for (int64_t i = 0; i < n; i++) {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        double mh = m[i] / c1;
        double vh = v[i] / c2;
        delta[i] = -a * mh / (std::sqrt(vh) + eps);
      }
      break;
    }
  }
}

}  // namespace lopt
