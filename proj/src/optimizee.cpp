#include "lopt/optimizee.hpp"

#include <cmath>
#include <cstring>

namespace lopt {

double Optimizee::loss_value(std::span<const Tensor> params, const Sample& sample) const {
  Tape tape;
  std::vector<Value> p;
  p.reserve(params.size());
  for (const Tensor& t : params) p.push_back(tape.constant(t));
  Value loss = loss_on_tape(tape, p, sample);
  return tape.value(loss).item();
}

EvalResult Optimizee::loss_and_grad(std::span<const Tensor> params, const Sample& sample) const {
  Tape tape;
  std::vector<Value> p;
  p.reserve(params.size());
  for (const Tensor& t : params) p.push_back(tape.param(t));
  Value loss = loss_on_tape(tape, p, sample);
  Gradients g = tape.backward(loss);
  EvalResult r;
  r.loss = tape.value(loss).item();
  r.grads.reserve(params.size());
  for (Value v : p) r.grads.push_back(g.at(v));
  return r;
}

int64_t Optimizee::coord_count() const {
  int64_t n = 0;
  for (const auto& s : param_spec()) {
    int64_t c = 1;
    for (int d : s.shape) c *= d;
    n += c;
  }
  return n;
}

CoordLayout::CoordLayout(const std::vector<ParamSpec>& spec) {
  for (const auto& s : spec) {
    offsets.push_back(total);
    int64_t c = 1;
    for (int d : s.shape) c *= d;
    total += c;
  }
}

void CoordLayout::flatten(std::span<const Tensor> tensors, Tensor& flat) const {
  if (flat.numel() != total) flat = Tensor(std::vector<int>{static_cast<int>(total)});
  for (size_t p = 0; p < tensors.size(); p++)
    std::memcpy(flat.data() + offsets[p], tensors[p].data(),
                sizeof(double) * static_cast<size_t>(tensors[p].numel()));
}

std::vector<Tensor> CoordLayout::split(const Tensor& flat,
                                       const std::vector<ParamSpec>& spec) const {
  std::vector<Tensor> out;
  out.reserve(spec.size());
  for (size_t p = 0; p < spec.size(); p++) {
    Tensor t(spec[p].shape);
    std::memcpy(t.data(), flat.data() + offsets[p], sizeof(double) * static_cast<size_t>(t.numel()));
    out.push_back(std::move(t));
  }
  return out;
}

Activation activation_from_name(const std::string& name) {
  if (name == "sigmoid") return Activation::Sigmoid;
  if (name == "relu") return Activation::Relu;
  if (name == "elu") return Activation::Elu;
  if (name == "tanh") return Activation::Tanh;
  throw Error(ErrorCategory::Config, "bad_activation", "unknown activation '" + name + "'");
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Relu: return "relu";
    case Activation::Elu: return "elu";
    case Activation::Tanh: return "tanh";
  }
  return "?";
}

static Value apply_activation(Value v, Activation a) {
  switch (a) {
    case Activation::Sigmoid: return sigmoid(v);
    case Activation::Relu: return relu(v);
    case Activation::Elu: return elu(v);
    case Activation::Tanh: return tanh(v);
  }
  return v;
}

// ---------------------------------------------------------------------------
// MLP
// ---------------------------------------------------------------------------

MlpOptimizee::MlpOptimizee(std::shared_ptr<const Dataset> data, MlpConfig cfg)
    : data_(std::move(data)), cfg_(cfg) {
  if (cfg_.hidden_layers < 1)
    throw Error(ErrorCategory::Config, "bad_mlp", "mlp: need at least one hidden layer");
  int in = cfg_.input_dim;
  for (int l = 0; l < cfg_.hidden_layers; l++) {
    spec_.push_back({"w" + std::to_string(l + 1), {in, cfg_.hidden_units}});
    spec_.push_back({"b" + std::to_string(l + 1), {cfg_.hidden_units}});
    in = cfg_.hidden_units;
  }
  spec_.push_back({"w_out", {in, cfg_.classes}});
  spec_.push_back({"b_out", {cfg_.classes}});
}

std::vector<Tensor> MlpOptimizee::init_params(RandomStream& rng) const {
  std::vector<Tensor> out;
  out.reserve(spec_.size());
  for (const auto& s : spec_) out.push_back(Tensor::randn(s.shape, rng, 0.0, 0.1));
  return out;
}

Sample MlpOptimizee::draw_sample(RandomStream& rng) const {
  MinibatchSampler sampler(*data_, cfg_.minibatch, RandomStream(rng.raw(), 0x6d));
  Minibatch mb = sampler.next();
  Sample s;
  s.tensors = {std::move(mb.x), std::move(mb.y_onehot)};
  s.indices = std::move(mb.indices);
  return s;
}

Sample MlpOptimizee::sample_at(const std::vector<int>& indices) const {
  MinibatchSampler sampler(*data_, 1, RandomStream(0, 0));
  Minibatch mb = sampler.at(indices);
  Sample s;
  s.tensors = {std::move(mb.x), std::move(mb.y_onehot)};
  s.indices = std::move(mb.indices);
  return s;
}

Value MlpOptimizee::loss_on_tape(Tape& tape, std::span<const Value> params,
                                 const Sample& sample) const {
  if (sample.tensors.size() != 2)
    throw Error(ErrorCategory::Runtime, "bad_sample", "mlp: sample needs inputs and labels");
  if (sample.tensors[0].dim(0) == 0)
    throw Error(ErrorCategory::Runtime, "bad_sample", "mlp: empty minibatch");
  Value h = tape.constant(sample.tensors[0]);
  Value y = tape.constant(sample.tensors[1]);
  for (int l = 0; l < cfg_.hidden_layers; l++) {
    h = add(matmul(h, params[static_cast<size_t>(2 * l)]), params[static_cast<size_t>(2 * l + 1)]);
    h = apply_activation(h, cfg_.activation);
  }
  Value logits = add(matmul(h, params[params.size() - 2]), params[params.size() - 1]);
  return softmax_cross_entropy(logits, y);
}

// ---------------------------------------------------------------------------
// quadratic probe
// ---------------------------------------------------------------------------

QuadraticOptimizee::QuadraticOptimizee(double lambda, int dim, double init_stddev)
    : lambda_(lambda), dim_(dim), init_stddev_(init_stddev) {
  if (!(lambda > 0.0))
    throw Error(ErrorCategory::Config, "bad_lambda", "quadratic: lambda must be positive");
  spec_.push_back({"theta", {dim_}});
}

std::vector<Tensor> QuadraticOptimizee::init_params(RandomStream& rng) const {
  std::vector<Tensor> out;
  out.push_back(Tensor::randn({dim_}, rng, 0.0, init_stddev_));
  return out;
}

Value QuadraticOptimizee::loss_on_tape(Tape& tape, std::span<const Value> params,
                                       const Sample&) const {
  (void)tape;
  return scale(sum(square(params[0])), lambda_);
}

// ---------------------------------------------------------------------------
// convex companion
// ---------------------------------------------------------------------------

ConvexCompanion::ConvexCompanion(Tensor v) : v_(std::move(v)) {
  if (v_.rank() != 1)
    throw ShapeError("convex companion: target shape " + v_.shape_str());
  spec_.push_back({"x", v_.shape()});
}

std::vector<Tensor> ConvexCompanion::init_params(RandomStream& rng) const {
  std::vector<Tensor> out;
  out.push_back(Tensor::uniform(v_.shape(), rng, -1.0, 1.0));
  return out;
}

Value ConvexCompanion::loss_on_tape(Tape& tape, std::span<const Value> params,
                                    const Sample&) const {
  // (1/n) sum (x_i - v_i)^2 == mse against the fixed target
  return mse(params[0], tape.constant(v_));
}

// ---------------------------------------------------------------------------
// sine-prediction LSTM
// ---------------------------------------------------------------------------

SineLstmOptimizee::SineLstmOptimizee(SineTaskConfig cfg) : cfg_(cfg) {
  const int H = cfg_.hidden;
  int in = 1;
  for (int l = 0; l < cfg_.lstm_layers; l++) {
    spec_.push_back({"lstm" + std::to_string(l + 1) + "_w", {in + H, 4 * H}});
    spec_.push_back({"lstm" + std::to_string(l + 1) + "_b", {4 * H}});
    in = H;
  }
  spec_.push_back({"w_out", {H, 1}});
  spec_.push_back({"b_out", {1}});
}

std::vector<Tensor> SineLstmOptimizee::init_params(RandomStream& rng) const {
  std::vector<Tensor> out;
  out.reserve(spec_.size());
  for (const auto& s : spec_) {
    if (s.name.ends_with("_b") || s.name == "b_out")
      out.push_back(Tensor(s.shape));  // gate biases start at zero
    else
      out.push_back(Tensor::randn(s.shape, rng, 0.0, 0.1));
  }
  return out;
}

Sample SineLstmOptimizee::draw_sample(RandomStream& rng) const {
  const double pi = 3.14159265358979323846;
  Sample s;
  Tensor x(std::vector<int>{cfg_.batch, cfg_.seq_len});
  Tensor y(std::vector<int>{cfg_.batch, 1});
  for (int i = 0; i < cfg_.batch; i++) {
    double amp = rng.uniform(0.0, 10.0);
    double omega = rng.uniform(0.0, pi / 2.0);
    double phase = rng.uniform(0.0, 2.0 * pi);
    for (int t = 0; t < cfg_.seq_len; t++)
      x.at(i, t) = amp * std::sin(omega * t + phase) + rng.normal(0.0, cfg_.noise_sigma);
    y.at(i, 0) = amp * std::sin(omega * cfg_.seq_len + phase);
  }
  s.tensors = {std::move(x), std::move(y)};
  return s;
}

Value SineLstmOptimizee::loss_on_tape(Tape& tape, std::span<const Value> params,
                                      const Sample& sample) const {
  const Tensor& xs = sample.tensors[0];
  if (xs.rank() != 2 || xs.dim(1) != cfg_.seq_len)
    throw ShapeError("sine task: input sequence shape " + xs.shape_str() + ", expected [b," +
                     std::to_string(cfg_.seq_len) + "]");
  const int b = xs.dim(0);
  const int H = cfg_.hidden;
  Value target = tape.constant(sample.tensors[1]);
  std::vector<Value> hc;
  for (int l = 0; l < cfg_.lstm_layers; l++)
    hc.push_back(tape.constant(Tensor(std::vector<int>{b, 2 * H})));
  Value h_top;
  for (int t = 0; t < cfg_.seq_len; t++) {
    Tensor col(std::vector<int>{b, 1});
    for (int i = 0; i < b; i++) col.at(i, 0) = xs.at(i, t);
    Value x = tape.constant(col);
    for (int l = 0; l < cfg_.lstm_layers; l++) {
      hc[static_cast<size_t>(l)] =
          lstm_cell(x, hc[static_cast<size_t>(l)], params[static_cast<size_t>(2 * l)],
                    params[static_cast<size_t>(2 * l + 1)]);
      x = slice_cols(hc[static_cast<size_t>(l)], 0, H);
    }
    h_top = x;
  }
  Value pred = add(matmul(h_top, params[params.size() - 2]), params[params.size() - 1]);
  return mse(pred, target);
}

// ---------------------------------------------------------------------------
// random-scaling and convex-combination wrappers
// ---------------------------------------------------------------------------

ScaledOptimizee::ScaledOptimizee(std::shared_ptr<const Optimizee> base, Tensor c_flat)
    : base_(std::move(base)), c_(std::move(c_flat)) {
  CoordLayout layout(base_->param_spec());
  if (c_.numel() != layout.total)
    throw ShapeError("random scaling: " + std::to_string(c_.numel()) + " factors for " +
                     std::to_string(layout.total) + " coordinates");
  for (int64_t i = 0; i < c_.numel(); i++)
    if (!(c_[i] > 0.0))
      throw Error(ErrorCategory::Runtime, "bad_scaling", "random scaling: factors must be positive");
  c_split_ = layout.split(c_, base_->param_spec());
}

std::vector<Tensor> ScaledOptimizee::init_params(RandomStream& rng) const {
  std::vector<Tensor> theta = base_->init_params(rng);
  for (size_t p = 0; p < theta.size(); p++)
    for (int64_t i = 0; i < theta[p].numel(); i++) theta[p][i] /= c_split_[p][i];
  return theta;
}

Value ScaledOptimizee::loss_on_tape(Tape& tape, std::span<const Value> params,
                                    const Sample& sample) const {
  std::vector<Value> scaled;
  scaled.reserve(params.size());
  for (size_t p = 0; p < params.size(); p++)
    scaled.push_back(mul(params[p], tape.constant(c_split_[p])));
  return base_->loss_on_tape(tape, scaled, sample);
}

CombinedOptimizee::CombinedOptimizee(std::shared_ptr<const Optimizee> f,
                                     std::shared_ptr<const Optimizee> g)
    : f_(std::move(f)), g_(std::move(g)) {
  spec_ = f_->param_spec();
  for (const auto& s : g_->param_spec()) spec_.push_back({"g." + s.name, s.shape});
}

std::vector<Tensor> CombinedOptimizee::init_params(RandomStream& rng) const {
  std::vector<Tensor> out = f_->init_params(rng);
  for (Tensor& t : g_->init_params(rng)) out.push_back(std::move(t));
  return out;
}

Value CombinedOptimizee::loss_on_tape(Tape& tape, std::span<const Value> params,
                                      const Sample& sample) const {
  size_t nf = f_->param_spec().size();
  Value lf = f_->loss_on_tape(tape, params.subspan(0, nf), sample);
  Sample empty;
  Value lg = g_->loss_on_tape(tape, params.subspan(nf), empty);
  return add(lf, lg);
}

}  // namespace lopt
