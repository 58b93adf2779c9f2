#include "lopt/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace lopt {

const Tensor& Gradients::at(Value v) const {
  auto it = by_node_.find(v.id);
  if (it == by_node_.end())
    throw Error(ErrorCategory::Runtime, "no_gradient",
                "gradients: node " + std::to_string(v.id) + " is not a registered parameter");
  return it->second;
}

Value Tape::constant(Tensor v) {
  Node n;
  n.op = Op::Constant;
  n.val = std::move(v);
  return {this, push(std::move(n))};
}

Value Tape::param(Tensor v) {
  Node n;
  n.op = Op::Param;
  n.val = std::move(v);
  int id = push(std::move(n));
  param_ids_.push_back(id);
  return {this, id};
}

const Tensor& Tape::value(Value v) const { return node(v.id).val; }

Op Tape::op(Value v) const { return node(v.id).op; }

std::vector<Value> Tape::params() const {
  std::vector<Value> out;
  out.reserve(param_ids_.size());
  for (int id : param_ids_) out.push_back({const_cast<Tape*>(this), id});
  return out;
}

void Tape::clear() {
  nodes_.clear();
  param_ids_.clear();
}

int Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

// ---------------------------------------------------------------------------
// op recording
// ---------------------------------------------------------------------------

static Tape* check_tapes(Value a, Value b, const char* op) {
  if (!a.valid() || !b.valid() || a.tape != b.tape)
    throw Error(ErrorCategory::Runtime, "tape_mismatch",
                std::string(op) + ": operands from different tapes");
  return a.tape;
}

static void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shapes " + a.shape_str() + " and " + b.shape_str() +
                     " differ");
}

Value add(Value a, Value b) {
  Tape* t = check_tapes(a, b, "add");
  const Tensor& va = t->value(a);
  const Tensor& vb = t->value(b);
  Tape::Node n;
  n.a = a.id;
  n.b = b.id;
  if (va.rank() == 2 && vb.rank() == 1 && vb.dim(0) == va.dim(1)) {
    n.op = Op::AddRowVec;
    n.val = tmath::add_rowvec(va, vb);
  } else {
    check_same_shape(va, vb, "add");
    n.op = Op::Add;
    n.val = tmath::add(va, vb);
  }
  return {t, t->push(std::move(n))};
}

Value sub(Value a, Value b) {
  Tape* t = check_tapes(a, b, "sub");
  check_same_shape(t->value(a), t->value(b), "sub");
  Tape::Node n;
  n.op = Op::Sub;
  n.a = a.id;
  n.b = b.id;
  n.val = tmath::sub(t->value(a), t->value(b));
  return {t, t->push(std::move(n))};
}

Value mul(Value a, Value b) {
  Tape* t = check_tapes(a, b, "mul");
  check_same_shape(t->value(a), t->value(b), "mul");
  Tape::Node n;
  n.op = Op::Mul;
  n.a = a.id;
  n.b = b.id;
  n.val = tmath::mul(t->value(a), t->value(b));
  return {t, t->push(std::move(n))};
}

Value matmul(Value a, Value b) {
  Tape* t = check_tapes(a, b, "matmul");
  Tape::Node n;
  n.op = Op::MatMul;
  n.a = a.id;
  n.b = b.id;
  n.val = tmath::matmul(t->value(a), t->value(b));
  return {t, t->push(std::move(n))};
}

static Value unary(Value a, Op op, const char* name) {
  if (!a.valid()) throw Error(ErrorCategory::Runtime, "tape_mismatch", std::string(name) + ": invalid value");
  Tape* t = a.tape;
  const Tensor& va = t->value(a);
  Tape::Node n;
  n.op = op;
  n.a = a.id;
  switch (op) {
    case Op::Sum:
      n.val = Tensor::scalar(tmath::sum(va));
      break;
    case Op::Mean:
      n.val = Tensor::scalar(tmath::sum(va) / static_cast<double>(va.numel()));
      break;
    case Op::Sigmoid: {
      Tensor r = Tensor::uninit(va.shape());
      kern::sigmoid_arr(va.data(), r.data(), va.numel());
      n.val = std::move(r);
      break;
    }
    case Op::Tanh: {
      Tensor r = Tensor::uninit(va.shape());
      kern::tanh_arr(va.data(), r.data(), va.numel());
      n.val = std::move(r);
      break;
    }
    case Op::Relu: {
      Tensor r = Tensor::uninit(va.shape());
      for (int64_t i = 0; i < r.numel(); i++) r[i] = va[i] > 0.0 ? va[i] : 0.0;
      n.val = std::move(r);
      break;
    }
    case Op::Elu: {
      Tensor r = Tensor::uninit(va.shape());
      kern::elu_arr(va.data(), r.data(), va.numel());
      n.val = std::move(r);
      break;
    }
    case Op::Square: {
      Tensor r = Tensor::uninit(va.shape());
      for (int64_t i = 0; i < r.numel(); i++) r[i] = va[i] * va[i];
      n.val = std::move(r);
      break;
    }
    case Op::StopGradient:
      n.val = va;
      break;
    default:
      throw Error(ErrorCategory::Runtime, "bad_op", "unary: unsupported op");
  }
  return {t, t->push(std::move(n))};
}

Value sum(Value a) { return unary(a, Op::Sum, "sum"); }
Value mean(Value a) { return unary(a, Op::Mean, "mean"); }
Value sigmoid(Value a) { return unary(a, Op::Sigmoid, "sigmoid"); }
Value tanh(Value a) { return unary(a, Op::Tanh, "tanh"); }
Value relu(Value a) { return unary(a, Op::Relu, "relu"); }
Value elu(Value a) { return unary(a, Op::Elu, "elu"); }
Value square(Value a) { return unary(a, Op::Square, "square"); }
Value stop_gradient(Value a) { return unary(a, Op::StopGradient, "stop_gradient"); }

Value scale(Value a, double c) {
  Tape* t = a.tape;
  Tape::Node n;
  n.op = Op::Scale;
  n.a = a.id;
  n.c0 = c;
  n.val = tmath::scale(t->value(a), c);
  return {t, t->push(std::move(n))};
}

Value concat(Value a, Value b, int axis) {
  Tape* t = check_tapes(a, b, "concat");
  const Tensor& va = t->value(a);
  const Tensor& vb = t->value(b);
  if (va.rank() != vb.rank() || axis < 0 || axis >= va.rank() ||
      (va.rank() == 2 && va.dim(1 - axis) != vb.dim(1 - axis)) || va.rank() > 2)
    throw ShapeError("concat: shapes " + va.shape_str() + " and " + vb.shape_str() +
                     " at axis " + std::to_string(axis));
  Tape::Node n;
  n.op = Op::Concat;
  n.a = a.id;
  n.b = b.id;
  n.i1 = axis;
  if (va.rank() == 1 || axis == 0) {
    std::vector<int> shape = va.shape();
    shape[static_cast<size_t>(axis)] += vb.dim(axis);
    Tensor r = Tensor::uninit(shape);
    std::memcpy(r.data(), va.data(), sizeof(double) * static_cast<size_t>(va.numel()));
    std::memcpy(r.data() + va.numel(), vb.data(), sizeof(double) * static_cast<size_t>(vb.numel()));
    n.val = std::move(r);
  } else {
    int rows = va.dim(0), ca = va.dim(1), cb = vb.dim(1);
    Tensor r = Tensor::uninit({rows, ca + cb});
    for (int i = 0; i < rows; i++) {
      std::memcpy(r.data() + static_cast<size_t>(i) * (ca + cb), va.data() + static_cast<size_t>(i) * ca,
                  sizeof(double) * static_cast<size_t>(ca));
      std::memcpy(r.data() + static_cast<size_t>(i) * (ca + cb) + ca, vb.data() + static_cast<size_t>(i) * cb,
                  sizeof(double) * static_cast<size_t>(cb));
    }
    n.val = std::move(r);
  }
  return {t, t->push(std::move(n))};
}

Value slice_cols(Value a, int j0, int j1) {
  Tape* t = a.tape;
  const Tensor& va = t->value(a);
  if (va.rank() != 2 || j0 < 0 || j1 <= j0 || j1 > va.dim(1))
    throw ShapeError("slice_cols: columns [" + std::to_string(j0) + "," + std::to_string(j1) +
                     ") of shape " + va.shape_str());
  int rows = va.dim(0), cols = va.dim(1), w = j1 - j0;
  Tensor r = Tensor::uninit({rows, w});
  for (int i = 0; i < rows; i++)
    std::memcpy(r.data() + static_cast<size_t>(i) * w, va.data() + static_cast<size_t>(i) * cols + j0,
                sizeof(double) * static_cast<size_t>(w));
  Tape::Node n;
  n.op = Op::SliceCols;
  n.a = a.id;
  n.i0 = j0;
  n.i1 = j1;
  n.val = std::move(r);
  return {t, t->push(std::move(n))};
}

Value slice_flat(Value a, int64_t offset, std::vector<int> shape) {
  Tape* t = a.tape;
  const Tensor& va = t->value(a);
  int64_t count = 1;
  for (int d : shape) count *= d;
  if (offset < 0 || offset + count > va.numel())
    throw ShapeError("slice_flat: range [" + std::to_string(offset) + "," +
                     std::to_string(offset + count) + ") of " + std::to_string(va.numel()) +
                     " elements");
  Tensor r = Tensor::uninit(shape);
  std::memcpy(r.data(), va.data() + offset, sizeof(double) * static_cast<size_t>(count));
  Tape::Node n;
  n.op = Op::SliceFlat;
  n.a = a.id;
  n.i0 = offset;
  n.val = std::move(r);
  return {t, t->push(std::move(n))};
}

Value reshape(Value a, std::vector<int> shape) {
  Tape* t = a.tape;
  const Tensor& va = t->value(a);
  int64_t count = 1;
  for (int d : shape) count *= d;
  if (count != va.numel())
    throw ShapeError("reshape: shape " + va.shape_str() + " to " + shape_str(shape));
  Tensor r = Tensor::uninit(shape);
  std::memcpy(r.data(), va.data(), sizeof(double) * static_cast<size_t>(va.numel()));
  Tape::Node n;
  n.op = Op::Reshape;
  n.a = a.id;
  n.val = std::move(r);
  return {t, t->push(std::move(n))};
}

Value softmax_cross_entropy(Value logits, Value onehot) {
  Tape* t = check_tapes(logits, onehot, "softmax_cross_entropy");
  const Tensor& z = t->value(logits);
  const Tensor& y = t->value(onehot);
  if (z.rank() != 2 || !z.same_shape(y))
    throw ShapeError("softmax_cross_entropy: shapes " + z.shape_str() + " and " + y.shape_str());
  int rows = z.dim(0), cols = z.dim(1);
  Tensor probs = Tensor::uninit(z.shape());
  double loss = 0.0;
  std::vector<double> e(static_cast<size_t>(cols));
  for (int i = 0; i < rows; i++) {
    const double* zi = z.data() + static_cast<size_t>(i) * cols;
    double zmax = zi[0];
    for (int j = 1; j < cols; j++) zmax = std::max(zmax, zi[j]);
    for (int j = 0; j < cols; j++) e[static_cast<size_t>(j)] = zi[j] - zmax;
    kern::exp_arr(e.data(), probs.data() + static_cast<size_t>(i) * cols, cols);
    double denom = 0.0;
    const double* pi = probs.data() + static_cast<size_t>(i) * cols;
    for (int j = 0; j < cols; j++) denom += pi[j];
    double logdenom = std::log(denom);
    double* pw = probs.data() + static_cast<size_t>(i) * cols;
    for (int j = 0; j < cols; j++) {
      // loss_i = -sum_j y_ij * log softmax_ij
      loss -= y.at(i, j) * (e[static_cast<size_t>(j)] - logdenom);
      pw[j] /= denom;
    }
  }
  Tape::Node n;
  n.op = Op::SoftmaxCrossEntropy;
  n.a = logits.id;
  n.b = onehot.id;
  n.val = Tensor::scalar(loss / rows);
  n.saved = std::move(probs);
  return {t, t->push(std::move(n))};
}

Value mse(Value pred, Value target) {
  Tape* t = check_tapes(pred, target, "mse");
  const Tensor& p = t->value(pred);
  const Tensor& y = t->value(target);
  check_same_shape(p, y, "mse");
  double s = 0.0;
  for (int64_t i = 0; i < p.numel(); i++) {
    double d = p[i] - y[i];
    s += d * d;
  }
  Tape::Node n;
  n.op = Op::Mse;
  n.a = pred.id;
  n.b = target.id;
  n.val = Tensor::scalar(s / static_cast<double>(p.numel()));
  return {t, t->push(std::move(n))};
}

// ---------------------------------------------------------------------------
// fused LSTM cell
// ---------------------------------------------------------------------------
namespace detail {

void lstm_cell_forward(const Tensor& x, const Tensor& hc, const Tensor& w, const Tensor& b,
                       Tensor& hc_out, Tensor* gates_out, Tensor* tanhc_out, LstmWork& work) {
  const int n = x.dim(0);
  const int din = x.dim(1);
  const int H = kHidden;
  const int G = kGateCols;
  work.xh.resize(static_cast<size_t>(n) * (din + H));
  for (int i = 0; i < n; i++) {
    double* row = work.xh.data() + static_cast<size_t>(i) * (din + H);
    std::memcpy(row, x.data() + static_cast<size_t>(i) * din, sizeof(double) * static_cast<size_t>(din));
    std::memcpy(row + din, hc.data() + static_cast<size_t>(i) * 2 * H, sizeof(double) * H);
  }
  Tensor gates_local;
  Tensor& gates = gates_out ? *gates_out : gates_local;
  gates = Tensor::uninit({n, G});
  kern::matmul_nn_bias(work.xh.data(), w.data(), b.data(), gates.data(), n, din + H, G);
  // Gate columns [i | f | g | o]. The candidate block needs tanh, the rest
  // sigmoid; tanh(x) = 2 sigmoid(2x) - 1, so doubling that block first lets
  // one long sigmoid pass cover the whole matrix.
  for (int i = 0; i < n; i++) {
    double* gg = gates.data() + static_cast<size_t>(i) * G + 2 * H;
#pragma omp simd
    for (int j = 0; j < H; j++) gg[j] *= 2.0;
  }
  kern::sigmoid_arr(gates.data(), gates.data(), static_cast<int64_t>(n) * G);
  for (int i = 0; i < n; i++) {
    double* gg = gates.data() + static_cast<size_t>(i) * G + 2 * H;
#pragma omp simd
    for (int j = 0; j < H; j++) gg[j] = 2.0 * gg[j] - 1.0;
  }
  // c' = f*c + i*g into hc_out and a contiguous buffer for one tanh pass
  work.tc.resize(static_cast<size_t>(n) * H);
  for (int i = 0; i < n; i++) {
    const double* g = gates.data() + static_cast<size_t>(i) * G;
    const double* c_prev = hc.data() + static_cast<size_t>(i) * 2 * H + H;
    double* c_new = hc_out.data() + static_cast<size_t>(i) * 2 * H + H;
    double* tc = work.tc.data() + static_cast<size_t>(i) * H;
#pragma omp simd
    for (int j = 0; j < H; j++) {
      double c = g[H + j] * c_prev[j] + g[j] * g[2 * H + j];
      c_new[j] = c;
      tc[j] = c;
    }
  }
  kern::tanh_arr(work.tc.data(), work.tc.data(), static_cast<int64_t>(n) * H);
  for (int i = 0; i < n; i++) {
    const double* g = gates.data() + static_cast<size_t>(i) * G;
    const double* tc = work.tc.data() + static_cast<size_t>(i) * H;
    double* h_new = hc_out.data() + static_cast<size_t>(i) * 2 * H;
#pragma omp simd
    for (int j = 0; j < H; j++) h_new[j] = g[3 * H + j] * tc[j];
  }
  if (tanhc_out) {
    *tanhc_out = Tensor::uninit({n, H});
    std::memcpy(tanhc_out->data(), work.tc.data(), sizeof(double) * static_cast<size_t>(n) * H);
  }
}

}  // namespace detail

Value lstm_cell(Value x, Value hc, Value w, Value b) {
  Tape* t = check_tapes(x, hc, "lstm_cell");
  check_tapes(x, w, "lstm_cell");
  check_tapes(x, b, "lstm_cell");
  const Tensor& vx = t->value(x);
  const Tensor& vhc = t->value(hc);
  const Tensor& vw = t->value(w);
  const Tensor& vb = t->value(b);
  const int H = detail::kHidden;
  if (vx.rank() != 2 || vhc.rank() != 2 || vhc.dim(0) != vx.dim(0) || vhc.dim(1) != 2 * H)
    throw ShapeError("lstm_cell: x " + vx.shape_str() + " and hc " + vhc.shape_str());
  if (vw.rank() != 2 || vw.dim(0) != vx.dim(1) + H || vw.dim(1) != detail::kGateCols ||
      vb.rank() != 1 || vb.dim(0) != detail::kGateCols)
    throw ShapeError("lstm_cell: weights " + vw.shape_str() + " / " + vb.shape_str() +
                     " for input " + vx.shape_str());
  Tape::Node n;
  n.op = Op::LstmCell;
  n.a = x.id;
  n.b = hc.id;
  n.i0 = w.id;
  n.i1 = b.id;
  n.val = Tensor(std::vector<int>{vx.dim(0), 2 * H});
  detail::LstmWork work;
  detail::lstm_cell_forward(vx, vhc, vw, vb, n.val, &n.saved, &n.saved2, work);
  return {t, t->push(std::move(n))};
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

Gradients Tape::backward(Value root) const {
  if (!root.valid() || root.tape != this)
    throw Error(ErrorCategory::Runtime, "tape_mismatch", "backward: root not on this tape");
  if (node(root.id).val.numel() != 1)
    throw ShapeError("backward: root has shape " + node(root.id).val.shape_str() +
                     ", expected scalar");

  std::vector<Tensor> adj(static_cast<size_t>(root.id) + 1);
  adj[static_cast<size_t>(root.id)] = Tensor::full(node(root.id).val.shape(), 1.0);

  auto accum = [&](int id, int64_t offset, const double* src, int64_t count) {
    if (id < 0) return;
    Tensor& dst = adj[static_cast<size_t>(id)];
    if (dst.empty()) dst = Tensor(node(id).val.shape());
    double* d = dst.data() + offset;
    for (int64_t i = 0; i < count; i++) d[i] += src[i];
  };

  Gradients out;
  const int H = detail::kHidden;

  for (int id = root.id; id >= 0; id--) {
    Tensor g = std::move(adj[static_cast<size_t>(id)]);
    adj[static_cast<size_t>(id)] = Tensor();
    if (g.empty()) continue;
    const Node& nd = node(id);
    switch (nd.op) {
      case Op::Constant:
        break;
      case Op::Param:
        out.by_node_.emplace(id, std::move(g));
        break;
      case Op::Add:
        accum(nd.a, 0, g.data(), g.numel());
        accum(nd.b, 0, g.data(), g.numel());
        break;
      case Op::AddRowVec: {
        accum(nd.a, 0, g.data(), g.numel());
        int rows = g.dim(0), cols = g.dim(1);
        Tensor gb(std::vector<int>{cols});
        for (int i = 0; i < rows; i++)
          for (int j = 0; j < cols; j++) gb[j] += g.at(i, j);
        accum(nd.b, 0, gb.data(), cols);
        break;
      }
      case Op::Sub: {
        accum(nd.a, 0, g.data(), g.numel());
        Tensor gn = tmath::scale(g, -1.0);
        accum(nd.b, 0, gn.data(), gn.numel());
        break;
      }
      case Op::Mul: {
        Tensor ga = tmath::mul(g, node(nd.b).val);
        accum(nd.a, 0, ga.data(), ga.numel());
        Tensor gb = tmath::mul(g, node(nd.a).val);
        accum(nd.b, 0, gb.data(), gb.numel());
        break;
      }
      case Op::MatMul: {
        const Tensor& va = node(nd.a).val;
        const Tensor& vb = node(nd.b).val;
        // dA = dC * B^T
        Tensor ga = Tensor::uninit(va.shape());
        kern::matmul_nt(g.data(), vb.data(), ga.data(), va.dim(0), vb.dim(1), vb.dim(0));
        accum(nd.a, 0, ga.data(), ga.numel());
        // dB = A^T * dC
        Tensor gb(vb.shape());
        kern::matmul_tn_acc(va.data(), g.data(), gb.data(), va.dim(0), va.dim(1), vb.dim(1));
        accum(nd.b, 0, gb.data(), gb.numel());
        break;
      }
      case Op::Sum: {
        const Tensor& va = node(nd.a).val;
        Tensor ga = Tensor::full(va.shape(), g[0]);
        accum(nd.a, 0, ga.data(), ga.numel());
        break;
      }
      case Op::Mean: {
        const Tensor& va = node(nd.a).val;
        Tensor ga = Tensor::full(va.shape(), g[0] / static_cast<double>(va.numel()));
        accum(nd.a, 0, ga.data(), ga.numel());
        break;
      }
      case Op::Sigmoid: {
        Tensor ga = Tensor::uninit(nd.val.shape());
        for (int64_t i = 0; i < ga.numel(); i++) ga[i] = g[i] * nd.val[i] * (1.0 - nd.val[i]);
        accum(nd.a, 0, ga.data(), ga.numel());
        break;
      }
      case Op::Tanh: {
        Tensor ga = Tensor::uninit(nd.val.shape());
        for (int64_t i = 0; i < ga.numel(); i++) ga[i] = g[i] * (1.0 - nd.val[i] * nd.val[i]);
        accum(nd.a, 0, ga.data(), ga.numel());
        break;
      }
      case Op::Relu: {
        const Tensor& va = node(nd.a).val;
        Tensor ga = Tensor::uninit(va.shape());
        for (int64_t i = 0; i < ga.numel(); i++) ga[i] = va[i] > 0.0 ? g[i] : 0.0;
        accum(nd.a, 0, ga.data(), ga.numel());
        break;
      }
      case Op::Elu: {
        const Tensor& va = node(nd.a).val;
        Tensor ga = Tensor::uninit(va.shape());
        // d/dx elu = 1 for x > 0, elu(x) + 1 for x <= 0
        for (int64_t i = 0; i < ga.numel(); i++)
          ga[i] = va[i] > 0.0 ? g[i] : g[i] * (nd.val[i] + 1.0);
        accum(nd.a, 0, ga.data(), ga.numel());
        break;
      }
      case Op::Square: {
        const Tensor& va = node(nd.a).val;
        Tensor ga = Tensor::uninit(va.shape());
        for (int64_t i = 0; i < ga.numel(); i++) ga[i] = g[i] * 2.0 * va[i];
        accum(nd.a, 0, ga.data(), ga.numel());
        break;
      }
      case Op::Scale: {
        Tensor ga = tmath::scale(g, nd.c0);
        accum(nd.a, 0, ga.data(), ga.numel());
        break;
      }
      case Op::Concat: {
        const Tensor& va = node(nd.a).val;
        const Tensor& vb = node(nd.b).val;
        if (va.rank() == 1 || nd.i1 == 0) {
          accum(nd.a, 0, g.data(), va.numel());
          accum(nd.b, 0, g.data() + va.numel(), vb.numel());
        } else {
          int rows = va.dim(0), ca = va.dim(1), cb = vb.dim(1);
          Tensor ga(va.shape()), gb(vb.shape());
          for (int i = 0; i < rows; i++) {
            std::memcpy(ga.data() + static_cast<size_t>(i) * ca,
                        g.data() + static_cast<size_t>(i) * (ca + cb), sizeof(double) * static_cast<size_t>(ca));
            std::memcpy(gb.data() + static_cast<size_t>(i) * cb,
                        g.data() + static_cast<size_t>(i) * (ca + cb) + ca, sizeof(double) * static_cast<size_t>(cb));
          }
          accum(nd.a, 0, ga.data(), ga.numel());
          accum(nd.b, 0, gb.data(), gb.numel());
        }
        break;
      }
      case Op::SliceCols: {
        const Tensor& va = node(nd.a).val;
        int rows = va.dim(0), cols = va.dim(1);
        int j0 = static_cast<int>(nd.i0), w = nd.i1 - j0;
        Tensor ga(va.shape());
        for (int i = 0; i < rows; i++)
          std::memcpy(ga.data() + static_cast<size_t>(i) * cols + j0,
                      g.data() + static_cast<size_t>(i) * w, sizeof(double) * static_cast<size_t>(w));
        accum(nd.a, 0, ga.data(), ga.numel());
        break;
      }
      case Op::SliceFlat:
        accum(nd.a, nd.i0, g.data(), g.numel());
        break;
      case Op::Reshape:
        accum(nd.a, 0, g.data(), g.numel());
        break;
      case Op::StopGradient:
        break;
      case Op::SoftmaxCrossEntropy: {
        const Tensor& y = node(nd.b).val;
        int rows = y.dim(0);
        Tensor ga = Tensor::uninit(nd.saved.shape());
        double s = g[0] / rows;
        for (int64_t i = 0; i < ga.numel(); i++) ga[i] = s * (nd.saved[i] - y[i]);
        accum(nd.a, 0, ga.data(), ga.numel());
        break;
      }
      case Op::Mse: {
        const Tensor& p = node(nd.a).val;
        const Tensor& y = node(nd.b).val;
        Tensor ga = Tensor::uninit(p.shape());
        double s = 2.0 * g[0] / static_cast<double>(p.numel());
        for (int64_t i = 0; i < ga.numel(); i++) ga[i] = s * (p[i] - y[i]);
        accum(nd.a, 0, ga.data(), ga.numel());
        Tensor gb = tmath::scale(ga, -1.0);
        accum(nd.b, 0, gb.data(), gb.numel());
        break;
      }
      case Op::LstmCell: {
        const Tensor& vx = node(nd.a).val;
        const Tensor& vhc = node(nd.b).val;
        const Tensor& vw = node(static_cast<int>(nd.i0)).val;
        const int n = vx.dim(0);
        const int din = vx.dim(1);
        const int G = detail::kGateCols;
        Tensor dgates = Tensor::uninit({n, G});
        Tensor dhc = Tensor::uninit(vhc.shape());
        for (int i = 0; i < n; i++) {
          const double* gt = nd.saved.data() + static_cast<size_t>(i) * G;  // i f g o
          const double* tc = nd.saved2.data() + static_cast<size_t>(i) * H;
          const double* c_prev = vhc.data() + static_cast<size_t>(i) * 2 * H + H;
          const double* dh = g.data() + static_cast<size_t>(i) * 2 * H;
          const double* dc_ext = dh + H;
          double* dg = dgates.data() + static_cast<size_t>(i) * G;
          double* dhc_row = dhc.data() + static_cast<size_t>(i) * 2 * H;
#pragma omp simd
          for (int j = 0; j < H; j++) {
            double gi = gt[j], gf = gt[H + j], gg = gt[2 * H + j], go = gt[3 * H + j];
            double dc = dc_ext[j] + dh[j] * go * (1.0 - tc[j] * tc[j]);
            double dodot = dh[j] * tc[j];
            dg[j] = dc * gg * gi * (1.0 - gi);
            dg[H + j] = dc * c_prev[j] * gf * (1.0 - gf);
            dg[2 * H + j] = dc * gi * (1.0 - gg * gg);
            dg[3 * H + j] = dodot * go * (1.0 - go);
            dhc_row[H + j] = dc * gf;  // dc_prev
          }
        }
        // db
        Tensor db(std::vector<int>{G});
        for (int i = 0; i < n; i++) {
          const double* dgi = dgates.data() + static_cast<size_t>(i) * G;
          for (int j = 0; j < G; j++) db[j] += dgi[j];
        }
        accum(nd.i1, 0, db.data(), G);
        // dW = [x|h]^T dgates; rebuild the concat input (cheaper than saving it)
        std::vector<double> xh(static_cast<size_t>(n) * (din + H));
        for (int i = 0; i < n; i++) {
          double* row = xh.data() + static_cast<size_t>(i) * (din + H);
          std::memcpy(row, vx.data() + static_cast<size_t>(i) * din, sizeof(double) * static_cast<size_t>(din));
          std::memcpy(row + din, vhc.data() + static_cast<size_t>(i) * 2 * H, sizeof(double) * H);
        }
        Tensor dw(vw.shape());
        kern::matmul_tn_acc(xh.data(), dgates.data(), dw.data(), n, din + H, G);
        accum(static_cast<int>(nd.i0), 0, dw.data(), dw.numel());
        // dxh = dgates * W^T, then split into dx and dh
        std::vector<double> dxh(static_cast<size_t>(n) * (din + H));
        kern::matmul_nt(dgates.data(), vw.data(), dxh.data(), n, G, din + H);
        Tensor dx = Tensor::uninit(vx.shape());
        for (int i = 0; i < n; i++) {
          const double* row = dxh.data() + static_cast<size_t>(i) * (din + H);
          std::memcpy(dx.data() + static_cast<size_t>(i) * din, row, sizeof(double) * static_cast<size_t>(din));
          double* dh_row = dhc.data() + static_cast<size_t>(i) * 2 * H;
          std::memcpy(dh_row, row + din, sizeof(double) * H);
        }
        accum(nd.a, 0, dx.data(), dx.numel());
        accum(nd.b, 0, dhc.data(), dhc.numel());
        break;
      }
    }
  }

  // Registered parameters the sweep never reached get zero gradients.
  for (int pid : param_ids_) {
    if (pid <= root.id && out.by_node_.count(pid) == 0)
      out.by_node_.emplace(pid, Tensor(node(pid).val.shape()));
  }
  return out;
}

}  // namespace lopt
