#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "lopt/tensor.hpp"

namespace lopt {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid until Tape::clear().
struct Value {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

enum class Op : uint8_t {
  Constant,
  Param,
  Add,
  AddRowVec,
  Sub,
  Mul,
  MatMul,
  Sum,
  Mean,
  Sigmoid,
  Tanh,
  Relu,
  Elu,
  Square,
  Scale,
  Concat,
  SliceCols,
  SliceFlat,
  Reshape,
  SoftmaxCrossEntropy,
  Mse,
  LstmCell,
  StopGradient,
};

// Gradients of one backward sweep, keyed by node id.
class Gradients {
 public:
  bool has(Value v) const { return by_node_.count(v.id) != 0; }
  const Tensor& at(Value v) const;

 private:
  friend class Tape;
  std::unordered_map<int, Tensor> by_node_;
};

// Record of a forward computation. Nodes only ever reference earlier nodes,
// so one reverse sweep in id order is a valid backward pass. A tape is a
// single-threaded context; distinct tapes are independent.
class Tape {
 public:
  Value constant(Tensor v);
  Value param(Tensor v);

  const Tensor& value(Value v) const;
  Op op(Value v) const;
  size_t size() const { return nodes_.size(); }
  std::vector<Value> params() const;

  void clear();

  // Reverse-mode sweep from a scalar root. Returns gradients for every
  // registered parameter reachable from the root (unreached params get
  // zeros). Deterministic: repeated sweeps are bit-identical.
  Gradients backward(Value root) const;

  // Internal node record; ops in tape.cpp append these via push().
  struct Node {
    Op op;
    int a = -1, b = -1;
    Tensor val;
    Tensor saved;   // op-specific (softmax probs, lstm gates, ...)
    Tensor saved2;  // lstm tanh(c')
    double c0 = 0.0;
    int64_t i0 = 0;
    int i1 = 0;
  };

  int push(Node n);
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }

 private:
  std::vector<Node> nodes_;
  std::vector<int> param_ids_;
};

// Recording primitives. Each op validates shapes (throwing ShapeError with
// both shapes named), computes the forward value and records one node.
Value add(Value a, Value b);  // same shape, or (m x n) + (n) row bias
Value sub(Value a, Value b);
Value mul(Value a, Value b);  // elementwise
Value matmul(Value a, Value b);
Value sum(Value a);   // scalar
Value mean(Value a);  // scalar
Value sigmoid(Value a);
Value tanh(Value a);
Value relu(Value a);  // backward at exactly 0 returns 0
Value elu(Value a);   // alpha = 1
Value square(Value a);
Value scale(Value a, double c);
Value concat(Value a, Value b, int axis);  // rank 1 axis 0, rank 2 axis 0/1
Value slice_cols(Value a, int j0, int j1);
// contiguous range of the flat row-major buffer, returned with `shape`
Value slice_flat(Value a, int64_t offset, std::vector<int> shape);
Value reshape(Value a, std::vector<int> shape);
// mean over rows of cross-entropy(softmax(logits), onehot); scalar
Value softmax_cross_entropy(Value logits, Value onehot);
Value mse(Value pred, Value target);  // mean squared difference; scalar
// Fused LSTM cell. x: (n x din), hc: (n x 40) packed [h | c], w:
// ((din+20) x 80) with gate columns [i | f | g | o], b: (80). Returns packed
// [h' | c'] (n x 40).
Value lstm_cell(Value x, Value hc, Value w, Value b);
Value stop_gradient(Value a);  // value passes through; gradient is cut

// Value-mode LSTM cell sharing the exact arithmetic of the tape op.
// hc_out must be (n x 40); gates_out (n x 80) and tanhc_out (n x 20) receive
// the activations needed for a backward pass (pass nullptr to skip storing).
namespace detail {
struct LstmWork {
  std::vector<double> xh;  // n x (din+20)
  std::vector<double> tc;  // n x 20, tanh(c') staging
};
void lstm_cell_forward(const Tensor& x, const Tensor& hc, const Tensor& w, const Tensor& b,
                       Tensor& hc_out, Tensor* gates_out, Tensor* tanhc_out, LstmWork& work);
constexpr int kHidden = 20;
constexpr int kGateCols = 4 * kHidden;
}  // namespace detail

}  // namespace lopt
